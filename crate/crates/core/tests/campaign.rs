use std::fs;

use eki_core::diagnostics::{SERIES, RUN_COLUMNS};
use eki_core::runner::{aggregate, preset, read_aggregate, run_experiment, Campaign, Method};

#[test]
fn tiny_campaign_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("tiny").unwrap();
    let manifest = run_experiment(&cfg, dir.path(), 1).unwrap();
    assert_eq!(manifest.n_failed, 0);
    for f in ["manifest.json", "aggregate.csv", "run_000.csv", "config.toml"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let run = fs::read_to_string(dir.path().join("run_000.csv")).unwrap();
    assert_eq!(run.lines().next().unwrap(), RUN_COLUMNS);
    let n_times = cfg.sample_times().len();
    assert_eq!(run.lines().count(), 1 + n_times * cfg.n_ens);

    let rows = read_aggregate(&dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(rows.len(), n_times * SERIES.len());
    assert!(rows.iter().all(|r| r.std == 0.0 && r.n_runs == 1));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"][0]["status"], "ok");
    assert_eq!(manifest["config"]["name"], "tiny");
    assert!(manifest["runs"][0]["seed"].is_u64());
}

#[test]
fn reaggregation_reproduces_campaign_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("tiny").unwrap();
    cfg.n_runs = 3;
    cfg.method = Method::SingleSubsampling;
    cfg.t_end = 0.5;
    run_experiment(&cfg, dir.path(), 2).unwrap();
    let path = dir.path().join("aggregate.csv");
    let before = fs::read(&path).unwrap();
    aggregate(dir.path()).unwrap();
    assert_eq!(fs::read(&path).unwrap(), before);
    let rows = read_aggregate(&path).unwrap();
    assert!(rows.iter().all(|r| r.n_runs == 3));
    assert_eq!(rows.len(), cfg.sample_times().len() * SERIES.len());
}

#[test]
fn corrupted_run_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("tiny").unwrap();
    cfg.n_runs = 2;
    run_experiment(&cfg, dir.path(), 1).unwrap();
    let bad = dir.path().join("run_001.csv");
    let text = fs::read_to_string(&bad).unwrap();
    fs::write(&bad, text.replacen(",0,", ",zero,", 1)).unwrap();
    let err = aggregate(dir.path()).unwrap_err().to_string();
    assert!(err.contains("run_001.csv"), "{err}");
}

#[test]
fn empty_directory_cannot_be_aggregated() {
    let dir = tempfile::tempdir().unwrap();
    assert!(aggregate(dir.path()).is_err());
}

#[test]
fn runs_differ_but_share_data() {
    let mut cfg = preset("tiny").unwrap();
    cfg.method = Method::BatchSubsampling;
    cfg.t_end = 0.5;
    let c = Campaign::prepare(&cfg).unwrap();
    let (a, b) = (c.run(0).unwrap(), c.run(1).unwrap());
    assert_ne!(a.seed, b.seed);
    assert_ne!(a.record.param_error, b.record.param_error);
    let c2 = Campaign::prepare(&cfg).unwrap();
    assert_eq!(c.truth(), c2.truth());
    assert_eq!(c.problem().full().y_tilde(), c2.problem().full().y_tilde());
    // misfit never drops below the constrained optimum
    let floor = (c.problem().full().a_tilde() * &a.theta_star - c.problem().full().y_tilde()).norm();
    for row in &a.record.obs_misfit {
        assert!(row.iter().all(|&m| m >= floor - 1e-9));
    }
}

#[test]
fn collapse_decays_without_inflation() {
    let cfg = preset("tiny").unwrap();
    let res = Campaign::prepare(&cfg).unwrap().run(0).unwrap();
    let collapse = res.record.series("collapse").unwrap();
    let n = collapse.len();
    assert!(collapse[n - 1] < collapse[n / 2] && collapse[n / 2] < collapse[0]);
    assert!(res.record.lambda_min.iter().all(|&l| l >= -1e-11));
}
