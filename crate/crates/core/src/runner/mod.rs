//! Monte-Carlo campaigns on the heat problem.
//!
//! A campaign fixes the forward operator, the truth and the noisy data once
//! (from a data seed derived from the master seed). Each run then draws its
//! own initial ensemble and index process from a per-run seed, integrates
//! the flow and records diagnostics at the configured sample times.
//!
//! Output layout of a campaign directory:
//!
//! * `run_XXX.csv` – one file per successful run, see [`RUN_COLUMNS`].
//! * `aggregate.csv` – mean and spread across runs, see [`AGGREGATE_COLUMNS`].
//! * `manifest.json` – config echo, seeds, solver statistics, per-run status.
//! * `config.toml` – the exact configuration, re-runnable as is.
//!
//! [`RUN_COLUMNS`]: crate::diagnostics::RUN_COLUMNS
//! [`AGGREGATE_COLUMNS`]: crate::diagnostics::AGGREGATE_COLUMNS

mod config;
mod presets;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, FlowConfig, FlowVariant, Method, PriorConfig, SamplingConfig, SolverConfig};
pub use presets::{list_presets, preset};

use crate::diagnostics::{self, AggregateRow, TrajectoryRecord, TrajectoryRecorder};
use crate::dynamics::{FlowSpec, InflationMetric, Subsampling, Variant};
use crate::error::{Error, Result};
use crate::heat::{self, KlExpansion, KlFieldSpec};
use crate::index_process::{IndexProcess, ProcessMode};
use crate::integrator::{self, IndexSource, IntegratorConfig, Observer, SolverStats};
use crate::problem::{whiten, Ensemble, LinearProblem};
use crate::reference::{self, SubspaceFrame};
use crate::regularization::SubsampledProblem;

const DATA_TAG: u64 = 0xda7a_5eed_0000_0001;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `r`.
pub fn run_seed(master: u64, r: usize) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(r as u64 + 1))
}

/// Seed of the campaign data (truth and noise).
pub fn data_seed(master: u64) -> u64 {
    splitmix64(splitmix64(master) ^ DATA_TAG)
}

/// Everything shared by the runs of one campaign.
#[derive(Debug, Clone)]
pub struct Campaign {
    cfg: ExperimentConfig,
    forward: DMatrix<f64>,
    problem: Arc<SubsampledProblem>,
    kl: KlExpansion,
    truth: DVector<f64>,
}

/// Outcome of one run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub record: TrajectoryRecord,
    pub frame: SubspaceFrame,
    pub theta_star: DVector<f64>,
    pub final_ensemble: Ensemble,
    pub stats: SolverStats,
    pub jumps: u64,
}

impl Campaign {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let forward = heat::assemble_forward(&cfg.model)?;
        let partition = heat::partition_by_timestep(&forward, &cfg.model)?;
        let spec = KlFieldSpec::on_grid(&cfg.model, cfg.prior.sigma2, cfg.prior.length_scale, cfg.prior.n_terms);
        let kl = KlExpansion::new(&spec)?;

        let mut rng = ChaCha8Rng::seed_from_u64(data_seed(cfg.master_seed));
        let truth = kl.sample(&mut rng);
        let noise = DVector::from_fn(forward.nrows(), |_, _| cfg.noise_std * rand::Rng::sample::<f64, _>(&mut rng, StandardNormal));
        let y = &forward * &truth + noise;
        let gamma = DMatrix::identity(forward.nrows(), forward.nrows()) * cfg.noise_std.powi(2);
        let raw = LinearProblem::new(forward.clone(), y, gamma)?.with_truth(truth.clone())?;
        let whitened = whiten(&raw)?;
        let d = forward.ncols();
        let problem = SubsampledProblem::new(&whitened, partition, cfg.alpha, &DMatrix::identity(d, d))?;
        Ok(Self { cfg: cfg.clone(), forward, problem: Arc::new(problem), kl, truth })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Forward operator in original (unwhitened) units.
    pub fn forward(&self) -> &DMatrix<f64> {
        &self.forward
    }

    pub fn problem(&self) -> &Arc<SubsampledProblem> {
        &self.problem
    }

    pub fn kl(&self) -> &KlExpansion {
        &self.kl
    }

    pub fn truth(&self) -> &DVector<f64> {
        &self.truth
    }

    /// RNG streams of run `r`: ensemble draw and index process.
    pub fn run_rngs(&self, r: usize) -> (ChaCha8Rng, ChaCha8Rng) {
        let seed = run_seed(self.cfg.master_seed, r);
        let mut ens = ChaCha8Rng::seed_from_u64(seed);
        ens.set_stream(0);
        let mut idx = ChaCha8Rng::seed_from_u64(seed);
        idx.set_stream(1);
        (ens, idx)
    }

    pub fn initial_ensemble(&self, r: usize) -> Result<Ensemble> {
        let (mut rng, _) = self.run_rngs(r);
        heat::draw_initial_ensemble(&self.kl, self.cfg.n_ens, &mut rng)
    }

    /// Flow of the configured variant; inflation acts as the identity on
    /// the ensemble subspace spanned by `frame`.
    pub fn flow_spec(&self, frame: &SubspaceFrame) -> Result<FlowSpec> {
        let metric = || InflationMetric::Subspace(frame.basis().clone());
        let alpha_vi = self.cfg.flow.alpha_vi;
        let variant = match self.cfg.flow.variant {
            FlowVariant::Teki => Variant::Teki,
            FlowVariant::TekiVi => Variant::TekiVi { alpha_vi, c_vi: metric() },
            FlowVariant::TekiDimVi => Variant::TekiDimVi { alpha_vi, c_vi: metric() },
        };
        let subsampling = match self.cfg.method {
            Method::EkiFull => Subsampling::None,
            Method::SingleSubsampling => Subsampling::Single,
            Method::BatchSubsampling => Subsampling::Batch,
        };
        FlowSpec::new(variant, subsampling, self.problem.clone())
    }

    pub fn index_source(&self, r: usize) -> Result<IndexSource> {
        let (_, rng) = self.run_rngs(r);
        let n_sub = self.problem.n_sub();
        let sched = self.cfg.schedule.clone();
        Ok(match self.cfg.method {
            Method::EkiFull => IndexSource::None,
            Method::SingleSubsampling => IndexSource::Process(IndexProcess::new(ProcessMode::Single, 1, n_sub, sched, rng)?),
            Method::BatchSubsampling => {
                IndexSource::Process(IndexProcess::new(ProcessMode::Batch, self.cfg.n_ens, n_sub, sched, rng)?)
            }
        })
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        let s = &self.cfg.solver;
        IntegratorConfig {
            rtol: s.rtol,
            atol: s.atol,
            h_init: s.h_init,
            h_max: s.h_max,
            dense_output_times: self.cfg.sample_times(),
            record_steps: false,
        }
    }

    pub fn run(&self, r: usize) -> Result<RunResult> {
        self.run_with(r, &mut |_: &integrator::Event<'_>| Ok(()))
    }

    /// As [`Campaign::run`], with an extra observer attached.
    pub fn run_with(&self, r: usize, extra: &mut dyn Observer) -> Result<RunResult> {
        let ens0 = self.initial_ensemble(r)?;
        let frame = reference::build_frame(&ens0)?;
        let (_, theta_star) = reference::constrained_tikhonov(self.problem.full(), &frame)?;
        let spec = self.flow_spec(&frame)?;
        let source = self.index_source(r)?;
        let icfg = self.integrator_config();
        let mut recorder = TrajectoryRecorder::new(&theta_star, self.problem.full(), &self.forward, &frame);
        let outcome = {
            let mut observers: [&mut dyn Observer; 2] = [&mut recorder, extra];
            integrator::integrate(&spec, &ens0, source, (0.0, self.cfg.t_end), &icfg, &mut observers)?
        };
        let record = recorder.into_record();
        Ok(RunResult {
            run: r,
            seed: run_seed(self.cfg.master_seed, r),
            record,
            frame,
            theta_star,
            final_ensemble: outcome.ensemble,
            stats: outcome.stats,
            jumps: outcome.jumps,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunEntry {
    pub run: usize,
    pub seed: u64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub jumps: u64,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub rhs_evals: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub master_seed: u64,
    pub data_seed: u64,
    pub n_runs: usize,
    pub n_failed: usize,
    pub sample_times: usize,
    pub config: ExperimentConfig,
    pub runs: Vec<RunEntry>,
}

pub fn version_string() -> String {
    format!("eki-core v{}", env!("CARGO_PKG_VERSION"))
}

pub fn run_file_name(r: usize) -> String {
    format!("run_{r:03}.csv")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::Data { path: path.to_path_buf(), msg: e.to_string() })?))
}

/// Runs the campaign into `out_dir` using `jobs` worker threads. Failing
/// runs are listed in the manifest; the call fails only when no run
/// succeeds.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<Manifest> {
    let campaign = Campaign::prepare(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let results: Vec<Result<RunResult>> = pool.install(|| (0..cfg.n_runs).into_par_iter().map(|r| campaign.run(r)).collect());

    let mut entries = Vec::with_capacity(cfg.n_runs);
    let mut records = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        let seed = run_seed(cfg.master_seed, r);
        match res {
            Ok(run) => {
                let file = run_file_name(r);
                let mut w = create(&out_dir.join(&file))?;
                run.record.write_csv(&mut w)?;
                w.flush()?;
                entries.push(RunEntry {
                    run: r,
                    seed,
                    status: "ok",
                    file: Some(file),
                    error: None,
                    jumps: run.jumps,
                    steps_accepted: run.stats.accepted,
                    steps_rejected: run.stats.rejected,
                    rhs_evals: run.stats.rhs_evals,
                });
                records.push(run.record);
            }
            Err(e) => entries.push(RunEntry {
                run: r,
                seed,
                status: "failed",
                file: None,
                error: Some(e.to_string()),
                jumps: 0,
                steps_accepted: 0,
                steps_rejected: 0,
                rhs_evals: 0,
            }),
        }
    }
    let n_failed = entries.iter().filter(|e| e.status != "ok").count();
    let manifest = Manifest {
        version: version_string(),
        master_seed: cfg.master_seed,
        data_seed: data_seed(cfg.master_seed),
        n_runs: cfg.n_runs,
        n_failed,
        sample_times: cfg.sample_times().len(),
        config: cfg.clone(),
        runs: entries,
    };
    let mut w = create(&out_dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;

    if records.is_empty() {
        let first = manifest.runs.iter().find_map(|e| e.error.clone()).unwrap_or_default();
        return Err(Error::InvalidParameter(format!("all {} runs failed; first error: {first}", cfg.n_runs)));
    }
    let rows = diagnostics::aggregate_runs(&records)?;
    write_aggregate(out_dir, &rows)?;
    Ok(manifest)
}

fn write_aggregate(dir: &Path, rows: &[AggregateRow]) -> Result<PathBuf> {
    let path = dir.join("aggregate.csv");
    let mut w = create(&path)?;
    diagnostics::write_aggregate_csv(&mut w, rows)?;
    w.flush()?;
    Ok(path)
}

/// Run files of a campaign directory, sorted by name.
pub fn run_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("run_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_runs(dir: &Path) -> Result<Vec<TrajectoryRecord>> {
    let files = run_files(dir)?;
    if files.is_empty() {
        return Err(Error::Data { path: dir.to_path_buf(), msg: "no run_*.csv files".into() });
    }
    files
        .iter()
        .map(|p| {
            let f = File::open(p).map_err(|e| Error::Data { path: p.clone(), msg: e.to_string() })?;
            TrajectoryRecord::read_csv(BufReader::new(f), p)
        })
        .collect()
}

/// Rebuilds `aggregate.csv` from the run files in `dir`.
pub fn aggregate(dir: &Path) -> Result<(PathBuf, Vec<AggregateRow>)> {
    let records = load_runs(dir)?;
    let rows = diagnostics::aggregate_runs(&records).map_err(|e| Error::Data { path: dir.to_path_buf(), msg: e.to_string() })?;
    let path = write_aggregate(dir, &rows)?;
    Ok((path, rows))
}

/// Reads an `aggregate.csv`.
pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data { path: path.to_path_buf(), msg: e.to_string() })?;
    let err = |msg: String| Error::Data { path: path.to_path_buf(), msg };
    let mut lines = text.lines();
    if lines.next() != Some(diagnostics::AGGREGATE_COLUMNS) {
        return Err(err("unexpected header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || err(format!("line {}: malformed row", i + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(AggregateRow {
                time: f[0].parse().map_err(|_| bad())?,
                series: f[1].to_string(),
                mean: f[2].parse().map_err(|_| bad())?,
                std: f[3].parse().map_err(|_| bad())?,
                n_runs: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
