use super::config::{ExperimentConfig, FlowConfig, FlowVariant, Method, PriorConfig, SamplingConfig, SolverConfig};
use crate::heat::HeatConfig;
use crate::index_process::LearningRateSchedule;

const FAMILIES: [&str; 3] = ["vi", "dimvi", "novi"];
const METHODS: [(&str, Method); 3] =
    [("eki", Method::EkiFull), ("single", Method::SingleSubsampling), ("batch", Method::BatchSubsampling)];

pub fn list_presets() -> Vec<String> {
    let mut names = Vec::new();
    for suffix in ["", "_desk"] {
        for fam in FAMILIES {
            for (m, _) in METHODS {
                names.push(format!("heat_{fam}_{m}{suffix}"));
            }
        }
    }
    names.push("tiny".into());
    names
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    if name == "tiny" {
        return Some(tiny());
    }
    let rest = name.strip_prefix("heat_")?;
    let (rest, desk) = match rest.strip_suffix("_desk") {
        Some(r) => (r, true),
        None => (rest, false),
    };
    let (fam, m) = rest.split_once('_')?;
    let method = METHODS.iter().find(|(k, _)| *k == m)?.1;
    if !FAMILIES.contains(&fam) {
        return None;
    }
    Some(heat(name, fam, method, desk))
}

fn heat(name: &str, family: &str, method: Method, desk: bool) -> ExperimentConfig {
    let h = if desk { 0.02 } else { 0.01 };
    let model = HeatConfig { h, dt: 0.05, horizon: 0.3, obs_per_step: (1.0 / h).round() as usize - 1 };
    let prior = PriorConfig { sigma2: 10.0, length_scale: 0.1, n_terms: 8 };
    let exponential = LearningRateSchedule::Exponential { a: 0.01, b: 10.0 };
    let (flow, schedule, t_end, t_first) = match family {
        "vi" | "dimvi" => {
            let variant = if family == "vi" { FlowVariant::TekiVi } else { FlowVariant::TekiDimVi };
            (FlowConfig { variant, alpha_vi: 0.01 }, exponential, if desk { 0.8 } else { 1.0 }, 1e-4)
        }
        _ => {
            // 1e5 equidistant switches after the decaying phase
            let t_end: f64 = if desk { 1e4 } else { 1e6 };
            let step = (t_end - 10.0) / 1e5;
            let schedule = LearningRateSchedule::Piecewise {
                decay: Box::new(LearningRateSchedule::Reciprocal { a: 100.0, b: 100.0 }),
                t_switch: 10.0,
                step,
            };
            (FlowConfig { variant: FlowVariant::Teki, alpha_vi: 0.0 }, schedule, t_end, 1e-3)
        }
    };
    ExperimentConfig {
        name: name.into(),
        method,
        t_end,
        n_runs: if desk { 8 } else { 32 },
        master_seed: 20230,
        n_ens: 5,
        alpha: 10.0,
        noise_std: 0.1,
        output_dir: None,
        model,
        prior,
        flow,
        schedule,
        sampling: SamplingConfig { count: 200, t_first },
        solver: SolverConfig::default(),
    }
}

fn tiny() -> ExperimentConfig {
    ExperimentConfig {
        name: "tiny".into(),
        method: Method::EkiFull,
        t_end: 1.0,
        n_runs: 1,
        master_seed: 7,
        n_ens: 3,
        alpha: 10.0,
        noise_std: 0.1,
        output_dir: None,
        model: HeatConfig { h: 0.1, dt: 0.05, horizon: 0.1, obs_per_step: 9 },
        prior: PriorConfig { sigma2: 10.0, length_scale: 0.1, n_terms: 4 },
        flow: FlowConfig { variant: FlowVariant::Teki, alpha_vi: 0.0 },
        schedule: LearningRateSchedule::Exponential { a: 0.01, b: 10.0 },
        sampling: SamplingConfig { count: 20, t_first: 1e-3 },
        solver: SolverConfig::default(),
    }
}
