use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heat::HeatConfig;
use crate::index_process::LearningRateSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    EkiFull,
    SingleSubsampling,
    BatchSubsampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowVariant {
    Teki,
    TekiVi,
    TekiDimVi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub variant: FlowVariant,
    /// Inflation strength; ignored by `teki`.
    #[serde(default)]
    pub alpha_vi: f64,
}

/// Gaussian field used for the truth and the initial ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub sigma2: f64,
    pub length_scale: f64,
    pub n_terms: usize,
}

/// Sample times: `0` followed by `count` log-spaced points from `t_first`
/// to `t_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub count: usize,
    pub t_first: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { rtol: 1e-6, atol: 1e-9, h_init: 1e-4, h_max: 1e12 }
    }
}

/// One Monte-Carlo campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    pub t_end: f64,
    pub n_runs: usize,
    pub master_seed: u64,
    pub n_ens: usize,
    /// Tikhonov weight `α`.
    pub alpha: f64,
    /// Observation noise standard deviation; `Γ = noise_std² I`.
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: HeatConfig,
    pub prior: PriorConfig,
    pub flow: FlowConfig,
    /// Ignored by `eki_full`.
    pub schedule: LearningRateSchedule,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() {
            return bad("name must not be empty".into());
        }
        if self.n_runs == 0 {
            return bad("n_runs must be at least 1".into());
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.n_ens < 2 {
            return bad(format!("n_ens must be at least 2, got {}", self.n_ens));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.noise_std > 0.0) {
            return bad(format!("noise_std must be positive, got {}", self.noise_std));
        }
        self.model.validate()?;
        if self.model.n_steps() < 2 {
            return bad("the model needs at least 2 time steps to form subsets".into());
        }
        if self.prior.n_terms == 0 || self.prior.n_terms > self.model.n_interior() {
            return bad(format!("prior.n_terms must lie in 1..={}", self.model.n_interior()));
        }
        if self.n_ens - 1 > self.prior.n_terms {
            return bad(format!(
                "n_ens - 1 = {} exceeds prior.n_terms = {}; the initial ensemble would be degenerate",
                self.n_ens - 1,
                self.prior.n_terms
            ));
        }
        if !(self.prior.sigma2 > 0.0) || !(self.prior.length_scale > 0.0) {
            return bad("prior.sigma2 and prior.length_scale must be positive".into());
        }
        if self.flow.variant != FlowVariant::Teki && !(self.flow.alpha_vi > 0.0) {
            return bad(format!("flow.alpha_vi must be positive for {:?}", self.flow.variant));
        }
        self.schedule.validate().map_err(|e| Error::Config(format!("schedule: {e}")))?;
        if self.sampling.count < 2 {
            return bad("sampling.count must be at least 2".into());
        }
        if !(self.sampling.t_first > 0.0 && self.sampling.t_first < self.t_end) {
            return bad(format!("sampling.t_first must lie in (0, t_end), got {}", self.sampling.t_first));
        }
        let s = &self.solver;
        if !(s.rtol > 0.0 && s.atol > 0.0 && s.h_init > 0.0 && s.h_init <= s.h_max) {
            return bad("solver needs positive tolerances and 0 < h_init <= h_max".into());
        }
        Ok(())
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let n = self.sampling.count;
        let (lo, hi) = (self.sampling.t_first.ln(), self.t_end.ln());
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        for k in 0..n {
            v.push((lo + (hi - lo) * k as f64 / (n - 1) as f64).exp());
        }
        v[n] = self.t_end;
        v
    }
}
