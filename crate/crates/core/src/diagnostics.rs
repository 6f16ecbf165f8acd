//! Observed quantities along trajectories and their Monte-Carlo summaries.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrator::{Event, EventKind, Observer};
use crate::linalg;
use crate::problem::Ensemble;
use crate::reference::SubspaceFrame;
use crate::regularization::AugmentedProblem;

/// `‖θ⁽ʲ⁾ − θ̄‖` for every particle.
pub fn collapse_norms(ens: &Ensemble) -> Vec<f64> {
    ens.centered().column_iter().map(|c| c.norm()).collect()
}

/// Smallest eigenvalue of `EᵀĈE`, the empirical covariance in the
/// coordinates of the initial ensemble subspace.
pub fn lambda_min_subspace(ens: &Ensemble, basis: &DMatrix<f64>) -> f64 {
    let n = ens.size();
    let coords = basis.tr_mul(&ens.centered());
    let cov = &coords * coords.transpose() / (n as f64 - 1.0);
    linalg::min_eigenvalue(&cov)
}

/// `c = max_i ‖Ã_i‖²` over the subset operators.
pub fn bound_constant(subsets: &[AugmentedProblem]) -> f64 {
    subsets.iter().map(|p| linalg::spectral_norm_sq(p.a_tilde())).fold(0.0, f64::max)
}

/// `(2ct + 1/λ₀)⁻¹`.
pub fn lambda_min_bound(t: f64, c: f64, lambda0: f64) -> f64 {
    1.0 / (2.0 * c * t + 1.0 / lambda0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// Set when `λ_min(0) ≤ 0`, in which case the bound is undefined.
    pub skipped: bool,
    pub pass: Vec<bool>,
    /// `λ_min(t) − bound(t)`.
    pub margin: Vec<f64>,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        !self.skipped && self.pass.iter().all(|&p| p)
    }
}

pub const BOUND_SLACK: f64 = 1e-10;

/// Checks `λ_min(t) ≥ (2ct + 1/λ_min(t₀))⁻¹` with the first sample as
/// `t₀ = 0` reference.
pub fn lambda_min_bound_check(times: &[f64], lambda_min: &[f64], c: f64) -> Result<BoundReport> {
    if times.len() != lambda_min.len() || times.is_empty() {
        return Err(Error::Dimension(format!("{} times, {} eigenvalues", times.len(), lambda_min.len())));
    }
    let l0 = lambda_min[0];
    if !(l0 > 0.0) {
        return Ok(BoundReport { skipped: true, pass: Vec::new(), margin: Vec::new() });
    }
    let t0 = times[0];
    let margin: Vec<f64> =
        times.iter().zip(lambda_min).map(|(&t, &l)| l - lambda_min_bound(t - t0, c, l0)).collect();
    let pass = margin
        .iter()
        .zip(times)
        .map(|(&m, &t)| m >= -BOUND_SLACK * lambda_min_bound(t - t0, c, l0).max(1.0))
        .collect();
    Ok(BoundReport { skipped: false, pass, margin })
}

/// Distance to a Dirac mass at `theta_star` for the cost `min(1, ‖·‖^q)`.
pub fn wasserstein_to_dirac(samples: &[DVector<f64>], theta_star: &DVector<f64>, q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!("exponent must lie in (0, 1], got {q}")));
    }
    let total: f64 = samples.iter().map(|s| (s - theta_star).norm().powf(q).min(1.0)).sum();
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axes {
    LogLog,
    SemiLogY,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

/// Least-squares line through `log(value)` against `log(t)` or `t` for
/// samples in the closed window.
pub fn rate_slope(times: &[f64], values: &[f64], window: (f64, f64), axes: Axes) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::Dimension(format!("{} times, {} values", times.len(), values.len())));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t < window.0 || t > window.1 {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::InvalidParameter(format!("non-positive value {v} at t = {t}")));
        }
        xs.push(match axes {
            Axes::LogLog => t.ln(),
            Axes::SemiLogY => t,
        });
        ys.push(v.ln());
    }
    let n = xs.len();
    if n < 10 {
        return Err(Error::InvalidParameter(format!("{n} samples in window, need at least 10")));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(RateFit { slope, intercept, r2, n_points: n })
}

/// Per-particle diagnostics at each sample time of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Indexed `[sample][particle]`.
    pub param_error: Vec<Vec<f64>>,
    /// Raw misfit `‖Ãθ − ỹ‖` of the regularised problem.
    pub obs_misfit: Vec<Vec<f64>>,
    /// `‖A(θ − θ*)‖` with the forward operator in original units.
    pub obs_error: Vec<Vec<f64>>,
    pub collapse: Vec<Vec<f64>>,
    pub lambda_min: Vec<f64>,
    pub jumps: Vec<u64>,
    /// Not persisted in run files.
    pub subspace_residual: Vec<f64>,
}

pub const RUN_COLUMNS: &str = "time,particle,param_error,obs_misfit,collapse,lambda_min,jumps,obs_error";

/// Names of the per-run summary series, in output order.
pub const SERIES: [&str; 8] =
    ["param_error", "param_error_sq", "obs_misfit", "obs_error", "collapse", "lambda_min", "jumps", "wasserstein"];

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_particles(&self) -> usize {
        self.param_error.first().map_or(0, Vec::len)
    }

    /// Ensemble mean of each quantity at every sample time, in the order of
    /// [`SERIES`]. Particle averages are taken before run averages.
    pub fn summary(&self) -> Vec<(&'static str, Vec<f64>)> {
        let per = |m: &Vec<Vec<f64>>, f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            m.iter().map(|row| row.iter().map(|&x| f(x)).sum::<f64>() / row.len() as f64).collect()
        };
        let id = |x: f64| x;
        vec![
            ("param_error", per(&self.param_error, &id)),
            ("param_error_sq", per(&self.param_error, &|x| x * x)),
            ("obs_misfit", per(&self.obs_misfit, &id)),
            ("obs_error", per(&self.obs_error, &id)),
            ("collapse", per(&self.collapse, &id)),
            ("lambda_min", self.lambda_min.clone()),
            ("jumps", self.jumps.iter().map(|&j| j as f64).collect()),
            ("wasserstein", per(&self.param_error, &|x| x.min(1.0))),
        ]
    }

    /// Named series of the summary.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        self.summary().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{RUN_COLUMNS}")?;
        for s in 0..self.len() {
            for j in 0..self.param_error[s].len() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    self.times[s],
                    j,
                    self.param_error[s][j],
                    self.obs_misfit[s][j],
                    self.collapse[s][j],
                    self.lambda_min[s],
                    self.jumps[s],
                    self.obs_error[s][j]
                )?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let err = |msg: String| Error::Data { path: path.to_path_buf(), msg };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| err("empty file".into()))??;
        if header.trim() != RUN_COLUMNS {
            return Err(err(format!("unexpected header {header:?}")));
        }
        let mut rec = TrajectoryRecord::default();
        for (no, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = no + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(err(format!("line {lineno}: expected 8 fields, got {}", f.len())));
            }
            let num = |i: usize| -> Result<f64> {
                f[i].trim().parse::<f64>().map_err(|e| err(format!("line {lineno}, column {}: {e}", i + 1)))
            };
            let t = num(0)?;
            let j: usize = f[1].trim().parse().map_err(|e| err(format!("line {lineno}, column 2: {e}")))?;
            let jumps: u64 = f[6].trim().parse().map_err(|e| err(format!("line {lineno}, column 7: {e}")))?;
            let new_time = rec.times.last() != Some(&t);
            if new_time {
                if j != 0 {
                    return Err(err(format!("line {lineno}: time {t} starts at particle {j}")));
                }
                if rec.times.last().is_some_and(|&last| last > t) {
                    return Err(err(format!("line {lineno}: times not sorted")));
                }
                rec.times.push(t);
                rec.param_error.push(Vec::new());
                rec.obs_misfit.push(Vec::new());
                rec.obs_error.push(Vec::new());
                rec.collapse.push(Vec::new());
                rec.lambda_min.push(num(5)?);
                rec.jumps.push(jumps);
            } else if j != rec.param_error.last().map_or(0, Vec::len) {
                return Err(err(format!("line {lineno}: particle {j} out of order")));
            }
            let s = rec.times.len() - 1;
            rec.param_error[s].push(num(2)?);
            rec.obs_misfit[s].push(num(3)?);
            rec.collapse[s].push(num(4)?);
            rec.obs_error[s].push(num(7)?);
        }
        if rec.is_empty() {
            return Err(err("no data rows".into()));
        }
        let n = rec.n_particles();
        if rec.param_error.iter().any(|r| r.len() != n) {
            return Err(err("particle count varies between sample times".into()));
        }
        Ok(rec)
    }
}

/// Observer that fills a [`TrajectoryRecord`] at sample events.
pub struct TrajectoryRecorder<'a> {
    pub record: TrajectoryRecord,
    theta_star: &'a DVector<f64>,
    regularised: &'a AugmentedProblem,
    forward: &'a DMatrix<f64>,
    frame: &'a SubspaceFrame,
}

impl<'a> TrajectoryRecorder<'a> {
    /// `forward` is the unwhitened operator used for the observation error.
    pub fn new(
        theta_star: &'a DVector<f64>,
        regularised: &'a AugmentedProblem,
        forward: &'a DMatrix<f64>,
        frame: &'a SubspaceFrame,
    ) -> Self {
        Self { record: TrajectoryRecord::default(), theta_star, regularised, forward, frame }
    }

    pub fn into_record(self) -> TrajectoryRecord {
        self.record
    }
}

impl Observer for TrajectoryRecorder<'_> {
    fn observe(&mut self, ev: &Event<'_>) -> Result<()> {
        if ev.kind != EventKind::Sample {
            return Ok(());
        }
        let ens = Ensemble::new(ev.particles.clone())?;
        let diff = {
            let mut d = ev.particles.clone();
            for mut c in d.column_iter_mut() {
                c -= self.theta_star;
            }
            d
        };
        let misfit = self.regularised.a_tilde() * ev.particles;
        let err_img = self.forward * &diff;
        let y = self.regularised.y_tilde();
        let rec = &mut self.record;
        rec.times.push(ev.t);
        rec.param_error.push(diff.column_iter().map(|c| c.norm()).collect());
        rec.obs_misfit.push(misfit.column_iter().map(|c| (c - y).norm()).collect());
        rec.obs_error.push(err_img.column_iter().map(|c| c.norm()).collect());
        rec.collapse.push(collapse_norms(&ens));
        rec.lambda_min.push(lambda_min_subspace(&ens, self.frame.basis()));
        rec.jumps.push(ev.jumps);
        rec.subspace_residual.push(crate::dynamics::subspace_projection_residual(
            &ens,
            self.frame.basis(),
            self.frame.offset(),
        ));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub time: f64,
    pub series: String,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

pub const AGGREGATE_COLUMNS: &str = "time,series_name,mean,std,n_runs";

/// Pointwise mean and sample standard deviation (divisor `n − 1`, zero for a
/// single run) of every summary series across runs.
pub fn aggregate_runs(records: &[TrajectoryRecord]) -> Result<Vec<AggregateRow>> {
    let first = records.first().ok_or_else(|| Error::InvalidParameter("no runs to aggregate".into()))?;
    if let Some(r) = records.iter().position(|r| r.times != first.times) {
        return Err(Error::Dimension(format!("run {r} has a different time axis")));
    }
    let n = records.len();
    let summaries: Vec<_> = records.iter().map(TrajectoryRecord::summary).collect();
    let mut rows = Vec::with_capacity(SERIES.len() * first.len());
    for (k, name) in SERIES.iter().enumerate() {
        for (s, &t) in first.times.iter().enumerate() {
            let vals: Vec<f64> = summaries.iter().map(|sum| sum[k].1[s]).collect();
            let m = mean(&vals);
            let std = if n > 1 {
                (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            rows.push(AggregateRow { time: t, series: name.to_string(), mean: m, std, n_runs: n });
        }
    }
    Ok(rows)
}

pub fn write_aggregate_csv<W: Write>(mut w: W, rows: &[AggregateRow]) -> std::io::Result<()> {
    writeln!(w, "{AGGREGATE_COLUMNS}")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.time, r.series, r.mean, r.std, r.n_runs)?;
    }
    Ok(())
}

/// Times and means of one series from aggregate rows.
pub fn aggregate_series(rows: &[AggregateRow], name: &str) -> (Vec<f64>, Vec<f64>) {
    rows.iter().filter(|r| r.series == name).map(|r| (r.time, r.mean)).unzip()
}
