//! The subset index process: a piecewise-constant continuous-time Markov
//! process on `{0, …, N_sub − 1}` that starts uniformly, holds its value for a
//! random time whose hazard rate is `1/η(t)`, and then jumps uniformly to one
//! of the other indices.
//!
//! Waiting times are drawn by inverting the survival function
//! `P(Δ ≥ s | t₀) = exp(−∫₀ˢ η(t₀ + u)⁻¹ du)` in closed form for every
//! schedule kind.
//!
//! Indices are zero-based in the API; the CSV jump log writes them one-based.

use std::io::Write;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate `η(t)`, the mean holding time of the index process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearningRateSchedule {
    /// `η(t) = c`.
    Constant { c: f64 },
    /// `η(t) = a·exp(−b t)`.
    Exponential { a: f64, b: f64 },
    /// `η(t) = 1 / (a t + b)`.
    Reciprocal { a: f64, b: f64 },
    /// A decaying schedule up to `t_switch`, then deterministic jumps on the
    /// grid `t_switch + k·step`, `k ≥ 1`.
    Piecewise { decay: Box<LearningRateSchedule>, t_switch: f64, step: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("schedule parameter {name} must be positive and finite, got {v}")))
    }
}

impl LearningRateSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { c } => positive("c", *c),
            Self::Exponential { a, b } | Self::Reciprocal { a, b } => {
                positive("a", *a)?;
                positive("b", *b)
            }
            Self::Piecewise { decay, t_switch, step } => {
                if matches!(**decay, Self::Piecewise { .. }) {
                    return Err(Error::InvalidParameter("piecewise schedules cannot be nested".into()));
                }
                decay.validate()?;
                positive("t_switch", *t_switch)?;
                positive("step", *step)
            }
        }
    }

    /// `η(t)`. For the piecewise kind beyond the switch this returns the
    /// grid step, the holding time of the deterministic phase.
    pub fn eta(&self, t: f64) -> f64 {
        match self {
            Self::Constant { c } => *c,
            Self::Exponential { a, b } => a * (-b * t).exp(),
            Self::Reciprocal { a, b } => 1.0 / (a * t + b),
            Self::Piecewise { decay, t_switch, step } => {
                if t < *t_switch {
                    decay.eta(t)
                } else {
                    *step
                }
            }
        }
    }

    /// Integrated hazard `∫₀ˢ η(t₀ + u)⁻¹ du` for the smooth kinds.
    pub fn integrated_rate(&self, t0: f64, s: f64) -> f64 {
        match self {
            Self::Constant { c } => s / c,
            Self::Exponential { a, b } => (-b * t0).exp().recip() * (b * s).exp_m1() / (a * b),
            Self::Reciprocal { a, b } => 0.5 * a * s * s + (a * t0 + b) * s,
            Self::Piecewise { decay, .. } => decay.integrated_rate(t0, s),
        }
    }

    /// Waiting time after `t0` given an `Exp(1)` variate `e` (i.e. `e = −ln U`).
    pub fn waiting_time_from_exp(&self, t0: f64, e: f64) -> f64 {
        match self {
            Self::Constant { c } => c * e,
            // (1/b)·ln(1 + a·b·e·exp(−b t0))
            Self::Exponential { a, b } => (a * b * e * (-b * t0).exp()).ln_1p() / b,
            // root of (a/2)s² + (a t0 + b)s − e = 0, in cancellation-free form
            Self::Reciprocal { a, b } => {
                let lin = a * t0 + b;
                2.0 * e / (lin + (lin * lin + 2.0 * a * e).sqrt())
            }
            Self::Piecewise { decay, t_switch, step } => {
                let candidate = if t0 < *t_switch { t0 + decay.waiting_time_from_exp(t0, e) } else { f64::INFINITY };
                if candidate <= *t_switch {
                    candidate - t0
                } else {
                    next_grid_point(t0, *t_switch, *step) - t0
                }
            }
        }
    }

    /// Waiting time for a uniform variate `u ∈ (0, 1]` via `e = −ln u`.
    pub fn waiting_time_from_uniform(&self, t0: f64, u: f64) -> f64 {
        self.waiting_time_from_exp(t0, -u.ln())
    }
}

/// Smallest `t_switch + k·step > t0` with `k ≥ 1`.
fn next_grid_point(t0: f64, t_switch: f64, step: f64) -> f64 {
    let mut k = if t0 < t_switch { 1.0 } else { ((t0 - t_switch) / step).floor() + 1.0 };
    let mut t = t_switch + k * step;
    while t <= t0 + 1e-9 * step {
        k += 1.0;
        t = t_switch + k * step;
    }
    t
}

/// Draws a waiting time `Δ > 0` after `t0`.
pub fn sample_waiting_time<R: RngCore + ?Sized>(t0: f64, sched: &LearningRateSchedule, rng: &mut R) -> f64 {
    // 1 − U ∈ (0, 1] keeps the logarithm finite
    let u: f64 = 1.0 - rng.random::<f64>();
    sched.waiting_time_from_uniform(t0, u)
}

/// Uniform draw from the `n_sub − 1` indices different from `current`.
pub fn next_index<R: RngCore + ?Sized>(current: usize, n_sub: usize, rng: &mut R) -> Result<usize> {
    if n_sub < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 subsets, got {n_sub}")));
    }
    if current >= n_sub {
        return Err(Error::InvalidParameter(format!("index {current} out of range for {n_sub} subsets")));
    }
    let k = rng.random_range(0..n_sub - 1);
    Ok(if k >= current { k + 1 } else { k })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessMode {
    /// One index shared by all particles.
    Single,
    /// One independent index per particle.
    Batch,
}

/// One jump of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub coordinate: usize,
    pub new_index: usize,
}

/// State of the (possibly vector-valued) index process.
#[derive(Debug, Clone)]
pub struct IndexProcess {
    mode: ProcessMode,
    schedule: LearningRateSchedule,
    n_sub: usize,
    current: Vec<usize>,
    next_jump: Vec<f64>,
    t_now: f64,
    jumps: u64,
    rng: ChaCha8Rng,
}

impl IndexProcess {
    /// Starts the process at time 0. `n_coordinates` must be 1 in single mode
    /// and `N_ens` in batch mode.
    pub fn new(
        mode: ProcessMode,
        n_coordinates: usize,
        n_sub: usize,
        schedule: LearningRateSchedule,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        schedule.validate()?;
        if n_sub < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 subsets, got {n_sub}")));
        }
        match (mode, n_coordinates) {
            (ProcessMode::Single, 1) => {}
            (ProcessMode::Batch, n) if n >= 1 => {}
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "{mode:?} mode with {n_coordinates} coordinates"
                )))
            }
        }
        let current: Vec<usize> = (0..n_coordinates).map(|_| rng.random_range(0..n_sub)).collect();
        let next_jump = (0..n_coordinates).map(|_| sample_waiting_time(0.0, &schedule, &mut rng)).collect();
        Ok(Self { mode, schedule, n_sub, current, next_jump, t_now: 0.0, jumps: 0, rng })
    }

    pub fn mode(&self) -> ProcessMode {
        self.mode
    }

    pub fn schedule(&self) -> &LearningRateSchedule {
        &self.schedule
    }

    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    /// Current index of every coordinate.
    pub fn current(&self) -> &[usize] {
        &self.current
    }

    pub fn t_now(&self) -> f64 {
        self.t_now
    }

    /// Total number of jumps so far, summed over coordinates.
    pub fn jump_count(&self) -> u64 {
        self.jumps
    }

    /// Earliest pending jump time over all coordinates.
    pub fn next_jump_time(&self) -> f64 {
        self.next_jump.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Performs the earliest pending jump (lowest coordinate on ties).
    pub fn pop_jump(&mut self) -> Jump {
        let (coordinate, &time) = self
            .next_jump
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one coordinate");
        let new_index = next_index(self.current[coordinate], self.n_sub, &mut self.rng)
            .expect("validated at construction");
        self.current[coordinate] = new_index;
        self.next_jump[coordinate] = time + sample_waiting_time(time, &self.schedule, &mut self.rng);
        self.t_now = self.t_now.max(time);
        self.jumps += 1;
        Jump { time, coordinate, new_index }
    }

    /// Advances the process to `t_target`, returning the jumps in
    /// `(t_now, t_target]` in time order.
    pub fn advance(&mut self, t_target: f64) -> Result<Vec<Jump>> {
        if !(t_target > self.t_now) {
            return Err(Error::InvalidParameter(format!(
                "target time {t_target} is not after current time {}",
                self.t_now
            )));
        }
        let mut log = Vec::new();
        while self.next_jump_time() <= t_target {
            log.push(self.pop_jump());
        }
        self.t_now = t_target;
        Ok(log)
    }
}

/// Writes a jump log as CSV with columns `time,coordinate,new_index`
/// (indices one-based).
pub fn write_jump_log<W: Write>(mut w: W, jumps: &[Jump]) -> std::io::Result<()> {
    writeln!(w, "time,coordinate,new_index")?;
    for j in jumps {
        writeln!(w, "{},{},{}", j.time, j.coordinate + 1, j.new_index + 1)?;
    }
    Ok(())
}
