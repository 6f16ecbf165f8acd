//! Adaptive Dormand–Prince 5(4) integration of the ensemble ODE.
//!
//! The right-hand side is smooth between jumps of the index process and
//! changes discontinuously at each jump. Steps are truncated so that every
//! jump time and every requested sample time is hit exactly; after a jump
//! the stage cache and controller memory are discarded and integration
//! restarts from the jump time.

use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowSpec, RhsWorkspace, Selector};
use crate::error::{Error, Result};
use crate::index_process::{IndexProcess, ProcessMode};
use crate::problem::Ensemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    /// Times at which observers receive a sample event.
    #[serde(default)]
    pub dense_output_times: Vec<f64>,
    /// Keep the time of every accepted step and every jump.
    #[serde(default)]
    pub record_steps: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rtol: 1e-6, atol: 1e-9, h_init: 1e-4, h_max: 1e12, dense_output_times: Vec::new(), record_steps: false }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return bad(format!("tolerances must be positive (rtol {}, atol {})", self.rtol, self.atol));
        }
        if !(self.h_init > 0.0) || !(self.h_init <= self.h_max) {
            return bad(format!("need 0 < h_init <= h_max (h_init {}, h_max {})", self.h_init, self.h_max));
        }
        if self.dense_output_times.windows(2).any(|w| w[1] < w[0]) {
            return bad("dense output times must be sorted".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

// Dormand–Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI step-size controller
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Embedded 5(4) pair with PI step control on a flat state vector.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    rtol: f64,
    atol: f64,
    h_max: f64,
    h: f64,
    fac_old: f64,
    fsal: bool,
    last_rejected: bool,
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    stats: SolverStats,
}

impl Dopri5 {
    pub fn new(dim: usize, cfg: &IntegratorConfig) -> Self {
        Self {
            rtol: cfg.rtol,
            atol: cfg.atol,
            h_max: cfg.h_max,
            h: cfg.h_init,
            fac_old: 1e-4,
            fsal: false,
            last_rejected: false,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            y_stage: vec![0.0; dim],
            y_new: vec![0.0; dim],
            stats: SolverStats::default(),
        }
    }

    pub fn stats(&self) -> SolverStats {
        self.stats
    }

    /// Current step-size proposal.
    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// Forgets the cached first stage and the controller history; call after
    /// the right-hand side has changed discontinuously.
    pub fn restart(&mut self) {
        self.fsal = false;
        self.fac_old = 1e-4;
        self.last_rejected = false;
    }

    fn stage(y_stage: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
        for (i, out) in y_stage.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (coef, k) in terms {
                acc += coef * k[i];
            }
            *out = y[i] + h * acc;
        }
    }

    /// Integrates the smooth problem `y' = f(t, y)` from `*t` to exactly
    /// `t_stop`. Fails if the controller asks for a step below `h_min`.
    pub fn integrate_to<F>(
        &mut self,
        f: &mut F,
        t: &mut f64,
        y: &mut [f64],
        t_stop: f64,
        h_min: f64,
        mut step_log: Option<&mut Vec<f64>>,
    ) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        if t_stop <= *t {
            return Ok(());
        }
        if !self.fsal {
            f(*t, y, &mut self.k[0]);
            self.stats.rhs_evals += 1;
            if self.k[0].iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { last_good: *t });
            }
            self.fsal = true;
        }
        loop {
            let remaining = t_stop - *t;
            if remaining <= 4.0 * f64::EPSILON * t.abs().max(t_stop.abs()) {
                *t = t_stop;
                return Ok(());
            }
            let proposal = self.h.min(self.h_max);
            let last = proposal >= remaining;
            let h = if last { remaining } else { proposal };

            let t0 = *t;
            {
                let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
                Self::stage(&mut self.y_stage, y, h, &[(A21, k1)]);
                f(t0 + C2 * h, &self.y_stage, k2);
                Self::stage(&mut self.y_stage, y, h, &[(A31, k1), (A32, k2)]);
                f(t0 + C3 * h, &self.y_stage, k3);
                Self::stage(&mut self.y_stage, y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
                f(t0 + C4 * h, &self.y_stage, k4);
                Self::stage(&mut self.y_stage, y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
                f(t0 + C5 * h, &self.y_stage, k5);
                Self::stage(&mut self.y_stage, y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
                let t_new = if last { t_stop } else { t0 + h };
                f(t_new, &self.y_stage, k6);
                Self::stage(&mut self.y_new, y, h, &[(A71, k1), (A73, k3), (A74, k4), (A75, k5), (A76, k6)]);
                f(t_new, &self.y_new, k7);
            }
            self.stats.rhs_evals += 6;

            let mut sum = 0.0;
            let mut finite = true;
            for i in 0..y.len() {
                let k = &self.k;
                let e = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
                let sk = self.atol + self.rtol * y[i].abs().max(self.y_new[i].abs());
                let r = e / sk;
                sum += r * r;
                finite &= self.y_new[i].is_finite() && self.k[6][i].is_finite();
            }
            let err = if finite { (sum / y.len() as f64).sqrt() } else { f64::INFINITY };

            if err <= 1.0 {
                let fac11 = err.powf(EXPO1);
                let fac = (fac11 / self.fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = h / fac;
                if self.last_rejected {
                    h_new = h_new.min(h);
                }
                self.fac_old = err.max(1e-4);
                self.last_rejected = false;
                self.stats.accepted += 1;
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                *t = if last { t_stop } else { t0 + h };
                if let Some(log) = step_log.as_deref_mut() {
                    log.push(*t);
                }
                // a step shortened to land on t_stop says little about the
                // natural step size
                self.h = if last && h < proposal { h_new.max(proposal) } else { h_new };
                if last {
                    return Ok(());
                }
            } else {
                self.stats.rejected += 1;
                self.last_rejected = true;
                let shrink = if err.is_finite() { (err.powf(EXPO1) / SAFETY).min(1.0 / FAC_MIN) } else { 10.0 };
                self.h = h / shrink;
                if self.h < h_min {
                    return Err(if finite {
                        Error::StepUnderflow { t: t0, h: self.h }
                    } else {
                        Error::Divergence { last_good: t0 }
                    });
                }
            }
        }
    }
}

/// Where the per-particle subset selection comes from.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum IndexSource {
    /// Full potential, no subsampling.
    None,
    /// A fixed selection that never switches.
    Fixed(Selector),
    /// Selection driven by an index process started at `t = 0`.
    Process(IndexProcess),
}

impl IndexSource {
    fn selector(&self) -> Selector {
        match self {
            Self::None => Selector::Full,
            Self::Fixed(s) => s.clone(),
            Self::Process(p) => match p.mode() {
                ProcessMode::Single => Selector::Single(p.current()[0]),
                ProcessMode::Batch => Selector::Batch(p.current().to_vec()),
            },
        }
    }

    fn next_jump_time(&self) -> f64 {
        match self {
            Self::Process(p) => p.next_jump_time(),
            _ => f64::INFINITY,
        }
    }

    pub fn jump_count(&self) -> u64 {
        match self {
            Self::Process(p) => p.jump_count(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Sample,
    Jump,
}

/// What an observer sees: the current particles (`d × N_ens`, column-major),
/// the active selection and the jump count so far.
#[derive(Debug)]
pub struct Event<'a> {
    pub kind: EventKind,
    pub t: f64,
    pub particles: &'a nalgebra::DMatrix<f64>,
    pub selector: &'a Selector,
    pub jumps: u64,
}

pub trait Observer {
    fn observe(&mut self, event: &Event<'_>) -> Result<()>;
}

impl<F: FnMut(&Event<'_>) -> Result<()>> Observer for F {
    fn observe(&mut self, event: &Event<'_>) -> Result<()> {
        self(event)
    }
}

#[derive(Debug, Clone)]
pub struct IntegrationOutcome {
    pub ensemble: Ensemble,
    pub stats: SolverStats,
    pub jumps: u64,
    /// Accepted step end points and jump times, when requested.
    pub step_log: Vec<f64>,
    /// Jump times, when step recording is requested.
    pub jump_times: Vec<f64>,
    pub source: IndexSource,
}

/// Integrates the ensemble flow over `t_span`, switching subsets as the
/// index source dictates and notifying observers at every sample time and
/// every jump.
pub fn integrate(
    spec: &FlowSpec,
    ens0: &Ensemble,
    mut source: IndexSource,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<IntegrationOutcome> {
    cfg.validate()?;
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::InvalidParameter(format!("empty time span ({t0}, {t1})")));
    }
    if let IndexSource::Process(p) = &source {
        if p.t_now() != t0 {
            return Err(Error::InvalidParameter(format!(
                "index process is at t = {}, integration starts at {t0}",
                p.t_now()
            )));
        }
    }
    let (d, n) = (ens0.dim(), ens0.size());
    if d != spec.dim() {
        return Err(Error::Dimension(format!("ensemble dimension {d}, problem dimension {}", spec.dim())));
    }
    let mut selector = source.selector();
    spec.check(n, &selector)?;

    let mut state = ens0.particles().clone();
    let mut solver = Dopri5::new(d * n, cfg);
    let mut ws = RhsWorkspace::new(d, n);
    let h_min = 1e-14 * (t1 - t0);
    let mut step_log = Vec::new();
    let mut jump_times = Vec::new();

    let samples: Vec<f64> = cfg.dense_output_times.iter().copied().filter(|&s| s >= t0 && s <= t1).collect();
    let mut next_sample = 0;
    let mut t = t0;

    let mut notify = |kind: EventKind, t: f64, state: &nalgebra::DMatrix<f64>, sel: &Selector, jumps: u64| {
        let ev = Event { kind, t, particles: state, selector: sel, jumps };
        observers.iter_mut().try_for_each(|o| o.observe(&ev))
    };

    while next_sample < samples.len() && samples[next_sample] <= t {
        notify(EventKind::Sample, t, &state, &selector, source.jump_count())?;
        next_sample += 1;
    }

    while t < t1 {
        let t_jump = source.next_jump_time();
        let t_sample = samples.get(next_sample).copied().unwrap_or(f64::INFINITY);
        let t_stop = t_jump.min(t_sample).min(t1);
        {
            let sel = &selector;
            let ws = &mut ws;
            let mut f = |tt: f64, y: &[f64], dy: &mut [f64]| spec.rhs_into(y, n, tt, sel, dy, ws);
            let log = if cfg.record_steps { Some(&mut step_log) } else { None };
            solver.integrate_to(&mut f, &mut t, state.as_mut_slice(), t_stop, h_min, log)?;
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { last_good: t });
        }
        if t_jump <= t_stop {
            if let IndexSource::Process(p) = &mut source {
                while p.next_jump_time() <= t_stop {
                    let jump = p.pop_jump();
                    if cfg.record_steps {
                        jump_times.push(jump.time);
                        if step_log.last() != Some(&jump.time) {
                            step_log.push(jump.time);
                        }
                    }
                }
            }
            selector = source.selector();
            solver.restart();
            notify(EventKind::Jump, t, &state, &selector, source.jump_count())?;
        }
        while next_sample < samples.len() && samples[next_sample] <= t {
            notify(EventKind::Sample, t, &state, &selector, source.jump_count())?;
            next_sample += 1;
        }
    }

    Ok(IntegrationOutcome {
        ensemble: Ensemble::new(state)?,
        stats: solver.stats(),
        jumps: source.jump_count(),
        step_log,
        jump_times,
        source,
    })
}

/// Writes a step log as CSV with columns `time,kind` where kind is `step`
/// or `jump`.
pub fn write_step_log<W: std::io::Write>(mut w: W, outcome: &IntegrationOutcome) -> std::io::Result<()> {
    writeln!(w, "time,kind")?;
    let mut jumps = outcome.jump_times.iter().peekable();
    for &t in &outcome.step_log {
        let is_jump = jumps.peek().is_some_and(|&&j| j == t);
        if is_jump {
            while jumps.peek().is_some_and(|&&j| j == t) {
                jumps.next();
            }
            writeln!(w, "{t},jump")?;
        } else {
            writeln!(w, "{t},step")?;
        }
    }
    Ok(())
}
