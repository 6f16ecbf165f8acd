//! 1D heat-equation source identification and Karhunen–Loève sampling.
//!
//! The unknown is a time-independent source `f` on the interior nodes of a
//! uniform grid on `[0, 1]` with homogeneous Dirichlet boundary and zero
//! initial state. The state is advanced by Crank–Nicolson,
//! `(I/dt + L/2) u⁺ = (I/dt − L/2) u + f` with `L = tridiag(−1, 2, −1)/h²`,
//! and observed at equidistant interior nodes after every time step.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{DataPartition, Ensemble};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatConfig {
    pub h: f64,
    pub dt: f64,
    pub horizon: f64,
    pub obs_per_step: usize,
}

fn integral_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * r.max(1.0) && n >= 1.0).then_some(n as usize)
}

impl HeatConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.h > 0.0 && self.h < 1.0) {
            return bad(format!("grid spacing must lie in (0, 1), got {}", self.h));
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return bad(format!("dt and horizon must be positive (dt {}, horizon {})", self.dt, self.horizon));
        }
        let Some(cells) = integral_ratio(1.0, self.h) else {
            return bad(format!("1/h must be an integer, h = {}", self.h));
        };
        if cells < 2 {
            return bad("grid has no interior nodes".into());
        }
        if integral_ratio(self.horizon, self.dt).is_none() {
            return bad(format!("horizon/dt must be an integer ({} / {})", self.horizon, self.dt));
        }
        if self.obs_per_step == 0 || self.obs_per_step > cells - 1 {
            return bad(format!("obs_per_step must lie in 1..={}, got {}", cells - 1, self.obs_per_step));
        }
        Ok(())
    }

    /// Number of interior grid nodes, i.e. the parameter dimension.
    pub fn n_interior(&self) -> usize {
        (1.0 / self.h).round() as usize - 1
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn n_obs(&self) -> usize {
        self.n_steps() * self.obs_per_step
    }

    /// Interior node coordinates `x_p = (p + 1) h`.
    pub fn grid(&self) -> Vec<f64> {
        (1..=self.n_interior()).map(|p| p as f64 * self.h).collect()
    }

    /// Interior node indices that are observed, equidistantly spread.
    pub fn observed_nodes(&self) -> Vec<usize> {
        let (n, k) = (self.n_interior(), self.obs_per_step);
        (1..=k).map(|i| ((i * (n + 1)) as f64 / (k + 1) as f64).round() as usize - 1).collect()
    }
}

/// Thomas factorisation of a constant symmetric tridiagonal matrix.
struct Tridiagonal {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    fn factor(n: usize, diag: f64, off: f64) -> Result<Self> {
        let mut lower = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut pivot = diag;
        for i in 0..n {
            if i > 0 {
                lower[i] = off / pivot;
                pivot = diag - lower[i] * off;
            }
            if pivot.abs() < f64::EPSILON * diag.abs() {
                return Err(Error::Singular(format!("zero pivot at row {i} of the Crank–Nicolson system")));
            }
            inv_pivot[i] = 1.0 / pivot;
        }
        Ok(Self { lower, inv_pivot })
    }

    fn solve_in_place(&self, x: &mut [f64], off: f64) {
        let n = x.len();
        for i in 1..n {
            x[i] -= self.lower[i] * x[i - 1];
        }
        x[n - 1] *= self.inv_pivot[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - off * x[i + 1]) * self.inv_pivot[i];
        }
    }
}

/// Time-steps the scheme for one forcing and returns the stacked
/// observations, time step major.
pub fn observe_forcing(cfg: &HeatConfig, forcing: &[f64]) -> Result<DVector<f64>> {
    cfg.validate()?;
    let n = cfg.n_interior();
    if forcing.len() != n {
        return Err(Error::Dimension(format!("forcing has length {}, grid has {n} nodes", forcing.len())));
    }
    let inv_h2 = 1.0 / (cfg.h * cfg.h);
    let (lhs_diag, lhs_off) = (1.0 / cfg.dt + inv_h2, -0.5 * inv_h2);
    let (rhs_diag, rhs_off) = (1.0 / cfg.dt - inv_h2, 0.5 * inv_h2);
    let lhs = Tridiagonal::factor(n, lhs_diag, lhs_off)?;
    let nodes = cfg.observed_nodes();
    let k = nodes.len();

    let mut u = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut out = DVector::zeros(cfg.n_obs());
    for step in 0..cfg.n_steps() {
        for i in 0..n {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            next[i] = rhs_diag * u[i] + rhs_off * (left + right) + forcing[i];
        }
        lhs.solve_in_place(&mut next, lhs_off);
        std::mem::swap(&mut u, &mut next);
        for (r, &p) in nodes.iter().enumerate() {
            out[step * k + r] = u[p];
        }
    }
    Ok(out)
}

/// Forward matrix mapping the nodal source to all observations; column `k`
/// is the response to the `k`-th nodal basis vector.
pub fn assemble_forward(cfg: &HeatConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let n = cfg.n_interior();
    let mut a = DMatrix::zeros(cfg.n_obs(), n);
    let mut basis = vec![0.0; n];
    for col in 0..n {
        basis[col] = 1.0;
        a.set_column(col, &observe_forcing(cfg, &basis)?);
        basis[col] = 0.0;
    }
    Ok(a)
}

/// One subset per time step.
pub fn partition_by_timestep(a: &DMatrix<f64>, cfg: &HeatConfig) -> Result<DataPartition> {
    if a.nrows() != cfg.n_obs() {
        return Err(Error::Dimension(format!(
            "operator has {} rows, configuration gives {} observations",
            a.nrows(),
            cfg.n_obs()
        )));
    }
    DataPartition::uniform(cfg.n_steps(), cfg.obs_per_step)
}

/// Gaussian field with covariance `σ² exp(−|s − t|²/L_sc)`, truncated
/// to `n_terms` eigenpairs on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlFieldSpec {
    pub sigma2: f64,
    pub length_scale: f64,
    pub n_terms: usize,
    pub grid: Vec<f64>,
}

impl KlFieldSpec {
    pub fn on_grid(cfg: &HeatConfig, sigma2: f64, length_scale: f64, n_terms: usize) -> Self {
        Self { sigma2, length_scale, n_terms, grid: cfg.grid() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sigma2 >= 0.0) {
            return bad(format!("sigma2 must be non-negative, got {}", self.sigma2));
        }
        if !(self.length_scale > 0.0) {
            return bad(format!("length scale must be positive, got {}", self.length_scale));
        }
        if self.n_terms == 0 || self.n_terms > self.grid.len() {
            return bad(format!("n_terms must lie in 1..={}, got {}", self.grid.len(), self.n_terms));
        }
        if self.grid.len() >= 2 {
            let h = self.grid[1] - self.grid[0];
            let uniform = self.grid.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0));
            if !(h > 0.0) || !uniform {
                return bad("grid must be increasing and uniformly spaced".into());
            }
        }
        Ok(())
    }

    fn spacing(&self) -> f64 {
        if self.grid.len() >= 2 {
            self.grid[1] - self.grid[0]
        } else {
            1.0
        }
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let g = &self.grid;
        DMatrix::from_fn(g.len(), g.len(), |p, q| {
            let d = g[p] - g[q];
            self.sigma2 * (-d * d / self.length_scale).exp()
        })
    }
}

/// Truncated expansion `Σ √λ_i e_i ξ_i` with `(λ_i, v_i)` the leading
/// eigenpairs of `h·C` and `e_i = v_i/√h`.
#[derive(Debug, Clone)]
pub struct KlExpansion {
    eigenvalues: DVector<f64>,
    modes: DMatrix<f64>,
    total_variance: f64,
}

impl KlExpansion {
    pub fn new(spec: &KlFieldSpec) -> Result<Self> {
        spec.validate()?;
        let w = spec.spacing();
        let weighted = spec.covariance_matrix() * w;
        let total_variance = weighted.trace();
        let eig = linalg::sym_eigen(&weighted);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let m = spec.n_terms;
        let eigenvalues = DVector::from_iterator(m, order[..m].iter().map(|&i| eig.eigenvalues[i].max(0.0)));
        let mut modes = DMatrix::zeros(spec.grid.len(), m);
        for (c, &i) in order[..m].iter().enumerate() {
            modes.set_column(c, &(eig.eigenvectors.column(i) / w.sqrt()));
        }
        Ok(Self { eigenvalues, modes, total_variance })
    }

    /// Leading eigenvalues, descending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Grid values of the eigenfunctions, one per column.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn n_terms(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn grid_len(&self) -> usize {
        self.modes.nrows()
    }

    /// Share of the discrete trace kept by the truncation.
    pub fn captured_fraction(&self) -> f64 {
        if self.total_variance == 0.0 {
            1.0
        } else {
            self.eigenvalues.sum() / self.total_variance
        }
    }

    /// `Σ_i λ_i e_i(x)²` at every grid point.
    pub fn pointwise_variance(&self) -> DVector<f64> {
        DVector::from_fn(self.grid_len(), |p, _| {
            (0..self.n_terms()).map(|i| self.eigenvalues[i] * self.modes[(p, i)].powi(2)).sum()
        })
    }

    /// Field for given standard-normal coefficients.
    pub fn field(&self, xi: &DVector<f64>) -> DVector<f64> {
        let scaled = xi.zip_map(&self.eigenvalues, |x, l| x * l.sqrt());
        &self.modes * scaled
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_fn(self.n_terms(), |_, _| rng.sample::<f64, _>(StandardNormal));
        self.field(&xi)
    }
}

pub fn sample_kl_field<R: Rng + ?Sized>(spec: &KlFieldSpec, rng: &mut R) -> Result<DVector<f64>> {
    Ok(KlExpansion::new(spec)?.sample(rng))
}

const ENSEMBLE_RETRIES: usize = 10;

/// `n_ens` independent field draws whose centered family has rank
/// `min(n_ens − 1, n_terms)`; redraws a bounded number of times otherwise.
pub fn draw_initial_ensemble<R: Rng + ?Sized>(kl: &KlExpansion, n_ens: usize, rng: &mut R) -> Result<Ensemble> {
    if n_ens < 2 {
        return Err(Error::Ensemble(format!("need at least 2 particles, got {n_ens}")));
    }
    let want = (n_ens - 1).min(kl.n_terms());
    let mut got = 0;
    for _ in 0..=ENSEMBLE_RETRIES {
        let cols: Vec<DVector<f64>> = (0..n_ens).map(|_| kl.sample(rng)).collect();
        let ens = Ensemble::from_particles(&cols)?;
        got = ens.centered_rank();
        if got == want {
            return Ok(ens);
        }
    }
    Err(Error::Ensemble(format!(
        "initial ensemble still has centered rank {got} (want {want}) after {ENSEMBLE_RETRIES} redraws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn full_scale() -> HeatConfig {
        HeatConfig { h: 0.01, dt: 0.05, horizon: 0.3, obs_per_step: 99 }
    }

    #[test]
    fn shapes() {
        let cfg = full_scale();
        assert_eq!(cfg.n_interior(), 99);
        assert_eq!(cfg.n_steps(), 6);
        let a = assemble_forward(&cfg).unwrap();
        assert_eq!(a.shape(), (594, 99));
        let p = partition_by_timestep(&a, &cfg).unwrap();
        assert_eq!(p.sizes(), &[99; 6]);
        let small = HeatConfig { h: 0.25, dt: 0.1, horizon: 0.2, obs_per_step: 3 };
        let a = assemble_forward(&small).unwrap();
        assert_eq!(partition_by_timestep(&a, &small).unwrap().sizes(), &[3, 3]);
    }

    #[test]
    fn zero_forcing_gives_zero_data() {
        let cfg = full_scale();
        let a = assemble_forward(&cfg).unwrap();
        assert!((&a * DVector::zeros(99)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn observed_nodes_spread() {
        let cfg = HeatConfig { h: 0.1, dt: 0.1, horizon: 0.2, obs_per_step: 3 };
        assert_eq!(cfg.observed_nodes(), vec![2, 4, 7]);
        assert_eq!(full_scale().observed_nodes(), (0..99).collect::<Vec<_>>());
    }

    #[test]
    fn config_rejects_bad_values() {
        let ok = full_scale();
        assert!(ok.validate().is_ok());
        assert!(HeatConfig { h: 0.03, ..ok }.validate().is_err());
        assert!(HeatConfig { dt: 0.07, ..ok }.validate().is_err());
        assert!(HeatConfig { obs_per_step: 100, ..ok }.validate().is_err());
        assert!(HeatConfig { dt: 0.0, ..ok }.validate().is_err());
    }

    #[test]
    fn kl_eigenvalues_sorted_positive() {
        let kl = KlExpansion::new(&KlFieldSpec::on_grid(&full_scale(), 10.0, 0.1, 8)).unwrap();
        let l = kl.eigenvalues();
        assert!(l.as_slice().windows(2).all(|w| w[0] >= w[1]));
        assert!(l[7] > 0.0);
        assert!(kl.captured_fraction() >= 0.999);
    }

    #[test]
    fn zero_variance_field() {
        let spec = KlFieldSpec::on_grid(&full_scale(), 0.0, 0.1, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_kl_field(&spec, &mut rng).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ensemble_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let kl8 = KlExpansion::new(&KlFieldSpec::on_grid(&full_scale(), 10.0, 0.1, 8)).unwrap();
        assert_eq!(draw_initial_ensemble(&kl8, 5, &mut rng).unwrap().centered_rank(), 4);
        assert_eq!(draw_initial_ensemble(&kl8, 2, &mut rng).unwrap().centered_rank(), 1);
        assert!(draw_initial_ensemble(&kl8, 1, &mut rng).is_err());
    }
}
