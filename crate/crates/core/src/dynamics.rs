//! Right-hand sides of the ensemble flows.
//!
//! Every Tikhonov variant moves particle `j` along
//! `dθ⁽ʲ⁾/dt = −P(t) ∇Φ_sel(θ⁽ʲ⁾)` with preconditioner
//!
//! | variant       | `P(t)`                         |
//! |---------------|--------------------------------|
//! | `Teki`        | `Ĉ_t`                          |
//! | `TekiVi`      | `Ĉ_t + α_vi C_vi`              |
//! | `TekiDimVi`   | `Ĉ_t + α_vi/(1+t) C_vi`        |
//!
//! and `Φ_sel` the full regularised potential, the potential of the shared
//! subset `i(t)` (single subsampling), or of the particle's own subset
//! `i(t; j)` (batch subsampling). The basic `Eki` variant uses the
//! unregularised data misfit in cross-covariance form,
//! `dθ⁽ʲ⁾/dt = −Ĉ^{θy}_t (Aθ⁽ʲ⁾ − y)`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DMatrixView, DMatrixViewMut, DVector, Dyn};

use crate::error::{Error, Result};
use crate::problem::Ensemble;
use crate::regularization::{AugmentedProblem, SubsampledProblem};

/// Metric `C_vi` used by variance inflation.
#[derive(Debug, Clone)]
pub enum InflationMetric {
    /// `C_vi = I` on the ambient parameter space.
    Identity,
    /// `C_vi = E Eᵀ` for an orthonormal basis `E`: the identity on the
    /// ensemble subspace, zero on its complement.
    Subspace(DMatrix<f64>),
    /// An arbitrary symmetric positive (semi-)definite matrix.
    Dense(DMatrix<f64>),
}

impl InflationMetric {
    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::Identity => Ok(()),
            Self::Subspace(e) if e.nrows() == d => Ok(()),
            Self::Dense(m) if m.nrows() == d && m.ncols() == d => {
                if crate::linalg::is_symmetric(m, 1e-12) && crate::linalg::min_eigenvalue(m) > -1e-12 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("inflation metric must be symmetric positive semidefinite".into()))
                }
            }
            _ => Err(Error::Dimension(format!("inflation metric does not act on dimension {d}"))),
        }
    }

    /// `out += scale · C_vi · g`, column by column.
    fn apply_add(&self, scale: f64, g: &DMatrix<f64>, out: &mut DMatrixViewMut<'_, f64>, tmp: &mut DMatrix<f64>) {
        match self {
            Self::Identity => {
                for (o, v) in out.iter_mut().zip(g.iter()) {
                    *o += scale * v;
                }
            }
            Self::Subspace(e) => {
                tmp.gemm_tr(1.0, e, g, 0.0);
                out.gemm(scale, e, tmp, 1.0);
            }
            Self::Dense(m) => {
                out.gemm(scale, m, g, 1.0);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Variant {
    Eki,
    Teki,
    TekiVi { alpha_vi: f64, c_vi: InflationMetric },
    TekiDimVi { alpha_vi: f64, c_vi: InflationMetric },
}

impl Variant {
    /// Inflation weight at time `t` (0 for the uninflated variants).
    pub fn inflation_weight(&self, t: f64) -> f64 {
        match self {
            Self::Eki | Self::Teki => 0.0,
            Self::TekiVi { alpha_vi, .. } => *alpha_vi,
            Self::TekiDimVi { alpha_vi, .. } => alpha_vi / (1.0 + t),
        }
    }

    fn metric(&self) -> Option<&InflationMetric> {
        match self {
            Self::TekiVi { c_vi, .. } | Self::TekiDimVi { c_vi, .. } => Some(c_vi),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsampling {
    None,
    Single,
    Batch,
}

/// Which potential each particle follows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    Full,
    Single(usize),
    Batch(Vec<usize>),
}

impl Selector {
    fn subset_of(&self, j: usize) -> Option<usize> {
        match self {
            Self::Full => None,
            Self::Single(i) => Some(*i),
            Self::Batch(v) => Some(v[j]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowSpec {
    variant: Variant,
    subsampling: Subsampling,
    problem: Arc<SubsampledProblem>,
}

/// Scratch buffers for allocation-free right-hand-side evaluation.
#[derive(Debug, Clone)]
pub struct RhsWorkspace {
    grad: DMatrix<f64>,
    centered: DMatrix<f64>,
    mean: DVector<f64>,
    gram: DMatrix<f64>,
    tmp: DMatrix<f64>,
    col: DVector<f64>,
}

impl RhsWorkspace {
    pub fn new(d: usize, n_ens: usize) -> Self {
        Self {
            grad: DMatrix::zeros(d, n_ens),
            centered: DMatrix::zeros(d, n_ens),
            mean: DVector::zeros(d),
            gram: DMatrix::zeros(n_ens, n_ens),
            tmp: DMatrix::zeros(0, 0),
            col: DVector::zeros(d),
        }
    }
}

impl FlowSpec {
    pub fn new(variant: Variant, subsampling: Subsampling, problem: Arc<SubsampledProblem>) -> Result<Self> {
        match &variant {
            Variant::TekiVi { alpha_vi, c_vi } | Variant::TekiDimVi { alpha_vi, c_vi } => {
                if !(*alpha_vi > 0.0) {
                    return Err(Error::InvalidParameter(format!("α_vi must be > 0, got {alpha_vi}")));
                }
                c_vi.validate(problem.dim())?;
            }
            _ => {}
        }
        Ok(Self { variant, subsampling, problem })
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn subsampling(&self) -> Subsampling {
        self.subsampling
    }

    pub fn problem(&self) -> &SubsampledProblem {
        &self.problem
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn check_selector(&self, sel: &Selector, n_ens: usize) -> Result<()> {
        let n_sub = self.problem.n_sub();
        match (self.subsampling, sel) {
            (Subsampling::None, Selector::Full) => Ok(()),
            (Subsampling::Single, Selector::Single(i)) if *i < n_sub => Ok(()),
            (Subsampling::Batch, Selector::Batch(v)) if v.len() == n_ens && v.iter().all(|&i| i < n_sub) => Ok(()),
            (s, sel) => Err(Error::InvalidParameter(format!(
                "selector {sel:?} does not match {s:?} subsampling with {n_sub} subsets and {n_ens} particles"
            ))),
        }
    }

    /// The potential followed by particle `j`.
    pub fn selected<'a>(&'a self, sel: &Selector, j: usize) -> &'a AugmentedProblem {
        match sel.subset_of(j) {
            None => self.problem.full(),
            Some(i) => self.problem.subset(i),
        }
    }

    /// Drift of every particle as a `d × N_ens` array.
    pub fn rhs(&self, ens: &Ensemble, t: f64, sel: &Selector) -> Result<DMatrix<f64>> {
        if ens.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "ensemble dimension {} does not match problem dimension {}",
                ens.dim(),
                self.dim()
            )));
        }
        self.check_selector(sel, ens.size())?;
        let (d, n) = (ens.dim(), ens.size());
        let mut out = DMatrix::zeros(d, n);
        let mut ws = RhsWorkspace::new(d, n);
        self.rhs_into(ens.particles().as_slice(), n, t, sel, out.as_mut_slice(), &mut ws);
        Ok(out)
    }

    /// Validated entry point for hot loops; `state` and `out` are
    /// column-major `d × n_ens` buffers.
    pub fn check(&self, n_ens: usize, sel: &Selector) -> Result<()> {
        self.check_selector(sel, n_ens)
    }

    /// Unchecked kernel behind [`FlowSpec::rhs`]. Callers must have validated
    /// the selector with [`FlowSpec::check`].
    pub fn rhs_into(&self, state: &[f64], n_ens: usize, t: f64, sel: &Selector, out: &mut [f64], ws: &mut RhsWorkspace) {
        let d = self.dim();
        let theta = DMatrixView::from_slice(state, d, n_ens);
        let mut out = DMatrixViewMut::from_slice(out, d, n_ens);
        let inv = 1.0 / (n_ens as f64 - 1.0);

        // centered particles
        ws.mean.fill(0.0);
        for col in theta.column_iter() {
            ws.mean += col;
        }
        ws.mean /= n_ens as f64;
        for (j, col) in theta.column_iter().enumerate() {
            let mut c = ws.centered.column_mut(j);
            c.copy_from(&col);
            c -= &ws.mean;
        }

        if let Variant::Eki = self.variant {
            self.eki_drift(&theta, sel, &mut out, ws, inv);
            return;
        }

        // gradients g⁽ʲ⁾ = ÃᵀÃθ⁽ʲ⁾ − Ãᵀỹ of the selected potentials
        match sel {
            Selector::Full | Selector::Single(_) => {
                let p = self.selected(sel, 0);
                ws.grad.gemm(1.0, p.normal_matrix(), &theta, 0.0);
                for mut col in ws.grad.column_iter_mut() {
                    col -= p.normal_rhs();
                }
            }
            Selector::Batch(idx) => {
                for (j, &i) in idx.iter().enumerate() {
                    let p = self.problem.subset(i);
                    ws.col.gemv(1.0, p.normal_matrix(), &theta.column(j), 0.0);
                    ws.col -= p.normal_rhs();
                    ws.grad.set_column(j, &ws.col);
                }
            }
        }

        // Ĉ g = 1/(N−1) Σ_k e⁽ᵏ⁾ ⟨e⁽ᵏ⁾, g⟩
        ws.gram.gemm_tr(1.0, &ws.centered, &ws.grad, 0.0);
        out.gemm(-inv, &ws.centered, &ws.gram, 0.0);

        let weight = self.variant.inflation_weight(t);
        if let Some(metric) = self.variant.metric() {
            if let InflationMetric::Subspace(e) = metric {
                if ws.tmp.shape() != (e.ncols(), n_ens) {
                    ws.tmp = DMatrix::zeros(e.ncols(), n_ens);
                }
            }
            metric.apply_add(-weight, &ws.grad, &mut out, &mut ws.tmp);
        }
    }

    fn eki_drift(
        &self,
        theta: &DMatrixView<'_, f64>,
        sel: &Selector,
        out: &mut DMatrixViewMut<'_, f64>,
        ws: &mut RhsWorkspace,
        inv: f64,
    ) {
        let n_ens = theta.ncols();
        out.fill(0.0);
        for j in 0..n_ens {
            let p = self.selected(sel, j);
            let a = p.data_operator();
            let y = p.data();
            let images = a * theta;
            let image_mean = images.column_mean();
            let residual = images.column(j) - y;
            for k in 0..n_ens {
                let w = (images.column(k) - &image_mean).dot(&residual);
                let mut o = out.column_mut(j);
                o.axpy(-inv * w, &ws.centered.column(k), 1.0);
            }
        }
    }
}

/// Largest distance of a particle from the affine space `offset + span(basis)`.
/// `basis` must have orthonormal columns.
pub fn subspace_projection_residual(ens: &Ensemble, basis: &DMatrix<f64>, offset: &DVector<f64>) -> f64 {
    ens.particles()
        .column_iter()
        .map(|col| {
            let v = col - offset;
            let coeff = basis.tr_mul(&v);
            (&v - basis * coeff).norm()
        })
        .fold(0.0, f64::max)
}

/// `gᵀ(ÃᵀÃ)⁻¹g` for `g = Ãᵀ(Ãθ⁽ʲ⁾ − ỹ)`, i.e. the squared gradient norm in
/// the metric induced by `ÃᵀÃ` (inner product `⟨·, (ÃᵀÃ)⁻¹ ·⟩`). It equals
/// `‖Ã(θ⁽ʲ⁾ − θ_sub)‖²` with `θ_sub` the subset minimiser and does not
/// increase along a flow with fixed data.
pub fn gradient_lyapunov(ens: &Ensemble, sub: &AugmentedProblem, j: usize) -> Result<f64> {
    let chol = sub.normal_cholesky()?;
    gradient_lyapunov_with(ens, sub, &chol, j)
}

/// As [`gradient_lyapunov`] with a precomputed Cholesky factor of `ÃᵀÃ`.
pub fn gradient_lyapunov_with(
    ens: &Ensemble,
    sub: &AugmentedProblem,
    chol: &Cholesky<f64, Dyn>,
    j: usize,
) -> Result<f64> {
    if j >= ens.size() {
        return Err(Error::InvalidParameter(format!("particle {j} out of range")));
    }
    let theta = ens.particle(j);
    let g = sub.normal_matrix() * &theta - sub.normal_rhs();
    let w = chol.solve(&g);
    Ok(g.dot(&w))
}
