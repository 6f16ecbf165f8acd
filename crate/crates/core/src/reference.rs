//! Reference solution restricted to the affine span of the initial ensemble.
//!
//! The flow never leaves `θ̄(0) + span{θ⁽ʲ⁾(0) − θ̄(0)}`, so the relevant
//! target is the Tikhonov minimiser over that affine set rather than over
//! the whole parameter space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::Ensemble;
use crate::regularization::AugmentedProblem;

/// Orthonormal basis `E` of the centered initial particles together with
/// the component `θ0⊥ = θ̄ − E Eᵀ θ̄` of the mean orthogonal to it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceFrame {
    basis: DMatrix<f64>,
    offset: DVector<f64>,
}

impl SubspaceFrame {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Coordinates `Eᵀ θ` of a parameter.
    pub fn coordinates(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(theta)
    }

    /// `E c + θ0⊥`.
    pub fn embed(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.basis * c + &self.offset
    }
}

pub fn build_frame(ens: &Ensemble) -> Result<SubspaceFrame> {
    let centered = ens.centered();
    let want = ens.size() - 1;
    let svd = centered.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Singular("SVD did not return left vectors".into()))?;
    let smax = svd.singular_values.max();
    let mut keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * smax).collect();
    if smax == 0.0 {
        keep.clear();
    }
    if keep.len() != want {
        return Err(Error::Ensemble(format!("centered initial ensemble has rank {}, need {want}", keep.len())));
    }
    keep.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let basis = u.select_columns(&keep);
    let mean = ens.mean();
    let offset = &mean - &basis * basis.tr_mul(&mean);
    Ok(SubspaceFrame { basis, offset })
}

/// Minimiser of `‖ỹ − Ãθ‖²` over `θ = E c + θ0⊥`, by a Householder QR
/// of `ÃE`. Returns `(c, θ*)`.
pub fn constrained_tikhonov(p: &AugmentedProblem, frame: &SubspaceFrame) -> Result<(DVector<f64>, DVector<f64>)> {
    if p.dim() != frame.basis.nrows() {
        return Err(Error::Dimension(format!("problem dimension {}, frame dimension {}", p.dim(), frame.basis.nrows())));
    }
    let ae = p.a_tilde() * &frame.basis;
    let rhs = p.y_tilde() - p.a_tilde() * &frame.offset;
    let qr = ae.qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if r.diagonal().iter().any(|&v| v.abs() <= 1e-13 * scale) {
        return Err(Error::Singular("restricted operator is rank deficient".into()));
    }
    let qty = qr.q().tr_mul(&rhs);
    let c = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let theta = frame.embed(&c);
    Ok((c, theta))
}
