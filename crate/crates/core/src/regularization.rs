//! Tikhonov augmentation of the forward operator,
//!
//! ```text
//! Ã = [ A ; (α C₀)^{1/2} ],   ỹ = [ y ; 0 ],
//! ```
//!
//! so that `½‖ỹ − Ãθ‖² = ½‖y − Aθ‖² + (α/2) θᵀC₀θ`. A data subset carries
//! the weight `α / N_sub`, which makes the subset potentials sum to the full
//! regularised potential.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{self, DataPartition, LinearProblem};

/// A Tikhonov-augmented least-squares problem. The first `n_data` rows of
/// `a_tilde` are the data rows; the bottom `d` rows hold the prior factor.
#[derive(Debug, Clone)]
pub struct AugmentedProblem {
    a_tilde: DMatrix<f64>,
    y_tilde: DVector<f64>,
    alpha: f64,
    alpha_eff: f64,
    c0_sqrt: DMatrix<f64>,
    n_data: usize,
    normal: DMatrix<f64>,
    normal_rhs: DVector<f64>,
}

fn check_alpha_and_prior(alpha: f64, c0: &DMatrix<f64>, d: usize) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("regularisation weight must be > 0, got {alpha}")));
    }
    if c0.nrows() != d || c0.ncols() != d {
        return Err(Error::Dimension(format!(
            "prior covariance is {}x{}, parameter dimension is {d}",
            c0.nrows(),
            c0.ncols()
        )));
    }
    Ok(())
}

impl AugmentedProblem {
    fn build(a: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, alpha_eff: f64, c0: &DMatrix<f64>) -> Result<Self> {
        let d = a.ncols();
        check_alpha_and_prior(alpha, c0, d)?;
        if a.nrows() != y.len() {
            return Err(Error::Dimension(format!("A has {} rows, y has {} entries", a.nrows(), y.len())));
        }
        let c0_sqrt = linalg::spd_sqrt(c0, "prior covariance C0")?;
        let reg_block = linalg::spd_sqrt(&(c0 * alpha_eff), "prior covariance α·C0")?;
        let n_data = a.nrows();
        let mut a_tilde = DMatrix::zeros(n_data + d, d);
        a_tilde.rows_mut(0, n_data).copy_from(a);
        a_tilde.rows_mut(n_data, d).copy_from(&reg_block);
        let mut y_tilde = DVector::zeros(n_data + d);
        y_tilde.rows_mut(0, n_data).copy_from(y);
        let normal = a_tilde.tr_mul(&a_tilde);
        let normal = (&normal + normal.transpose()) * 0.5;
        let normal_rhs = a_tilde.tr_mul(&y_tilde);
        Ok(Self { a_tilde, y_tilde, alpha, alpha_eff, c0_sqrt, n_data, normal, normal_rhs })
    }

    pub fn a_tilde(&self) -> &DMatrix<f64> {
        &self.a_tilde
    }

    pub fn y_tilde(&self) -> &DVector<f64> {
        &self.y_tilde
    }

    /// Data rows `A` (without the prior block).
    pub fn data_operator(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.a_tilde.rows(0, self.n_data)
    }

    pub fn data(&self) -> nalgebra::DVectorView<'_, f64> {
        self.y_tilde.rows(0, self.n_data)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Weight actually applied to `C₀` in this problem (`α` or `α/N_sub`).
    pub fn alpha_eff(&self) -> f64 {
        self.alpha_eff
    }

    pub fn c0_sqrt(&self) -> &DMatrix<f64> {
        &self.c0_sqrt
    }

    pub fn n_data(&self) -> usize {
        self.n_data
    }

    pub fn dim(&self) -> usize {
        self.a_tilde.ncols()
    }

    /// `ÃᵀÃ`.
    pub fn normal_matrix(&self) -> &DMatrix<f64> {
        &self.normal
    }

    /// `Ãᵀỹ`.
    pub fn normal_rhs(&self) -> &DVector<f64> {
        &self.normal_rhs
    }

    fn check_dim(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "θ has {} entries, problem dimension is {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Unconstrained minimiser `(ÃᵀÃ)⁻¹Ãᵀỹ`.
    pub fn minimiser(&self) -> Result<DVector<f64>> {
        let chol = self.normal_cholesky()?;
        Ok(chol.solve(&self.normal_rhs))
    }

    pub fn normal_cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.normal.clone())
            .ok_or_else(|| Error::Singular("ÃᵀÃ is not positive definite".into()))
    }
}

/// Augments the full problem with weight `α` on `C₀`.
pub fn augment_full(a: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, c0: &DMatrix<f64>) -> Result<AugmentedProblem> {
    AugmentedProblem::build(a, y, alpha, alpha, c0)
}

/// Augments one data subset with weight `α / n_sub` on `C₀`.
pub fn augment_subset(
    a_i: &DMatrix<f64>,
    y_i: &DVector<f64>,
    alpha: f64,
    n_sub: usize,
    c0: &DMatrix<f64>,
) -> Result<AugmentedProblem> {
    if n_sub < 2 {
        return Err(Error::Partition(format!("need at least 2 subsets, got {n_sub}")));
    }
    AugmentedProblem::build(a_i, y_i, alpha, alpha / n_sub as f64, c0)
}

/// `½‖ỹ − Ãθ‖²`.
pub fn potential(p: &AugmentedProblem, theta: &DVector<f64>) -> Result<f64> {
    p.check_dim(theta)?;
    let r = &p.y_tilde - &p.a_tilde * theta;
    Ok(0.5 * r.norm_squared())
}

/// `Ãᵀ(Ãθ − ỹ)`.
pub fn potential_gradient(p: &AugmentedProblem, theta: &DVector<f64>) -> Result<DVector<f64>> {
    p.check_dim(theta)?;
    let r = &p.a_tilde * theta - &p.y_tilde;
    Ok(p.a_tilde.tr_mul(&r))
}

/// The whitened full problem together with its augmented subsets.
#[derive(Debug, Clone)]
pub struct SubsampledProblem {
    full: AugmentedProblem,
    subsets: Vec<AugmentedProblem>,
    partition: DataPartition,
}

impl SubsampledProblem {
    /// `problem` must already be whitened (identity noise covariance).
    pub fn new(problem: &LinearProblem, partition: DataPartition, alpha: f64, c0: &DMatrix<f64>) -> Result<Self> {
        let n = problem.n_obs();
        if problem.gamma() != &DMatrix::<f64>::identity(n, n) {
            return Err(Error::InvalidNoise("subsampled problems are built from whitened data".into()));
        }
        let full = augment_full(problem.a(), problem.y(), alpha, c0)?;
        let blocks = problem::partition(problem, &partition)?;
        let n_sub = partition.n_sub();
        let subsets = blocks
            .iter()
            .map(|(a_i, y_i)| augment_subset(a_i, y_i, alpha, n_sub, c0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { full, subsets, partition })
    }

    pub fn full(&self) -> &AugmentedProblem {
        &self.full
    }

    pub fn subsets(&self) -> &[AugmentedProblem] {
        &self.subsets
    }

    pub fn subset(&self, i: usize) -> &AugmentedProblem {
        &self.subsets[i]
    }

    pub fn partition(&self) -> &DataPartition {
        &self.partition
    }

    pub fn n_sub(&self) -> usize {
        self.subsets.len()
    }

    pub fn dim(&self) -> usize {
        self.full.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> AugmentedProblem {
        augment_full(
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 1.0),
            1.0,
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn scalar_augmentation() {
        let p = scalar();
        assert_eq!(p.a_tilde(), &DMatrix::from_column_slice(2, 1, &[1.0, 1.0]));
        assert_eq!(p.y_tilde(), &DVector::from_vec(vec![1.0, 0.0]));
        assert!((p.minimiser().unwrap()[0] - 0.5).abs() < 1e-15);
        let half = DVector::from_element(1, 0.5);
        assert!((potential(&p, &half).unwrap() - 0.25).abs() < 1e-15);
        let zero = DVector::zeros(1);
        assert_eq!(potential(&p, &zero).unwrap(), 0.5);
        assert_eq!(potential_gradient(&p, &zero).unwrap()[0], -1.0);
    }

    #[test]
    fn zero_parameter_potential_is_half_data_norm() {
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        for alpha in [0.1, 1.0, 25.0] {
            let p = augment_full(&DMatrix::from_element(3, 2, 0.7), &y, alpha, &DMatrix::identity(2, 2)).unwrap();
            assert!((potential(&p, &DVector::zeros(2)).unwrap() - 0.5 * y.norm_squared()).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_split_sums_to_full() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let yi = DVector::from_element(1, 1.0);
        let c0 = DMatrix::from_element(1, 1, 1.0);
        let p1 = augment_subset(&one, &yi, 2.0, 2, &c0).unwrap();
        let p2 = augment_subset(&one, &yi, 2.0, 2, &c0).unwrap();
        assert_eq!(p1.alpha_eff(), 1.0);
        let full = augment_full(
            &DMatrix::from_element(2, 1, 1.0),
            &DVector::from_element(2, 1.0),
            2.0,
            &c0,
        )
        .unwrap();
        let zero = DVector::zeros(1);
        let sum = potential(&p1, &zero).unwrap() + potential(&p2, &zero).unwrap();
        assert_eq!(sum, 1.0);
        assert_eq!(potential(&full, &zero).unwrap(), 1.0);
    }

    #[test]
    fn scalar_row_subsets_have_expected_shape() {
        let d = 3;
        let a = DMatrix::from_fn(4, d, |i, j| (i + j) as f64);
        let y = DVector::from_element(4, 1.0);
        let p = LinearProblem::whitened(a, y).unwrap();
        let sp = SubsampledProblem::new(&p, DataPartition::uniform(4, 1).unwrap(), 1.0, &DMatrix::identity(d, d))
            .unwrap();
        for s in sp.subsets() {
            assert_eq!(s.a_tilde().shape(), (1 + d, d));
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 1.0);
        let c0 = DMatrix::from_element(1, 1, 1.0);
        assert!(augment_full(&a, &y, 0.0, &c0).is_err());
        assert!(augment_full(&a, &y, -1.0, &c0).is_err());
        assert!(augment_full(&a, &y, 1.0, &DMatrix::from_element(1, 1, -1.0)).is_err());
        assert!(augment_subset(&a, &y, 1.0, 1, &c0).is_err());
        let p = scalar();
        assert!(potential(&p, &DVector::zeros(2)).is_err());
        assert!(potential_gradient(&p, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn prior_block_is_scaled_square_root() {
        let c0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let p = augment_subset(&DMatrix::zeros(1, 2), &DVector::zeros(1), 6.0, 3, &c0).unwrap();
        let block = p.a_tilde().rows(1, 2).into_owned();
        assert!((&block * &block - &c0 * 2.0).abs().max() < 1e-13);
        assert!(p.y_tilde().rows(1, 2).iter().all(|&v| v == 0.0));
        // injectivity floor
        let lmin = linalg::min_eigenvalue(p.normal_matrix());
        assert!(lmin >= 2.0 * linalg::min_eigenvalue(&c0) - 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_minimiser() {
        let a = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64).sin());
        let y = DVector::from_fn(5, |i, _| (i as f64).cos());
        let p = augment_full(&a, &y, 0.5, &DMatrix::identity(3, 3)).unwrap();
        let theta = p.minimiser().unwrap();
        let g = potential_gradient(&p, &theta).unwrap();
        assert!(g.norm() <= 1e-10 * p.normal_rhs().norm());
    }
}
