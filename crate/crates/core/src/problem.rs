//! Linear inverse problems `A θ + η = y`, their partition into data subsets,
//! noise whitening, and the particle ensemble with its empirical moments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// A linear inverse problem with Gaussian noise covariance `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProblem {
    a: DMatrix<f64>,
    y: DVector<f64>,
    gamma: DMatrix<f64>,
    truth: Option<DVector<f64>>,
}

impl LinearProblem {
    pub fn new(a: DMatrix<f64>, y: DVector<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != y.len() || gamma.nrows() != y.len() || gamma.ncols() != y.len() {
            return Err(Error::Dimension(format!(
                "A is {}x{}, y has {} entries, gamma is {}x{}",
                a.nrows(),
                a.ncols(),
                y.len(),
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        if !linalg::is_symmetric(&gamma, 1e-12) {
            return Err(Error::InvalidNoise("noise covariance is not symmetric".into()));
        }
        Ok(Self { a, y, gamma, truth: None })
    }

    /// Problem with identity noise covariance.
    pub fn whitened(a: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(a, y, DMatrix::identity(n, n))
    }

    /// Attaches the ground-truth parameter used to synthesise the data.
    pub fn with_truth(mut self, truth: DVector<f64>) -> Result<Self> {
        if truth.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "truth has {} entries, parameter dimension is {}",
                truth.len(),
                self.dim()
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn truth(&self) -> Option<&DVector<f64>> {
        self.truth.as_ref()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }
}

/// Sizes of consecutive data blocks; block `i` owns rows
/// `offset(i)..offset(i) + sizes[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPartition {
    sizes: Vec<usize>,
}

impl DataPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Partition(format!(
                "need at least 2 data subsets, got {}",
                sizes.len()
            )));
        }
        if let Some(pos) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Partition(format!("block {pos} is empty")));
        }
        Ok(Self { sizes })
    }

    /// `n_sub` blocks of `block` rows each.
    pub fn uniform(n_sub: usize, block: usize) -> Result<Self> {
        Self::new(vec![block; n_sub])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_sub(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Row ranges of the blocks.
    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.sizes.iter().scan(0usize, |start, &len| {
            let r = *start..*start + len;
            *start += len;
            Some(r)
        })
    }
}

/// Finest block-diagonal decomposition of a square matrix: a block closes at
/// row `i` once no row up to `i` couples to a column beyond `i`.
fn diagonal_blocks(m: &DMatrix<f64>) -> Vec<std::ops::Range<usize>> {
    let n = m.nrows();
    let mut blocks = Vec::new();
    let mut start = 0;
    let mut reach = 0;
    for i in 0..n {
        let row_reach = (0..n).rev().find(|&j| m[(i, j)] != 0.0 || m[(j, i)] != 0.0).unwrap_or(i);
        reach = reach.max(row_reach).max(i);
        if reach == i {
            blocks.push(start..i + 1);
            start = i + 1;
        }
    }
    blocks
}

/// Transforms the problem to unit noise covariance by multiplying with the
/// symmetric inverse square root of Γ, one diagonal block at a time.
pub fn whiten(problem: &LinearProblem) -> Result<LinearProblem> {
    let gamma = &problem.gamma;
    let mut a = problem.a.clone();
    let mut y = problem.y.clone();
    for block in diagonal_blocks(gamma) {
        let len = block.len();
        if len == 1 {
            let g = gamma[(block.start, block.start)];
            if !(g > 0.0) {
                return Err(Error::InvalidNoise(format!(
                    "variance {g} at row {} is not positive",
                    block.start
                )));
            }
            if g == 1.0 {
                continue;
            }
            let s = 1.0 / g.sqrt();
            a.row_mut(block.start).scale_mut(s);
            y[block.start] *= s;
            continue;
        }
        let g = gamma.view((block.start, block.start), (len, len)).into_owned();
        let w = linalg::spd_inv_sqrt(&g, "noise covariance block")
            .map_err(|e| Error::InvalidNoise(e.to_string()))?;
        let a_blk = &w * problem.a.rows(block.start, len);
        a.rows_mut(block.start, len).copy_from(&a_blk);
        let y_blk = &w * problem.y.rows(block.start, len);
        y.rows_mut(block.start, len).copy_from(&y_blk);
    }
    let n = y.len();
    Ok(LinearProblem { a, y, gamma: DMatrix::identity(n, n), truth: problem.truth.clone() })
}

/// Splits the problem into the per-subset pairs `(A_i, y_i)`.
pub fn partition(
    problem: &LinearProblem,
    part: &DataPartition,
) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
    if part.total() != problem.n_obs() {
        return Err(Error::Partition(format!(
            "block sizes sum to {}, problem has {} observations",
            part.total(),
            problem.n_obs()
        )));
    }
    let gamma = &problem.gamma;
    let ranges: Vec<_> = part.ranges().collect();
    for (bi, rb) in ranges.iter().enumerate() {
        for (bj, cb) in ranges.iter().enumerate() {
            if bi == bj {
                continue;
            }
            let coupled = rb.clone().any(|i| cb.clone().any(|j| gamma[(i, j)] != 0.0));
            if coupled {
                return Err(Error::Partition(format!(
                    "noise covariance couples blocks {bi} and {bj}"
                )));
            }
        }
    }
    Ok(ranges
        .into_iter()
        .map(|r| {
            (
                problem.a.rows(r.start, r.len()).into_owned(),
                problem.y.rows(r.start, r.len()).into_owned(),
            )
        })
        .collect())
}

/// Particle ensemble stored column-wise as a `d × N_ens` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: DMatrix<f64>,
}

impl Ensemble {
    /// Any ensemble with at least two particles (collapsed ensembles allowed).
    pub fn new(particles: DMatrix<f64>) -> Result<Self> {
        if particles.ncols() < 2 {
            return Err(Error::Ensemble(format!(
                "need at least 2 particles, got {}",
                particles.ncols()
            )));
        }
        if particles.nrows() == 0 {
            return Err(Error::Ensemble("particles have dimension 0".into()));
        }
        Ok(Self { particles })
    }

    /// An initial ensemble: the centered particles must span an
    /// `N_ens − 1`-dimensional space.
    pub fn initial(particles: DMatrix<f64>) -> Result<Self> {
        let ens = Self::new(particles)?;
        let rank = ens.centered_rank();
        if rank != ens.size() - 1 {
            return Err(Error::Ensemble(format!(
                "centered particles have rank {rank}, need {}",
                ens.size() - 1
            )));
        }
        Ok(ens)
    }

    pub fn from_particles(particles: &[DVector<f64>]) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Ensemble("no particles".into()));
        }
        let d = particles[0].len();
        if particles.iter().any(|p| p.len() != d) {
            return Err(Error::Dimension("particles have differing dimensions".into()));
        }
        Self::new(DMatrix::from_columns(particles))
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn into_particles(self) -> DMatrix<f64> {
        self.particles
    }

    pub fn particle(&self, j: usize) -> DVector<f64> {
        self.particles.column(j).into_owned()
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    pub fn size(&self) -> usize {
        self.particles.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        empirical_mean(self)
    }

    /// Deviations `e⁽ʲ⁾ = θ⁽ʲ⁾ − θ̄` as columns.
    pub fn centered(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut c = self.particles.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        c
    }

    pub fn centered_rank(&self) -> usize {
        linalg::numerical_rank(&self.centered(), 1e-10)
    }
}

pub fn empirical_mean(ens: &Ensemble) -> DVector<f64> {
    ens.particles.column_mean()
}

/// `Ĉ = 1/(N−1) Σ (θ⁽ʲ⁾ − θ̄)(θ⁽ʲ⁾ − θ̄)ᵀ`.
pub fn empirical_covariance(ens: &Ensemble) -> DMatrix<f64> {
    let e = ens.centered();
    let c = &e * e.transpose() / (ens.size() as f64 - 1.0);
    (&c + c.transpose()) * 0.5
}

/// `Ĉ^{θy} = 1/(N−1) Σ (θ⁽ʲ⁾ − θ̄)(Aθ⁽ʲ⁾ − Aθ̄)ᵀ`, evaluated through the
/// forward images of the particles.
pub fn cross_covariance(ens: &Ensemble, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != ens.dim() {
        return Err(Error::Dimension(format!(
            "operator has {} columns, parameters have dimension {}",
            a.ncols(),
            ens.dim()
        )));
    }
    let images = a * &ens.particles;
    let image_mean = images.column_mean();
    let mut centered_images = images;
    for mut col in centered_images.column_iter_mut() {
        col -= &image_mean;
    }
    Ok(ens.centered() * centered_images.transpose() / (ens.size() as f64 - 1.0))
}
