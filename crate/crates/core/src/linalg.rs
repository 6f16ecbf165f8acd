//! Small dense linear-algebra helpers shared across modules, plus the plain-text
//! matrix fixture format.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest absolute asymmetry `max |M - Mᵀ|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Symmetric to within `rel_tol` relative to the largest entry.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= rel_tol * max_abs(m).max(f64::MIN_POSITIVE)
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| i == j || m[(i, j)] == 0.0))
}

/// Symmetric eigendecomposition after explicit symmetrisation.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    sym_eigen(m).eigenvalues.min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    sym_eigen(m).eigenvalues.max()
}

/// Applies `f` to the spectrum of a symmetric positive-definite matrix and
/// reassembles `V f(Λ) Vᵀ`. Diagonal inputs are handled entrywise so that
/// the identity maps to itself bit-for-bit. Fails if any eigenvalue is not
/// strictly positive.
pub fn spd_function(m: &DMatrix<f64>, f: impl Fn(f64) -> f64, what: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{what}: matrix must be square")));
    }
    if !is_symmetric(m, 1e-12) {
        return Err(Error::InvalidParameter(format!("{what}: matrix is not symmetric")));
    }
    if is_diagonal(m) {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            let v = m[(i, i)];
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{what}: not positive definite (diagonal entry {v})"
                )));
            }
            out[(i, i)] = f(v);
        }
        return Ok(out);
    }
    let eig = sym_eigen(m);
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "{what}: not positive definite (eigenvalue {bad:e})"
        )));
    }
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = f(*lambda);
        scaled.column_mut(j).scale_mut(s);
    }
    let out = scaled * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

pub fn spd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    spd_function(m, f64::sqrt, what)
}

pub fn spd_inv_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    spd_function(m, |l| 1.0 / l.sqrt(), what)
}

/// Squared spectral norm `‖M‖₂² = λ_max(MᵀM)`.
pub fn spectral_norm_sq(m: &DMatrix<f64>) -> f64 {
    max_eigenvalue(&m.tr_mul(m))
}

/// Numerical rank from singular values above `rel_tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Writes a matrix as text: a header line `# rows cols` followed by one
/// comma-separated line per row. Values use the shortest round-trip
/// representation, so reading back is lossless.
pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    writeln!(w, "# {} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let mut first = true;
        for j in 0..m.ncols() {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            write!(w, "{}", m[(i, j)])?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_vector<W: Write>(w: W, v: &DVector<f64>) -> std::io::Result<()> {
    let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    write_matrix(w, &m)
}

/// Reads the format produced by [`write_matrix`].
pub fn read_matrix<R: BufRead>(r: R) -> Result<DMatrix<f64>> {
    let bad = |msg: String| Error::Config(format!("matrix fixture: {msg}"));
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad("empty input".into()))??;
    let dims: Vec<usize> = header
        .trim_start_matches('#')
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(format!("header `{header}`: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(bad(format!("header `{header}` must be `# rows cols`")));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        if row.len() != cols {
            return Err(bad(format!("row {} has {} entries, expected {cols}", i + 1, row.len())));
        }
        data.extend(row);
    }
    if data.len() != rows * cols {
        return Err(bad(format!("expected {rows} rows, found {}", data.len() / cols.max(1))));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}
