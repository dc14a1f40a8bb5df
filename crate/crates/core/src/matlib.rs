//! Dense matrix helpers for the vectorization toolkit.
//!
//! `vec` stacks columns top to bottom. `vec_plus` stacks the diagonal and
//! lower triangle of a symmetric matrix column by column with the
//! off-diagonal entries doubled, so that for any symmetric `P`
//!
//! ```text
//! vec(P) = duplication(n) * vec_plus(P)
//! ```

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, SlqError};

pub type Matrix = DMatrix<f64>;

/// Default tolerance for positive-definiteness checks.
pub const PD_TOL: f64 = 1e-10;

/// Singular values below `RCOND * sigma_max` count as zero.
pub const RCOND: f64 = 1e-10;

/// Number of free parameters of an `n x n` symmetric matrix.
pub fn half_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Symmetric matrix stored as its packed lower triangle (column-major).
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    lower: Vec<f64>,
}

impl SymMatrix {
    pub fn from_lower(dim: usize, lower: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(SlqError::InvalidInput(
                "symmetric matrix dimension must be >= 1".into(),
            ));
        }
        if lower.len() != half_dim(dim) {
            return Err(SlqError::DimensionMismatch {
                context: "SymMatrix::from_lower",
                expected: half_dim(dim).to_string(),
                actual: lower.len().to_string(),
            });
        }
        if lower.iter().any(|v| !v.is_finite()) {
            return Err(SlqError::NonFinite("symmetric matrix"));
        }
        Ok(Self { dim, lower })
    }

    /// Builds from a full matrix, rejecting asymmetry beyond a relative `1e-9`.
    pub fn from_full(m: &Matrix) -> Result<Self> {
        check_square(m, "SymMatrix::from_full")?;
        let n = m.nrows();
        let scale = m.amax().max(1.0);
        for j in 0..n {
            for i in j + 1..n {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                    return Err(SlqError::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Self::symmetrize(m)
    }

    /// Symmetric part `(M + M') / 2` of a square matrix.
    pub fn symmetrize(m: &Matrix) -> Result<Self> {
        check_square(m, "SymMatrix::symmetrize")?;
        let n = m.nrows();
        let mut lower = Vec::with_capacity(half_dim(n));
        for j in 0..n {
            for i in j..n {
                lower.push(if i == j {
                    m[(i, i)]
                } else {
                    0.5 * (m[(i, j)] + m[(j, i)])
                });
            }
        }
        Self::from_lower(n, lower)
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_full(&Matrix::identity(dim, dim)).expect("identity is symmetric")
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            lower: vec![0.0; half_dim(dim.max(1))],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Packed lower triangle, column by column.
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.lower[lower_offset(self.dim, r, c)]
    }

    pub fn to_full(&self) -> Matrix {
        Matrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.to_full().norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.to_full()).eigenvalues.min()
    }
}

#[inline]
fn lower_offset(n: usize, i: usize, j: usize) -> usize {
    // columns 0..j hold n, n-1, ..., n-j+1 entries
    j * n - j * j.saturating_sub(1) / 2 + (i - j)
}

fn check_square(m: &Matrix, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(SlqError::DimensionMismatch {
            context,
            expected: "square matrix".into(),
            actual: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

/// Returns an error naming `what` if any entry is NaN or infinite.
pub fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SlqError::NonFinite(what))
    }
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Column-stacking vectorization, returned as an `rows*cols x 1` matrix.
pub fn vec(m: &Matrix) -> Matrix {
    // nalgebra storage is column-major
    Matrix::from_column_slice(m.len(), 1, m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(SlqError::DimensionMismatch {
            context: "unvec",
            expected: (rows * cols).to_string(),
            actual: v.len().to_string(),
        });
    }
    Ok(Matrix::from_column_slice(rows, cols, v))
}

pub fn vec_plus(p: &SymMatrix) -> Matrix {
    let n = p.dim();
    let mut out = Vec::with_capacity(half_dim(n));
    for j in 0..n {
        for i in j..n {
            let v = p.get(i, j);
            out.push(if i == j { v } else { 2.0 * v });
        }
    }
    Matrix::from_column_slice(out.len(), 1, &out)
}

/// Inverse of [`vec_plus`] for an `n x n` symmetric matrix.
pub fn vec_plus_inverse(v: &[f64], n: usize) -> Result<SymMatrix> {
    if v.len() != half_dim(n) {
        return Err(SlqError::DimensionMismatch {
            context: "vec_plus_inverse",
            expected: half_dim(n).to_string(),
            actual: v.len().to_string(),
        });
    }
    let mut lower = Vec::with_capacity(v.len());
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            lower.push(if i == j { v[k] } else { 0.5 * v[k] });
            k += 1;
        }
    }
    SymMatrix::from_lower(n, lower)
}

/// The `n^2 x N` matrix mapping `vec_plus(P)` to `vec(P)`.
pub fn duplication(n: usize) -> Matrix {
    let mut t = Matrix::zeros(n * n, half_dim(n));
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                t[(j * n + i, k)] = 1.0;
            } else {
                t[(j * n + i, k)] = 0.5;
                t[(i * n + j, k)] = 0.5;
            }
            k += 1;
        }
    }
    t
}

/// Smallest-eigenvalue test `lambda_min(p) > tol`.
///
/// Cholesky on `p - tol*I` decides the clear cases; when a pivot comes out
/// tiny relative to the matrix scale the answer is confirmed with a
/// symmetric eigendecomposition.
pub fn is_positive_definite(p: &SymMatrix, tol: f64) -> bool {
    let full = p.to_full();
    let n = p.dim();
    let shifted = &full - Matrix::identity(n, n) * tol;
    let scale = full.amax().max(f64::MIN_POSITIVE);
    let near_singular = match shifted.clone().cholesky() {
        Some(chol) => {
            let min_pivot = chol
                .l_dirty()
                .diagonal()
                .iter()
                .fold(f64::INFINITY, |m, v| m.min(v * v));
            min_pivot <= f64::EPSILON.sqrt() * scale
        }
        None => {
            // A failed factorization of a matrix whose shifted diagonal is
            // clearly non-positive needs no second opinion.
            if shifted
                .diagonal()
                .iter()
                .any(|&d| d < -f64::EPSILON.sqrt() * scale)
            {
                return false;
            }
            true
        }
    };
    if near_singular {
        SymmetricEigen::new(full).eigenvalues.min() > tol
    } else {
        true
    }
}

/// Least-squares solution together with the 2-norm condition number of `a`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub solution: Matrix,
    pub condition: f64,
}

/// Solves `min ||a x - b||` through an SVD of `a`.
pub fn solve_least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    least_squares(a, b).map(|ls| ls.solution)
}

pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<LeastSquares> {
    if a.nrows() != b.nrows() {
        return Err(SlqError::DimensionMismatch {
            context: "solve_least_squares",
            expected: format!("{} rows in b", a.nrows()),
            actual: b.nrows().to_string(),
        });
    }
    ensure_finite(a, "least-squares matrix")?;
    ensure_finite(b, "least-squares right-hand side")?;
    let cols = a.ncols();
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let sigma_max = sv.max();
    let sigma_min = if a.nrows() < cols { 0.0 } else { sv.min() };
    let condition = if sigma_min > 0.0 {
        sigma_max / sigma_min
    } else {
        f64::INFINITY
    };
    let threshold = RCOND * sigma_max;
    if sigma_max == 0.0 || a.nrows() < cols || sigma_min <= threshold {
        let rank = sv.iter().filter(|&&s| s > threshold && s > 0.0).count();
        return Err(SlqError::RankDeficient {
            rank,
            cols,
            condition,
        });
    }
    let solution = svd
        .solve(b, 0.0)
        .map_err(|e| SlqError::InvalidInput(format!("SVD solve failed: {e}")))?;
    Ok(LeastSquares {
        solution,
        condition,
    })
}

/// 2-norm condition number, infinite for rank-deficient input.
pub fn condition_number(a: &Matrix) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let min = if a.nrows() < a.ncols() { 0.0 } else { sv.min() };
    if min > 0.0 {
        sv.max() / min
    } else {
        f64::INFINITY
    }
}
