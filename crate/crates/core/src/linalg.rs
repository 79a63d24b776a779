//! Symmetric positive-definite factorization and the trace forms built on it.

use nalgebra::DMatrix;

use crate::error::{MvstError, Result};

pub type Matrix = DMatrix<f64>;

const SYMMETRY_TOL: f64 = 1e-10;
const JITTER_SCALE: f64 = 1e-8;

/// Cholesky factor `A = L Lᵀ` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: Matrix,
    log_det: f64,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// ln |A|, twice the sum of the logs of the diagonal of `L`.
    pub fn log_determinant(&self) -> f64 {
        self.log_det
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// `L⁻¹ B`.
    pub fn solve_lower(&self, b: &Matrix) -> Matrix {
        self.lower.solve_lower_triangular(b).expect("cholesky factor has a nonzero diagonal")
    }

    /// `A⁻¹ B`.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        let y = self.solve_lower(b);
        self.lower.tr_solve_lower_triangular(&y).expect("cholesky factor has a nonzero diagonal")
    }

    /// `B A⁻¹`, using the symmetry of `A`.
    pub fn solve_right(&self, b: &Matrix) -> Matrix {
        self.solve(&b.transpose()).transpose()
    }

    pub fn inverse(&self) -> Matrix {
        self.solve(&Matrix::identity(self.dim(), self.dim()))
    }

    pub fn reconstruct(&self) -> Matrix {
        &self.lower * self.lower.transpose()
    }
}

fn max_asymmetry(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Returns `(A + Aᵀ)/2`, or an error when `A` is not symmetric to within 1e-10
/// relative to its largest entry.
pub fn symmetrize(a: &Matrix) -> Result<Matrix> {
    if a.nrows() != a.ncols() {
        return Err(MvstError::DimensionMismatch {
            expected: "square matrix".into(),
            found: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    let scale = a.amax().max(1.0);
    let asymmetry = max_asymmetry(a);
    if asymmetry > SYMMETRY_TOL * scale || asymmetry.is_nan() {
        return Err(MvstError::NotSymmetric { asymmetry });
    }
    Ok((a + a.transpose()) * 0.5)
}

fn cholesky(a: &Matrix) -> Result<SpdFactor> {
    let n = a.nrows();
    let mut lower = Matrix::zeros(n, n);
    let mut log_det = 0.0;
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= lower[(j, k)] * lower[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(MvstError::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        lower[(j, j)] = ljj;
        log_det += 2.0 * ljj.ln();
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= lower[(i, k)] * lower[(j, k)];
            }
            lower[(i, j)] = s / ljj;
        }
    }
    Ok(SpdFactor { lower, log_det })
}

/// Factorizes a symmetric positive-definite matrix.
pub fn spd_factorize(a: &Matrix) -> Result<SpdFactor> {
    let sym = symmetrize(a)?;
    cholesky(&sym)
}

/// Symmetrizes and factorizes `a`, adding `1e-8 · mean(diag)` to the diagonal
/// once if the first attempt fails. Returns the matrix actually factorized.
pub fn spd_factorize_jittered(a: &Matrix, what: &str) -> Result<(Matrix, SpdFactor)> {
    let sym = symmetrize(a).map_err(|_| MvstError::DegenerateScatter(what.to_string()))?;
    match cholesky(&sym) {
        Ok(f) => Ok((sym, f)),
        Err(_) => {
            let n = sym.nrows();
            let mean_diag = sym.diagonal().sum() / n as f64;
            let eps = if mean_diag > 0.0 && mean_diag.is_finite() { JITTER_SCALE * mean_diag } else { JITTER_SCALE };
            log::debug!("jittering {what} by {eps:e}");
            let jittered = &sym + Matrix::identity(n, n) * eps;
            let f = cholesky(&jittered).map_err(|_| MvstError::DegenerateScatter(what.to_string()))?;
            Ok((jittered, f))
        }
    }
}

/// Frobenius inner product `tr(A Bᵀ)`.
pub fn frobenius_inner(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Kronecker product `A ⊗ B`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}
