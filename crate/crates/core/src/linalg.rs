//! Small dense linear-algebra helpers shared by the rate and solver code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type RealMatrix = DMatrix<f64>;
pub type ComplexMatrix = DMatrix<Complex64>;
pub type RealVector = DVector<f64>;

/// Diagonal loading applied before inverting interference-plus-noise matrices.
pub const INVERSION_JITTER: f64 = 1e-10;

/// Eigenvalues below this are treated as zero when taking square roots.
pub const SQRT_EIG_FLOOR: f64 = 1e-12;

/// `ln det(m)` for a symmetric positive definite matrix, `None` otherwise.
pub fn logdet_spd(m: &RealMatrix) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// Inverse of a symmetric positive definite matrix with `jitter * I` added first.
pub fn inverse_spd(m: &RealMatrix, jitter: f64) -> Result<RealMatrix> {
    let n = m.nrows();
    let loaded = m + RealMatrix::identity(n, n) * jitter;
    let chol = loaded
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{n}x{n} matrix")))?;
    let inv = chol.inverse();
    Ok(symmetrize(&inv))
}

pub fn symmetrize(m: &RealMatrix) -> RealMatrix {
    (m + m.transpose()) * 0.5
}

/// Symmetric PSD square root via eigendecomposition with small eigenvalues clamped to zero.
pub fn sym_sqrt(m: &RealMatrix) -> RealMatrix {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut out = RealMatrix::zeros(n, n);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= SQRT_EIG_FLOOR {
            continue;
        }
        let v = eig.eigenvectors.column(idx);
        out += v * v.transpose() * lambda.sqrt();
    }
    out
}

pub fn min_eigenvalue(m: &RealMatrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_psd(m: &RealMatrix, tol: f64) -> bool {
    min_eigenvalue(m) >= -tol
}

/// `Tr(a b)` without forming the product.
pub fn trace_of_product(a: &RealMatrix, b: &RealMatrix) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Frobenius inner product `sum_ij a_ij b_ij`.
pub fn frobenius_inner(a: &RealMatrix, b: &RealMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn all_finite_complex(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Coordinates of a symmetric matrix block in a fixed linear basis.
///
/// Improper signals use the full symmetric basis; proper signals use the
/// `[[A, -B], [B, A]]` basis with `A` symmetric and `B` skew-symmetric, so
/// the structure constraint is satisfied by construction.
#[derive(Debug, Clone)]
pub struct SymBasis {
    dim: usize,
    mats: Vec<RealMatrix>,
}

impl SymBasis {
    pub fn full(dim: usize) -> Self {
        let mut mats = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                let mut e = RealMatrix::zeros(dim, dim);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                mats.push(e);
            }
        }
        Self { dim, mats }
    }

    /// Basis of proper-structured symmetric matrices of size `2n`.
    pub fn proper(complex_dim: usize) -> Self {
        let n = complex_dim;
        let dim = 2 * n;
        let mut mats = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in i..n {
                let mut e = RealMatrix::zeros(dim, dim);
                for (r, c) in [(i, j), (j, i), (n + i, n + j), (n + j, n + i)] {
                    e[(r, c)] = 1.0;
                }
                mats.push(e);
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                // B has B[j,i] = 1, B[i,j] = -1; the block is [[0,-B],[B,0]].
                let mut e = RealMatrix::zeros(dim, dim);
                e[(n + j, i)] = 1.0;
                e[(n + i, j)] = -1.0;
                e[(j, n + i)] = -1.0;
                e[(i, n + j)] = 1.0;
                mats.push(e);
            }
        }
        Self { dim, mats }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn matrices(&self) -> &[RealMatrix] {
        &self.mats
    }

    pub fn assemble(&self, coords: &[f64]) -> RealMatrix {
        let mut out = RealMatrix::zeros(self.dim, self.dim);
        for (c, e) in coords.iter().zip(&self.mats) {
            out += e * *c;
        }
        out
    }

    /// Orthogonal projection onto the basis span (the basis is Frobenius-orthogonal).
    pub fn coordinates(&self, m: &RealMatrix) -> Vec<f64> {
        self.mats
            .iter()
            .map(|e| frobenius_inner(m, e) / frobenius_inner(e, e))
            .collect()
    }
}

/// `true` when the four half-size blocks satisfy `TL = BR` and `TR = -BL`.
pub fn is_proper_structured(m: &RealMatrix, tol: f64) -> bool {
    if m.nrows() % 2 != 0 || m.ncols() % 2 != 0 {
        return false;
    }
    let (r, c) = (m.nrows() / 2, m.ncols() / 2);
    for i in 0..r {
        for j in 0..c {
            if (m[(i, j)] - m[(r + i, c + j)]).abs() > tol {
                return false;
            }
            if (m[(i, c + j)] + m[(r + i, j)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proper_basis_spans_structured_matrices() {
        let b = SymBasis::proper(2);
        assert_eq!(b.len(), 4);
        for e in b.matrices() {
            assert!(is_proper_structured(e, 0.0));
            assert_eq!(e, &e.transpose());
        }
        let coords = [0.5, -0.2, 1.0, 0.3];
        let m = b.assemble(&coords);
        let back = b.coordinates(&m);
        for (x, y) in coords.iter().zip(&back) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn full_basis_round_trip() {
        let b = SymBasis::full(3);
        assert_eq!(b.len(), 6);
        let m = RealMatrix::from_row_slice(3, 3, &[2.0, 0.1, -0.3, 0.1, 1.0, 0.4, -0.3, 0.4, 3.0]);
        let again = b.assemble(&b.coordinates(&m));
        assert!((again - m).norm() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = RealMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = sym_sqrt(&m);
        assert!((&s * &s - &m).norm() < 1e-12);
    }

    #[test]
    fn logdet_rejects_indefinite() {
        let m = RealMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(logdet_spd(&m).is_none());
        let d = RealMatrix::from_diagonal(&RealVector::from_vec(vec![2.0, 3.0]));
        assert!((logdet_spd(&d).unwrap() - 6f64.ln()).abs() < 1e-14);
    }
}
