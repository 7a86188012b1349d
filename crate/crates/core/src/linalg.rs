//! Dense symmetric positive-definite factorization and related helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Cholesky factor `A = RᵀR` with `R` upper triangular.
///
/// The matrix is first scaled to unit diagonal, `Â = S A S` with
/// `S = diag(A_ii)^{-1/2}`, so that blocks penalized on very different
/// scales factor as accurately as the scaled problem allows. Factorization
/// fails when a squared pivot of `Â` drops below `k · ε`, so numerically
/// singular systems are rejected instead of producing garbage.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    /// Factor of the scaled matrix.
    r: DMatrix<f64>,
    scale: Vec<f64>,
    min_pivot: f64,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let k = a.nrows();
        if k != a.ncols() {
            return Err(Error::Dimension(format!(
                "expected a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut scale = Vec::with_capacity(k);
        for i in 0..k {
            let d = a[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: d, index: i });
            }
            scale.push(1.0 / d.sqrt());
        }
        let tol = (k.max(1) as f64) * f64::EPSILON;
        let mut r = DMatrix::<f64>::zeros(k, k);
        let mut min_pivot = f64::INFINITY;
        for j in 0..k {
            for i in 0..j {
                let (ci, cj) = (r.column(i), r.column(j));
                let mut s = a[(i, j)] * scale[i] * scale[j];
                for t in 0..i {
                    s -= ci[t] * cj[t];
                }
                r[(i, j)] = s / r[(i, i)];
            }
            let cj = r.column(j);
            let mut d = a[(j, j)] * scale[j] * scale[j];
            for t in 0..j {
                d -= cj[t] * cj[t];
            }
            if !(d > tol) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: d, index: j });
            }
            min_pivot = min_pivot.min(d);
            r[(j, j)] = d.sqrt();
        }
        Ok(Self {
            r,
            scale,
            min_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// Smallest squared pivot of the unit-diagonal scaled matrix.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Solves `Rᵀ z = b` in place.
    fn forward(&self, b: &mut [f64]) {
        let k = self.dim();
        for j in 0..k {
            let c = self.r.column(j);
            let mut s = b[j];
            for t in 0..j {
                s -= c[t] * b[t];
            }
            b[j] = s / c[j];
        }
    }

    /// Solves `R x = z` in place.
    fn backward(&self, b: &mut [f64]) {
        let k = self.dim();
        for j in (0..k).rev() {
            b[j] /= self.r[(j, j)];
            let c = self.r.column(j);
            let bj = b[j];
            for t in 0..j {
                b[t] -= c[t] * bj;
            }
        }
    }

    fn solve_slice(&self, x: &mut [f64]) {
        for (v, s) in x.iter_mut().zip(&self.scale) {
            *v *= s;
        }
        self.forward(x);
        self.backward(x);
        for (v, s) in x.iter_mut().zip(&self.scale) {
            *v *= s;
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_slice(x.as_mut_slice());
        x
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            self.solve_slice(col.as_mut_slice());
        }
        x
    }

    /// `L⁻¹ B` for a factor `A = L Lᵀ` (here `L = S⁻¹ R̂ᵀ`), so that
    /// `‖L⁻¹ B‖²_F = tr(Bᵀ A⁻¹ B)`.
    pub fn half_solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            let c = col.as_mut_slice();
            for (v, s) in c.iter_mut().zip(&self.scale) {
                *v *= s;
            }
            self.forward(c);
        }
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_matrix(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// Solve with iterative refinement against `a`, stopping once the
    /// residual no longer shrinks (at most three correction steps).
    pub fn solve_refined(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve(b);
        let mut r = b - a * &x;
        let mut norm = r.norm();
        for _ in 0..3 {
            if norm == 0.0 {
                break;
            }
            let candidate = &x + self.solve(&r);
            let r_next = b - a * &candidate;
            let next = r_next.norm();
            if !(next < norm) {
                break;
            }
            x = candidate;
            r = r_next;
            norm = next;
        }
        x
    }
}

/// Ratio of the extreme eigenvalues of a symmetric matrix; `+inf` when the
/// smallest eigenvalue is not positive.
pub fn spectral_condition(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((off, off), (k, k)).copy_from(b);
        off += k;
    }
    out
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let k = a.nrows();
    for j in 0..k {
        for i in 0..j {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_solves_small_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let f = SpdFactor::new(&a).unwrap();
        let x = f.solve(&b);
        assert!((&a * &x - &b).norm() < 1e-14);
        let inv = f.inverse();
        assert!((&a * inv - DMatrix::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_rejected_with_pivot() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match SpdFactor::new(&a) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn condition_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 100.0]));
        assert!((spectral_condition(&a) - 100.0).abs() < 1e-10);
        assert!((spectral_condition(&DMatrix::identity(4, 4)) - 1.0).abs() < 1e-12);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(spectral_condition(&s).is_infinite());
    }
}
