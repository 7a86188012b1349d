//! Clamped uniform B-spline bases, Gram matrices and difference penalties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::linalg::SpdFactor;
use crate::quadrature::{check_grid, QuadratureRule};

/// Knot layout of one coefficient-function block.
///
/// `order` is the spline order (degree + 1); the basis dimension is
/// `interior_knots + order`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSpec {
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub order: usize,
    pub interior_knots: usize,
}

impl Default for BasisSpec {
    /// Cubic on `[0, 1]` with 7 interior knots.
    fn default() -> Self {
        Self::cubic(7)
    }
}

impl BasisSpec {
    /// Cubic (order 4) basis on `[0, 1]`.
    pub fn cubic(interior_knots: usize) -> Self {
        Self {
            domain_lo: 0.0,
            domain_hi: 1.0,
            order: 4,
            interior_knots,
        }
    }

    pub fn dim(&self) -> usize {
        self.interior_knots + self.order
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.domain_lo.is_finite() && self.domain_hi.is_finite()) {
            return Err(validation("basis domain endpoints must be finite"));
        }
        if self.domain_lo >= self.domain_hi {
            return Err(validation(format!(
                "basis domain requires domain_lo < domain_hi (got {} >= {})",
                self.domain_lo, self.domain_hi
            )));
        }
        if self.order < 1 {
            return Err(validation("spline order must be at least 1"));
        }
        Ok(())
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.domain_lo && s <= self.domain_hi
    }
}

/// Nondecreasing knot sequence of length `dim + order`, clamped at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    order: usize,
}

impl KnotVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.knots
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn lo(&self) -> f64 {
        self.knots[0]
    }

    pub fn hi(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Index `mu` of the knot span holding `s`, with `t[mu] <= s < t[mu+1]`;
    /// the right endpoint is assigned to the last nonempty span.
    fn span(&self, s: f64) -> usize {
        let q = self.order;
        let k = self.dim();
        if s >= self.hi() {
            return k - 1;
        }
        // first index in [q-1, k-1] whose right knot exceeds s
        let t = &self.knots;
        let (mut lo, mut hi) = (q - 1, k - 1);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if t[mid] <= s {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Values of all `dim` basis functions at `s` (Cox–de Boor recursion
    /// restricted to the `order` functions that are nonzero on the span).
    pub fn eval(&self, s: f64) -> Result<Vec<f64>> {
        if !(s >= self.lo() && s <= self.hi()) {
            return Err(Error::Domain {
                point: s,
                lo: self.lo(),
                hi: self.hi(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        let mu = self.span(s);
        let local = self.local_values(s, mu);
        let first = mu + 1 - self.order;
        out[first..=mu].copy_from_slice(&local);
        Ok(out)
    }

    fn local_values(&self, s: f64, mu: usize) -> Vec<f64> {
        let q = self.order;
        let t = &self.knots;
        let mut n = vec![0.0; q];
        let mut left = vec![0.0; q];
        let mut right = vec![0.0; q];
        n[0] = 1.0;
        for j in 1..q {
            left[j] = s - t[mu + 1 - j];
            right[j] = t[mu + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }
}

/// Clamped knot vector with equispaced interior knots.
pub fn make_knots(spec: &BasisSpec) -> Result<KnotVector> {
    spec.validate()?;
    let q = spec.order;
    let l = spec.interior_knots;
    let (lo, hi) = (spec.domain_lo, spec.domain_hi);
    let mut knots = Vec::with_capacity(spec.dim() + q);
    knots.extend(std::iter::repeat_n(lo, q));
    let h = (hi - lo) / (l + 1) as f64;
    knots.extend((1..=l).map(|i| lo + h * i as f64));
    knots.extend(std::iter::repeat_n(hi, q));
    Ok(KnotVector { knots, order: q })
}

/// Convenience: evaluate the basis described by `spec` at `s`.
pub fn eval_basis(s: f64, knots: &KnotVector) -> Result<Vec<f64>> {
    knots.eval(s)
}

/// `M x K` matrix whose row `i` is the basis evaluated at `grid[i]`.
pub fn basis_matrix(grid: &[f64], spec: &BasisSpec) -> Result<DMatrix<f64>> {
    let knots = make_knots(spec)?;
    let k = spec.dim();
    let mut b = DMatrix::zeros(grid.len(), k);
    for (i, &s) in grid.iter().enumerate() {
        let mu_row = knots.eval(s)?;
        for (j, v) in mu_row.into_iter().enumerate() {
            b[(i, j)] = v;
        }
    }
    Ok(b)
}

/// Basis matrix with each row scaled by its quadrature weight, so that
/// `Xᵀ W B` gives quadrature inner products of grid values against the basis.
pub fn weighted_basis_matrix(
    grid: &[f64],
    spec: &BasisSpec,
    rule: QuadratureRule,
) -> Result<DMatrix<f64>> {
    let w = rule.weights(grid)?;
    let mut b = basis_matrix(grid, spec)?;
    for (i, wi) in w.iter().enumerate() {
        b.row_mut(i).scale_mut(*wi);
    }
    Ok(b)
}

/// Quadrature approximation of `∫ψψᵀ` on `grid`.
pub fn gram_matrix(spec: &BasisSpec, grid: &[f64], rule: QuadratureRule) -> Result<DMatrix<f64>> {
    check_grid(grid)?;
    if grid.len() < 2 * spec.dim() {
        return Err(validation(format!(
            "grid of {} points is too coarse for a Gram matrix of dimension {} (need at least {})",
            grid.len(),
            spec.dim(),
            2 * spec.dim()
        )));
    }
    let b = basis_matrix(grid, spec)?;
    let wb = weighted_basis_matrix(grid, spec, rule)?;
    let mut g = b.transpose() * wb;
    crate::linalg::symmetrize(&mut g);
    Ok(g)
}

/// `m`-th order difference matrix, `(k - m) x k`.
pub fn difference_matrix(k: usize, m: usize) -> Result<DMatrix<f64>> {
    if m < 1 || m >= k {
        return Err(validation(format!(
            "difference order must satisfy 1 <= m < K (got m = {m}, K = {k})"
        )));
    }
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..m {
        let rows = d.nrows();
        let next = d.rows(1, rows - 1) - d.rows(0, rows - 1);
        d = next;
    }
    Ok(d)
}

/// Difference penalty `R0 = DᵀD`.
pub fn diff_penalty(k: usize, m: usize) -> Result<DMatrix<f64>> {
    let d = difference_matrix(k, m)?;
    Ok(d.transpose() * d)
}

/// Unpenalized least-squares coefficients of grid values against the basis.
pub fn project_trajectory(values: &[f64], spec: &BasisSpec, grid: &[f64]) -> Result<DVector<f64>> {
    if values.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} values for a grid of {} points",
            values.len(),
            grid.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(validation("trajectory contains non-finite values"));
    }
    let b = basis_matrix(grid, spec)?;
    let btb = b.transpose() * &b;
    let factor = SpdFactor::new(&btb).map_err(|e| {
        Error::Conditioning(format!(
            "basis matrix is rank deficient on this grid ({e}); use a finer grid"
        ))
    })?;
    let rhs = b.transpose() * DVector::from_column_slice(values);
    Ok(factor.solve_refined(&btb, &rhs))
}
