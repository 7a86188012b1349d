//! Quadrature over a discrete observation grid.
//!
//! Every integral over the domain (Gram entries, design inner products,
//! IMSE) goes through one [`QuadratureRule`] so that switching between the
//! composite trapezoid and the left Riemann sum is a single policy change.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    #[default]
    Trapezoid,
    LeftRectangle,
}

impl QuadratureRule {
    /// Integration weights for a strictly increasing grid, so that
    /// `sum_l w[l] * f(grid[l])` approximates the integral of `f`.
    pub fn weights(self, grid: &[f64]) -> Result<Vec<f64>> {
        check_grid(grid)?;
        let m = grid.len();
        let mut w = vec![0.0; m];
        match self {
            QuadratureRule::Trapezoid => {
                for l in 0..m - 1 {
                    let h = grid[l + 1] - grid[l];
                    w[l] += 0.5 * h;
                    w[l + 1] += 0.5 * h;
                }
            }
            QuadratureRule::LeftRectangle => {
                for l in 0..m - 1 {
                    w[l] = grid[l + 1] - grid[l];
                }
            }
        }
        Ok(w)
    }

    pub fn integrate(self, grid: &[f64], values: &[f64]) -> Result<f64> {
        if grid.len() != values.len() {
            return Err(crate::error::Error::Dimension(format!(
                "grid has {} points but {} values were given",
                grid.len(),
                values.len()
            )));
        }
        let w = self.weights(grid)?;
        Ok(w.iter().zip(values).map(|(a, b)| a * b).sum())
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(validation("grid needs at least two points"));
    }
    if grid.iter().any(|s| !s.is_finite()) {
        return Err(validation("grid contains non-finite values"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(validation("grid must be strictly increasing"));
    }
    Ok(())
}

/// `m` equally spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    assert!(m >= 2, "uniform grid needs at least two points");
    let h = (hi - lo) / (m - 1) as f64;
    (0..m)
        .map(|l| if l == m - 1 { hi } else { lo + h * l as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_for_linear_functions() {
        let grid = uniform_grid(0.0, 2.0, 11);
        let vals: Vec<f64> = grid.iter().map(|s| 3.0 * s + 1.0).collect();
        let v = QuadratureRule::Trapezoid.integrate(&grid, &vals).unwrap();
        assert!((v - 8.0).abs() < 1e-13);
    }

    #[test]
    fn left_rectangle_integrates_constants() {
        let grid = uniform_grid(0.0, 1.0, 100);
        let vals = vec![2.5; 100];
        let v = QuadratureRule::LeftRectangle
            .integrate(&grid, &vals)
            .unwrap();
        assert!((v - 2.5).abs() < 1e-13);
    }

    #[test]
    fn rejects_unsorted_grid() {
        assert!(QuadratureRule::Trapezoid.weights(&[0.0, 0.5, 0.4]).is_err());
    }
}
