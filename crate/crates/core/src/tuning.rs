//! Generalized cross-validation over a log-spaced grid of penalties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::DesignSystem;
use crate::error::{validation, Error, Result};
use crate::estimators::{trace_from_factor, Estimator, Frfm, NormalEquations, PenalizedSolve};

/// `count` log-equispaced values from `lo` to `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self {
            lo: 1e-4,
            hi: 1e4,
            count: 50,
        }
    }
}

impl LambdaGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(validation("lambda grid must contain at least one point"));
        }
        if !(self.lo > 0.0 && self.hi >= self.lo && self.hi.is_finite()) {
            return Err(validation(format!(
                "lambda grid needs 0 < lo <= hi (got lo = {}, hi = {})",
                self.lo, self.hi
            )));
        }
        if self.count == 1 {
            return Ok(vec![self.lo]);
        }
        if self.hi == self.lo {
            return Err(validation("a multi-point lambda grid needs lo < hi"));
        }
        let (a, b) = (self.lo.log10(), self.hi.log10());
        let step = (b - a) / (self.count - 1) as f64;
        Ok((0..self.count)
            .map(|i| {
                if i == 0 {
                    self.lo
                } else if i == self.count - 1 {
                    self.hi
                } else {
                    10f64.powf(a + step * i as f64)
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcvTrace {
    pub grid: Vec<f64>,
    /// GCV score per grid point; `+inf` marks degenerate points.
    pub scores: Vec<f64>,
    /// `tr(S)` per grid point (`NaN` where the system could not be factorized).
    pub edf: Vec<f64>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
}

impl GcvTrace {
    pub fn chosen_score(&self) -> f64 {
        self.scores[self.chosen_index]
    }
}

/// Residual sum of squares and `tr(S)` at one penalty.
#[derive(Debug, Clone, Copy)]
pub struct SmootherStats {
    pub rss: f64,
    pub trace: f64,
    pub n: usize,
}

impl SmootherStats {
    /// `(‖y − ŷ‖²/n) / (1 − tr(S)/n)²`.
    pub fn gcv(&self) -> Result<f64> {
        let n = self.n as f64;
        if self.trace >= n {
            return Err(Error::DegenerateSmoother {
                trace: self.trace,
                n: self.n,
            });
        }
        let denom = 1.0 - self.trace / n;
        Ok((self.rss / n) / (denom * denom))
    }
}

fn smoother_stats(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    ne: &NormalEquations,
    penalty: &DMatrix<f64>,
) -> Result<SmootherStats> {
    let solve = PenalizedSolve::new(ne, penalty)?;
    let rss = (y - z * &solve.b_hat).norm_squared();
    Ok(SmootherStats {
        rss,
        trace: trace_from_factor(&solve.factor, z),
        n: z.nrows(),
    })
}

/// GCV score at one penalty matrix, via the factorization (no `S` formed).
pub fn gcv_score(z: &DMatrix<f64>, y: &DVector<f64>, penalty: &DMatrix<f64>) -> Result<f64> {
    let ne = NormalEquations::new(z, y)?;
    smoother_stats(z, y, &ne, penalty)?.gcv()
}

/// GCV in the form `n‖y − Sy‖² / (n − tr S)²` with `S` formed explicitly.
pub fn gcv_score_dense(z: &DMatrix<f64>, y: &DVector<f64>, penalty: &DMatrix<f64>) -> Result<f64> {
    let s = crate::estimators::hat_matrix(z, penalty)?;
    let n = z.nrows() as f64;
    let tr = s.trace();
    if tr >= n {
        return Err(Error::DegenerateSmoother {
            trace: tr,
            n: z.nrows(),
        });
    }
    let r = y - &s * y;
    Ok(n * r.norm_squared() / ((n - tr) * (n - tr)))
}

/// Evaluate GCV at every grid value and pick the minimizer, breaking ties
/// toward the smaller penalty. Points whose smoother is degenerate or whose
/// system cannot be factorized score `+inf` and are skipped.
pub fn select_lambda<F>(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty_for: F,
    grid: &[f64],
) -> Result<GcvTrace>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    if grid.is_empty() {
        return Err(validation("lambda grid is empty"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(validation("lambda grid must be strictly increasing"));
    }
    let ne = NormalEquations::new(z, y)?;
    let mut scores = Vec::with_capacity(grid.len());
    let mut edf = Vec::with_capacity(grid.len());
    for &lambda in grid {
        match smoother_stats(z, y, &ne, &penalty_for(lambda)) {
            Ok(stats) => {
                edf.push(stats.trace);
                scores.push(stats.gcv().unwrap_or(f64::INFINITY));
            }
            Err(Error::NotPositiveDefinite { .. }) => {
                edf.push(f64::NAN);
                scores.push(f64::INFINITY);
            }
            Err(e) => return Err(e),
        }
    }
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        match best {
            Some(b) if scores[b] <= *s => {}
            _ => best = Some(i),
        }
    }
    let chosen_index = best.ok_or(Error::NoFiniteScore)?;
    Ok(GcvTrace {
        grid: grid.to_vec(),
        scores,
        edf,
        chosen_index,
        chosen_lambda: grid[chosen_index],
    })
}

/// GCV for any registered estimator on its own design system.
pub fn tune(estimator: &dyn Estimator, system: &DesignSystem, grid: &[f64]) -> Result<GcvTrace> {
    select_lambda(
        system.z(),
        system.y(),
        |l| estimator.penalty(system, l),
        grid,
    )
}

/// One-dimensional GCV over `λ₁` with `λ₂ = ratio · λ₁`.
pub fn tune_frfm(system: &DesignSystem, ratio: f64, grid: &[f64]) -> Result<GcvTrace> {
    let frfm = Frfm::new(ratio)?;
    tune(&frfm, system, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::design::{BlockGroup, BlockLayout, DesignOptions};
    use crate::estimators::frfm_penalty;
    use crate::quadrature::uniform_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_system(seed: u64, n: usize, groups: &[(usize, usize)]) -> DesignSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = 0;
        let gs: Vec<BlockGroup> = groups
            .iter()
            .map(|&(count, l)| {
                let g = BlockGroup {
                    predictors: (next..next + count).collect(),
                    spec: BasisSpec::cubic(l),
                };
                next += count;
                g
            })
            .collect();
        let layout = BlockLayout::new(next, gs).unwrap();
        let z = DMatrix::from_fn(n, layout.columns(), |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        DesignSystem::from_parts(
            z,
            y,
            layout,
            uniform_grid(0.0, 1.0, 60),
            &DesignOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn default_grid_spans_range() {
        let g = LambdaGrid::default().values().unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 1e-4);
        assert_eq!(g[49], 1e4);
        let ratios: Vec<f64> = g.windows(2).map(|w| (w[1] / w[0]).log10()).collect();
        for r in ratios {
            assert!((r - 8.0 / 49.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_case_equals_ten() {
        let z = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![2.0, 4.0]);
        let p = DMatrix::identity(2, 2);
        // y_hat = (1,2), tr(S) = 1, GCV = (1 + 4)/2 / (1/2)^2
        let v = gcv_score(&z, &y, &p).unwrap();
        assert!((v - 10.0).abs() < 1e-13);
        assert!((gcv_score_dense(&z, &y, &p).unwrap() - 10.0).abs() < 1e-13);
    }

    #[test]
    fn huge_penalty_tends_to_mean_square() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = gcv_score(&z, &y, &(DMatrix::identity(2, 2) * 1e12)).unwrap();
        assert!((v - y.norm_squared() / 3.0).abs() < 1e-9);
    }

    #[test]
    fn interpolating_smoother_is_degenerate() {
        let z = DMatrix::identity(3, 3);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            gcv_score(&z, &y, &DMatrix::zeros(3, 3)),
            Err(Error::DegenerateSmoother { .. })
        ));
    }

    #[test]
    fn both_formula_variants_agree() {
        for seed in 0..10 {
            let sys = random_system(seed, 30, &[(2, 3), (1, 2)]);
            let p = sys.uniform_penalty(0.3 + seed as f64);
            let a = gcv_score(sys.z(), sys.y(), &p).unwrap();
            let b = gcv_score_dense(sys.z(), sys.y(), &p).unwrap();
            assert!(((a - b) / b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn single_point_grid() {
        let sys = random_system(3, 20, &[(1, 3)]);
        let t = select_lambda(sys.z(), sys.y(), |l| sys.uniform_penalty(l), &[0.7]).unwrap();
        assert_eq!(t.chosen_index, 0);
        assert_eq!(t.chosen_lambda, 0.7);
    }

    #[test]
    fn ties_go_to_smaller_lambda() {
        // penalty independent of lambda: every point ties
        let sys = random_system(4, 20, &[(1, 3)]);
        let fixed = sys.uniform_penalty(1.0);
        let t = select_lambda(sys.z(), sys.y(), |_| fixed.clone(), &[0.1, 1.0]).unwrap();
        assert_eq!(t.scores[0], t.scores[1]);
        assert_eq!(t.chosen_lambda, 0.1);
    }

    #[test]
    fn all_degenerate_is_an_error() {
        let z = DMatrix::identity(3, 3);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let r = select_lambda(&z, &y, |_| DMatrix::zeros(3, 3), &[1.0, 2.0]);
        assert!(matches!(r, Err(Error::NoFiniteScore)));
    }

    #[test]
    fn selection_matches_brute_force() {
        let grid = LambdaGrid::default().values().unwrap();
        for seed in 0..5 {
            let sys = random_system(10 + seed, 40, &[(3, 3), (2, 2)]);
            let t = select_lambda(sys.z(), sys.y(), |l| sys.uniform_penalty(l), &grid).unwrap();
            // brute force with the dense smoother
            let mut best = (f64::INFINITY, 0usize);
            for (i, &l) in grid.iter().enumerate() {
                let s = gcv_score_dense(sys.z(), sys.y(), &sys.uniform_penalty(l))
                    .unwrap_or(f64::INFINITY);
                if s < best.0 {
                    best = (s, i);
                }
            }
            assert_eq!(t.chosen_index, best.1);
            let chosen = t.chosen_score();
            assert!(t.scores.iter().all(|s| !s.is_finite() || chosen <= *s));
        }
    }

    #[test]
    fn frfm_tuning_matches_brute_force_with_composite_penalty() {
        let grid = LambdaGrid::default().values().unwrap();
        let sys = random_system(77, 45, &[(2, 3), (3, 1)]);
        let t = tune_frfm(&sys, 25.0, &grid).unwrap();
        let mut best = (f64::INFINITY, 0usize);
        for (i, &l) in grid.iter().enumerate() {
            let p = frfm_penalty(&sys, l, 25.0 * l).unwrap();
            let s = gcv_score_dense(sys.z(), sys.y(), &p).unwrap_or(f64::INFINITY);
            if s < best.0 {
                best = (s, i);
            }
        }
        assert_eq!(t.chosen_index, best.1);
        assert!(tune_frfm(&sys, 1.0, &grid).is_err());
    }

    #[test]
    fn selection_is_deterministic() {
        let grid = LambdaGrid::default().values().unwrap();
        let sys = random_system(5, 30, &[(2, 3)]);
        let a = select_lambda(sys.z(), sys.y(), |l| sys.uniform_penalty(l), &grid).unwrap();
        let b = select_lambda(sys.z(), sys.y(), |l| sys.uniform_penalty(l), &grid).unwrap();
        assert_eq!(a, b);
    }
}
