use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::basis::BasisSpec;
use crate::design::{BlockGroup, BlockLayout, DesignOptions, DesignSystem};
use crate::quadrature::uniform_grid;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Two-group system: `p1` predictors then `p2`, both with `l` interior knots.
fn two_block_system(seed: u64, n: usize, p1: usize, p2: usize, l: usize) -> DesignSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = BasisSpec::cubic(l);
    let mut groups = vec![BlockGroup {
        predictors: (0..p1).collect(),
        spec,
    }];
    if p2 > 0 {
        groups.push(BlockGroup {
            predictors: (p1..p1 + p2).collect(),
            spec,
        });
    }
    let layout = BlockLayout::new(p1 + p2, groups).unwrap();
    let z = random_matrix(&mut rng, n, layout.columns());
    let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    DesignSystem::from_parts(
        z,
        y,
        layout,
        uniform_grid(0.0, 1.0, 80),
        &DesignOptions::default(),
    )
    .unwrap()
}

fn objective(z: &DMatrix<f64>, y: &DVector<f64>, p: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    (y - z * b).norm_squared() + b.dot(&(p * b))
}

#[test]
fn solve_small_cases() {
    let z = DMatrix::identity(2, 2);
    let y = DVector::from_vec(vec![2.0, 4.0]);
    let b = solve_penalized(&z, &y, &DMatrix::identity(2, 2)).unwrap();
    assert!((b - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-15);

    let z = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.5, 3.0, 1.0, 0.0, -1.0, 1.5]);
    let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    let b = solve_penalized(&z, &y, &DMatrix::zeros(3, 3)).unwrap();
    let direct = z.clone().lu().solve(&y).unwrap();
    assert!((b - direct).amax() < 1e-12);
}

#[test]
fn solve_is_optimal_under_perturbation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = random_matrix(&mut rng, 20, 12);
    let y = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
    let r0 = crate::basis::diff_penalty(12, 2).unwrap();
    let p = r0 * 0.3;
    let b = solve_penalized(&z, &y, &p).unwrap();
    let best = objective(&z, &y, &p, &b);
    for _ in 0..1000 {
        let scale = 10f64.powf(rng.random_range(-6.0..0.0));
        let d = DVector::from_fn(12, |_, _| scale * rng.random_range(-1.0..1.0));
        assert!(best <= objective(&z, &y, &p, &(&b + d)));
    }
}

#[test]
fn singular_system_fails_loudly() {
    // more columns than rows and no penalty
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z = random_matrix(&mut rng, 5, 8);
    let y = DVector::from_element(5, 1.0);
    let r = solve_penalized(&z, &y, &DMatrix::zeros(8, 8));
    assert!(matches!(
        r,
        Err(crate::error::Error::NotPositiveDefinite { .. })
    ));
}

#[test]
fn fre_without_penalty_is_least_squares() {
    let sys = two_block_system(1, 60, 2, 1, 3);
    let fit = fit_fre(&sys, 0.0).unwrap();
    let ols = sys
        .z()
        .clone()
        .svd(true, true)
        .solve(sys.y(), 1e-14)
        .unwrap();
    assert!((&fit.b_hat - ols).amax() < 1e-9);
    assert_eq!(fit.kind, EstimatorKind::Fre);
    assert!((fit.edf - sys.columns() as f64).abs() < 1e-9);
}

#[test]
fn fre_with_huge_penalty_lands_in_null_space() {
    let sys = two_block_system(2, 40, 3, 0, 4);
    let fit = fit_fre(&sys, 1e12).unwrap();
    let r = sys.penalty_matrix();
    assert!((&r * &fit.b_hat).amax() < 1e-6 * fit.b_hat.amax().max(1e-12));
    for block in &fit.b_blocks {
        let d2 = crate::basis::difference_matrix(block.len(), 2).unwrap() * block;
        assert!(d2.amax() < 1e-6 * block.amax().max(1e-12));
    }
}

#[test]
fn fit_reconstructs_coefficient_functions() {
    let sys = two_block_system(3, 30, 2, 1, 3);
    let fit = fit_fre(&sys, 0.5).unwrap();
    let basis = crate::basis::basis_matrix(sys.grid(), &BasisSpec::cubic(3)).unwrap();
    for j in 0..3 {
        let row = &basis * &fit.b_blocks[j];
        for (l, v) in row.iter().enumerate() {
            assert!((fit.beta_hat_grid[(j, l)] - v).abs() < 1e-13);
        }
    }
    assert!(fit.residual_ss >= 0.0);
    assert!(fit.edf > 0.0 && fit.edf <= 30.0);
}

#[test]
fn frfm_with_equal_penalties_is_fre() {
    let sys = two_block_system(4, 50, 3, 4, 3);
    for lambda in [1e-3, 0.2, 5.0, 300.0] {
        let a = fit_frfm(&sys, lambda, lambda).unwrap();
        let b = fit_fre(&sys, lambda).unwrap();
        assert!((&a.b_hat - &b.b_hat).norm() < 1e-10);
    }
}

#[test]
fn frfm_rejects_reversed_penalties() {
    let sys = two_block_system(5, 30, 2, 2, 3);
    assert!(fit_frfm(&sys, 2.0, 1.0).is_err());
    assert!(fit_frfm(&sys, -1.0, 1.0).is_err());
}

#[test]
fn frfm_limit_with_definite_nuisance_penalty_is_frsm() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sys = two_block_system(6, 60, 2, 3, 3);
    let blocks: Vec<DMatrix<f64>> = sys
        .penalty_blocks()
        .iter()
        .map(|b| {
            let a = random_matrix(&mut rng, b.nrows(), b.nrows());
            b + a.transpose() * a * 0.1 + DMatrix::identity(b.nrows(), b.nrows()) * 0.5
        })
        .collect();
    let sys = sys.with_penalty_blocks(blocks).unwrap();
    let lambda = 0.8;
    let full = fit_frfm(&sys, lambda, 1e12).unwrap();
    let sub_sys = sys.restrict_to_groups(&[0]).unwrap();
    let sub = fit_frsm(&sub_sys, lambda).unwrap();
    let cols = sys.layout().group_columns(0);
    let b1 = full.b_hat.rows(cols.start, cols.len());
    let b2 = full.b_hat.rows(cols.end, full.b_hat.len() - cols.end);
    assert!(b2.norm() < 1e-4 * b1.norm());
    assert!((b1 - &sub.b_hat).norm() < 1e-6 * sub.b_hat.norm());
}

#[test]
fn frfm_limit_with_difference_penalty_keeps_linear_nuisance_part() {
    // The second-difference penalty leaves linear coefficient sequences
    // unpenalized, so a huge nuisance penalty pins b₂ to that null space
    // instead of zero.
    let sys = two_block_system(7, 60, 2, 3, 3);
    let full = fit_frfm(&sys, 0.5, 1e12).unwrap();
    for j in 2..5 {
        let b = &full.b_blocks[j];
        let d2 = crate::basis::difference_matrix(b.len(), 2).unwrap() * b;
        assert!(d2.amax() < 1e-6 * b.amax());
        assert!(b.amax() > 1e-3);
    }
}

#[test]
fn frsm_dimensions() {
    let sys = two_block_system(8, 40, 3, 0, 5);
    let fit = fit_frsm(&sys, 0.0).unwrap();
    assert_eq!(fit.b_hat.len(), 27);
    assert_eq!(fit.kind, EstimatorKind::Frsm);
    assert_eq!(fit.lambdas.lambda3, Some(0.0));
    let ols = sys
        .z()
        .clone()
        .svd(true, true)
        .solve(sys.y(), 1e-14)
        .unwrap();
    assert!((&fit.b_hat - ols).amax() < 1e-9);
}

#[test]
fn frsm_reports_excluded_predictors_as_zero() {
    let base = two_block_system(9, 40, 2, 2, 3);
    let sub = base.restrict_to_groups(&[0]).unwrap();
    let fit = fit_frsm(&sub, 1.0).unwrap();
    assert_eq!(fit.beta_hat_grid.nrows(), 4);
    for j in 2..4 {
        assert!(fit.b_blocks[j].is_empty());
        assert!(fit.beta_hat_grid.row(j).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn normal_equations_hold() {
    for seed in 0..20 {
        let sys = two_block_system(100 + seed, 30 + seed as usize, 2, 2, 3);
        let lambda = 10f64.powf(-4.0 + 0.4 * seed as f64);
        let ne = NormalEquations::new(sys.z(), sys.y()).unwrap();
        let s = PenalizedSolve::new(&ne, &sys.uniform_penalty(lambda)).unwrap();
        assert!(s.normal_equation_residual(&ne) < 1e-10);
    }
}

#[test]
fn residual_and_penalty_are_monotone_in_lambda() {
    let sys = two_block_system(13, 35, 3, 2, 4);
    let grid = crate::tuning::LambdaGrid::default().values().unwrap();
    let r = sys.penalty_matrix();
    let mut prev_rss = 0.0;
    let mut prev_pen = f64::INFINITY;
    for lambda in grid {
        let fit = fit_fre(&sys, lambda).unwrap();
        let pen = fit.b_hat.dot(&(&r * &fit.b_hat));
        assert!(fit.residual_ss >= prev_rss * (1.0 - 1e-12));
        assert!(pen <= prev_pen * (1.0 + 1e-9) + 1e-14);
        prev_rss = fit.residual_ss;
        prev_pen = pen;
    }
}

#[test]
fn hat_trace_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let z = random_matrix(&mut rng, 40, 7);
    assert!((hat_matrix_trace(&z, &DMatrix::zeros(7, 7)).unwrap() - 7.0).abs() < 1e-10);
    // difference penalty on 3 blocks of width 7: null space has dimension 2 per block
    let sys = two_block_system(15, 60, 3, 0, 3);
    let tr = hat_matrix_trace(sys.z(), &sys.uniform_penalty(1e10)).unwrap();
    assert!((tr - 6.0).abs() < 1e-3, "trace {tr}");
    // full-rank penalty drives the trace to zero
    let tr = hat_matrix_trace(&z, &(DMatrix::identity(7, 7) * 1e12)).unwrap();
    assert!(tr < 1e-8);
}

#[test]
fn hat_trace_matches_dense_eigenvalues() {
    for seed in 0..10 {
        let sys = two_block_system(200 + seed, 45, 2, 2, 3);
        let p = sys.uniform_penalty(0.05 * (seed + 1) as f64);
        let s = hat_matrix(sys.z(), &p).unwrap();
        assert!((&s - s.transpose()).amax() < 1e-12);
        let eig = SymmetricEigen::new(s).eigenvalues;
        assert!(eig.iter().all(|e| *e > -1e-10 && *e < 1.0 + 1e-10));
        let fast = hat_matrix_trace(sys.z(), &p).unwrap();
        assert!((fast - eig.sum()).abs() < 1e-8);
    }
}

#[test]
fn condition_numbers() {
    let c = condition_number(&DMatrix::identity(3, 3), &DMatrix::zeros(3, 3)).unwrap();
    assert!((c - 1.0).abs() < 1e-12);
    let z = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 10.0]));
    let c = condition_number(&z, &DMatrix::zeros(2, 2)).unwrap();
    assert!((c - 100.0).abs() < 1e-9);
    let z = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    assert!(condition_number(&z, &DMatrix::zeros(2, 2))
        .unwrap()
        .is_infinite());
}

#[test]
fn imse_bias_vanishes_in_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let z = random_matrix(&mut rng, 5, 5);
    let g = DMatrix::identity(5, 5);
    let b = DVector::from_fn(5, |i, _| i as f64);
    let d = imse_decomposition(&z, &DMatrix::zeros(5, 5), &g, &b, 1.0).unwrap();
    assert!(d.bias_sq < 1e-18 * b.norm_squared().max(1.0) * 1e6);
    let sys = two_block_system(17, 30, 2, 1, 3);
    let g = sys.gram().unwrap();
    let d = imse_decomposition(
        sys.z(),
        &sys.uniform_penalty(3.0),
        &g,
        &DVector::zeros(sys.columns()),
        0.5,
    )
    .unwrap();
    assert_eq!(d.bias_sq, 0.0);
    assert!(d.variance > 0.0);
    assert_eq!(d.total, d.variance);
}

#[test]
fn imse_matches_monte_carlo_risk() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let sys = two_block_system(18, 50, 2, 2, 3);
    let g = sys.gram().unwrap();
    let p = sys.uniform_penalty(0.5);
    let b_true = DVector::from_fn(sys.columns(), |i, _| (i as f64 * 0.37).sin() * 2.0);
    let sigma2 = 0.8;
    let d = imse_decomposition(sys.z(), &p, &g, &b_true, sigma2).unwrap();
    let mean = sys.z() * &b_true;
    let ne0 = NormalEquations::new(sys.z(), &mean).unwrap();
    let factor = crate::linalg::SpdFactor::new(&ne0.system_matrix(&p).unwrap()).unwrap();
    let zt = sys.z().transpose();
    let draws = 2000;
    let mut acc = 0.0;
    for _ in 0..draws {
        let eps = DVector::from_fn(50, |_, _| {
            // Box–Muller
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let y = &mean + eps * sigma2.sqrt();
        let b = factor.solve(&(&zt * y));
        let e = b - &b_true;
        acc += e.dot(&(&g * &e));
    }
    let mc = acc / draws as f64;
    assert!(
        ((mc - d.total) / d.total).abs() < 0.05,
        "mc {mc} vs exact {}",
        d.total
    );
}
