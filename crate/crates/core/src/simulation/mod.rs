//! Seeded data generation for the Monte Carlo study.
//!
//! Each subject gets stacked spline coefficients `c_i ~ N(0, Σ)` with
//! `Σ_jk = ρ^|j−k|` over the full stacked index, trajectories
//! `z_ij(s) = Σ_k c_ijk ψ_k(s)` in the generation basis, and response
//! `y_i = Σ_j ∫ z_ij β_j + σ ε_i`.

mod coverage;
mod study;

pub use coverage::{run_coverage, CoverageConfig, CoverageReport};
pub use study::{
    aggregate, median, run_replication, run_study, CellSummary, EstimatorSummary, PooledSummary,
    ReplicationFailure, ReplicationRecord, StudyConfig, StudyReport,
};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::basis_matrix;
use crate::design::FunctionalDataset;
use crate::error::{validation, Error, Result};
use crate::estimators::{BasisTable, DEFAULT_RATIO};
use crate::partition::AdaptiveRidgeOptions;
use crate::quadrature::{uniform_grid, QuadratureRule};
use crate::tuning::LambdaGrid;

/// `2 sin(πs) + s(1 − s)` for the first `p1` predictors (0-based `j < p1`),
/// zero otherwise.
pub fn true_beta(s: f64, j: usize, p1: usize) -> f64 {
    if j < p1 {
        2.0 * (std::f64::consts::PI * s).sin() + s * (1.0 - s)
    } else {
        0.0
    }
}

/// `ρ^|j−k|`.
pub fn ar1_covariance(dim: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(validation(format!("rho must lie in [0, 1), got {rho}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |j, k| {
        rho.powi(j.abs_diff(k) as i32)
    }))
}

/// `∫ (a − b)²` over the grid.
pub fn imse_metric(
    estimate: &[f64],
    truth: &[f64],
    grid: &[f64],
    rule: QuadratureRule,
) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "estimate has {} points, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    let sq: Vec<f64> = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    rule.integrate(grid, &sq)
}

/// Standard normals by the Box–Muller transform on a seeded stream.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next();
        }
    }
}

/// One simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    pub p: usize,
    pub p1: usize,
    /// Number of grid points on `[0, 1]`.
    pub m: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub bases: BasisTable,
    /// FRFM `λ₂ / λ₁`.
    pub ratio: f64,
    pub replications: usize,
    pub seed: u64,
    pub lambda_grid: LambdaGrid,
    pub adaptive: AdaptiveRidgeOptions,
    pub quadrature: QuadratureRule,
    pub estimators: Vec<String>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 10,
            p1: 3,
            m: 100,
            rho: 0.5,
            sigma2: 0.5,
            bases: BasisTable::default(),
            ratio: DEFAULT_RATIO,
            replications: 100,
            seed: 20_240_601,
            lambda_grid: LambdaGrid::default(),
            adaptive: AdaptiveRidgeOptions::default(),
            quadrature: QuadratureRule::Trapezoid,
            estimators: vec!["FRE".into(), "FRFM".into(), "FRSM".into()],
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(validation("n must be at least 2"));
        }
        if self.p1 == 0 || self.p1 > self.p {
            return Err(validation(format!(
                "need 1 <= p1 <= p (got p1 = {}, p = {})",
                self.p1, self.p
            )));
        }
        if self.m < 2 {
            return Err(validation("the grid needs at least two points"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(validation(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(validation(format!(
                "sigma2 must be finite and nonnegative, got {}",
                self.sigma2
            )));
        }
        if self.replications == 0 {
            return Err(validation("replications must be at least 1"));
        }
        if !(self.ratio > 1.0) || !self.ratio.is_finite() {
            return Err(validation(format!(
                "ratio must exceed 1, got {}",
                self.ratio
            )));
        }
        for spec in [
            self.bases.fre,
            self.bases.frfm_relevant,
            self.bases.frfm_nuisance,
            self.bases.frsm,
            self.bases.generation,
        ] {
            spec.validate()?;
            if spec.domain_lo != 0.0 || spec.domain_hi != 1.0 {
                return Err(validation("simulation bases must live on [0, 1]"));
            }
        }
        self.lambda_grid.values()?;
        if self.estimators.is_empty() {
            return Err(validation("at least one estimator must be selected"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(0.0, 1.0, self.m)
    }

    pub fn true_relevant(&self) -> Vec<usize> {
        (0..self.p1).collect()
    }

    /// `p x M` true coefficient functions on the grid.
    pub fn beta_grid(&self) -> DMatrix<f64> {
        let grid = self.grid();
        DMatrix::from_fn(self.p, self.m, |j, l| true_beta(grid[l], j, self.p1))
    }

    /// Seed of replication `index`.
    pub fn replication_seed(&self, index: usize) -> u64 {
        self.seed ^ index as u64
    }
}

/// Precomputed pieces shared by every replication of one setting.
#[derive(Debug, Clone)]
pub struct Generator {
    config: SimulationConfig,
    grid: Vec<f64>,
    chol: DMatrix<f64>,
    basis: DMatrix<f64>,
    beta: DMatrix<f64>,
    weights: Vec<f64>,
}

impl Generator {
    pub fn new(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid();
        let kg = config.bases.generation.dim();
        let sigma = ar1_covariance(config.p * kg, config.rho)?;
        let chol = sigma
            .cholesky()
            .ok_or_else(|| Error::Conditioning("AR(1) covariance is not positive definite".into()))?
            .l();
        Ok(Self {
            basis: basis_matrix(&grid, &config.bases.generation)?,
            beta: config.beta_grid(),
            weights: config.quadrature.weights(&grid)?,
            config: config.clone(),
            grid,
            chol,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn beta_grid(&self) -> &DMatrix<f64> {
        &self.beta
    }

    /// Stacked coefficients (`n x pK`) and the dataset they generate.
    pub fn draw(&self, index: usize) -> Result<(DMatrix<f64>, FunctionalDataset)> {
        let cfg = &self.config;
        let (n, p, m) = (cfg.n, cfg.p, cfg.m);
        let kg = self.basis.ncols();
        let mut stream = NormalStream::new(cfg.replication_seed(index));
        let mut coefs = DMatrix::zeros(n, p * kg);
        let mut u = DVector::zeros(p * kg);
        for i in 0..n {
            stream.fill(u.as_mut_slice());
            let c = &self.chol * &u;
            coefs.row_mut(i).copy_from(&c.transpose());
        }
        let mut values = Vec::with_capacity(n * p * m);
        let mut signal = vec![0.0; n];
        for i in 0..n {
            for j in 0..p {
                let c = coefs.view((i, j * kg), (1, kg)).transpose();
                let traj = &self.basis * c;
                for l in 0..m {
                    signal[i] += self.weights[l] * traj[l] * self.beta[(j, l)];
                }
                values.extend_from_slice(traj.as_slice());
            }
        }
        let sd = cfg.sigma2.sqrt();
        let response = signal.iter().map(|s| s + sd * stream.next()).collect();
        let data = FunctionalDataset::new(self.grid.clone(), n, p, values, response)?;
        Ok((coefs, data))
    }
}

/// Dataset of replication `index`; deterministic given the config seed.
pub fn generate_dataset(config: &SimulationConfig, index: usize) -> Result<FunctionalDataset> {
    Ok(Generator::new(config)?.draw(index)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimulationConfig {
        SimulationConfig {
            n: 20,
            p: 4,
            p1: 2,
            m: 60,
            replications: 2,
            ..Default::default()
        }
    }

    #[test]
    fn true_beta_values() {
        assert_eq!(true_beta(0.0, 0, 3), 0.0);
        assert!((true_beta(0.5, 1, 3) - 2.25).abs() < 1e-15);
        assert_eq!(true_beta(0.3, 3, 3), 0.0);
    }

    #[test]
    fn ar1_examples() {
        let c = ar1_covariance(4, 0.0).unwrap();
        assert_eq!(c, DMatrix::identity(4, 4));
        let c = ar1_covariance(5, 0.7).unwrap();
        assert!((c[(0, 2)] - 0.49).abs() < 1e-15);
        assert!(ar1_covariance(110, 0.99).unwrap().cholesky().is_some());
        assert!(ar1_covariance(3, 1.0).is_err());
        assert!(ar1_covariance(3, -0.1).is_err());
    }

    #[test]
    fn imse_examples() {
        let grid = uniform_grid(0.0, 1.0, 51);
        let a: Vec<f64> = grid.iter().map(|s| s.sin()).collect();
        assert_eq!(
            imse_metric(&a, &a, &grid, QuadratureRule::Trapezoid).unwrap(),
            0.0
        );
        let b: Vec<f64> = a.iter().map(|v| v + 0.3).collect();
        assert!(
            (imse_metric(&a, &b, &grid, QuadratureRule::Trapezoid).unwrap() - 0.09).abs() < 1e-14
        );
        assert!(imse_metric(&a, &a[1..], &grid, QuadratureRule::Trapezoid).is_err());
    }

    #[test]
    fn imse_refinement() {
        let f = |m: usize| {
            let grid = uniform_grid(0.0, 1.0, m);
            let a: Vec<f64> = grid.iter().map(|s| (3.0 * s).sin()).collect();
            let b: Vec<f64> = grid.iter().map(|s| s * s).collect();
            imse_metric(&a, &b, &grid, QuadratureRule::Trapezoid).unwrap()
        };
        let (v1, v2) = (f(200), f(400));
        assert!(((v1 - v2) / v2).abs() < 1e-4);
    }

    #[test]
    fn box_muller_moments() {
        let mut s = NormalStream::new(3);
        let draws: Vec<f64> = (0..200_000).map(|_| s.next()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small();
        let a = generate_dataset(&cfg, 1).unwrap();
        let b = generate_dataset(&cfg, 1).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&cfg, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_response_is_quadrature_predictor() {
        let cfg = SimulationConfig {
            sigma2: 0.0,
            ..small()
        };
        let data = generate_dataset(&cfg, 0).unwrap();
        let grid = cfg.grid();
        for i in 0..cfg.n {
            let mut total = 0.0;
            for j in 0..cfg.p {
                let prod: Vec<f64> = data
                    .trajectory(i, j)
                    .iter()
                    .zip(&grid)
                    .map(|(z, s)| z * true_beta(*s, j, cfg.p1))
                    .collect();
                total += QuadratureRule::Trapezoid.integrate(&grid, &prod).unwrap();
            }
            assert!((data.response()[i] - total).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_covariance_matches_ar1() {
        let cfg = SimulationConfig {
            n: 5000,
            p: 2,
            p1: 1,
            m: 40,
            rho: 0.8,
            bases: BasisTable::matched(crate::basis::BasisSpec::cubic(1)),
            ..Default::default()
        };
        let (coefs, _) = Generator::new(&cfg).unwrap().draw(0).unwrap();
        let dim = coefs.ncols();
        let target = ar1_covariance(dim, 0.8).unwrap();
        let cov = coefs.transpose() * &coefs / cfg.n as f64;
        assert!((cov - target).amax() < 0.05);
    }

    #[test]
    fn config_validation() {
        assert!(SimulationConfig { p1: 0, ..small() }.validate().is_err());
        assert!(SimulationConfig { p1: 5, ..small() }.validate().is_err());
        assert!(SimulationConfig {
            rho: 1.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SimulationConfig {
            replications: 0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SimulationConfig {
            ratio: 1.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(small().validate().is_ok());
    }
}
