use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Generator, SimulationConfig};
use crate::basis::BasisSpec;
use crate::design::{build_design, BlockLayout, DesignOptions};
use crate::error::{validation, Result};
use crate::estimators::{fit_fre, BasisTable};
use crate::inference::{infer_functional, InferenceMode};
use crate::quadrature::QuadratureRule;

/// Interval coverage for `Ψ(x) = Σ_j ∫ β_j x_j` with `x = β`, single
/// predictor, fixed penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub n: usize,
    pub m: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub fit_basis: BasisSpec,
    pub generation_basis: BasisSpec,
    pub lambda: f64,
    pub level: f64,
    pub seeds: usize,
    pub seed: u64,
    pub quadrature: QuadratureRule,
    pub threads: Option<usize>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            n: 400,
            m: 100,
            rho: 0.5,
            sigma2: 1.0,
            fit_basis: BasisSpec::cubic(8),
            generation_basis: BasisSpec::cubic(12),
            lambda: 1e-3,
            level: 0.95,
            seeds: 500,
            seed: 7,
            quadrature: QuadratureRule::Trapezoid,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub psi_true: f64,
    pub runs: usize,
    pub covered: usize,
    pub coverage: f64,
    pub mean_psi_hat: f64,
    pub mean_sigma2_hat: f64,
    pub mean_half_width: f64,
}

pub fn run_coverage(cfg: &CoverageConfig) -> Result<CoverageReport> {
    if cfg.seeds == 0 {
        return Err(validation("coverage needs at least one seed"));
    }
    let sim = SimulationConfig {
        n: cfg.n,
        p: 1,
        p1: 1,
        m: cfg.m,
        rho: cfg.rho,
        sigma2: cfg.sigma2,
        bases: BasisTable {
            generation: cfg.generation_basis,
            ..BasisTable::matched(cfg.fit_basis)
        },
        replications: cfg.seeds,
        seed: cfg.seed,
        quadrature: cfg.quadrature,
        ..Default::default()
    };
    let generator = Generator::new(&sim)?;
    let x: DMatrix<f64> = generator.beta_grid().clone();
    let row: Vec<f64> = x.row(0).iter().map(|v| v * v).collect();
    let psi_true = cfg.quadrature.integrate(&sim.grid(), &row)?;
    let layout = BlockLayout::uniform(1, cfg.fit_basis)?;
    let opts = DesignOptions {
        quadrature: cfg.quadrature,
        ..Default::default()
    };

    let one = |k: usize| -> Result<(bool, f64, f64, f64)> {
        let (_, data) = generator.draw(k)?;
        let system = build_design(&data, &layout, &opts)?;
        let fit = fit_fre(&system, cfg.lambda)?;
        let penalty = system.uniform_penalty(cfg.lambda);
        let r = infer_functional(&system, &fit, &penalty, &x, cfg.level, InferenceMode::Full)?;
        Ok((
            r.ci_lo <= psi_true && psi_true <= r.ci_hi,
            r.psi_hat,
            r.sigma2_hat,
            0.5 * (r.ci_hi - r.ci_lo),
        ))
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| validation(format!("cannot start worker threads: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        (0..cfg.seeds)
            .into_par_iter()
            .map(one)
            .collect::<Result<Vec<_>>>()
    })?;
    let runs = results.len();
    let covered = results.iter().filter(|r| r.0).count();
    let avg =
        |f: fn(&(bool, f64, f64, f64)) -> f64| results.iter().map(f).sum::<f64>() / runs as f64;
    Ok(CoverageReport {
        psi_true,
        runs,
        covered,
        coverage: covered as f64 / runs as f64,
        mean_psi_hat: avg(|r| r.1),
        mean_sigma2_hat: avg(|r| r.2),
        mean_half_width: avg(|r| r.3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_coverage_run() {
        let cfg = CoverageConfig {
            n: 200,
            seeds: 40,
            threads: Some(1),
            ..Default::default()
        };
        let r = run_coverage(&cfg).unwrap();
        assert_eq!(r.runs, 40);
        assert!(r.coverage > 0.75, "{r:?}");
        assert!((r.mean_sigma2_hat - 1.0).abs() < 0.2);
    }
}
