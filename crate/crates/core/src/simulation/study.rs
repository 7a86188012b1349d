use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{imse_metric, Generator, SimulationConfig};
use crate::design::DesignOptions;
use crate::error::{validation, Error, Result};
use crate::estimators::{BasisTable, EstimatorKind, EstimatorRegistry, DEFAULT_RATIO};
use crate::partition::{partition_metrics, AdaptiveRidgeOptions, PredictorSplit};
use crate::pipeline::{run_estimator, screen};
use crate::quadrature::QuadratureRule;
use crate::tuning::LambdaGrid;

/// A grid of settings `n x ρ x σ²` sharing every other parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    pub sigma2_values: Vec<f64>,
    pub p: usize,
    pub p1: usize,
    pub m: usize,
    pub bases: BasisTable,
    pub ratio: f64,
    pub replications: usize,
    pub seed: u64,
    pub lambda_grid: LambdaGrid,
    pub adaptive: AdaptiveRidgeOptions,
    pub quadrature: QuadratureRule,
    pub estimators: Vec<String>,
    /// Worker threads; `None` lets the thread pool decide.
    pub threads: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let cell = SimulationConfig::default();
        Self {
            n_values: vec![25, 50, 100],
            rho_values: vec![0.5, 0.8, 0.99],
            sigma2_values: vec![0.5, 1.0, 10.0],
            p: cell.p,
            p1: cell.p1,
            m: cell.m,
            bases: cell.bases,
            ratio: DEFAULT_RATIO,
            replications: cell.replications,
            seed: cell.seed,
            lambda_grid: cell.lambda_grid,
            adaptive: cell.adaptive,
            quadrature: cell.quadrature,
            estimators: cell.estimators,
            threads: None,
        }
    }
}

impl StudyConfig {
    /// Settings in `n`-major, then `ρ`, then `σ²` order.
    pub fn cells(&self) -> Vec<SimulationConfig> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &rho in &self.rho_values {
                for &sigma2 in &self.sigma2_values {
                    out.push(SimulationConfig {
                        n,
                        p: self.p,
                        p1: self.p1,
                        m: self.m,
                        rho,
                        sigma2,
                        bases: self.bases,
                        ratio: self.ratio,
                        replications: self.replications,
                        seed: self.seed,
                        lambda_grid: self.lambda_grid,
                        adaptive: self.adaptive,
                        quadrature: self.quadrature,
                        estimators: self.estimators.clone(),
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.cells();
        if cells.is_empty() {
            return Err(validation(
                "n_values, rho_values and sigma2_values must all be nonempty",
            ));
        }
        for c in &cells {
            c.validate()?;
        }
        if self.threads == Some(0) {
            return Err(validation("threads must be at least 1"));
        }
        registry(&cells[0])?;
        Ok(())
    }

    /// Selected estimators in registration order.
    pub fn estimator_kinds(&self) -> Result<Vec<EstimatorKind>> {
        let cells = self.cells();
        let cell = cells.first().ok_or_else(|| validation("empty study"))?;
        Ok(registry(cell)?.iter().map(|e| e.kind()).collect())
    }
}

fn registry(config: &SimulationConfig) -> Result<EstimatorRegistry> {
    let mut reg = EstimatorRegistry::with_defaults(config.ratio)?;
    reg.retain_named(&config.estimators)?;
    Ok(reg)
}

/// Metrics of one replication. Estimator columns are empty when the
/// estimator was not selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub cell: usize,
    pub n: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub replication: usize,
    pub seed: u64,
    pub imse_fre: Option<f64>,
    pub imse_frfm: Option<f64>,
    pub imse_frsm: Option<f64>,
    pub log10_cn_fre: Option<f64>,
    pub log10_cn_frfm: Option<f64>,
    pub log10_cn_frsm: Option<f64>,
    pub lambda_fre: Option<f64>,
    pub lambda_frfm: Option<f64>,
    pub lambda_frsm: Option<f64>,
    pub tpr: f64,
    pub fpr: f64,
    pub n_relevant: usize,
    pub partition_iterations: usize,
    pub partition_converged: bool,
}

impl ReplicationRecord {
    pub fn imse(&self, kind: EstimatorKind) -> Option<f64> {
        match kind {
            EstimatorKind::Fre => self.imse_fre,
            EstimatorKind::Frfm => self.imse_frfm,
            EstimatorKind::Frsm => self.imse_frsm,
        }
    }

    pub fn log10_cn(&self, kind: EstimatorKind) -> Option<f64> {
        match kind {
            EstimatorKind::Fre => self.log10_cn_fre,
            EstimatorKind::Frfm => self.log10_cn_frfm,
            EstimatorKind::Frsm => self.log10_cn_frsm,
        }
    }

    pub fn lambda(&self, kind: EstimatorKind) -> Option<f64> {
        match kind {
            EstimatorKind::Fre => self.lambda_fre,
            EstimatorKind::Frfm => self.lambda_frfm,
            EstimatorKind::Frsm => self.lambda_frsm,
        }
    }

    fn set(&mut self, kind: EstimatorKind, imse: f64, log10_cn: f64, lambda: f64) {
        let (a, b, c) = match kind {
            EstimatorKind::Fre => (
                &mut self.imse_fre,
                &mut self.log10_cn_fre,
                &mut self.lambda_fre,
            ),
            EstimatorKind::Frfm => (
                &mut self.imse_frfm,
                &mut self.log10_cn_frfm,
                &mut self.lambda_frfm,
            ),
            EstimatorKind::Frsm => (
                &mut self.imse_frsm,
                &mut self.log10_cn_frsm,
                &mut self.lambda_frsm,
            ),
        };
        *a = Some(imse);
        *b = Some(log10_cn);
        *c = Some(lambda);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub cell: usize,
    pub replication: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub mean_imse: Option<f64>,
    pub sd_imse: Option<f64>,
    pub median_log10_cn: Option<f64>,
    pub median_lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub n: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub completed: usize,
    pub failed: usize,
    pub mean_tpr: Option<f64>,
    pub mean_fpr: Option<f64>,
    pub estimators: Vec<EstimatorSummary>,
}

/// Median log10 condition number over every completed replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledSummary {
    pub estimator: EstimatorKind,
    pub median_log10_cn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub cells: Vec<CellSummary>,
    pub pooled: Vec<PooledSummary>,
    pub failures: Vec<ReplicationFailure>,
    pub replications: Vec<ReplicationRecord>,
}

impl StudyReport {
    pub fn failed(&self) -> usize {
        self.failures.len()
    }

    pub fn cell(&self, n: usize, rho: f64, sigma2: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.rho == rho && c.sigma2 == sigma2)
    }
}

impl CellSummary {
    pub fn estimator(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == kind)
    }
}

/// Median with the two middle values averaged; `None` for no values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample standard deviation (divisor `k − 1`), 0 for a single value.
fn sd(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// Fit every selected estimator on replication `index` of one setting.
pub fn run_replication(config: &SimulationConfig, index: usize) -> Result<ReplicationRecord> {
    let generator = Generator::new(config)?;
    replicate(&generator, &registry(config)?, 0, index)
}

fn replicate(
    generator: &Generator,
    registry: &EstimatorRegistry,
    cell: usize,
    index: usize,
) -> Result<ReplicationRecord> {
    let cfg = generator.config();
    let (_, data) = generator.draw(index)?;
    let grid_values = cfg.lambda_grid.values()?;
    let opts = DesignOptions {
        quadrature: cfg.quadrature,
        ..Default::default()
    };
    let truth = cfg.true_relevant();
    let screening = screen(&data, &cfg.bases, &opts, &grid_values, &cfg.adaptive)?;
    let metrics = partition_metrics(&screening.partition.split, &truth)?;
    let true_split = PredictorSplit::leading(cfg.p, cfg.p1);

    let mut record = ReplicationRecord {
        cell,
        n: cfg.n,
        rho: cfg.rho,
        sigma2: cfg.sigma2,
        replication: index,
        seed: cfg.replication_seed(index),
        imse_fre: None,
        imse_frfm: None,
        imse_frsm: None,
        log10_cn_fre: None,
        log10_cn_frfm: None,
        log10_cn_frsm: None,
        lambda_fre: None,
        lambda_frfm: None,
        lambda_frsm: None,
        tpr: metrics.tpr,
        fpr: metrics.fpr,
        n_relevant: screening.partition.split.relevant.len(),
        partition_iterations: screening.partition.iterations,
        partition_converged: screening.partition.converged,
    };

    let beta = generator.beta_grid();
    let grid = data.grid();
    for est in registry.iter() {
        let computed;
        let run = if est.kind() == EstimatorKind::Fre {
            &screening.fre
        } else {
            let split = if est.uses_true_split() {
                &true_split
            } else {
                &screening.partition.split
            };
            computed = run_estimator(est, &data, split, &cfg.bases, &opts, &grid_values)?;
            &computed
        };
        let mut imse = 0.0;
        for j in 0..cfg.p1 {
            let est_row: Vec<f64> = run.fit.beta_hat_grid.row(j).iter().copied().collect();
            let true_row: Vec<f64> = beta.row(j).iter().copied().collect();
            imse += imse_metric(&est_row, &true_row, grid, cfg.quadrature)?;
        }
        imse /= cfg.p1 as f64;
        let cn = run.condition_number()?;
        if !cn.is_finite() {
            return Err(Error::Conditioning(format!(
                "{} system matrix is not positive definite at the chosen penalty",
                est.name()
            )));
        }
        record.set(est.kind(), imse, cn.log10(), run.trace.chosen_lambda);
    }
    Ok(record)
}

/// Recompute every summary from replication records and failures.
pub fn aggregate(
    config: &StudyConfig,
    replications: Vec<ReplicationRecord>,
    failures: Vec<ReplicationFailure>,
) -> Result<StudyReport> {
    let kinds = config.estimator_kinds()?;
    let cells = config.cells();
    let mut summaries = Vec::with_capacity(cells.len());
    for (c, cell) in cells.iter().enumerate() {
        let recs: Vec<&ReplicationRecord> = replications.iter().filter(|r| r.cell == c).collect();
        let tpr: Vec<f64> = recs.iter().map(|r| r.tpr).collect();
        let fpr: Vec<f64> = recs.iter().map(|r| r.fpr).collect();
        let estimators = kinds
            .iter()
            .map(|&k| {
                let imse: Vec<f64> = recs.iter().filter_map(|r| r.imse(k)).collect();
                let cn: Vec<f64> = recs.iter().filter_map(|r| r.log10_cn(k)).collect();
                let lam: Vec<f64> = recs.iter().filter_map(|r| r.lambda(k)).collect();
                EstimatorSummary {
                    estimator: k,
                    mean_imse: mean(&imse),
                    sd_imse: sd(&imse),
                    median_log10_cn: median(&cn),
                    median_lambda: median(&lam),
                }
            })
            .collect();
        summaries.push(CellSummary {
            cell: c,
            n: cell.n,
            rho: cell.rho,
            sigma2: cell.sigma2,
            completed: recs.len(),
            failed: failures.iter().filter(|f| f.cell == c).count(),
            mean_tpr: mean(&tpr),
            mean_fpr: mean(&fpr),
            estimators,
        });
    }
    let pooled = kinds
        .iter()
        .map(|&k| {
            let cn: Vec<f64> = replications.iter().filter_map(|r| r.log10_cn(k)).collect();
            PooledSummary {
                estimator: k,
                median_log10_cn: median(&cn),
            }
        })
        .collect();
    Ok(StudyReport {
        config: config.clone(),
        cells: summaries,
        pooled,
        failures,
        replications,
    })
}

/// Run every replication of every setting, in parallel, and aggregate in
/// (setting, replication) order.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let cells = config.cells();
    let mut prepared = Vec::with_capacity(cells.len());
    for cell in &cells {
        prepared.push((Generator::new(cell)?, registry(cell)?));
    }
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.replications).map(move |r| (c, r)))
        .collect();
    let run = || {
        tasks
            .par_iter()
            .map(|&(c, r)| {
                let (generator, reg) = &prepared[c];
                replicate(generator, reg, c, r).map_err(|e| ReplicationFailure {
                    cell: c,
                    replication: r,
                    seed: cells[c].replication_seed(r),
                    message: e.to_string(),
                })
            })
            .collect::<Vec<_>>()
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = config.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| validation(format!("cannot start worker threads: {e}")))?;
    let outcomes = pool.install(run);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    aggregate(config, records, failures)
}
