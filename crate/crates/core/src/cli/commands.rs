use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{load_config, FitConfig};
use super::io::{fmt_f64, fmt_opt, read_dataset, read_functions, write_csv, LabeledDataset};
use super::manifest::RunManifest;
use super::{FitArgs, InferArgs, PlotdataArgs, SimulateArgs};
use crate::design::DesignOptions;
use crate::error::{validation, Error, Result};
use crate::estimators::{EstimatorKind, EstimatorRegistry, Lambdas};
use crate::inference::{infer_functional, InferenceMode, InferenceResult};
use crate::partition::PredictorSplit;
use crate::pipeline::{run_estimator, screen, EstimatorRun, Screening};
use crate::simulation::{run_study, ReplicationRecord, StudyConfig, StudyReport};

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

const REPLICATION_HEADER: [&str; 20] = [
    "cell",
    "n",
    "rho",
    "sigma2",
    "replication",
    "seed",
    "imse_fre",
    "imse_frfm",
    "imse_frsm",
    "log10_cn_fre",
    "log10_cn_frfm",
    "log10_cn_frsm",
    "lambda_fre",
    "lambda_frfm",
    "lambda_frsm",
    "tpr",
    "fpr",
    "n_relevant",
    "partition_iterations",
    "partition_converged",
];

fn replication_rows(recs: &[ReplicationRecord]) -> Vec<Vec<String>> {
    recs.iter()
        .map(|r| {
            vec![
                r.cell.to_string(),
                r.n.to_string(),
                fmt_f64(r.rho),
                fmt_f64(r.sigma2),
                r.replication.to_string(),
                r.seed.to_string(),
                fmt_opt(r.imse_fre),
                fmt_opt(r.imse_frfm),
                fmt_opt(r.imse_frsm),
                fmt_opt(r.log10_cn_fre),
                fmt_opt(r.log10_cn_frfm),
                fmt_opt(r.log10_cn_frsm),
                fmt_opt(r.lambda_fre),
                fmt_opt(r.lambda_frfm),
                fmt_opt(r.lambda_frsm),
                fmt_f64(r.tpr),
                fmt_f64(r.fpr),
                r.n_relevant.to_string(),
                r.partition_iterations.to_string(),
                r.partition_converged.to_string(),
            ]
        })
        .collect()
}

/// Parse a `replications.csv` written by `simulate`.
pub fn read_replications(path: &Path) -> Result<Vec<ReplicationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|rec| rec.map_err(Error::from))
        .collect()
}

fn label(v: f64) -> String {
    format!("{v}")
}

fn write_study(report: &StudyReport, manifest: &mut RunManifest) -> Result<()> {
    let cfg = &report.config;
    manifest.emit("report.json", &json_bytes(report)?)?;
    manifest.emit(
        "replications.csv",
        &csv_bytes(&REPLICATION_HEADER, &replication_rows(&report.replications))?,
    )?;

    let kinds = cfg.estimator_kinds()?;
    let mut header = vec!["n".to_string(), "estimator".to_string()];
    for rho in &cfg.rho_values {
        for s2 in &cfg.sigma2_values {
            header.push(format!(
                "mean_imse_rho_{}_sigma2_{}",
                label(*rho),
                label(*s2)
            ));
        }
    }
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        for &k in &kinds {
            let mut row = vec![n.to_string(), k.to_string()];
            for &rho in &cfg.rho_values {
                for &s2 in &cfg.sigma2_values {
                    let v = report
                        .cell(n, rho, s2)
                        .and_then(|c| c.estimator(k))
                        .and_then(|e| e.mean_imse);
                    row.push(fmt_opt(v));
                }
            }
            rows.push(row);
        }
    }
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    manifest.emit("imse_table.csv", &csv_bytes(&header_ref, &rows)?)?;

    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.n.to_string(),
                fmt_f64(c.rho),
                fmt_f64(c.sigma2),
                fmt_opt(c.mean_tpr),
                fmt_opt(c.mean_fpr),
                c.completed.to_string(),
                c.failed.to_string(),
            ]
        })
        .collect();
    manifest.emit(
        "partition_table.csv",
        &csv_bytes(
            &[
                "n",
                "rho",
                "sigma2",
                "mean_tpr",
                "mean_fpr",
                "completed",
                "failed",
            ],
            &rows,
        )?,
    )?;

    let rows: Vec<Vec<String>> = report
        .pooled
        .iter()
        .map(|p| vec![p.estimator.to_string(), fmt_opt(p.median_log10_cn)])
        .collect();
    manifest.emit(
        "cn_table.csv",
        &csv_bytes(&["estimator", "median_log10_cn"], &rows)?,
    )?;
    Ok(())
}

pub(super) fn simulate(args: &SimulateArgs) -> Result<i32> {
    let common = &args.common;
    let mut cfg: StudyConfig = load_config(common.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    if let Some(e) = &common.estimators {
        cfg.estimators = e.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&common.out)?;
    let report = run_study(&cfg)?;
    let mut manifest = RunManifest::new(
        "simulate",
        common.config.as_deref(),
        serde_json::to_value(&cfg)?,
        &common.out,
    );
    manifest.seed = Some(cfg.seed);
    manifest.failed_replications = report.failed();
    write_study(&report, &mut manifest)?;
    manifest.finish()?;
    for f in &report.failures {
        eprintln!(
            "replication {} of cell {} (seed {}) failed: {}",
            f.replication, f.cell, f.seed, f.message
        );
    }
    Ok(if report.failed() == 0 { 0 } else { 2 })
}

/// Integrated squared magnitude `∫ β̂_j²` of one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Influence {
    pub predictor_id: String,
    pub integrated_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFitSummary {
    pub estimator: EstimatorKind,
    pub lambdas: Lambdas,
    pub edf: f64,
    pub residual_ss: f64,
    pub sigma2_hat: Option<f64>,
    pub intercept: f64,
    pub log10_condition_number: f64,
    pub predictors: Vec<String>,
    pub influence: Vec<Influence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    /// `adaptive_ridge` or `config`.
    pub source: String,
    pub relevant: Vec<String>,
    pub nuisance: Vec<String>,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub predictors: Vec<String>,
    pub partition: PartitionSummary,
    pub fits: Vec<EstimatorFitSummary>,
}

/// Everything `fit` computes for one dataset.
#[derive(Debug, Clone)]
pub struct DatasetFit {
    pub screening: Screening,
    pub split: PredictorSplit,
    pub runs: Vec<EstimatorRun>,
    pub report: FitReport,
}

/// Screen with FRE and adaptive ridge, then tune and fit every selected
/// estimator on the resulting split.
pub fn fit_dataset(ds: &LabeledDataset, cfg: &FitConfig) -> Result<DatasetFit> {
    cfg.validate()?;
    let data = &ds.data;
    let grid = data.grid();
    let bases = cfg.knots.bases(grid[0], grid[grid.len() - 1])?;
    let opts = DesignOptions {
        quadrature: cfg.quadrature,
        centering: cfg.centering,
        ..Default::default()
    };
    let lambdas = cfg.lambda_grid.values()?;
    let mut registry = EstimatorRegistry::with_defaults(cfg.ratio)?;
    registry.retain_named(&cfg.estimators)?;

    let screening = screen(data, &bases, &opts, &lambdas, &cfg.adaptive)?;
    let (split, source) = match &cfg.relevant {
        Some(ids) => {
            let idx = ids
                .iter()
                .map(|id| {
                    ds.predictor_index(id).ok_or_else(|| {
                        validation(format!("relevant predictor '{id}' is not in the data"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (PredictorSplit::from_relevant(data.p(), &idx)?, "config")
        }
        None => (screening.partition.split.clone(), "adaptive_ridge"),
    };

    let mut runs = Vec::new();
    let mut fits = Vec::new();
    for est in registry.iter() {
        let run = if est.kind() == EstimatorKind::Fre {
            screening.fre.clone()
        } else {
            run_estimator(est, data, &split, &bases, &opts, &lambdas)?
        };
        let fit = &run.fit;
        let sigma2_hat = crate::inference::sigma2_from_fit(fit, data.n()).ok();
        let included: Vec<usize> = run.system.layout().predictors_in_order().collect();
        let influence = included
            .iter()
            .map(|&j| {
                let sq: Vec<f64> = fit.beta_hat_grid.row(j).iter().map(|v| v * v).collect();
                Ok(Influence {
                    predictor_id: ds.predictors[j].clone(),
                    integrated_sq: cfg.quadrature.integrate(grid, &sq)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        fits.push(EstimatorFitSummary {
            estimator: est.kind(),
            lambdas: fit.lambdas,
            edf: fit.edf,
            residual_ss: fit.residual_ss,
            sigma2_hat,
            intercept: fit.intercept,
            log10_condition_number: run.condition_number()?.log10(),
            predictors: included.iter().map(|&j| ds.predictors[j].clone()).collect(),
            influence,
        });
        runs.push(run);
    }
    let ids = |v: &[usize]| {
        v.iter()
            .map(|&j| ds.predictors[j].clone())
            .collect::<Vec<_>>()
    };
    let report = FitReport {
        n: data.n(),
        p: data.p(),
        m: data.m(),
        predictors: ds.predictors.clone(),
        partition: PartitionSummary {
            source: source.to_string(),
            relevant: ids(&split.relevant),
            nuisance: ids(&split.nuisance),
            weights: screening.partition.weights.clone(),
            iterations: screening.partition.iterations,
            converged: screening.partition.converged,
        },
        fits,
    };
    Ok(DatasetFit {
        screening,
        split,
        runs,
        report,
    })
}

fn load_fit(args: &FitArgs) -> Result<(FitConfig, LabeledDataset)> {
    let mut cfg: FitConfig = load_config(args.common.config.as_deref())?;
    if let Some(e) = &args.common.estimators {
        cfg.estimators = e.clone();
    }
    cfg.validate()?;
    let ds = read_dataset(&args.data, &args.response)?;
    Ok((cfg, ds))
}

fn write_fit(ds: &LabeledDataset, result: &DatasetFit, manifest: &mut RunManifest) -> Result<()> {
    let grid = ds.data.grid();
    let mut rows = Vec::new();
    for run in &result.runs {
        for j in run.system.layout().predictors_in_order() {
            for (l, s) in grid.iter().enumerate() {
                rows.push(vec![
                    run.fit.kind.to_string(),
                    ds.predictors[j].clone(),
                    fmt_f64(*s),
                    fmt_f64(run.fit.beta_hat_grid[(j, l)]),
                ]);
            }
        }
    }
    manifest.emit(
        "coefficients.csv",
        &csv_bytes(
            &["estimator", "predictor_id", "grid_point", "beta_hat"],
            &rows,
        )?,
    )?;
    let mut rows = Vec::new();
    for run in &result.runs {
        let t = &run.trace;
        for (i, lambda) in t.grid.iter().enumerate() {
            rows.push(vec![
                run.fit.kind.to_string(),
                fmt_f64(*lambda),
                fmt_f64(lambda.log10()),
                fmt_f64(t.scores[i]),
                fmt_f64(t.edf[i]),
                (i == t.chosen_index).to_string(),
            ]);
        }
    }
    manifest.emit(
        "gcv_trace.csv",
        &csv_bytes(
            &[
                "estimator",
                "lambda",
                "log10_lambda",
                "gcv",
                "edf",
                "chosen",
            ],
            &rows,
        )?,
    )?;
    manifest.emit("fit.json", &json_bytes(&result.report)?)?;
    Ok(())
}

pub(super) fn fit(args: &FitArgs) -> Result<i32> {
    let (cfg, ds) = load_fit(args)?;
    let result = fit_dataset(&ds, &cfg)?;
    std::fs::create_dir_all(&args.common.out)?;
    let mut manifest = RunManifest::new(
        "fit",
        args.common.config.as_deref(),
        serde_json::to_value(&cfg)?,
        &args.common.out,
    );
    write_fit(&ds, &result, &mut manifest)?;
    manifest.finish()?;
    Ok(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorInference {
    pub estimator: EstimatorKind,
    pub mode: InferenceMode,
    #[serde(flatten)]
    pub result: InferenceResult,
}

pub(super) fn infer(args: &InferArgs) -> Result<i32> {
    let (mut cfg, ds) = load_fit(&args.fit)?;
    if let Some(level) = args.level {
        cfg.level = level;
    }
    cfg.validate()?;
    let x = read_functions(&args.x, &ds.predictors, ds.data.grid())?;
    let result = fit_dataset(&ds, &cfg)?;
    let mut out = Vec::new();
    for run in &result.runs {
        let mode = if run.fit.kind == EstimatorKind::Frfm {
            cfg.inference_mode
        } else {
            InferenceMode::Full
        };
        let r = infer_functional(&run.system, &run.fit, &run.penalty, &x, cfg.level, mode)?;
        out.push(EstimatorInference {
            estimator: run.fit.kind,
            mode,
            result: r,
        });
    }
    let out_dir = &args.fit.common.out;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest::new(
        "infer",
        args.fit.common.config.as_deref(),
        serde_json::to_value(&cfg)?,
        out_dir,
    );
    write_fit(&ds, &result, &mut manifest)?;
    manifest.emit("inference.json", &json_bytes(&out)?)?;
    let rows: Vec<Vec<String>> = out
        .iter()
        .map(|e| {
            let r = &e.result;
            vec![
                e.estimator.to_string(),
                fmt_f64(r.psi_hat),
                fmt_f64(r.variance_hat),
                fmt_f64(r.sigma2_hat),
                fmt_f64(r.edf),
                fmt_f64(r.level),
                fmt_f64(r.ci_lo),
                fmt_f64(r.ci_hi),
            ]
        })
        .collect();
    manifest.emit(
        "inference.csv",
        &csv_bytes(
            &[
                "estimator",
                "psi_hat",
                "variance_hat",
                "sigma2_hat",
                "edf",
                "level",
                "ci_lo",
                "ci_hi",
            ],
            &rows,
        )?,
    )?;
    manifest.finish()?;
    Ok(0)
}

const STUDY_METRICS: [&str; 4] = ["mean_imse", "sd_imse", "median_log10_cn", "median_lambda"];

#[derive(Debug, Deserialize)]
struct GcvRow {
    estimator: String,
    log10_lambda: f64,
    gcv: f64,
    edf: f64,
    chosen: bool,
}

pub(super) fn plotdata(args: &PlotdataArgs) -> Result<i32> {
    let report_path = args.input.join("report.json");
    let gcv_path = args.input.join("gcv_trace.csv");
    if !report_path.exists() && !gcv_path.exists() {
        return Err(validation(format!(
            "{} holds neither report.json nor gcv_trace.csv",
            args.input.display()
        )));
    }
    std::fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new(
        "plotdata",
        None,
        serde_json::json!({ "input": args.input }),
        &args.out,
    );
    if report_path.exists() {
        let text = std::fs::read_to_string(&report_path)?;
        let report: StudyReport =
            super::config::parse_config(&text, &report_path.display().to_string())?;
        let mut rows = Vec::new();
        let mut part = Vec::new();
        for c in &report.cells {
            for e in &c.estimators {
                let values = [e.mean_imse, e.sd_imse, e.median_log10_cn, e.median_lambda];
                for (metric, v) in STUDY_METRICS.iter().zip(values) {
                    rows.push(vec![
                        c.n.to_string(),
                        fmt_f64(c.rho),
                        fmt_f64(c.sigma2),
                        e.estimator.to_string(),
                        metric.to_string(),
                        fmt_opt(v),
                    ]);
                }
            }
            for (metric, v) in [("mean_tpr", c.mean_tpr), ("mean_fpr", c.mean_fpr)] {
                part.push(vec![
                    c.n.to_string(),
                    fmt_f64(c.rho),
                    fmt_f64(c.sigma2),
                    metric.to_string(),
                    fmt_opt(v),
                ]);
            }
        }
        manifest.emit(
            "study_metrics.csv",
            &csv_bytes(
                &["n", "rho", "sigma2", "estimator", "metric", "value"],
                &rows,
            )?,
        )?;
        manifest.emit(
            "partition_metrics.csv",
            &csv_bytes(&["n", "rho", "sigma2", "metric", "value"], &part)?,
        )?;
    }
    if gcv_path.exists() {
        let mut r = csv::Reader::from_path(&gcv_path)?;
        let mut rows = Vec::new();
        for rec in r.deserialize() {
            let g: GcvRow = rec?;
            rows.push(vec![
                g.estimator,
                fmt_f64(g.log10_lambda),
                fmt_f64(g.gcv),
                fmt_f64(g.edf),
                g.chosen.to_string(),
            ]);
        }
        manifest.emit(
            "gcv_curves.csv",
            &csv_bytes(
                &["estimator", "log10_lambda", "gcv", "edf", "chosen"],
                &rows,
            )?,
        )?;
    }
    manifest.finish()?;
    Ok(0)
}
