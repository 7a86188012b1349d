//! Data → design → GCV → fit for one estimator, plus the adaptive-ridge
//! split that FRFM consumes.

use nalgebra::DMatrix;

use crate::design::{build_design, BlockLayout, DesignOptions, DesignSystem, FunctionalDataset};
use crate::error::Result;
use crate::estimators::{condition_number, BasisTable, Estimator, FitResult, Fre};
use crate::partition::{
    adaptive_ridge_partition, AdaptiveRidgeOptions, PartitionResult, PredictorSplit,
};
use crate::tuning::{tune, GcvTrace};

/// A tuned and fitted estimator together with the system it was fit on.
#[derive(Debug, Clone)]
pub struct EstimatorRun {
    pub system: DesignSystem,
    pub trace: GcvTrace,
    pub fit: FitResult,
    pub penalty: DMatrix<f64>,
}

impl EstimatorRun {
    /// `κ(ZᵀZ + P)` at the chosen penalty.
    pub fn condition_number(&self) -> Result<f64> {
        condition_number(self.system.z(), &self.penalty)
    }
}

/// Tune `estimator` by GCV on an already assembled system and fit at the
/// chosen penalty.
pub fn tune_and_fit(
    estimator: &dyn Estimator,
    system: DesignSystem,
    grid: &[f64],
) -> Result<EstimatorRun> {
    let trace = tune(estimator, &system, grid)?;
    let lambda = trace.chosen_lambda;
    let fit = estimator.fit(&system, lambda)?;
    let penalty = estimator.penalty(&system, lambda);
    Ok(EstimatorRun {
        system,
        trace,
        fit,
        penalty,
    })
}

/// Build the estimator's design for `split` and tune/fit it.
pub fn run_estimator(
    estimator: &dyn Estimator,
    data: &FunctionalDataset,
    split: &PredictorSplit,
    bases: &BasisTable,
    opts: &DesignOptions,
    grid: &[f64],
) -> Result<EstimatorRun> {
    let layout = estimator.layout(data.p(), split, bases)?;
    let system = build_design(data, &layout, opts)?;
    tune_and_fit(estimator, system, grid)
}

/// The FRE run and the partition derived from it.
#[derive(Debug, Clone)]
pub struct Screening {
    pub fre: EstimatorRun,
    pub partition: PartitionResult,
}

/// Fit FRE with every predictor, then run adaptive ridge on the same
/// system at the FRE GCV penalty.
pub fn screen(
    data: &FunctionalDataset,
    bases: &BasisTable,
    opts: &DesignOptions,
    grid: &[f64],
    adaptive: &AdaptiveRidgeOptions,
) -> Result<Screening> {
    let layout = BlockLayout::uniform(data.p(), bases.fre)?;
    let system = build_design(data, &layout, opts)?;
    let fre = tune_and_fit(&Fre, system, grid)?;
    let partition = adaptive_ridge_partition(&fre.system, fre.trace.chosen_lambda, adaptive)?;
    Ok(Screening { fre, partition })
}
