//! Estimators as interchangeable strategies, looked up by name at runtime.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{fit_fre, fit_frfm, fit_frsm, frfm_penalty, EstimatorKind, FitResult};
use crate::basis::BasisSpec;
use crate::design::{BlockGroup, BlockLayout, DesignSystem};
use crate::error::{validation, Result};
use crate::partition::PredictorSplit;

/// Fixed ratio `λ₂ / λ₁` used when tuning FRFM.
pub const DEFAULT_RATIO: f64 = 25.0;

/// Basis used by each estimator, plus the basis covariates are generated in
/// for simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisTable {
    pub fre: BasisSpec,
    pub frfm_relevant: BasisSpec,
    pub frfm_nuisance: BasisSpec,
    pub frsm: BasisSpec,
    pub generation: BasisSpec,
}

impl Default for BasisTable {
    /// Cubic bases with 7, 5/3, 5 and 12 interior knots (dimensions 11,
    /// 9/7, 9 and 16).
    fn default() -> Self {
        Self {
            fre: BasisSpec::cubic(7),
            frfm_relevant: BasisSpec::cubic(5),
            frfm_nuisance: BasisSpec::cubic(3),
            frsm: BasisSpec::cubic(5),
            generation: BasisSpec::cubic(12),
        }
    }
}

impl BasisTable {
    /// Same basis everywhere.
    pub fn matched(spec: BasisSpec) -> Self {
        Self {
            fre: spec,
            frfm_relevant: spec,
            frfm_nuisance: spec,
            frsm: spec,
            generation: spec,
        }
    }

    /// Rescale every spec to the domain `[lo, hi]`.
    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        for s in [
            &mut self.fre,
            &mut self.frfm_relevant,
            &mut self.frfm_nuisance,
            &mut self.frsm,
            &mut self.generation,
        ] {
            s.domain_lo = lo;
            s.domain_hi = hi;
        }
        self
    }
}

/// One penalized estimator: which predictors it fits with which basis, and
/// how a scalar tuning value maps to the penalty matrix.
pub trait Estimator: Send + Sync {
    fn kind(&self) -> EstimatorKind;

    fn name(&self) -> &'static str {
        self.kind().name()
    }

    /// Block layout this estimator fits for the given predictor split.
    fn layout(&self, p: usize, split: &PredictorSplit, bases: &BasisTable) -> Result<BlockLayout>;

    /// Penalty matrix at tuning value `lambda`.
    fn penalty(&self, system: &DesignSystem, lambda: f64) -> DMatrix<f64>;

    fn fit(&self, system: &DesignSystem, lambda: f64) -> Result<FitResult>;

    /// Whether the estimator is fitted on the true relevant set when the
    /// caller knows it (simulations), rather than on the estimated split.
    fn uses_true_split(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Fre;

impl Estimator for Fre {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Fre
    }

    fn layout(&self, p: usize, _split: &PredictorSplit, bases: &BasisTable) -> Result<BlockLayout> {
        BlockLayout::uniform(p, bases.fre)
    }

    fn penalty(&self, system: &DesignSystem, lambda: f64) -> DMatrix<f64> {
        system.uniform_penalty(lambda)
    }

    fn fit(&self, system: &DesignSystem, lambda: f64) -> Result<FitResult> {
        fit_fre(system, lambda)
    }
}

/// Full model with the nuisance block penalized `ratio` times harder.
#[derive(Debug, Clone, Copy)]
pub struct Frfm {
    ratio: f64,
}

impl Frfm {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(ratio > 1.0) || !ratio.is_finite() {
            return Err(validation(format!(
                "FRFM penalty ratio must exceed 1 (got {ratio})"
            )));
        }
        Ok(Self { ratio })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }
}

impl Default for Frfm {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_RATIO,
        }
    }
}

impl Estimator for Frfm {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Frfm
    }

    fn layout(&self, p: usize, split: &PredictorSplit, bases: &BasisTable) -> Result<BlockLayout> {
        let mut groups = vec![BlockGroup {
            predictors: split.relevant.clone(),
            spec: bases.frfm_relevant,
        }];
        if !split.nuisance.is_empty() {
            groups.push(BlockGroup {
                predictors: split.nuisance.clone(),
                spec: bases.frfm_nuisance,
            });
        }
        BlockLayout::new(p, groups)
    }

    fn penalty(&self, system: &DesignSystem, lambda: f64) -> DMatrix<f64> {
        frfm_penalty(system, lambda, self.ratio * lambda)
            .expect("FRFM layout has one or two groups")
    }

    fn fit(&self, system: &DesignSystem, lambda: f64) -> Result<FitResult> {
        fit_frfm(system, lambda, self.ratio * lambda)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Frsm;

impl Estimator for Frsm {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Frsm
    }

    fn layout(&self, p: usize, split: &PredictorSplit, bases: &BasisTable) -> Result<BlockLayout> {
        BlockLayout::new(
            p,
            vec![BlockGroup {
                predictors: split.relevant.clone(),
                spec: bases.frsm,
            }],
        )
    }

    fn penalty(&self, system: &DesignSystem, lambda: f64) -> DMatrix<f64> {
        system.uniform_penalty(lambda)
    }

    fn fit(&self, system: &DesignSystem, lambda: f64) -> Result<FitResult> {
        fit_frsm(system, lambda)
    }

    fn uses_true_split(&self) -> bool {
        true
    }
}

/// Name-keyed collection of estimators, kept in registration order.
pub struct EstimatorRegistry {
    entries: Vec<Box<dyn Estimator>>,
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// FRE, FRFM (with the given ratio) and FRSM.
    pub fn with_defaults(ratio: f64) -> Result<Self> {
        let mut reg = Self::empty();
        reg.register(Box::new(Fre))?;
        reg.register(Box::new(Frfm::new(ratio)?))?;
        reg.register(Box::new(Frsm))?;
        Ok(reg)
    }

    pub fn register(&mut self, estimator: Box<dyn Estimator>) -> Result<()> {
        if self.get(estimator.name()).is_some() {
            return Err(validation(format!(
                "estimator {} registered twice",
                estimator.name()
            )));
        }
        self.entries.push(estimator);
        Ok(())
    }

    /// Case-insensitive lookup.
    pub fn get(&self, name: &str) -> Option<&dyn Estimator> {
        self.entries
            .iter()
            .find(|e| e.name().eq_ignore_ascii_case(name))
            .map(|e| e.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Estimator> {
        self.entries.iter().map(|e| e.as_ref())
    }

    /// Keep only the named estimators, in registration order.
    pub fn retain_named<S: AsRef<str>>(&mut self, names: &[S]) -> Result<()> {
        for n in names {
            if self.get(n.as_ref()).is_none() {
                return Err(validation(format!(
                    "unknown estimator '{}' (known: {})",
                    n.as_ref(),
                    self.names().join(", ")
                )));
            }
        }
        self.entries.retain(|e| {
            names
                .iter()
                .any(|n| e.name().eq_ignore_ascii_case(n.as_ref()))
        });
        Ok(())
    }
}

impl std::fmt::Debug for EstimatorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}
