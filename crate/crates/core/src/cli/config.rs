//! JSON configuration files for the subcommands.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::design::Centering;
use crate::error::{validation, Error, Result};
use crate::estimators::{BasisTable, DEFAULT_RATIO};
use crate::inference::InferenceMode;
use crate::partition::AdaptiveRidgeOptions;
use crate::quadrature::QuadratureRule;
use crate::tuning::LambdaGrid;

/// Parse `text` as `T`, prefixing errors with `origin:line:column`.
pub fn parse_config<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::Schema(format!(
            "{origin}:{}:{}: {}",
            e.line(),
            e.column(),
            strip_position(&e.to_string())
        ))
    })
}

fn strip_position(msg: &str) -> &str {
    match msg.rfind(" at line ") {
        Some(i) => &msg[..i],
        None => msg,
    }
}

/// Load a config file, or the defaults when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Schema(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text, &p.display().to_string())
        }
    }
}

/// Interior knot counts; the domain comes from the data grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnotTable {
    pub order: usize,
    pub fre: usize,
    pub frfm_relevant: usize,
    pub frfm_nuisance: usize,
    pub frsm: usize,
}

impl Default for KnotTable {
    fn default() -> Self {
        let b = BasisTable::default();
        Self {
            order: 4,
            fre: b.fre.interior_knots,
            frfm_relevant: b.frfm_relevant.interior_knots,
            frfm_nuisance: b.frfm_nuisance.interior_knots,
            frsm: b.frsm.interior_knots,
        }
    }
}

impl KnotTable {
    pub fn bases(&self, lo: f64, hi: f64) -> Result<BasisTable> {
        let spec = |l: usize| BasisSpec {
            domain_lo: lo,
            domain_hi: hi,
            order: self.order,
            interior_knots: l,
        };
        let table = BasisTable {
            fre: spec(self.fre),
            frfm_relevant: spec(self.frfm_relevant),
            frfm_nuisance: spec(self.frfm_nuisance),
            frsm: spec(self.frsm),
            generation: spec(self.fre),
        };
        for s in [
            table.fre,
            table.frfm_relevant,
            table.frfm_nuisance,
            table.frsm,
        ] {
            s.validate()?;
        }
        Ok(table)
    }
}

/// Settings for `fit` and `infer` on user data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub knots: KnotTable,
    pub lambda_grid: LambdaGrid,
    pub ratio: f64,
    pub adaptive: AdaptiveRidgeOptions,
    pub quadrature: QuadratureRule,
    pub centering: Centering,
    pub estimators: Vec<String>,
    /// Predictor ids treated as relevant; when absent the split comes from
    /// adaptive ridge.
    pub relevant: Option<Vec<String>>,
    pub level: f64,
    pub inference_mode: InferenceMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            knots: KnotTable::default(),
            lambda_grid: LambdaGrid::default(),
            ratio: DEFAULT_RATIO,
            adaptive: AdaptiveRidgeOptions::default(),
            quadrature: QuadratureRule::Trapezoid,
            centering: Centering::Full,
            estimators: vec!["FRE".into(), "FRFM".into(), "FRSM".into()],
            relevant: None,
            level: 0.95,
            inference_mode: InferenceMode::Full,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.lambda_grid.values()?;
        if !(self.ratio > 1.0) || !self.ratio.is_finite() {
            return Err(validation(format!(
                "ratio must exceed 1, got {}",
                self.ratio
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(validation(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.estimators.is_empty() {
            return Err(validation("at least one estimator must be selected"));
        }
        self.knots.bases(0.0, 1.0)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::StudyConfig;

    #[test]
    fn errors_carry_line_and_column() {
        let text = "{\n  \"replications\": 5,\n  \"bogus\": 1\n}";
        let err = parse_config::<StudyConfig>(text, "study.json")
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("study.json:3:"), "{err}");
        assert!(err.contains("bogus"));
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg: StudyConfig = parse_config(
            "{\"replications\": 7, \"bases\": {\"fre\": {\"interior_knots\": 4}}}",
            "x",
        )
        .unwrap();
        assert_eq!(cfg.replications, 7);
        assert_eq!(cfg.bases.fre.dim(), 8);
        assert_eq!(cfg.bases.frsm.dim(), 9);
        assert_eq!(cfg.n_values, vec![25, 50, 100]);
        let fit: FitConfig = parse_config("{}", "x").unwrap();
        assert_eq!(fit, FitConfig::default());
    }
}
