//! Closed-form penalized least-squares estimators.
//!
//! All three estimators solve `(ZᵀZ + P) b = Zᵀy` and differ only in which
//! predictors enter `Z` and how the penalty `P` is composed:
//!
//! * FRE: `P = λ₁ R` over every predictor.
//! * FRFM: `P = blockdiag(λ₁ R₁, λ₂ R₂)` with `λ₂ ≥ λ₁`.
//! * FRSM: `P = λ₃ R₁` on the relevant block only.

mod strategy;

pub use strategy::{BasisTable, Estimator, EstimatorRegistry, Fre, Frfm, Frsm, DEFAULT_RATIO};

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::DesignSystem;
use crate::error::{validation, Error, Result};
use crate::linalg::{spectral_condition, SpdFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "FRE")]
    Fre,
    #[serde(rename = "FRFM")]
    Frfm,
    #[serde(rename = "FRSM")]
    Frsm,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] =
        [EstimatorKind::Fre, EstimatorKind::Frfm, EstimatorKind::Frsm];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Fre => "FRE",
            EstimatorKind::Frfm => "FRFM",
            EstimatorKind::Frsm => "FRSM",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| validation(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub kind: EstimatorKind,
    pub b_hat: DVector<f64>,
    /// Coefficients per predictor index; empty for predictors outside the model.
    pub b_blocks: Vec<DVector<f64>>,
    /// `p x M` coefficient functions on the observation grid.
    pub beta_hat_grid: DMatrix<f64>,
    pub lambdas: Lambdas,
    /// Trace of the hat matrix.
    pub edf: f64,
    pub residual_ss: f64,
    pub intercept: f64,
}

/// Cached `ZᵀZ`, `Zᵀy` and `yᵀy` for repeated solves against one design.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub ztz: DMatrix<f64>,
    pub zty: DVector<f64>,
    pub yty: f64,
    pub n: usize,
}

impl NormalEquations {
    pub fn new(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if z.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows, response has {}",
                z.nrows(),
                y.len()
            )));
        }
        let zt = z.transpose();
        let mut ztz = &zt * z;
        crate::linalg::symmetrize(&mut ztz);
        Ok(Self {
            zty: &zt * y,
            ztz,
            yty: y.dot(y),
            n: z.nrows(),
        })
    }

    pub fn system_matrix(&self, penalty: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if penalty.shape() != self.ztz.shape() {
            return Err(Error::Dimension(format!(
                "penalty is {:?}, expected {:?}",
                penalty.shape(),
                self.ztz.shape()
            )));
        }
        Ok(&self.ztz + penalty)
    }
}

/// Outcome of one penalized solve, with the factorization kept for traces.
#[derive(Debug, Clone)]
pub struct PenalizedSolve {
    pub b_hat: DVector<f64>,
    pub factor: SpdFactor,
    pub system: DMatrix<f64>,
}

impl PenalizedSolve {
    pub fn new(ne: &NormalEquations, penalty: &DMatrix<f64>) -> Result<Self> {
        let system = ne.system_matrix(penalty)?;
        let factor = SpdFactor::new(&system)?;
        let b_hat = factor.solve_refined(&system, &ne.zty);
        Ok(Self {
            b_hat,
            factor,
            system,
        })
    }

    /// `‖(ZᵀZ+P) b̂ − Zᵀy‖ / ‖Zᵀy‖`.
    pub fn normal_equation_residual(&self, ne: &NormalEquations) -> f64 {
        let r = &self.system * &self.b_hat - &ne.zty;
        let denom = ne.zty.norm();
        if denom == 0.0 {
            r.norm()
        } else {
            r.norm() / denom
        }
    }

    /// `‖y − Z b̂‖²` expanded through the cached normal equations.
    pub fn residual_ss(&self, ne: &NormalEquations) -> f64 {
        let b = &self.b_hat;
        let v = ne.yty - 2.0 * b.dot(&ne.zty) + b.dot(&(&ne.ztz * b));
        v.max(0.0)
    }
}

/// `b̂ = (ZᵀZ + P)⁻¹ Zᵀy` through a Cholesky factorization.
pub fn solve_penalized(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let ne = NormalEquations::new(z, y)?;
    Ok(PenalizedSolve::new(&ne, penalty)?.b_hat)
}

/// `tr(S)` with `S = Z(ZᵀZ+P)⁻¹Zᵀ`, without forming `S`.
pub fn hat_matrix_trace(z: &DMatrix<f64>, penalty: &DMatrix<f64>) -> Result<f64> {
    let ne = NormalEquations::new(z, &DVector::zeros(z.nrows()))?;
    let factor = SpdFactor::new(&ne.system_matrix(penalty)?)?;
    Ok(trace_from_factor(&factor, z))
}

/// `‖L⁻¹ Zᵀ‖²_F`, which equals `tr(Z A⁻¹ Zᵀ)` for `A = L Lᵀ`.
pub(crate) fn trace_from_factor(factor: &SpdFactor, z: &DMatrix<f64>) -> f64 {
    factor.half_solve_matrix(&z.transpose()).norm_squared()
}

/// The full `n x n` smoother matrix.
pub fn hat_matrix(z: &DMatrix<f64>, penalty: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ne = NormalEquations::new(z, &DVector::zeros(z.nrows()))?;
    let factor = SpdFactor::new(&ne.system_matrix(penalty)?)?;
    let mut s = z * factor.solve_matrix(&z.transpose());
    crate::linalg::symmetrize(&mut s);
    Ok(s)
}

/// Spectral condition number of `ZᵀZ + P`; `+inf` when not positive definite.
pub fn condition_number(z: &DMatrix<f64>, penalty: &DMatrix<f64>) -> Result<f64> {
    let ne = NormalEquations::new(z, &DVector::zeros(z.nrows()))?;
    Ok(spectral_condition(&ne.system_matrix(penalty)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImseDecomposition {
    pub bias_sq: f64,
    pub variance: f64,
    pub total: f64,
}

/// Exact risk `E‖b̂ − b‖²_G` of the ridge estimator under homoscedastic noise:
/// squared bias `‖(H − I) b‖²_G` with `H = (ZᵀZ+P)⁻¹ZᵀZ` plus variance
/// `σ² tr(G (ZᵀZ+P)⁻¹ ZᵀZ (ZᵀZ+P)⁻¹)`.
pub fn imse_decomposition(
    z: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    b_true: &DVector<f64>,
    sigma2: f64,
) -> Result<ImseDecomposition> {
    let k = z.ncols();
    if gram.shape() != (k, k) || b_true.len() != k {
        return Err(Error::Dimension(format!(
            "expected Gram {k}x{k} and coefficient vector of length {k}"
        )));
    }
    if !(sigma2 >= 0.0) {
        return Err(validation("noise variance must be nonnegative"));
    }
    let ne = NormalEquations::new(z, &DVector::zeros(z.nrows()))?;
    let system = ne.system_matrix(penalty)?;
    let factor = SpdFactor::new(&system)?;
    let h = factor.solve_matrix(&ne.ztz);
    let d = &h * b_true - b_true;
    let bias_sq = d.dot(&(gram * &d));
    // tr(G A⁻¹ ZᵀZ A⁻¹) = tr(G H A⁻¹)
    let ainv = factor.inverse();
    let variance = sigma2 * (gram * h * ainv).trace();
    Ok(ImseDecomposition {
        bias_sq,
        variance,
        total: bias_sq + variance,
    })
}

/// Solve against `system` with penalty `P` and package the result.
pub fn fit_with_penalty(
    system: &DesignSystem,
    penalty: &DMatrix<f64>,
    kind: EstimatorKind,
    lambdas: Lambdas,
) -> Result<FitResult> {
    let ne = NormalEquations::new(system.z(), system.y())?;
    fit_with_normal_equations(system, &ne, penalty, kind, lambdas)
}

pub(crate) fn fit_with_normal_equations(
    system: &DesignSystem,
    ne: &NormalEquations,
    penalty: &DMatrix<f64>,
    kind: EstimatorKind,
    lambdas: Lambdas,
) -> Result<FitResult> {
    let solve = PenalizedSolve::new(ne, penalty)?;
    let layout = system.layout();
    let b_blocks = (0..layout.p())
        .map(|j| match layout.columns_of(j) {
            Some(cols) => solve.b_hat.rows(cols.start, cols.len()).into_owned(),
            None => DVector::zeros(0),
        })
        .collect();
    let fitted = system.z() * &solve.b_hat;
    let residual_ss = (system.y() - fitted).norm_squared();
    Ok(FitResult {
        kind,
        beta_hat_grid: system.coefficient_functions(&solve.b_hat)?,
        b_blocks,
        lambdas,
        edf: trace_from_factor(&solve.factor, system.z()),
        residual_ss,
        intercept: system.intercept(&solve.b_hat),
        b_hat: solve.b_hat,
    })
}

fn check_lambda(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(validation(format!(
            "{name} must be finite and nonnegative (got {v})"
        )));
    }
    Ok(())
}

/// Uniform penalty `λ₁ R` across all predictors in the system.
pub fn fit_fre(system: &DesignSystem, lambda1: f64) -> Result<FitResult> {
    check_lambda("lambda1", lambda1)?;
    let p = system.uniform_penalty(lambda1);
    fit_with_penalty(
        system,
        &p,
        EstimatorKind::Fre,
        Lambdas {
            lambda1: Some(lambda1),
            ..Default::default()
        },
    )
}

/// Block penalties: group 0 of the layout is the relevant block (scaled by
/// `λ₁`), group 1, when present, the nuisance block (scaled by `λ₂`).
pub fn fit_frfm(system: &DesignSystem, lambda1: f64, lambda2: f64) -> Result<FitResult> {
    check_lambda("lambda1", lambda1)?;
    check_lambda("lambda2", lambda2)?;
    if lambda2 < lambda1 {
        return Err(validation(format!(
            "FRFM requires lambda2 >= lambda1 (got {lambda2} < {lambda1})"
        )));
    }
    let p = frfm_penalty(system, lambda1, lambda2)?;
    fit_with_penalty(
        system,
        &p,
        EstimatorKind::Frfm,
        Lambdas {
            lambda1: Some(lambda1),
            lambda2: Some(lambda2),
            lambda3: None,
        },
    )
}

pub(crate) fn frfm_penalty(
    system: &DesignSystem,
    lambda1: f64,
    lambda2: f64,
) -> Result<DMatrix<f64>> {
    match system.layout().groups().len() {
        1 => Ok(system.penalty_per_group(&[lambda1])),
        2 => Ok(system.penalty_per_group(&[lambda1, lambda2])),
        g => Err(validation(format!(
            "FRFM expects a relevant and an optional nuisance block, layout has {g} groups"
        ))),
    }
}

/// Penalty `λ₃ R₁` on a system that holds only the relevant predictors.
pub fn fit_frsm(system: &DesignSystem, lambda3: f64) -> Result<FitResult> {
    check_lambda("lambda3", lambda3)?;
    let p = system.uniform_penalty(lambda3);
    fit_with_penalty(
        system,
        &p,
        EstimatorKind::Frsm,
        Lambdas {
            lambda3: Some(lambda3),
            ..Default::default()
        },
    )
}

#[cfg(test)]
mod tests;
