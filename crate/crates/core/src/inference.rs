//! Plug-in variance and normal confidence intervals for linear functionals
//! `Ψ(x) = Σ_j ∫ β_j(s) x_j(s) ds` of the coefficient functions.
//!
//! With `G_n = ZᵀZ/n`, `M_n = G_n + P/n` and `V_n = M_n⁻¹ G_n M_n⁻¹`, the
//! variance estimate is `V̂ = σ̂² w_xᵀ V_n w_x` and the interval is
//! `Ψ̂ ± z · sqrt(V̂ / n)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::DesignSystem;
use crate::error::{validation, Error, Result};
use crate::estimators::FitResult;
use crate::linalg::SpdFactor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub psi_hat: f64,
    pub variance_hat: f64,
    pub sigma2_hat: f64,
    pub edf: f64,
    pub level: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Which blocks enter `G_n` for a two-block fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Every block of the fitted model.
    #[default]
    Full,
    /// Only the first (relevant) block; the nuisance block is dropped
    /// before forming `G_n`.
    RelevantOnly,
}

/// `‖y − Z b̂‖² / (n − tr S)`.
pub fn sigma2_hat(rss: f64, n: usize, edf: f64) -> Result<f64> {
    let dof = n as f64 - edf;
    if !(dof > 0.0) {
        return Err(Error::DegenerateSmoother { trace: edf, n });
    }
    Ok(rss / dof)
}

pub fn sigma2_from_fit(fit: &FitResult, n: usize) -> Result<f64> {
    sigma2_hat(fit.residual_ss, n, fit.edf)
}

/// `σ̂² w_xᵀ M_n⁻¹ G_n M_n⁻¹ w_x`.
pub fn variance_of_functional(
    z: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    sigma2: f64,
    w_x: &DVector<f64>,
) -> Result<f64> {
    let k = z.ncols();
    if penalty.shape() != (k, k) || w_x.len() != k {
        return Err(Error::Dimension(format!(
            "expected a {k}x{k} penalty and weights of length {k}"
        )));
    }
    if !(sigma2 >= 0.0) {
        return Err(validation("sigma2 must be nonnegative"));
    }
    let n = z.nrows() as f64;
    let g = z.transpose() * z / n;
    let m = &g + penalty / n;
    let factor =
        SpdFactor::new(&m).map_err(|e| Error::Conditioning(format!("M_n is singular: {e}")))?;
    let u = factor.solve(w_x);
    Ok((sigma2 * u.dot(&(g * &u))).max(0.0))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(validation(format!(
            "probability must lie in (0, 1), got {p}"
        )));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

/// Two-sided interval `ψ̂ ± z_{(1+level)/2} · sqrt(variance / n)`.
pub fn confidence_interval(
    psi_hat: f64,
    variance_hat: f64,
    n: usize,
    level: f64,
) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(validation(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if !(variance_hat >= 0.0) || n == 0 {
        return Err(validation("variance must be nonnegative and n positive"));
    }
    let z = normal_quantile(0.5 + level / 2.0)?;
    let half = z * (variance_hat / n as f64).sqrt();
    Ok((psi_hat - half, psi_hat + half))
}

/// Estimate, variance and interval for `Ψ(x)` from a fitted model.
///
/// `x` is `p x M` on the observation grid of `system`; `penalty` must be the
/// penalty the fit was computed with.
pub fn infer_functional(
    system: &DesignSystem,
    fit: &FitResult,
    penalty: &DMatrix<f64>,
    x: &DMatrix<f64>,
    level: f64,
    mode: InferenceMode,
) -> Result<InferenceResult> {
    let n = system.n();
    let sigma2 = sigma2_from_fit(fit, n)?;
    let w = system.functional_weights(x)?;
    let psi_hat = w.dot(&fit.b_hat);
    let variance_hat = match mode {
        InferenceMode::Full => variance_of_functional(system.z(), penalty, sigma2, &w)?,
        InferenceMode::RelevantOnly => {
            let cols = system.layout().group_columns(0);
            let z1 = system.z().columns(cols.start, cols.len()).into_owned();
            let p1 = penalty
                .view((cols.start, cols.start), (cols.len(), cols.len()))
                .into_owned();
            let w1 = w.rows(cols.start, cols.len()).into_owned();
            variance_of_functional(&z1, &p1, sigma2, &w1)?
        }
    };
    let (ci_lo, ci_hi) = confidence_interval(psi_hat, variance_hat, n, level)?;
    Ok(InferenceResult {
        psi_hat,
        variance_hat,
        sigma2_hat: sigma2,
        edf: fit.edf,
        level,
        ci_lo,
        ci_hi,
    })
}
