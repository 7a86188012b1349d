//! Adaptive-ridge reweighting that splits predictors into a relevant and a
//! nuisance block.
//!
//! Starting from unit weights, each round solves the ridge problem with
//! penalty `λ Σ_j w_j b_jᵀ R0 b_j` and resets `w_j = 1 / (‖b̂_j‖² + ε)`.
//! Predictors whose relevance score `1 / w_j` exceeds a fixed fraction of
//! the largest score are classified as relevant.

use serde::{Deserialize, Serialize};

use crate::design::DesignSystem;
use crate::error::{validation, Result};
use crate::estimators::{NormalEquations, PenalizedSolve};

/// Disjoint relevant / nuisance index sets (0-based predictor indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorSplit {
    pub relevant: Vec<usize>,
    pub nuisance: Vec<usize>,
}

impl PredictorSplit {
    /// First `p1` predictors relevant, the rest nuisance.
    pub fn leading(p: usize, p1: usize) -> Self {
        Self {
            relevant: (0..p1.min(p)).collect(),
            nuisance: (p1.min(p)..p).collect(),
        }
    }

    pub fn from_relevant(p: usize, relevant: &[usize]) -> Result<Self> {
        let mut rel = relevant.to_vec();
        rel.sort_unstable();
        rel.dedup();
        if rel.iter().any(|&j| j >= p) {
            return Err(validation(format!(
                "relevant index out of range for p = {p}"
            )));
        }
        let nuisance = (0..p).filter(|j| rel.binary_search(j).is_err()).collect();
        Ok(Self {
            relevant: rel,
            nuisance,
        })
    }

    pub fn p(&self) -> usize {
        self.relevant.len() + self.nuisance.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveRidgeOptions {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Relevance cutoff as a fraction of the largest score.
    pub threshold: f64,
}

impl Default for AdaptiveRidgeOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            tol: 1e-4,
            max_iter: 100,
            threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    /// Final weights `w_j`, one per predictor of the system.
    pub weights: Vec<f64>,
    pub split: PredictorSplit,
    pub iterations: usize,
    pub converged: bool,
    /// Weights after every round, starting with the unit weights.
    pub weight_history: Vec<Vec<f64>>,
}

impl PartitionResult {
    /// `1 / w_j = ‖b̂_j‖² + ε`.
    pub fn relevance_scores(&self) -> Vec<f64> {
        self.weights.iter().map(|w| 1.0 / w).collect()
    }
}

/// Indices whose score exceeds `threshold` times the largest score.
pub fn classify(scores: &[f64], threshold: f64) -> Vec<usize> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cut = threshold * max;
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > cut || **s == max)
        .map(|(j, _)| j)
        .collect()
}

/// Run the reweighting on a system whose layout covers every predictor.
pub fn adaptive_ridge_partition(
    system: &DesignSystem,
    lambda: f64,
    opts: &AdaptiveRidgeOptions,
) -> Result<PartitionResult> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(validation(format!(
            "adaptive ridge needs lambda > 0 (got {lambda})"
        )));
    }
    if !(opts.epsilon > 0.0) || !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(validation(
            "adaptive ridge needs epsilon > 0, tol > 0 and max_iter >= 1",
        ));
    }
    if !(opts.threshold >= 0.0 && opts.threshold < 1.0) {
        return Err(validation("relevance threshold must lie in [0, 1)"));
    }
    let layout = system.layout();
    if !layout.is_partition() {
        return Err(validation(
            "adaptive ridge requires a layout covering every predictor",
        ));
    }
    let p = layout.p();
    let ne = NormalEquations::new(system.z(), system.y())?;
    let mut weights = vec![1.0; p];
    let mut history = vec![weights.clone()];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let scales: Vec<f64> = weights.iter().map(|w| lambda * w).collect();
        let solve = PenalizedSolve::new(&ne, &system.penalty_per_predictor(&scales))?;
        let next: Vec<f64> = (0..p)
            .map(|j| {
                let cols = layout.columns_of(j).expect("layout covers every predictor");
                let norm2 = solve.b_hat.rows(cols.start, cols.len()).norm_squared();
                1.0 / (norm2 + opts.epsilon)
            })
            .collect();
        let change = weights
            .iter()
            .zip(&next)
            .map(|(old, new)| (new - old).abs() / old.max(opts.epsilon))
            .fold(0.0, f64::max);
        weights = next;
        history.push(weights.clone());
        iterations += 1;
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    let scores: Vec<f64> = weights.iter().map(|w| 1.0 / w).collect();
    let relevant = classify(&scores, opts.threshold);
    let split = PredictorSplit::from_relevant(p, &relevant)?;
    Ok(PartitionResult {
        weights,
        split,
        iterations,
        converged,
        weight_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionMetrics {
    pub tpr: f64,
    pub fpr: f64,
}

/// True and false positive rates of an estimated split against the true
/// relevant set. With no nuisance predictors the false positive rate is 0.
pub fn partition_metrics(
    split: &PredictorSplit,
    true_relevant: &[usize],
) -> Result<PartitionMetrics> {
    if true_relevant.is_empty() {
        return Err(validation("true relevant set must be nonempty"));
    }
    let p = split.p();
    if true_relevant.iter().any(|&j| j >= p) {
        return Err(validation(format!(
            "true relevant index out of range for p = {p}"
        )));
    }
    let truth: std::collections::BTreeSet<usize> = true_relevant.iter().copied().collect();
    let hits = split.relevant.iter().filter(|j| truth.contains(j)).count();
    let false_hits = split.relevant.len() - hits;
    let negatives = p - truth.len();
    Ok(PartitionMetrics {
        tpr: hits as f64 / truth.len() as f64,
        fpr: if negatives == 0 {
            0.0
        } else {
            false_hits as f64 / negatives as f64
        },
    })
}
