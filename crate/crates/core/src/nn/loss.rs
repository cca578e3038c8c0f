use crate::data::SentimentLabel;
use crate::error::{data, Result};

/// Smallest probability fed to `ln` before clamping.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Gradient with respect to the pre-softmax logits.
    pub grad_logits: Vec<f64>,
    /// True when the target probability was below [`PROB_FLOOR`].
    pub clamped: bool,
}

/// Weighted cross-entropy of a probability simplex against a label.
pub fn cross_entropy(probs: &[f64], label: SentimentLabel, weight: f64) -> Result<CrossEntropy> {
    if probs.len() != 3 {
        return Err(data(format!("expected 3 class probabilities, got {}", probs.len())));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(data(format!("probabilities sum to {sum}, not 1")));
    }
    if !(weight >= 0.0) {
        return Err(data(format!("cross-entropy weight must be >= 0, got {weight}")));
    }
    let class = label.class_index();
    let p = probs[class];
    let clamped = p < PROB_FLOOR;
    let loss = if weight == 0.0 { 0.0 } else { -weight * p.max(PROB_FLOOR).ln() };
    let grad_logits = probs
        .iter()
        .enumerate()
        .map(|(k, pk)| weight * (pk - if k == class { 1.0 } else { 0.0 }))
        .collect();
    Ok(CrossEntropy { loss, grad_logits, clamped })
}
