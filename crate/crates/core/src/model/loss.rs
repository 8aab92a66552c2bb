//! Softmax, cross-entropy and focal loss with their gradients.
//!
//! Focal loss for one sample with true class `y`:
//!
//! ```text
//! FL = -alpha_y * (1 - p_y)^gamma * ln(p_y)
//! ```
//!
//! `p_y` is floored at [`PROB_FLOOR`] inside the logarithm. With `gamma = 0`
//! and `alpha = 1` it is exactly cross-entropy. Batch losses are arithmetic
//! means over samples.

use super::{ModelError, Tensor};
use serde::{Deserialize, Serialize};

pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    /// Per-class weight, indexed like the label space.
    pub alpha: Vec<f64>,
    pub gamma: f64,
}

impl FocalLossConfig {
    pub fn uniform(num_classes: usize, gamma: f64) -> Self {
        FocalLossConfig {
            alpha: vec![1.0; num_classes],
            gamma,
        }
    }

    /// `alpha_c` proportional to `1 / count_c`, normalized to mean 1.
    pub fn inverse_frequency(counts: &[usize], gamma: f64) -> Result<Self, ModelError> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(ModelError::Loss(
                "inverse-frequency alpha needs a positive count for every class".into(),
            ));
        }
        let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
        let mean = inv.iter().sum::<f64>() / inv.len() as f64;
        Ok(FocalLossConfig {
            alpha: inv.into_iter().map(|v| v / mean).collect(),
            gamma,
        })
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), ModelError> {
        if self.alpha.len() != num_classes {
            return Err(ModelError::Loss(format!(
                "alpha has {} entries for {num_classes} classes",
                self.alpha.len()
            )));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(ModelError::Loss("alpha entries must be finite and >= 0".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(ModelError::Loss("gamma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossConfig {
    CrossEntropy,
    Focal(FocalLossConfig),
}

impl LossConfig {
    pub fn validate(&self, num_classes: usize) -> Result<(), ModelError> {
        match self {
            LossConfig::CrossEntropy => Ok(()),
            LossConfig::Focal(f) => f.validate(num_classes),
        }
    }

    fn alpha_gamma(&self, label: usize) -> (f64, f64) {
        match self {
            LossConfig::CrossEntropy => (1.0, 0.0),
            LossConfig::Focal(f) => (f.alpha[label], f.gamma),
        }
    }
}

/// Max-subtracted softmax of one row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let rows: Vec<Vec<f64>> = logits.iter_rows().map(softmax_row).collect();
    Tensor::stack(&rows, &logits.shape()[1..]).expect("same shape")
}

/// `1 - p_y` computed as the sum of the other classes' probabilities, which
/// keeps precision when `p_y` is close to 1.
fn complement(probs: &[f64], label: usize) -> f64 {
    probs
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label)
        .map(|(_, p)| p)
        .sum()
}

fn sample_focal(probs: &[f64], label: usize, alpha: f64, gamma: f64) -> f64 {
    let p = probs[label].max(PROB_FLOOR);
    let q = complement(probs, label);
    -alpha * q.powf(gamma) * p.ln()
}

fn check_batch(probs: &Tensor, labels: &[usize]) -> Result<usize, ModelError> {
    if probs.shape().len() != 2 || probs.rows() != labels.len() {
        return Err(ModelError::Shape(format!(
            "probabilities {:?} vs {} labels",
            probs.shape(),
            labels.len()
        )));
    }
    let classes = probs.shape()[1];
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(ModelError::Shape(format!("label {bad} out of range for {classes} classes")));
    }
    if labels.is_empty() {
        return Err(ModelError::Shape("empty batch".into()));
    }
    Ok(classes)
}

/// Mean focal loss over the batch.
pub fn focal_loss(probs: &Tensor, labels: &[usize], config: &FocalLossConfig) -> Result<f64, ModelError> {
    let classes = check_batch(probs, labels)?;
    config.validate(classes)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| sample_focal(probs.row(i), y, config.alpha[y], config.gamma))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean cross-entropy, `-ln p_y` with the same floor as the focal loss.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64, ModelError> {
    check_batch(probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.row(i)[y].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn batch_loss(probs: &Tensor, labels: &[usize], config: &LossConfig) -> Result<f64, ModelError> {
    match config {
        LossConfig::CrossEntropy => cross_entropy(probs, labels),
        LossConfig::Focal(f) => focal_loss(probs, labels, f),
    }
}

/// Loss of one sample and its gradient with respect to the logits.
///
/// With `A = alpha * (gamma * q^(gamma-1) * p * ln p - q^gamma)`, `q = 1 - p`,
/// the gradient is `dFL/dz_j = A * (delta_jy - p_j)`. For cross-entropy
/// this reduces to `p_j - delta_jy`.
pub fn loss_and_logit_grad(logits: &[f64], label: usize, config: &LossConfig) -> (f64, Vec<f64>) {
    let probs = softmax_row(logits);
    let (alpha, gamma) = config.alpha_gamma(label);
    let p = probs[label].max(PROB_FLOOR);
    let q = complement(&probs, label);
    let loss = -alpha * q.powf(gamma) * p.ln();
    let focus_term = if gamma == 0.0 || q <= 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p * p.ln()
    };
    let a = alpha * (focus_term - q.powf(gamma));
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let delta = if j == label { 1.0 } else { 0.0 };
            a * (delta - pj)
        })
        .collect();
    (loss, grad)
}
