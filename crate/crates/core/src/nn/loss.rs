//! Task losses: softmax cross-entropy for classification, Dice for
//! segmentation. Both return the scalar loss and its input gradient.

use super::activation::same_shape;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Additive smoothing in the Dice ratio.
pub const DICE_SMOOTHING: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Tensor,
}

/// Mean softmax cross-entropy over the batch; `logits` is `b×classes`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    if logits.rank() != 2 || logits.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let (b, classes) = (logits.rows(), logits.cols());
    let mut grad = vec![0.0; b * classes];
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (j, g) in grad[i * classes..(i + 1) * classes].iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            *g = (p - if j == label { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok(LossOutput {
        loss: loss / b as f64,
        grad: Tensor::new([b, classes], grad)?,
    })
}

/// `1 − (2·Σ p·t + ε) / (Σ p + Σ t + ε)` over the whole tensor.
pub fn dice_loss(pred: &Tensor, target: &Tensor, smoothing: f64) -> Result<LossOutput> {
    same_shape("dice_loss", pred, target)?;
    let (loss, grad) = dice_slice(pred.data(), target.data(), smoothing);
    Ok(LossOutput {
        loss,
        grad: Tensor::new(pred.shape().to_vec(), grad)?,
    })
}

fn dice_slice(p: &[f64], t: &[f64], eps: f64) -> (f64, Vec<f64>) {
    let inter: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
    let denom = p.iter().sum::<f64>() + t.iter().sum::<f64>() + eps;
    let num = 2.0 * inter + eps;
    let grad = t
        .iter()
        .map(|&tk| -(2.0 * tk * denom - num) / (denom * denom))
        .collect();
    (1.0 - num / denom, grad)
}

/// Dice loss computed per image (leading axis) and averaged.
pub fn batch_dice_loss(pred: &Tensor, target: &Tensor, smoothing: f64) -> Result<LossOutput> {
    same_shape("batch_dice_loss", pred, target)?;
    let b = pred.shape()[0];
    let per = pred.numel() / b;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.numel());
    for i in 0..b {
        let range = i * per..(i + 1) * per;
        let (l, g) = dice_slice(
            &pred.data()[range.clone()],
            &target.data()[range],
            smoothing,
        );
        loss += l;
        grad.extend(g.into_iter().map(|v| v / b as f64));
    }
    Ok(LossOutput {
        loss: loss / b as f64,
        grad: Tensor::new(pred.shape().to_vec(), grad)?,
    })
}

/// Smoothed Dice coefficient of two masks (any real values, typically 0/1).
pub fn dice_coefficient(a: &[f64], b: &[f64], smoothing: f64) -> f64 {
    let inter: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (2.0 * inter + smoothing) / (a.iter().sum::<f64>() + b.iter().sum::<f64>() + smoothing)
}
