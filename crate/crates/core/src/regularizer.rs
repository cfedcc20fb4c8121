//! Singular-value equalization penalty.
//!
//! Each factor matrix of every factorized layer is decomposed, its
//! singular values normalized into a distribution `s`, and compared to
//! the uniform distribution of the same length:
//!
//! ```text
//! KL(s ‖ u) = Σᵢ sᵢ · ln(sᵢ · L)
//! ```
//!
//! The network penalty is the sum over layers of the `P` and `Q` terms,
//! and the training objective is `task + λ · penalty`.
//!
//! With `T = Σσ`, the derivative with respect to each singular value is
//! `(ln(sᵢ L) − KL) / T`, which is pushed back to the matrix through
//! `∂σᵢ/∂A = uᵢ vᵢᵀ`. The penalty is scale invariant, so its gradient is
//! always orthogonal to the matrix itself.

use crate::error::{Error, Result};
use crate::linalg::{record_tie, svd, SvdResult, ZERO_CLAMP_RATIO};
use crate::sfconv::{
    p_filters_from_matrix, q_filters_from_matrix, spectrum_view, FactorizedFilter,
};
use crate::tensor::Tensor;

/// Normalized singular values of one matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// Clamped singular values divided by their sum.
    pub values: Vec<f64>,
    /// Singular values as decomposed, descending.
    pub raw: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The uniform distribution `1/L` over `L` singular values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UniformReference {
    len: usize,
}

impl UniformReference {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("uniform reference needs length >= 1".into()));
        }
        Ok(Self { len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self) -> f64 {
        1.0 / self.len as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerConfig {
    pub lambda: f64,
    pub clamp_ratio: f64,
}

impl RegularizerConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be a finite non-negative number, got {lambda}"
            )));
        }
        Ok(Self {
            lambda,
            clamp_ratio: ZERO_CLAMP_RATIO,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerKl {
    pub layer: usize,
    pub kl_p: f64,
    pub kl_q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub task_loss: f64,
    pub kl_term: f64,
    pub lambda: f64,
    pub total: f64,
    pub breakdown: Vec<LayerKl>,
}

/// Gradients with respect to the two filter banks of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterGradient {
    pub p_filters: Tensor,
    pub q_filters: Tensor,
}

fn clamp(sigma: &[f64], ratio: f64) -> Vec<f64> {
    let floor = ratio * sigma.iter().copied().fold(0.0, f64::max);
    sigma.iter().map(|&s| s.max(floor)).collect()
}

/// `σ / Σσ` after raising tiny values to the clamp floor.
pub fn normalize_spectrum(sigma: &[f64]) -> Result<Spectrum> {
    normalize_with(sigma, ZERO_CLAMP_RATIO)
}

fn normalize_with(sigma: &[f64], ratio: f64) -> Result<Spectrum> {
    if sigma.is_empty() {
        return Err(Error::DeadLayer);
    }
    if let Some(&bad) = sigma.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::Domain {
            op: "normalize_spectrum",
            value: bad,
        });
    }
    let clamped = clamp(sigma, ratio);
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return Err(Error::DeadLayer);
    }
    Ok(Spectrum {
        values: clamped.iter().map(|s| s / total).collect(),
        raw: sigma.to_vec(),
    })
}

/// `Σᵢ sᵢ·ln(sᵢ·L)` with `0·ln 0 = 0`.
pub fn kl_to_uniform(s: &Spectrum) -> f64 {
    let len = s.len() as f64;
    s.values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * (v * len).ln())
        .sum::<f64>()
        .max(0.0)
}

pub fn matrix_spectrum(a: &Tensor) -> Result<Spectrum> {
    normalize_spectrum(&svd(a)?.sigma)
}

pub fn matrix_kl(a: &Tensor) -> Result<f64> {
    Ok(kl_to_uniform(&matrix_spectrum(a)?))
}

/// Penalty value and its gradient with respect to the matrix entries.
pub fn matrix_kl_gradient(a: &Tensor) -> Result<(f64, Tensor)> {
    matrix_kl_gradient_with(a, ZERO_CLAMP_RATIO)
}

fn matrix_kl_gradient_with(a: &Tensor, ratio: f64) -> Result<(f64, Tensor)> {
    let dec = svd(a)?;
    let spectrum = normalize_with(&dec.sigma, ratio)?;
    let kl = kl_to_uniform(&spectrum);
    let grad = dec.weighted_outer(&sigma_gradient(&dec, &spectrum, kl, ratio));
    Ok((kl, grad))
}

/// `∂KL/∂σᵢ` through normalization and the clamp.
fn sigma_gradient(dec: &SvdResult, spectrum: &Spectrum, kl: f64, ratio: f64) -> Vec<f64> {
    let sigma = &dec.sigma;
    let floor = ratio * sigma[0];
    let total: f64 = sigma.iter().map(|&s| s.max(floor)).sum();
    let len = spectrum.len() as f64;
    let mut grad = vec![0.0; sigma.len()];
    for (i, &s) in spectrum.values.iter().enumerate() {
        let d = ((s * len).ln() - kl) / total;
        if i > 0 && sigma[i] < floor {
            // A clamped entry is ratio·σ₀; its sensitivity lands on σ₀.
            grad[0] += ratio * d;
        } else {
            grad[i] += d;
        }
        if dec.is_tied(i) {
            record_tie();
        }
    }
    grad
}

/// `(KL_p, KL_q)` of one layer.
pub fn layer_kl(f: &FactorizedFilter) -> Result<(f64, f64)> {
    let view = spectrum_view(f);
    Ok((matrix_kl(&view.matrix_p)?, matrix_kl(&view.matrix_q)?))
}

/// Sum of `KL_p + KL_q` over layers, reduced in layer order.
pub fn network_kl<'a, I>(layers: I) -> Result<(f64, Vec<LayerKl>)>
where
    I: IntoIterator<Item = &'a FactorizedFilter>,
{
    let mut total = 0.0;
    let mut breakdown = Vec::new();
    for (layer, f) in layers.into_iter().enumerate() {
        let (kl_p, kl_q) = layer_kl(f)?;
        total += kl_p + kl_q;
        breakdown.push(LayerKl { layer, kl_p, kl_q });
    }
    Ok((total, breakdown))
}

/// Gradient of `KL_p + KL_q` with respect to the layer's filter banks.
pub fn kl_gradient(f: &FactorizedFilter) -> Result<(LayerKl, FilterGradient)> {
    let view = spectrum_view(f);
    let (kl_p, gp) = matrix_kl_gradient(&view.matrix_p)?;
    let (kl_q, gq) = matrix_kl_gradient(&view.matrix_q)?;
    Ok((
        LayerKl {
            layer: 0,
            kl_p,
            kl_q,
        },
        FilterGradient {
            p_filters: p_filters_from_matrix(&gp, f.out_channels(), f.kernel())?,
            q_filters: q_filters_from_matrix(&gq, f.in_channels(), f.kernel())?,
        },
    ))
}

/// `L = L_task + λ·L_KL`, and per-layer gradients `task + λ·∇KL`.
///
/// `task_grads[i]` holds the task gradients of `layers[i]`; only the
/// factorized filter banks receive the penalty gradient.
pub fn combine_loss(
    task_loss: f64,
    task_grads: &[FilterGradient],
    layers: &[&FactorizedFilter],
    cfg: &RegularizerConfig,
) -> Result<(LossReport, Vec<FilterGradient>)> {
    if task_grads.len() != layers.len() {
        return Err(Error::ShapeMismatch {
            op: "combine_loss",
            left: vec![task_grads.len()],
            right: vec![layers.len()],
        });
    }
    let mut kl_term = 0.0;
    let mut breakdown = Vec::with_capacity(layers.len());
    let mut grads = Vec::with_capacity(layers.len());
    for (layer, (f, task)) in layers.iter().zip(task_grads).enumerate() {
        let (mut kl, kl_grad) = kl_gradient(f)?;
        kl.layer = layer;
        kl_term += kl.kl_p + kl.kl_q;
        breakdown.push(kl);
        let mut total = task.clone();
        if cfg.lambda != 0.0 {
            total.p_filters.axpy(cfg.lambda, &kl_grad.p_filters)?;
            total.q_filters.axpy(cfg.lambda, &kl_grad.q_filters)?;
        }
        grads.push(total);
    }
    Ok((
        LossReport {
            task_loss,
            kl_term,
            lambda: cfg.lambda,
            total: task_loss + cfg.lambda * kl_term,
            breakdown,
        },
        grads,
    ))
}
