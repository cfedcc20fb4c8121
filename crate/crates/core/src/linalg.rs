//! Thin SVD of small dense matrices and singular-value gradients.
//!
//! The decomposition is one-sided (Hestenes) Jacobi applied to the
//! columns of the taller orientation of the input. The weight matrices
//! this crate decomposes are at most a few hundred rows by ~10 columns,
//! so the Gram side is tiny and a handful of sweeps suffices.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hard cap on Jacobi sweeps.
pub const MAX_SWEEPS: usize = 100;

/// Relative gap below which two singular values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-8;

/// Singular values below `ZERO_CLAMP_RATIO * sigma_max` are raised to
/// that floor before any logarithm is taken.
pub const ZERO_CLAMP_RATIO: f64 = 1e-12;

static TIE_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of tie-degenerate gradient requests seen by this process.
pub fn tie_events() -> u64 {
    TIE_EVENTS.load(Ordering::Relaxed)
}

pub(crate) fn record_tie() {
    TIE_EVENTS.fetch_add(1, Ordering::Relaxed);
}

/// `A = U · diag(sigma) · Vᵀ` with `t = min(m, n)` retained triplets.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    /// m×t, orthonormal columns.
    pub u: Tensor,
    /// Descending, non-negative.
    pub sigma: Vec<f64>,
    /// n×t, orthonormal columns.
    pub v: Tensor,
}

impl SvdResult {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn reconstruct(&self) -> Tensor {
        self.weighted_outer(&self.sigma)
    }

    /// `Σᵢ wᵢ · uᵢ vᵢᵀ`, the m×n matrix with the singular vectors of this
    /// decomposition and arbitrary weights on the diagonal.
    pub fn weighted_outer(&self, weights: &[f64]) -> Tensor {
        assert_eq!(weights.len(), self.len());
        let (m, t) = (self.u.rows(), self.len());
        let n = self.v.rows();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for (k, &w) in weights.iter().enumerate() {
                let uik = self.u.data()[i * t + k] * w;
                if uik == 0.0 {
                    continue;
                }
                for (j, o) in row.iter_mut().enumerate() {
                    *o += uik * self.v.data()[j * t + k];
                }
            }
        }
        Tensor::new([m, n], out).expect("consistent dims")
    }

    /// `uᵢ vᵢᵀ`, the gradient of `sigma[i]` with respect to the input.
    pub fn value_gradient(&self, i: usize) -> Tensor {
        let mut w = vec![0.0; self.len()];
        w[i] = 1.0;
        self.weighted_outer(&w)
    }

    /// Whether `sigma[i]` sits within the tie tolerance of a neighbour.
    pub fn is_tied(&self, i: usize) -> bool {
        let tol = TIE_TOLERANCE * self.sigma.first().copied().unwrap_or(0.0);
        let s = self.sigma[i];
        let below = i + 1 < self.len() && (s - self.sigma[i + 1]).abs() < tol;
        let above = i > 0 && (self.sigma[i - 1] - s).abs() < tol;
        below || above
    }
}

/// Singular values with tiny entries raised to the clamp floor.
pub fn clamp_spectrum(sigma: &[f64]) -> Vec<f64> {
    let floor = ZERO_CLAMP_RATIO * sigma.first().copied().unwrap_or(0.0);
    sigma.iter().map(|&s| s.max(floor)).collect()
}

pub fn svd(a: &Tensor) -> Result<SvdResult> {
    if a.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "svd",
            left: a.shape().to_vec(),
            right: vec![],
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("svd"));
    }
    let (m, n) = (a.rows(), a.cols());
    if m >= n {
        Ok(jacobi_tall(a))
    } else {
        let t = jacobi_tall(&a.transpose()?);
        // Aᵀ = U' Σ V'ᵀ  ⇒  A = V' Σ U'ᵀ; re-apply the sign rule to the new U.
        let mut out = SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
        fix_signs(&mut out);
        Ok(out)
    }
}

/// One-sided Jacobi for m ≥ n.
fn jacobi_tall(a: &Tensor) -> SvdResult {
    let (m, n) = (a.rows(), a.cols());
    // Column-major working copies.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.at(i, j)).collect())
        .collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let tol = (m as f64 * f64::EPSILON).max(1e-15);
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        if s > f64::MIN_POSITIVE * 1e3 {
            ucols.push(cols[j].iter().map(|x| x / s).collect());
        } else {
            ucols.push(vec![0.0; m]);
            missing.push(k);
        }
    }
    complete_basis(&mut ucols, &missing, m);

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u = vec![0.0; m * n];
    let mut v = vec![0.0; n * n];
    for (k, &j) in order.iter().enumerate() {
        for i in 0..m {
            u[i * n + k] = ucols[k][i];
        }
        for i in 0..n {
            v[i * n + k] = vcols[j][i];
        }
    }
    let mut out = SvdResult {
        u: Tensor::new([m, n], u).expect("dims"),
        sigma,
        v: Tensor::new([n, n], v).expect("dims"),
    };
    fix_signs(&mut out);
    out
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all
/// other columns, drawn from the canonical basis by Gram-Schmidt.
fn complete_basis(ucols: &mut [Vec<f64>], missing: &[usize], m: usize) {
    for &k in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for _ in 0..2 {
                for (j, other) in ucols.iter().enumerate() {
                    if j == k {
                        continue;
                    }
                    let d: f64 = cand.iter().zip(other).map(|(a, b)| a * b).sum();
                    for (c, o) in cand.iter_mut().zip(other) {
                        *c -= d * o;
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b + 1e-12) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.expect("m >= 1");
        ucols[k] = cand.into_iter().map(|x| x / norm).collect();
    }
}

/// Largest-magnitude component of every left singular vector is made
/// non-negative; the matching right vector flips with it.
fn fix_signs(svd: &mut SvdResult) {
    let t = svd.len();
    let (m, n) = (svd.u.rows(), svd.v.rows());
    for k in 0..t {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for i in 0..m {
            let val = svd.u.data()[i * t + k];
            if val.abs() > best.abs() + 1e-14 {
                best = val;
                sign = val.signum();
            }
        }
        if sign < 0.0 {
            for i in 0..m {
                svd.u.data_mut()[i * t + k] *= -1.0;
            }
            for i in 0..n {
                svd.v.data_mut()[i * t + k] *= -1.0;
            }
        }
    }
}

/// Gradient of the `i`-th singular value together with a tie flag.
#[derive(Clone, Debug)]
pub struct SingularValueGradient {
    pub grad: Tensor,
    /// The value was within the tie tolerance of a neighbour; `grad` is
    /// then one valid subgradient for the computed basis.
    pub tied: bool,
}

/// `∂σᵢ/∂A = uᵢ vᵢᵀ`.
pub fn singular_value_gradient(a: &Tensor, i: usize) -> Result<SingularValueGradient> {
    let dec = svd(a)?;
    if i >= dec.len() {
        return Err(Error::ShapeMismatch {
            op: "singular_value_gradient",
            left: a.shape().to_vec(),
            right: vec![i],
        });
    }
    let tied = dec.is_tied(i);
    if tied {
        record_tie();
    }
    Ok(SingularValueGradient {
        grad: dec.value_gradient(i),
        tied,
    })
}
