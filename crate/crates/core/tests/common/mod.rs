//! Reference implementations used by the integration tests. None of these
//! call into the crate's own numerics; they work on plain `Vec<f64>`.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sfconv::nn::ConvConfig;
use sfconv::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(dims.to_vec(), data).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(dims.to_vec(), data).unwrap()
}

/// Row-major `m×k` times `k×n` with the textbook triple loop.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Eigenvalues of a symmetric `n×n` matrix by cyclic two-sided Jacobi
/// rotations, sorted descending.
pub fn sym_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _ in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].powi(2))
            .sum();
        let diag: f64 = (0..n).map(|i| m[i * n + i].powi(2)).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Singular values of an `m×n` matrix as square roots of the eigenvalues
/// of the smaller Gram matrix.
pub fn oracle_singular_values(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let at = transpose(a, m, n);
    let (gram, t) = if m >= n {
        (naive_matmul(&at, a, n, m, n), n)
    } else {
        (naive_matmul(a, &at, m, n, m), m)
    };
    sym_eigenvalues(&gram, t)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

/// `n` orthonormal vectors of length `m` (`n ≤ m`), returned as the
/// columns of a row-major `m×n` matrix. Modified Gram-Schmidt on
/// Gaussian vectors.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(c) {
                    *x -= d * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut out = vec![0.0; m * n];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..m {
            out[i * n + j] = c[i];
        }
    }
    out
}

/// `U diag(σ) Vᵀ` for a prescribed spectrum.
pub fn matrix_with_spectrum(rng: &mut ChaCha8Rng, m: usize, n: usize, sigma: &[f64]) -> Tensor {
    let t = sigma.len();
    assert_eq!(t, m.min(n));
    let u = random_orthonormal(rng, m, t);
    let v = random_orthonormal(rng, n, t);
    let mut us = u.clone();
    for i in 0..m {
        for j in 0..t {
            us[i * t + j] *= sigma[j];
        }
    }
    Tensor::new([m, n], naive_matmul(&us, &transpose(&v, n, t), m, t, n)).unwrap()
}

/// Direct-loop cross-correlation over an `N×C×H×W` input with zero
/// padding. Independent of the crate's im2col path.
pub fn naive_conv(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, cfg: &ConvConfig) -> Tensor {
    let s = x.shape();
    let (b, c, h, wd) = (s[0], s[1], s[2], s[3]);
    let (kh, kw) = (cfg.kernel_h, cfg.kernel_w);
    let oh = (h + 2 * cfg.pad_h - kh) / cfg.stride_h + 1;
    let ow = (wd + 2 * cfg.pad_w - kw) / cfg.stride_w + 1;
    let co = cfg.out_channels;
    let mut out = vec![0.0; b * co * oh * ow];
    for n in 0..b {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb.data()[o]);
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * cfg.stride_h + i) as isize - cfg.pad_h as isize;
                                let ix = (xx * cfg.stride_w + j) as isize - cfg.pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()
                                    [((n * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((n * co + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new([b, co, oh, ow], out).unwrap()
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &Tensor, eps: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Largest entrywise relative error between an analytic and a numeric
/// gradient. Each entry is compared relative to the larger of the two
/// magnitudes, floored at `1e-3·max|numeric|`. Central differences with ε = 1e-6
/// carry rounding noise near `1e-10·|f|`, which would otherwise swamp
/// entries that are tiny next to the largest one.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `Σ y ⊙ r`, the scalar used to probe a vector-valued op with upstream
/// gradient `r`.
pub fn probe(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn frob(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
