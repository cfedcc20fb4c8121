//! The factorized convolution layer.
//!
//! A k×k convolution with `c_in → c_out` channels is replaced by two
//! rank-`r` one-dimensional convolutions:
//!
//! 1. `q_filters` (`r×c_in×1×k`): horizontal 1×k kernels, horizontal
//!    stride and padding, no vertical padding.
//! 2. `p_filters` (`c_out×r×k×1`): vertical k×1 kernels, vertical stride
//!    and padding, plus the per-channel bias.
//!
//! The composition is exactly a k×k convolution with the kernel
//! `W[o,c,i,j] = Σᵣ P[o,r,i]·Q[r,c,j]`, i.e. `W = P·Q` once both factors
//! are laid out as matrices (see [`spectrum_view`]).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{conv2d_backward, conv2d_forward, ConvConfig};
use crate::tensor::Tensor;

/// Default latent rank.
pub const DEFAULT_RANK: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedFilter {
    pub q_filters: Tensor,
    pub p_filters: Tensor,
    pub bias: Option<Tensor>,
    cfg: ConvConfig,
    rank: usize,
}

#[derive(Clone, Debug)]
pub struct FactorizedGradient {
    pub input: Tensor,
    pub q_filters: Tensor,
    pub p_filters: Tensor,
    pub bias: Option<Tensor>,
}

/// The two factor matrices of a layer: `P` is `(c_out·k)×r` with rows
/// indexed by (output channel, vertical tap); `Q` is `r×(c_in·k)` with
/// columns indexed by (input channel, horizontal tap).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumView {
    pub matrix_p: Tensor,
    pub matrix_q: Tensor,
}

impl FactorizedFilter {
    /// `cfg` describes the emulated k×k convolution and must be square
    /// with symmetric stride and padding.
    pub fn new(
        q_filters: Tensor,
        p_filters: Tensor,
        bias: Option<Tensor>,
        cfg: ConvConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.kernel_h != cfg.kernel_w || cfg.stride_h != cfg.stride_w || cfg.pad_h != cfg.pad_w {
            return Err(Error::Config(format!(
                "factorized layer needs a square geometry, got {cfg:?}"
            )));
        }
        let k = cfg.kernel_h;
        let rank = q_filters.shape()[0];
        let q_expected = [rank, cfg.in_channels, 1, k];
        if q_filters.shape() != q_expected {
            return Err(Error::ShapeMismatch {
                op: "FactorizedFilter::new (q)",
                left: q_filters.shape().to_vec(),
                right: q_expected.to_vec(),
            });
        }
        let p_expected = [cfg.out_channels, rank, k, 1];
        if p_filters.shape() != p_expected {
            return Err(Error::ShapeMismatch {
                op: "FactorizedFilter::new (p)",
                left: p_filters.shape().to_vec(),
                right: p_expected.to_vec(),
            });
        }
        if let Some(b) = &bias {
            if b.shape() != [cfg.out_channels] {
                return Err(Error::ShapeMismatch {
                    op: "FactorizedFilter::new (bias)",
                    left: b.shape().to_vec(),
                    right: vec![cfg.out_channels],
                });
            }
        }
        Ok(Self {
            q_filters,
            p_filters,
            bias,
            cfg,
            rank,
        })
    }

    pub fn config(&self) -> &ConvConfig {
        &self.cfg
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn kernel(&self) -> usize {
        self.cfg.kernel_h
    }

    pub fn in_channels(&self) -> usize {
        self.cfg.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.cfg.out_channels
    }

    /// `k·r·(c_in + c_out)`, plus `c_out` when a bias is present.
    pub fn param_count(&self) -> usize {
        let k = self.kernel();
        k * self.rank * (self.in_channels() + self.out_channels())
            + self.bias.as_ref().map_or(0, Tensor::numel)
    }

    /// True when `r < k·min(c_in, c_out)`.
    pub fn is_compressive(&self) -> bool {
        self.rank < self.kernel() * self.in_channels().min(self.out_channels())
    }

    /// Geometry of the horizontal first stage.
    pub fn stage1_config(&self) -> ConvConfig {
        ConvConfig {
            kernel_h: 1,
            kernel_w: self.kernel(),
            stride_h: 1,
            stride_w: self.cfg.stride_w,
            pad_h: 0,
            pad_w: self.cfg.pad_w,
            in_channels: self.in_channels(),
            out_channels: self.rank,
        }
    }

    /// Geometry of the vertical second stage.
    pub fn stage2_config(&self) -> ConvConfig {
        ConvConfig {
            kernel_h: self.kernel(),
            kernel_w: 1,
            stride_h: self.cfg.stride_h,
            stride_w: 1,
            pad_h: self.cfg.pad_h,
            pad_w: 0,
            in_channels: self.rank,
            out_channels: self.out_channels(),
        }
    }

    /// The dense `c_out×c_in×k×k` kernel this layer emulates.
    pub fn emulated_weight(&self) -> Tensor {
        let (k, r, ci, co) = (
            self.kernel(),
            self.rank,
            self.in_channels(),
            self.out_channels(),
        );
        let mut w = vec![0.0; co * ci * k * k];
        let (p, q) = (self.p_filters.data(), self.q_filters.data());
        for o in 0..co {
            for c in 0..ci {
                for i in 0..k {
                    for j in 0..k {
                        w[((o * ci + c) * k + i) * k + j] = (0..r)
                            .map(|t| p[(o * r + t) * k + i] * q[(t * ci + c) * k + j])
                            .sum();
                    }
                }
            }
        }
        Tensor::new([co, ci, k, k], w).expect("dims")
    }
}

fn check_input(input: &Tensor, f: &FactorizedFilter) -> Result<()> {
    let (_, c, _, _) = input.tensor_shape().nchw()?;
    if c != f.in_channels() {
        return Err(Error::ShapeMismatch {
            op: "sfconv_forward",
            left: input.shape().to_vec(),
            right: f.q_filters.shape().to_vec(),
        });
    }
    Ok(())
}

/// Forward pass returning the output and the stage-1 activation needed
/// by [`sfconv_backward`].
pub fn sfconv_forward_cached(input: &Tensor, f: &FactorizedFilter) -> Result<(Tensor, Tensor)> {
    check_input(input, f)?;
    let mid = conv2d_forward(input, &f.q_filters, None, &f.stage1_config())?;
    let out = conv2d_forward(&mid, &f.p_filters, f.bias.as_ref(), &f.stage2_config())?;
    Ok((out, mid))
}

/// `I_out = P ⊛ (Q ⊛ I_in)`.
pub fn sfconv_forward(input: &Tensor, f: &FactorizedFilter) -> Result<Tensor> {
    sfconv_forward_cached(input, f).map(|(out, _)| out)
}

pub fn sfconv_backward(
    upstream: &Tensor,
    input: &Tensor,
    mid: &Tensor,
    f: &FactorizedFilter,
) -> Result<FactorizedGradient> {
    check_input(input, f)?;
    let g2 = conv2d_backward(
        upstream,
        mid,
        &f.p_filters,
        f.bias.is_some(),
        &f.stage2_config(),
    )?;
    let g1 = conv2d_backward(&g2.input, input, &f.q_filters, false, &f.stage1_config())?;
    Ok(FactorizedGradient {
        input: g1.input,
        q_filters: g1.weight,
        p_filters: g2.weight,
        bias: g2.bias,
    })
}

/// Seeded He-style initialization with stride 1 and "same" padding `k/2`.
///
/// `q ~ N(0, 2/(c_in·k))`, `p ~ N(0, 2/(r·k))`, bias zero.
pub fn init_factorized(
    c_in: usize,
    c_out: usize,
    k: usize,
    r: usize,
    seed: u64,
) -> Result<FactorizedFilter> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_factorized_with(&mut rng, ConvConfig::square(k, 1, k / 2, c_in, c_out), r)
}

/// Same as [`init_factorized`] with explicit geometry and generator.
pub fn init_factorized_with(
    rng: &mut ChaCha8Rng,
    cfg: ConvConfig,
    r: usize,
) -> Result<FactorizedFilter> {
    cfg.validate()?;
    if r == 0 {
        return Err(Error::Config("rank must be >= 1".into()));
    }
    let k = cfg.kernel_h;
    let q = gaussian(
        rng,
        &[r, cfg.in_channels, 1, k],
        2.0 / (cfg.in_channels * k) as f64,
    )?;
    let p = gaussian(rng, &[cfg.out_channels, r, k, 1], 2.0 / (r * k) as f64)?;
    let bias = Tensor::zeros([cfg.out_channels])?;
    FactorizedFilter::new(q, p, Some(bias), cfg)
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng, dims: &[usize], variance: f64) -> Result<Tensor> {
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let n: usize = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
}

pub fn spectrum_view(f: &FactorizedFilter) -> SpectrumView {
    let (k, r, co) = (f.kernel(), f.rank, f.out_channels());
    let mut mp = vec![0.0; co * k * r];
    for o in 0..co {
        for t in 0..r {
            for i in 0..k {
                mp[(o * k + i) * r + t] = f.p_filters.data()[(o * r + t) * k + i];
            }
        }
    }
    SpectrumView {
        matrix_p: Tensor::new([co * k, r], mp).expect("dims"),
        matrix_q: f
            .q_filters
            .reshape([r, f.in_channels() * k])
            .expect("element count preserved"),
    }
}

/// Inverse of the `P` layout in [`spectrum_view`].
pub fn p_filters_from_matrix(matrix: &Tensor, out_channels: usize, k: usize) -> Result<Tensor> {
    let r = matrix.cols();
    if matrix.rank() != 2 || matrix.rows() != out_channels * k {
        return Err(Error::ShapeMismatch {
            op: "p_filters_from_matrix",
            left: matrix.shape().to_vec(),
            right: vec![out_channels * k, r],
        });
    }
    let mut p = vec![0.0; matrix.numel()];
    for o in 0..out_channels {
        for t in 0..r {
            for i in 0..k {
                p[(o * r + t) * k + i] = matrix.data()[(o * k + i) * r + t];
            }
        }
    }
    Tensor::new([out_channels, r, k, 1], p)
}

/// Inverse of the `Q` layout in [`spectrum_view`].
pub fn q_filters_from_matrix(matrix: &Tensor, in_channels: usize, k: usize) -> Result<Tensor> {
    matrix.reshape([matrix.rows(), in_channels, 1, k])
}
