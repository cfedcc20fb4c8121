//! 2-D cross-correlation with zero padding, forward and adjoint.
//!
//! The production path lowers each image to a column matrix and runs a
//! GEMM. [`conv2d_reference`] is the direct nested-loop definition kept
//! as the oracle the fast path is tested against.

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

/// Geometry of one convolution. Stride and padding are per axis so the
/// two stages of a factorized layer can split them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvConfig {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvConfig {
    /// A k×k kernel with symmetric stride and padding.
    pub fn square(
        k: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        Self {
            kernel_h: k,
            kernel_w: k,
            stride_h: stride,
            stride_w: stride,
            pad_h: padding,
            pad_w: padding,
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.kernel_h,
            self.kernel_w,
            self.stride_h,
            self.stride_w,
            self.in_channels,
            self.out_channels,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "conv config has a zero extent: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    /// `floor((in + 2p − k)/s) + 1` on each axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |n: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            let padded = n + 2 * p;
            if padded < k {
                return Err(Error::Config(format!(
                    "kernel {k} exceeds padded extent {padded} (input {n}, padding {p})"
                )));
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            axis(h, self.kernel_h, self.stride_h, self.pad_h)?,
            axis(w, self.kernel_w, self.stride_w, self.pad_w)?,
        ))
    }

    pub fn macs_per_image(&self, h: usize, w: usize) -> Result<usize> {
        let (oh, ow) = self.output_hw(h, w)?;
        Ok(self.kernel_h * self.kernel_w * self.in_channels * self.out_channels * oh * ow)
    }
}

/// Gradients of a convolution with respect to its operands.
#[derive(Clone, Debug)]
pub struct ConvGradient {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn check_operands(
    op: &'static str,
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    cfg: &ConvConfig,
) -> Result<(usize, usize, usize, usize, usize)> {
    cfg.validate()?;
    let (b, c, h, w) = input
        .tensor_shape()
        .nchw()
        .map_err(|_| mismatch(op, input.shape(), &[0, cfg.in_channels, 0, 0]))?;
    if c != cfg.in_channels {
        return Err(mismatch(op, input.shape(), &cfg.weight_shape()));
    }
    if weight.shape() != cfg.weight_shape() {
        return Err(mismatch(op, weight.shape(), &cfg.weight_shape()));
    }
    if let Some(bias) = bias {
        if bias.shape() != [cfg.out_channels] {
            return Err(mismatch(op, bias.shape(), &[cfg.out_channels]));
        }
    }
    let (oh, ow) = cfg.output_hw(h, w)?;
    Ok((b, h, w, oh, ow))
}

/// Lowers one image (c×h×w slice) to a `(c·kh·kw) × (oh·ow)` matrix.
fn im2col(x: &[f64], h: usize, w: usize, oh: usize, ow: usize, cfg: &ConvConfig, cols: &mut [f64]) {
    let p = oh * ow;
    let mut row = 0;
    for c in 0..cfg.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..cfg.kernel_h {
            for kj in 0..cfg.kernel_w {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * cfg.stride_h + ki) as isize - cfg.pad_h as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * cfg.stride_w + kj) as isize - cfg.pad_w as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an image.
fn col2im(
    cols: &[f64],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    cfg: &ConvConfig,
    dx: &mut [f64],
) {
    let p = oh * ow;
    let mut row = 0;
    for c in 0..cfg.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..cfg.kernel_h {
            for kj in 0..cfg.kernel_w {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * cfg.stride_h + ki) as isize - cfg.pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * cfg.stride_w + kj) as isize - cfg.pad_w as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Zero-padded cross-correlation: `b×c_in×h×w` → `b×c_out×h'×w'`.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    cfg: &ConvConfig,
) -> Result<Tensor> {
    let (b, h, w, oh, ow) = check_operands("conv2d_forward", input, weight, bias, cfg)?;
    let kdim = cfg.in_channels * cfg.kernel_h * cfg.kernel_w;
    let p = oh * ow;
    let in_stride = cfg.in_channels * h * w;
    let out_stride = cfg.out_channels * p;
    let mut out = vec![0.0; b * out_stride];
    let mut cols = vec![0.0; kdim * p];
    for n in 0..b {
        im2col(
            &input.data()[n * in_stride..(n + 1) * in_stride],
            h,
            w,
            oh,
            ow,
            cfg,
            &mut cols,
        );
        let dst = &mut out[n * out_stride..(n + 1) * out_stride];
        if let Some(bias) = bias {
            for (o, chunk) in dst.chunks_exact_mut(p).enumerate() {
                chunk.fill(bias.data()[o]);
            }
        }
        gemm(weight.data(), &cols, dst, cfg.out_channels, kdim, p);
    }
    Tensor::new([b, cfg.out_channels, oh, ow], out)
}

/// Adjoint of [`conv2d_forward`] given the forward operands.
pub fn conv2d_backward(
    upstream: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    cfg: &ConvConfig,
) -> Result<ConvGradient> {
    let (b, h, w, oh, ow) = check_operands("conv2d_backward", input, weight, None, cfg)?;
    let expected = [b, cfg.out_channels, oh, ow];
    if upstream.shape() != expected {
        return Err(mismatch("conv2d_backward", upstream.shape(), &expected));
    }
    let kdim = cfg.in_channels * cfg.kernel_h * cfg.kernel_w;
    let p = oh * ow;
    let in_stride = cfg.in_channels * h * w;
    let out_stride = cfg.out_channels * p;
    let mut dx = vec![0.0; input.numel()];
    let mut dw = vec![0.0; weight.numel()];
    let mut db = vec![0.0; cfg.out_channels];
    let mut cols = vec![0.0; kdim * p];
    let mut dcols = vec![0.0; kdim * p];
    for n in 0..b {
        let dy = &upstream.data()[n * out_stride..(n + 1) * out_stride];
        im2col(
            &input.data()[n * in_stride..(n + 1) * in_stride],
            h,
            w,
            oh,
            ow,
            cfg,
            &mut cols,
        );
        gemm_nt(dy, &cols, &mut dw, cfg.out_channels, p, kdim);
        dcols.fill(0.0);
        gemm_tn(weight.data(), dy, &mut dcols, kdim, cfg.out_channels, p);
        col2im(
            &dcols,
            h,
            w,
            oh,
            ow,
            cfg,
            &mut dx[n * in_stride..(n + 1) * in_stride],
        );
        if has_bias {
            for (o, chunk) in dy.chunks_exact(p).enumerate() {
                db[o] += chunk.iter().sum::<f64>();
            }
        }
    }
    Ok(ConvGradient {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias: if has_bias {
            Some(Tensor::new([cfg.out_channels], db)?)
        } else {
            None
        },
    })
}

/// Direct six-loop cross-correlation. Slow; used as a test oracle.
pub fn conv2d_reference(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    cfg: &ConvConfig,
) -> Result<Tensor> {
    let (b, h, w, oh, ow) = check_operands("conv2d_reference", input, weight, bias, cfg)?;
    let mut out = Tensor::zeros([b, cfg.out_channels, oh, ow])?;
    let mut idx = 0;
    for n in 0..b {
        for o in 0..cfg.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb.data()[o]);
                    for c in 0..cfg.in_channels {
                        for ki in 0..cfg.kernel_h {
                            for kj in 0..cfg.kernel_w {
                                let iy = (oy * cfg.stride_h + ki) as isize - cfg.pad_h as isize;
                                let ix = (ox * cfg.stride_w + kj) as isize - cfg.pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += weight.get(&[o, c, ki, kj])
                                    * input.get(&[n, c, iy as usize, ix as usize]);
                            }
                        }
                    }
                    out.data_mut()[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    Ok(out)
}
