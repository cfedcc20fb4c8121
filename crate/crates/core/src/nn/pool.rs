//! Spatial reshuffling ops for the backbones: 2×2 max-pooling, nearest
//! 2× upsampling and channel concatenation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Result of a max-pool forward pass. `argmax[i]` is the flat input
/// offset that produced output element `i`.
#[derive(Clone, Debug)]
pub struct MaxPoolOutput {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// 2×2 window, stride 2; odd trailing rows/columns are dropped.
pub fn maxpool2d_forward(x: &Tensor) -> Result<MaxPoolOutput> {
    let (b, c, h, w) = x.tensor_shape().nchw()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Config(format!(
            "max-pool input {h}x{w} is smaller than the 2x2 window"
        )));
    }
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    let data = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let off = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if data[off] > data[best] {
                        best = off;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::new([b, c, oh, ow], out)?,
        argmax,
    })
}

pub fn maxpool2d_backward(
    upstream: &Tensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor> {
    if upstream.numel() != argmax.len() {
        return Err(Error::ShapeMismatch {
            op: "maxpool2d_backward",
            left: upstream.shape().to_vec(),
            right: vec![argmax.len()],
        });
    }
    let mut dx = Tensor::zeros(input_shape.to_vec())?;
    let buf = dx.data_mut();
    for (&g, &i) in upstream.data().iter().zip(argmax) {
        buf[i] += g;
    }
    Ok(dx)
}

pub fn upsample2x_forward(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.tensor_shape().nchw()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; b * c * oh * ow];
    for plane in 0..b * c {
        for y in 0..oh {
            for xx in 0..ow {
                out[plane * oh * ow + y * ow + xx] = x.data()[plane * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new([b, c, oh, ow], out)
}

pub fn upsample2x_backward(upstream: &Tensor) -> Result<Tensor> {
    let (b, c, oh, ow) = upstream.tensor_shape().nchw()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::ShapeMismatch {
            op: "upsample2x_backward",
            left: upstream.shape().to_vec(),
            right: vec![],
        });
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = vec![0.0; b * c * h * w];
    for plane in 0..b * c {
        for y in 0..oh {
            for xx in 0..ow {
                dx[plane * h * w + (y / 2) * w + xx / 2] +=
                    upstream.data()[plane * oh * ow + y * ow + xx];
            }
        }
    }
    Tensor::new([b, c, h, w], dx)
}

/// Concatenates along the channel axis; batch and spatial extents must agree.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, h, w) = a.tensor_shape().nchw()?;
    let (n2, cb, h2, w2) = b.tensor_shape().nchw()?;
    if (n, h, w) != (n2, h2, w2) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * (ca + cb) * plane);
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Tensor::new([n, ca + cb, h, w], out)
}

/// Splits a concatenated gradient back into the two operand gradients.
pub fn split_channels(upstream: &Tensor, first_channels: usize) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = upstream.tensor_shape().nchw()?;
    if first_channels == 0 || first_channels >= c {
        return Err(Error::ShapeMismatch {
            op: "split_channels",
            left: upstream.shape().to_vec(),
            right: vec![first_channels],
        });
    }
    let plane = h * w;
    let cb = c - first_channels;
    let mut a = Vec::with_capacity(n * first_channels * plane);
    let mut b = Vec::with_capacity(n * cb * plane);
    for i in 0..n {
        let img = &upstream.data()[i * c * plane..(i + 1) * c * plane];
        a.extend_from_slice(&img[..first_channels * plane]);
        b.extend_from_slice(&img[first_channels * plane..]);
    }
    Ok((
        Tensor::new([n, first_channels, h, w], a)?,
        Tensor::new([n, cb, h, w], b)?,
    ))
}
