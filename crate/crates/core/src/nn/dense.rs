use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

#[derive(Clone, Debug)]
pub struct DenseGradient {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn features(x: &Tensor, weight: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    let b = x.shape()[0];
    let f = x.numel() / b;
    if weight.rank() != 2 || weight.cols() != f {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    Ok((b, f, weight.rows()))
}

/// Fully connected layer. The input is flattened past the batch axis;
/// `weight` is `out×features`.
pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, f, o) = features(x, weight, "dense_forward")?;
    if bias.shape() != [o] {
        return Err(Error::ShapeMismatch {
            op: "dense_forward",
            left: bias.shape().to_vec(),
            right: vec![o],
        });
    }
    let mut out: Vec<f64> = (0..b).flat_map(|_| bias.data().iter().copied()).collect();
    gemm_nt(x.data(), weight.data(), &mut out, b, f, o);
    Tensor::new([b, o], out)
}

pub fn dense_backward(upstream: &Tensor, x: &Tensor, weight: &Tensor) -> Result<DenseGradient> {
    let (b, f, o) = features(x, weight, "dense_backward")?;
    if upstream.shape() != [b, o] {
        return Err(Error::ShapeMismatch {
            op: "dense_backward",
            left: upstream.shape().to_vec(),
            right: vec![b, o],
        });
    }
    let mut dx = vec![0.0; b * f];
    gemm(upstream.data(), weight.data(), &mut dx, b, o, f);
    let mut dw = vec![0.0; o * f];
    gemm_tn(upstream.data(), x.data(), &mut dw, o, b, f);
    let mut db = vec![0.0; o];
    for row in upstream.data().chunks_exact(o) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(DenseGradient {
        input: Tensor::new(x.shape().to_vec(), dx)?,
        weight: Tensor::new([o, f], dw)?,
        bias: Tensor::new([o], db)?,
    })
}
