use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes `upstream` where the forward input was positive.
pub fn relu_backward(upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
    same_shape("relu_backward", upstream, input)?;
    let data = upstream
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    x.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// Uses the forward *output* `y`: `dy/dx = y (1 − y)`.
pub fn sigmoid_backward(upstream: &Tensor, output: &Tensor) -> Result<Tensor> {
    same_shape("sigmoid_backward", upstream, output)?;
    let data = upstream
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| g * y * (1.0 - y))
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}
