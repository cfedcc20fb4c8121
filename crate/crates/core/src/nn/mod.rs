//! Forward and backward passes of the network primitives.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod pool;

pub use activation::{relu_backward, relu_forward, sigmoid_backward, sigmoid_forward};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_reference, ConvConfig, ConvGradient};
pub use dense::{dense_backward, dense_forward, DenseGradient};
pub use loss::{
    batch_dice_loss, dice_coefficient, dice_loss, softmax_cross_entropy, LossOutput, DICE_SMOOTHING,
};
pub use pool::{
    concat_channels, maxpool2d_backward, maxpool2d_forward, split_channels, upsample2x_backward,
    upsample2x_forward, MaxPoolOutput,
};
