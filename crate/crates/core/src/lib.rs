//! Convolutions factorized into a horizontal and a vertical 1-D stage,
//! with a regularizer that pulls the singular values of both filter
//! banks toward a flat spectrum.
//!
//! All tensors are dense row-major `f64`. Image batches are `b×c×h×w`.

pub mod complexity;
pub mod error;
pub mod harness;
pub mod imstats;
pub mod linalg;
pub mod nn;
pub mod regularizer;
pub mod sfconv;
pub mod tensor;

pub use error::{Error, Result};
pub use linalg::{svd, SvdResult};
pub use sfconv::{init_factorized, sfconv_forward, FactorizedFilter};
pub use tensor::{Tensor, TensorShape};
