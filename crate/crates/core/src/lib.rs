//! Volumetric brain-tumor sub-region segmentation with a 3D dense
//! encoder-decoder, plus feature-based overall-survival regression.
//!
//! The network math is generic over [`Scalar`]; the aliases below fix it
//! to `f32` for production and `f64` for gradient checking.

// `!(x >= 0.0)` deliberately rejects NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autograd;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod radiomics;
pub mod scalar;
pub mod survival;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autograd::DiffTensor<f32>;
pub type Tensor64 = autograd::DiffTensor<f64>;

pub type SegModel = model::Model<f32>;
pub type SegModel64 = model::Model<f64>;
