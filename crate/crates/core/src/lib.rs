//! Per-position learned context aggregation for dense prediction.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`nn`]: dense containers and primitive layers with
//!   hand-written backward passes, all in `f64`.
//! * [`sca`]: the context aggregation operator and its gradients.
//! * [`cdp`]: the dependency predictor that produces the coefficient matrix.
//! * [`segnet`]: a small encoder / aggregation / decoder segmentation network,
//!   its checkpoint format and dependency-mask export.
//! * [`training`]: momentum SGD with the poly schedule, loss re-weighting and metrics.
//! * [`data`]: the synthetic ambiguous-texture dataset and PPM/PGM I/O.
//! * [`gradcheck`]: finite-difference verification of every backward pass.

pub mod cdp;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod rng;
pub mod sca;
pub mod segnet;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, LabelMap, Matrix, IGNORE_LABEL};
