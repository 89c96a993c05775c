//! Primitive layers. Each forward has a matching backward that returns
//! gradients with respect to every input it was given.

pub mod activation;
pub mod conv;
pub mod loss;
pub mod optim;
pub mod upsample;

pub use activation::{relu, relu_backward, sigmoid_scalar, softplus, softplus_backward, softplus_scalar};
pub use conv::{conv1x1, conv1x1_backward, conv3x3, conv3x3_backward, ConvGrads, ConvParams};
pub use loss::weighted_cross_entropy;
pub use optim::{sgd_momentum_step, OptimizerState};
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};
