//! Minimal neural-network engine: dense nets with analytic backprop,
//! diagonal-Gaussian heads, an adaptive-moment optimizer, and a
//! finite-difference gradient checker.

mod adam;
pub mod gaussian;
mod gradcheck;
mod net;

pub use adam::Adam;
pub use gaussian::{GaussianParams, LOG_STD_MAX, LOG_STD_MIN};
pub use gradcheck::{check_gradients, BlockCheck, GradCheckReport, ParamBlocks};
pub use net::{softmax, softmax_rows, Activation, DenseNet, NetCache, NetGrads};
