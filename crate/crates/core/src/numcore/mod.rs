//! Deterministic dense-array operators, learnable parameter storage,
//! finite-difference gradient checking and the Adam update.

mod adam;
pub mod gradcheck;
pub mod layers;
pub mod ops;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, Coverage, GradCheckReport, ParamCheck};
pub use ops::{avg_pool_grid, broadcast_scale, concat_rows, matmul, softmax_rows, Axis};
pub use params::{Grads, ParamEntry, ParamStore};
pub use tensor::Tensor;
