//! Decoding-time injection of narrative priors into a patch-token forecaster.

pub mod backbone;
pub mod crid;
pub mod evalkit;
pub mod error;
pub mod fieldgrid;
pub mod heatmap;
pub mod mmnp;
pub mod numcore;
pub mod textenc;

pub use error::{Error, Result};
pub use numcore::{ParamStore, Tensor};
