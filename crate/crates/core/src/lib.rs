//! Sequence VAE for text with per-timestep Gaussian posteriors over the
//! recurrent encoder states and an averaged KL regulariser, plus the
//! last-state VAE baseline it is compared against.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod layers;

pub use error::{Error, Result};
pub mod baseline;
pub mod model;
pub mod train;
