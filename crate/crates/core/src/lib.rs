//! Diffusion-based tabular imputation with pseudo-missing training and
//! state-dependent augmentation.

pub mod bench;
pub mod cli;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod imputer;
pub mod masking;
pub mod numeric;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
