//! Compositional k-cell particles for B-Rep generation.

pub mod assembly;
pub mod ccvae;
pub mod complex;
pub mod dataio;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
