//! Collision and inaccessibility measure fields for tool accessibility analysis, and a
//! compact sinusoidal neural-implicit representation of them.

pub mod baselines;
pub mod cspace;
pub mod error;
mod fft;
pub mod fixtures;
pub mod image;
pub mod nn;
pub mod report;
pub mod sampler;
pub mod stack_io;
pub mod trainer;
pub mod voxel;
pub mod voxf;

pub use error::{Error, Result};
