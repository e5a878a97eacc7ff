//! Example-based texture superresolution.
//!
//! A low-resolution target is enlarged by matching band-pass patches against
//! reduced copies of high-resolution example textures, placing the matching
//! full-resolution patches along min-cut seams, and back-projecting the
//! result so it reduces to the original target.

pub mod ann;
pub mod backproject;
pub mod config;
pub mod error;
pub mod metrics;
pub mod patch;
pub mod pipeline;
pub mod raster;
pub mod resample;
pub mod seam;

pub use error::{Error, Result};
