//! Hyperspectral + LiDAR land-cover classification with two coupled CNN
//! branches, feature-level fusion and accuracy-weighted decision fusion.

pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod network;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
