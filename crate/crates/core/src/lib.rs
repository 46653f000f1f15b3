//! Geometric core of feed-forward panoramic Gaussian splatting.

pub mod config;
pub mod coordsys;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod metrics;
pub mod panorama;
pub mod pipeline;
pub mod ply;
pub mod prune;
pub mod retrieval;
pub mod raster;
pub mod scene;
pub mod tensor_file;
pub mod triplane;

pub use error::{Error, Result};
