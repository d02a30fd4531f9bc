//! Lossless point cloud attribute compression.
//!
//! Points are ordered along a 3D Hilbert curve, cut into fixed-size slices and
//! reorganized into coarse-to-fine coding units. The first unit of every slice
//! is stored raw; every later unit is range coded with discretized Laplace
//! distributions whose parameters come either from an inverse-distance
//! predictor with an adaptive scale (baseline mode) or from a two-stage
//! vector-attention network conditioned on previously coded points.
//!
//! Geometry is side information: the decoder receives the positions and
//! reconstructs the attributes.

pub mod entropy;
pub mod error;
pub mod hilbert;
pub mod lod;
pub mod model;
pub mod neighborhood;
pub mod par;
pub mod pipeline;
pub mod pointcloud;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use pointcloud::{AttributeSpace, PointCloud};
