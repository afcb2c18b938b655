//! Plume segmentation for longwave infrared hyperspectral video.
//!
//! Radiance cubes are converted to emissivity, searched with a matched
//! subspace detector, reduced to false-colour video by PCA and midway
//! equalization, and segmented with k-means, spectral clustering or a
//! graph MBO scheme on a Nyström-approximated Laplacian.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amsd;
pub mod cluster;
pub mod config;
pub mod dimred;
pub mod error;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod mbo;
pub mod midway;
pub mod pipeline;
pub mod radiometry;
pub mod stats;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    jaccard, CubeKind, DetectionMap, FalseColorVideo, FeatureImage, HyperCube, Labeling,
    PhaseField, Raster,
};
