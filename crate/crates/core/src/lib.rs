//! Camera-space reconstruction of two hand meshes from one RGB-D frame.
//!
//! The pipeline lifts the masked depth map into per-hand point clouds,
//! extracts pyramid features from both the image (strided CNN) and the
//! clouds (hierarchical set abstraction), fuses them per point via learned
//! affine modulation conditioned on projected image features, and decodes
//! the fused global vector into dense meshes with a Chebyshev spectral
//! graph network over a coarse-to-fine vertex hierarchy.

pub mod camera;
pub mod check;
pub mod config;
pub mod eigen;
pub mod error;
pub mod fusion;
pub mod gcn;
pub mod image_encoder;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod point_encoder;
pub mod template;
pub mod topology;

pub use camera::{CameraIntrinsics, Hand, PointCloud};
pub use error::{Error, Result};
