//! Synthetic RGB-D two-hand scenes with exact ground truth, a documented
//! on-disk dataset format, and the training augmentation suite.

pub mod augment;
pub mod error;
pub mod pngio;
pub mod raster;
pub mod rig;
pub mod sample;
pub mod scene;

pub use error::{Error, Result};
pub use sample::{load_sample, save_sample, Annotation, HandAnnotation, Manifest, Sample};
pub use scene::{generate_scene, generate_synthetic, sample_name};
