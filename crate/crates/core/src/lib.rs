//! Self-supervised defect segmentation for phased-array ultrasonic volumes.
//!
//! A small 1D convolutional network is trained on defect-free scans to
//! predict a Weibull distribution for the next amplitude along the scan
//! direction. At inference time every voxel is compared with its
//! prediction; anomalous voxels form the defect mask.

pub mod error;
pub mod eval;
pub mod infer;
pub mod morph;
pub mod net;
pub mod registry;
pub mod synth;
pub mod trainer;
pub mod volume;
pub mod weibull;

pub use error::{Error, Result};
