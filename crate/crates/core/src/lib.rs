//! Fundus image segmentation with a multi-scale patch CNN.
//!
//! Pipeline: colour and illumination normalization ([`imagenorm`]), three
//! scale input planes around every pixel ([`patch`]), a three-tower network
//! ([`cnn`]), SGD training ([`trainer`]) and confusion-matrix evaluation
//! ([`metrics`]).

pub mod cnn;
pub mod dataset;
pub mod error;
pub mod imagenorm;
pub mod metrics;
pub mod patch;
pub mod pipeline;
pub mod raster;
pub mod trainer;

pub use error::{Error, Result};
pub use raster::{Class, Image, LabelMap, Mask, NUM_CLASSES};
