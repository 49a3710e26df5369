//! Spatial multimodal memory on 3D Gaussians.
//!
//! High-dimensional foundation-model features are kept in a deduplicated
//! memory bank of principal scene components; each Gaussian carries a small
//! principal-query vector that is splatted per pixel and turned back into a
//! full feature through softmax attention over the bank.

pub mod attention;
pub mod bank;
pub mod binio;
pub mod error;
pub mod feature;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
