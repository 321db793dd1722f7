//! Normalization schemes for image-restoration Transformers, with the
//! instruments needed to study them: feature-magnitude and channel-entropy
//! tracing, inter-pixel structure checks, bias alignment, RPE export and a
//! reduced-precision inference harness.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod norms;
pub mod numeric;
pub mod quantize;
pub mod train;

pub use error::{Error, Result};
pub use numeric::{Precision, Tensor};
