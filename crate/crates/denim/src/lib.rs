//! denim — deterministic neural illumination mapping.
//!
//! A library and CLI for auto-white-balance correction via per-pixel learned
//! color maps: small projection matrices modulated by an image-adaptive
//! latent matrix produced from a low-resolution encoder. Mapping chains can
//! be precomposed into a single small matrix per image, making inference
//! cost independent of the latent size.

pub mod checkpoint;
pub mod color;
pub mod dncm;
pub mod encoder;
pub mod error;
pub mod image;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod ppm;
pub mod rng;
pub mod train;

pub use dncm::{DncmParams, LatentCode};
pub use encoder::EncoderParams;
pub use error::{Error, Result};
pub use image::{CanonicalImage, ImageStack};
pub use matrix::Matrix;
pub use train::{TrainConfig, TrainSample, WbSimConfig};
