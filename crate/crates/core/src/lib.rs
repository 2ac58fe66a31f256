//! Simulation toolkit for speckle-based optical image encryption.
//!
//! Plaintext images are phase-encoded, scrambled by a seeded random
//! transmission matrix (the physical key) and recorded as normalized speckle
//! intensities. A trainable decoder learns to invert the channel, and the
//! evaluation modules score decrypted images with PCC/MSE/PSNR/SSIM and with a
//! threshold-based face matching protocol.
//!
//! Module map:
//!
//! - [`optics`]: key generation, encryption, noise and field-of-view cropping
//! - [`metrics`]: image similarity criteria
//! - [`decoder`]: trainable decryptor, loss, SGD training, pseudo-inverse oracle
//! - [`recognizer`]: embeddings, threshold matching, confusion counts
//! - [`dataset`]: synthetic identity corpus, splits, PGM and manifest I/O
//! - [`harness`]: end-to-end experiments producing JSON/CSV reports

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod decoder;
pub mod error;
pub mod exec;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod optics;
pub mod recognizer;
pub mod rng;

pub use error::{Error, Result};
pub use image::PlainImage;

/// Version of the binary key file layout (`SPKY`).
pub const KEY_FORMAT_VERSION: u16 = 1;
/// Version of the binary image/speckle file layout (`SPIM`).
pub const IMAGE_FORMAT_VERSION: u16 = 1;
/// Version of the binary model file layout (`SPMD`).
pub const MODEL_FORMAT_VERSION: u16 = 1;
