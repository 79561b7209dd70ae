//! Illuminant estimation toolkit.
//!
//! Covers the whole loop for single-illuminant color constancy on linear
//! sensor data: the reproduction angular error metric, gray-world and
//! constant baselines, 16-bit PPM and manifest I/O with ISO-dependent
//! saturation handling, saturation-aware gain augmentation, patch
//! extraction with exact block-mean downscaling, and a small three-headed
//! CNN with hand-written backward passes trained on a trimmed MAE loss.

// `!(x > 0.0)` is used on purpose to reject NaN alongside nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod augment;
pub mod baselines;
pub mod error;
pub mod imageio;
pub mod inference;
pub mod metrics;
pub mod nncore;
pub mod patches;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use imageio::{GroundTruth, LinearImage};
pub use metrics::{reproduction_error, Chromaticity, ErrorStats};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for one independent stream, e.g. one image of a dataset.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
