//! Non-learned illuminant estimators.

use crate::error::{Error, Result};
use crate::imageio::LinearImage;
use crate::metrics::Chromaticity;

/// The fixed estimate sitting in the middle of the outdoor cluster.
pub const CONSTANT_ESTIMATE: [f64; 3] = [0.17, 0.40, 0.27];

pub fn constant_estimator() -> Chromaticity {
    Chromaticity::from_array(CONSTANT_ESTIMATE).expect("constant is a valid chromaticity")
}

/// Gray-world over interleaved RGB samples: per-channel mean, unit-sum.
pub fn gray_world_rgb<T: Copy + Into<f64>>(pixels: &[T]) -> Result<Chromaticity> {
    if pixels.is_empty() || !pixels.len().is_multiple_of(3) {
        return Err(Error::EmptyInput);
    }
    let mut sum = [0.0f64; 3];
    for px in pixels.chunks_exact(3) {
        for c in 0..3 {
            sum[c] += px[c].into();
        }
    }
    if let Some(c) = sum.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::ZeroChannelMean(c));
    }
    // means share the pixel count, which cancels in the normalization
    Ok(Chromaticity::from_array(sum)?.canonical())
}

pub fn gray_world(image: &LinearImage) -> Result<Chromaticity> {
    gray_world_rgb(image.data())
}
