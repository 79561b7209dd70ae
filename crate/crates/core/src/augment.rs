//! Element-wise gain augmentation of image / ground-truth pairs.
//!
//! Multiplying every pixel and the illuminant by the same per-channel gain
//! simulates a different light source. Gains above one are harmless on
//! clipped samples (they stay clipped), but darkening a clipped sample moves
//! the clipping edge below the sensor limit, which never happens in real
//! captures. [`SaturationPolicy`] decides what to do in that case.

use rand::Rng;

use crate::error::{Error, Result};
use crate::imageio::{clip_mask, GroundTruth, LinearImage};
use crate::metrics::{reproduction_error, Chromaticity};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainVector {
    pub gr: f64,
    pub gg: f64,
    pub gb: f64,
}

impl GainVector {
    pub fn new(gr: f64, gg: f64, gb: f64) -> Result<Self> {
        if [gr, gg, gb].iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidAugmentConfig(format!(
                "gain ({gr}, {gg}, {gb}) must be positive and finite"
            )));
        }
        Ok(Self { gr, gg, gb })
    }

    pub const fn identity() -> Self {
        Self {
            gr: 1.0,
            gg: 1.0,
            gb: 1.0,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.gr, self.gg, self.gb]
    }

    pub fn darkens(self) -> bool {
        self.to_array().iter().any(|g| *g < 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SaturationPolicy {
    /// Fail with [`Error::UnnaturalDarkening`].
    Reject,
    /// Scale, then pin previously clipped samples back to the saturation level.
    Clamp,
    /// Fail with [`Error::Skipped`] so callers can drop the image quietly.
    #[default]
    SkipSaturatedImages,
}

impl std::str::FromStr for SaturationPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "reject" => Ok(Self::Reject),
            "clamp" => Ok(Self::Clamp),
            "skip" | "skip_saturated_images" => Ok(Self::SkipSaturatedImages),
            _ => Err(format!("expected reject, clamp or skip, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub gain_min: f64,
    pub gain_max: f64,
    pub max_chroma_shift_deg: f64,
    pub saturation_policy: SaturationPolicy,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            gain_min: 0.6,
            gain_max: 1.6,
            max_chroma_shift_deg: 10.0,
            saturation_policy: SaturationPolicy::default(),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidAugmentConfig(m.into()));
        if !(self.gain_min > 0.0 && self.gain_min.is_finite() && self.gain_max.is_finite()) {
            return bad("gain_min must be positive");
        }
        if self.gain_min > self.gain_max {
            return bad("gain_min exceeds gain_max");
        }
        if !(self.max_chroma_shift_deg >= 0.0) {
            return bad("max_chroma_shift_deg must be nonnegative");
        }
        Ok(())
    }
}

/// Scales the image and all ground-truth triplets by `gain`.
///
/// Each sample becomes `v * g` capped at the saturation level (a sample
/// already above it is never pushed further up). The saturation level
/// itself is unchanged.
pub fn apply_gain(
    image: &LinearImage,
    gt: &GroundTruth,
    gain: GainVector,
    policy: SaturationPolicy,
) -> Result<(LinearImage, GroundTruth)> {
    let sat = image.saturation.ok_or(Error::MissingSaturation)?;
    let mask = clip_mask(image)?;
    let conflict = gain.darkens() && mask.iter().any(|c| *c);
    if conflict {
        match policy {
            SaturationPolicy::Reject => return Err(Error::UnnaturalDarkening),
            SaturationPolicy::SkipSaturatedImages => return Err(Error::Skipped),
            SaturationPolicy::Clamp => {}
        }
    }
    let g = gain.to_array();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if conflict && mask[i] {
                return sat as f32;
            }
            let v = f64::from(v);
            (v * g[i % 3]).min(sat.max(v)) as f32
        })
        .collect();
    Ok((image.replace_data(data), gt.scaled(g)))
}

pub const MAX_GAIN_DRAWS: usize = 1000;

/// Draws a log-uniform gain in `[gain_min, gain_max]` per channel.
///
/// When `gt` is supplied the draw is repeated until the induced shift,
/// `reproduction_error(gt, gain * gt)`, is within `max_chroma_shift_deg`.
pub fn sample_gain<R: Rng + ?Sized>(
    config: &AugmentConfig,
    rng: &mut R,
    gt: Option<&Chromaticity>,
) -> Result<GainVector> {
    config.validate()?;
    let (lo, hi) = (config.gain_min.ln(), config.gain_max.ln());
    let mut draw = || {
        if config.gain_min == config.gain_max {
            config.gain_min
        } else {
            rng.gen_range(lo..=hi).exp()
        }
    };
    for _ in 0..MAX_GAIN_DRAWS {
        let gain = GainVector::new(draw(), draw(), draw())?;
        match gt {
            None => return Ok(gain),
            Some(t) => {
                let shift = reproduction_error(t, &t.scaled(gain.to_array()))?;
                if shift <= config.max_chroma_shift_deg {
                    return Ok(gain);
                }
            }
        }
    }
    Err(Error::RejectionBudgetExhausted(MAX_GAIN_DRAWS))
}

/// One augmentation attempt for a single source image.
#[derive(Debug)]
pub struct Augmented {
    pub gain: GainVector,
    pub result: Result<(LinearImage, GroundTruth)>,
}

/// Draws `count` gains and applies each to `image`. Sampling failures abort;
/// per-gain policy failures are returned in place so callers can log them.
pub fn augment_image<R: Rng + ?Sized>(
    image: &LinearImage,
    gt: &GroundTruth,
    count: usize,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<Augmented>> {
    let dominant = gt.dominant();
    (0..count)
        .map(|_| {
            let gain = sample_gain(config, rng, Some(&dominant))?;
            Ok(Augmented {
                gain,
                result: apply_gain(image, gt, gain, config.saturation_policy),
            })
        })
        .collect()
}
