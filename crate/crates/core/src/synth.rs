//! Synthetic clip-free scenes with known illuminants.
//!
//! A scene is a grid of piecewise-constant reflectance blocks (a fraction of
//! them achromatic) lit by one illuminant drawn from a two-cluster mixture in
//! log-chromaticity. Each scene also carries a per-scene reflectance cast, so
//! the average surface is not gray and gray-world is biased.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imageio::{DatasetManifest, Dominant, GroundTruth, LinearImage, ManifestRecord};
use crate::metrics::Chromaticity;
use crate::stream_rng;

/// ISO used for synthetic scenes; its tabulated saturation is 15306.
pub const SYNTH_ISO: u32 = 200;
pub const SYNTH_SATURATION: f64 = 15306.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Block edge lengths are drawn uniformly from this range.
    pub block_min: usize,
    pub block_max: usize,
    pub gray_fraction: f64,
    /// Mixture component means, unit-sum RGB.
    pub clusters: [[f64; 3]; 2],
    /// Standard deviation of the log-chromaticity jitter around a center.
    pub cluster_sigma: f64,
    /// Standard deviation of the per-scene log reflectance cast.
    pub cast_sigma: f64,
    /// Brightest sample as a fraction of saturation.
    pub peak: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            block_min: 16,
            block_max: 64,
            gray_fraction: 0.2,
            clusters: [[0.22, 0.46, 0.32], [0.34, 0.46, 0.20]],
            cluster_sigma: 0.12,
            cast_sigma: 0.1,
            peak: 0.9,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0
            && self.height > 0
            && self.block_min > 0
            && self.block_min <= self.block_max
            && (0.0..=1.0).contains(&self.gray_fraction)
            && self.cluster_sigma >= 0.0
            && self.cast_sigma >= 0.0
            && self.peak > 0.0
            && self.peak * SYNTH_SATURATION < SYNTH_SATURATION - 2.0
            && self.clusters.iter().flatten().all(|&v| v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("invalid synthetic scene configuration".into()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub image: LinearImage,
    pub gt: GroundTruth,
}

fn jitter(center: [f64; 3], sigma: f64, rng: &mut impl Rng) -> [f64; 3] {
    let n = Normal::new(0.0, sigma).unwrap();
    let v = center.map(|c| c.ln() + n.sample(rng)).map(f64::exp);
    let s: f64 = v.iter().sum();
    v.map(|x| x / s)
}

/// One draw from the illuminant mixture (equal weights).
pub fn draw_illuminant(config: &SynthConfig, rng: &mut impl Rng) -> [f64; 3] {
    let center = config.clusters[usize::from(rng.gen_bool(0.5))];
    jitter(center, config.cluster_sigma, rng)
}

/// Scene `index` of the sequence defined by `config.seed`.
pub fn synth_scene(config: &SynthConfig, index: u64) -> Result<SynthScene> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, index);
    let illum = draw_illuminant(config, &mut rng);
    let cast = Normal::new(0.0, config.cast_sigma).unwrap();
    let tint: [f64; 3] = std::array::from_fn(|_| cast.sample(&mut rng).exp());

    let (w, h) = (config.width, config.height);
    let mut refl = vec![0f64; w * h * 3];
    let mut y = 0;
    while y < h {
        let bh = rng.gen_range(config.block_min..=config.block_max).min(h - y);
        let mut x = 0;
        while x < w {
            let bw = rng.gen_range(config.block_min..=config.block_max).min(w - x);
            let r: [f64; 3] = if rng.gen_bool(config.gray_fraction) {
                [rng.gen_range(0.2..1.0); 3]
            } else {
                std::array::from_fn(|c| rng.gen_range(0.03..1.0) * tint[c])
            };
            for yy in y..y + bh {
                for xx in x..x + bw {
                    refl[(yy * w + xx) * 3..][..3].copy_from_slice(&r);
                }
            }
            x += bw;
        }
        y += bh;
    }

    let radiance: Vec<f64> = refl.iter().enumerate().map(|(i, r)| r * illum[i % 3]).collect();
    let max = radiance.iter().cloned().fold(0.0, f64::max);
    let scale = config.peak * SYNTH_SATURATION / max;
    let data = radiance.iter().map(|v| (v * scale) as f32).collect();
    let image = LinearImage::new(w, h, data)?.with_metadata(SYNTH_SATURATION, Some(SYNTH_ISO));

    // the second cube face sees a slightly different mixture of the light
    let other = jitter(illum, 0.02, &mut rng);
    let dominant = if rng.gen_bool(0.5) {
        Dominant::Left
    } else {
        Dominant::Right
    };
    let (left, right) = match dominant {
        Dominant::Left => (illum, other),
        Dominant::Right => (other, illum),
    };
    let gt = GroundTruth {
        left: Chromaticity::from_array(left)?,
        right: Chromaticity::from_array(right)?,
        dominant,
    };
    Ok(SynthScene { image, gt })
}

/// Scenes `0..n`, named `scene_00000.ppm` and so on in the manifest.
pub fn synth_dataset(config: &SynthConfig, n: usize) -> Result<(Vec<LinearImage>, DatasetManifest)> {
    let mut images = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let scene = synth_scene(config, i as u64)?;
        images.push(scene.image);
        records.push(ManifestRecord {
            image_path: scene_name(i),
            gt: scene.gt,
            iso: SYNTH_ISO,
        });
    }
    Ok((images, DatasetManifest { records }))
}

pub fn scene_name(i: usize) -> String {
    format!("scene_{i:05}.ppm")
}
