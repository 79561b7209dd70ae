//! Random square patches, exact block-mean downscaling, and the `.ccpt`
//! tensor file.
//!
//! A patch of side `64 * k` is cut from the ROI of a full image and reduced
//! by a factor `k` to a 64x64x3 network input; the pipeline uses
//! `k` in {12, 18, 24}, i.e. sides 768, 1152 and 1536.

mod tensorfile;

pub use tensorfile::{read_tensor_file, read_tensors, write_tensor_file, write_tensors, TENSOR_MAGIC, TENSOR_VERSION};

use rand::Rng;

use crate::error::{Error, Result};
use crate::imageio::{resolve_saturation, DatasetManifest, LinearImage, ManifestRecord};
use crate::stream_rng;

pub const PATCH_SIZE: usize = 64;
pub const PATCH_LEN: usize = PATCH_SIZE * PATCH_SIZE * 3;
pub const TRAIN_SIDES: [usize; 3] = [768, 1152, 1536];
pub const VALIDATION_SIDE: usize = 1536;
pub const DEFAULT_ROI_X: usize = 1900;
pub const DEFAULT_PATCH_COUNT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchOrigin {
    pub source_path: String,
    pub spec: PatchSpec,
}

/// A 64x64x3 channel-last input in `[0, 1]` with its 9-value target
/// `(dominant, left, right)`, each triplet summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTensor {
    pub data: Vec<f32>,
    pub target: [f32; 9],
    /// Known for freshly extracted patches; not stored in `.ccpt` files.
    pub origin: Option<PatchOrigin>,
}

impl PatchTensor {
    pub fn new(data: Vec<f32>, target: [f32; 9]) -> Result<Self> {
        if data.len() != PATCH_LEN {
            return Err(Error::ShapeMismatch {
                expected: vec![PATCH_SIZE, PATCH_SIZE, 3],
                got: vec![data.len()],
            });
        }
        Ok(Self {
            data,
            target,
            origin: None,
        })
    }

    pub fn target_f64(&self) -> [f64; 9] {
        self.target.map(f64::from)
    }
}

/// Block-mean reduction of a row-major `height x width x channels` raster by
/// an integer factor in both directions.
pub fn downscale_local_mean(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    factor: usize,
) -> Result<Vec<f64>> {
    assert_eq!(data.len(), width * height * channels, "raster size");
    if factor == 0 || !width.is_multiple_of(factor) || !height.is_multiple_of(factor) {
        return Err(Error::NonDivisibleFactor { factor, width, height });
    }
    let (ow, oh) = (width / factor, height / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; ow * oh * channels];
    let mut acc = vec![0.0; ow * channels];
    for oy in 0..oh {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for row in data[oy * factor * width * channels..][..factor * width * channels].chunks_exact(width * channels) {
            for (ox, block) in row.chunks_exact(factor * channels).enumerate() {
                let cell = &mut acc[ox * channels..(ox + 1) * channels];
                for px in block.chunks_exact(channels) {
                    for (a, v) in cell.iter_mut().zip(px) {
                        *a += v;
                    }
                }
            }
        }
        for (o, a) in out[oy * ow * channels..(oy + 1) * ow * channels].iter_mut().zip(&acc) {
            *o = a * norm;
        }
    }
    Ok(out)
}

/// `count` uniformly placed squares with sides drawn uniformly from `sides`.
pub fn sample_patch_specs<R: Rng + ?Sized>(
    image_w: usize,
    image_h: usize,
    count: usize,
    sides: &[usize],
    rng: &mut R,
) -> Result<Vec<PatchSpec>> {
    if sides.is_empty() || count == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(&side) = sides.iter().find(|&&s| s == 0 || s > image_w.min(image_h)) {
        return Err(Error::PatchLargerThanImage {
            side,
            width: image_w,
            height: image_h,
        });
    }
    Ok((0..count)
        .map(|_| {
            let side = sides[rng.gen_range(0..sides.len())];
            PatchSpec {
                x: rng.gen_range(0..=image_w - side),
                y: rng.gen_range(0..=image_h - side),
                side,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    pub count: usize,
    pub sides: Vec<usize>,
    pub roi_x: usize,
    pub seed: u64,
}

impl ExtractConfig {
    pub fn training(seed: u64) -> Self {
        Self {
            count: DEFAULT_PATCH_COUNT,
            sides: TRAIN_SIDES.to_vec(),
            roi_x: DEFAULT_ROI_X,
            seed,
        }
    }

    /// One patch of the largest side per image.
    pub fn validation(seed: u64) -> Self {
        Self {
            count: 1,
            sides: vec![VALIDATION_SIDE],
            roi_x: DEFAULT_ROI_X,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 || self.sides.is_empty() || self.roi_x == 0 {
            return Err(Error::EmptyInput);
        }
        for &side in &self.sides {
            if side == 0 || side % PATCH_SIZE != 0 {
                return Err(Error::NonDivisibleFactor {
                    factor: side / PATCH_SIZE,
                    width: side,
                    height: side,
                });
            }
        }
        Ok(())
    }
}

/// Cuts one patch, downscales it to 64x64 and normalizes by `saturation`.
pub fn extract_patch(image: &LinearImage, spec: PatchSpec, saturation: f64) -> Result<Vec<f32>> {
    if spec.x + spec.side > image.width() || spec.y + spec.side > image.height() {
        return Err(Error::PatchLargerThanImage {
            side: spec.side,
            width: image.width(),
            height: image.height(),
        });
    }
    let block = image.crop_square(spec.x, spec.y, spec.side);
    let small = downscale_local_mean(&block, spec.side, spec.side, 3, spec.side / PATCH_SIZE)?;
    Ok(small
        .into_iter()
        .map(|v| (v / saturation).clamp(0.0, 1.0) as f32)
        .collect())
}

/// Patches from one image plus an optional warning about sides that did not fit.
#[derive(Debug, Clone)]
pub struct ImagePatches {
    pub patches: Vec<PatchTensor>,
    pub warning: Option<String>,
}

/// Extraction for the `index`-th manifest image.
///
/// The ROI is the leftmost `min(roi_x, width)` columns. Sides that do not
/// fit in the ROI are dropped with a warning; if none fit the image fails.
/// Saturation falls back to [`resolve_saturation`] when the image has none.
pub fn extract_from_image(
    image: &LinearImage,
    record: &ManifestRecord,
    index: usize,
    config: &ExtractConfig,
) -> Result<ImagePatches> {
    config.validate()?;
    let roi_w = config.roi_x.min(image.width());
    let limit = roi_w.min(image.height());
    let sides: Vec<usize> = config.sides.iter().copied().filter(|&s| s <= limit).collect();
    if sides.is_empty() {
        return Err(Error::PatchLargerThanImage {
            side: *config.sides.iter().min().unwrap(),
            width: roi_w,
            height: image.height(),
        });
    }
    let warning = (sides.len() < config.sides.len()).then(|| {
        format!(
            "{}: ROI {}x{} too small for some sides, using {:?}",
            record.image_path,
            roi_w,
            image.height(),
            sides
        )
    });
    let saturation = image
        .saturation
        .unwrap_or_else(|| resolve_saturation(image, Some(record.iso)).0);
    if !(saturation > 0.0) {
        return Err(Error::DegenerateSaturation(saturation));
    }
    let target = record.gt.target9().map(|v| v as f32);
    let mut rng = stream_rng(config.seed, index as u64);
    let specs = sample_patch_specs(roi_w, image.height(), config.count, &sides, &mut rng)?;
    let patches = specs
        .into_iter()
        .map(|spec| {
            Ok(PatchTensor {
                data: extract_patch(image, spec, saturation)?,
                target,
                origin: Some(PatchOrigin {
                    source_path: record.image_path.clone(),
                    spec,
                }),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ImagePatches { patches, warning })
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub patches: Vec<PatchTensor>,
    pub warnings: Vec<String>,
}

/// Runs [`extract_from_image`] over a manifest in order. `load` supplies
/// each record's image; images are dropped as soon as they are cut up.
pub fn extract_set<F>(manifest: &DatasetManifest, mut load: F, config: &ExtractConfig) -> Result<Extraction>
where
    F: FnMut(&ManifestRecord) -> Result<LinearImage>,
{
    let mut out = Extraction::default();
    for (i, record) in manifest.records.iter().enumerate() {
        let image = load(record).map_err(|e| e.at(&record.image_path))?;
        let got = extract_from_image(&image, record, i, config).map_err(|e| e.at(&record.image_path))?;
        out.patches.extend(got.patches);
        out.warnings.extend(got.warning);
    }
    Ok(out)
}

pub fn extract_training_set<F>(manifest: &DatasetManifest, load: F, config: &ExtractConfig) -> Result<Extraction>
where
    F: FnMut(&ManifestRecord) -> Result<LinearImage>,
{
    extract_set(manifest, load, config)
}

pub fn extract_validation_set<F>(manifest: &DatasetManifest, load: F, seed: u64) -> Result<Extraction>
where
    F: FnMut(&ManifestRecord) -> Result<LinearImage>,
{
    extract_set(manifest, load, &ExtractConfig::validation(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::{read_manifest, GroundTruth};

    fn brute_downscale(data: &[f64], w: usize, h: usize, ch: usize, k: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for oy in 0..h / k {
            for ox in 0..w / k {
                for c in 0..ch {
                    let mut s = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            s += data[((oy * k + dy) * w + ox * k + dx) * ch + c];
                        }
                    }
                    out.push(s / (k * k) as f64);
                }
            }
        }
        out
    }

    #[test]
    fn downscale_small_examples() {
        assert_eq!(downscale_local_mean(&[1., 2., 3., 5.], 2, 2, 1, 2).unwrap(), vec![2.75]);
        let c = vec![0.37; 36 * 36 * 3];
        assert!(downscale_local_mean(&c, 36, 36, 3, 12)
            .unwrap()
            .iter()
            .all(|v| (*v - 0.37).abs() < 1e-15));
        assert!(matches!(
            downscale_local_mean(&[0.0; 75], 5, 5, 3, 2),
            Err(Error::NonDivisibleFactor { .. })
        ));
    }

    #[test]
    fn downscale_matches_brute_force() {
        let mut rng = stream_rng(1, 0);
        let data: Vec<f64> = (0..24 * 24 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let fast = downscale_local_mean(&data, 24, 24, 3, 12).unwrap();
        let slow = brute_downscale(&data, 24, 24, 3, 12);
        assert_eq!(fast.len(), 12);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        let mass_in: f64 = data.iter().sum();
        let mass_out: f64 = fast.iter().sum::<f64>() * 144.0;
        assert!((mass_in - mass_out).abs() <= 1e-9 * mass_in);
    }

    #[test]
    fn non_square_downscale() {
        let data: Vec<f64> = (0..6 * 4 * 2).map(f64::from).collect();
        assert_eq!(
            downscale_local_mean(&data, 6, 4, 2, 2).unwrap(),
            brute_downscale(&data, 6, 4, 2, 2)
        );
    }

    #[test]
    fn spec_sampling() {
        let mut rng = stream_rng(2, 0);
        let specs = sample_patch_specs(1900, 1200, 100, &[768, 1152], &mut rng).unwrap();
        assert_eq!(specs.len(), 100);
        assert!(specs.iter().all(|s| s.x + s.side <= 1900 && s.y + s.side <= 1200));
        assert!(specs.iter().any(|s| s.side == 768) && specs.iter().any(|s| s.side == 1152));
        assert!(matches!(
            sample_patch_specs(1900, 1200, 1, &[1536], &mut rng),
            Err(Error::PatchLargerThanImage { side: 1536, .. })
        ));
        let exact = sample_patch_specs(768, 768, 5, &[768], &mut rng).unwrap();
        assert!(exact.iter().all(|s| *s == PatchSpec { x: 0, y: 0, side: 768 }));
    }

    #[test]
    fn spec_sampling_is_seeded() {
        let a = sample_patch_specs(300, 200, 20, &[64, 128], &mut stream_rng(9, 1)).unwrap();
        let b = sample_patch_specs(300, 200, 20, &[64, 128], &mut stream_rng(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    fn record(path: &str) -> ManifestRecord {
        let text = format!("path,lr,lg,lb,rr,rg,rb,dominant,iso\n{path},2,4,2,1,1,2,left,160\n");
        read_manifest(text.as_bytes()).unwrap().records.remove(0)
    }

    #[test]
    fn image_extraction_targets_and_range() {
        let mut rng = stream_rng(4, 0);
        let data: Vec<f32> = (0..200 * 150 * 3).map(|_| rng.gen_range(0.0f32..12652.0)).collect();
        let img = LinearImage::new(200, 150, data).unwrap();
        let cfg = ExtractConfig {
            count: 7,
            sides: vec![64, 128],
            roi_x: 190,
            seed: 3,
        };
        let got = extract_from_image(&img, &record("a.ppm"), 0, &cfg).unwrap();
        assert_eq!(got.patches.len(), 7);
        assert!(got.warning.is_none());
        for p in &got.patches {
            assert_eq!(&p.target[..3], &[0.25, 0.5, 0.25]);
            assert_eq!(&p.target[3..6], &[0.25, 0.5, 0.25]);
            assert_eq!(&p.target[6..], &[0.25, 0.25, 0.5]);
            assert!(p.data.iter().all(|v| (0.0..=1.0).contains(v)));
            let spec = p.origin.as_ref().unwrap().spec;
            assert!(spec.x + spec.side <= 190);
        }
    }

    #[test]
    fn extraction_falls_back_to_fitting_sides() {
        let img = LinearImage::filled(200, 100, [10.0; 3])
            .unwrap()
            .with_metadata(100.0, None);
        let cfg = ExtractConfig {
            count: 4,
            sides: vec![64, 128],
            roi_x: 1900,
            seed: 0,
        };
        let got = extract_from_image(&img, &record("a.ppm"), 0, &cfg).unwrap();
        assert!(got.warning.is_some());
        assert!(got.patches.iter().all(|p| p.origin.as_ref().unwrap().spec.side == 64));
        assert!(got
            .patches
            .iter()
            .all(|p| p.data.iter().all(|v| (*v - 0.1).abs() < 1e-7)));
        let tiny = LinearImage::filled(50, 50, [1.0; 3]).unwrap();
        assert!(extract_from_image(&tiny, &record("a.ppm"), 0, &cfg).is_err());
    }

    #[test]
    fn factor_for_pipeline_sides() {
        assert_eq!(TRAIN_SIDES.map(|s| s / PATCH_SIZE), [12, 18, 24]);
        assert_eq!(VALIDATION_SIDE / PATCH_SIZE, 24);
    }

    #[test]
    fn set_extraction_counts_and_determinism() {
        let records: Vec<ManifestRecord> = (0..10).map(|i| record(&format!("img{i}.ppm"))).collect();
        let manifest = DatasetManifest { records };
        let load = |r: &ManifestRecord| {
            let k: f32 = r.image_path.len() as f32;
            Ok(LinearImage::filled(130, 128, [k, 2.0 * k, 3.0]).unwrap())
        };
        let cfg = ExtractConfig {
            count: 100,
            sides: vec![64, 128],
            roi_x: 1900,
            seed: 5,
        };
        let a = extract_training_set(&manifest, load, &cfg).unwrap();
        assert_eq!(a.patches.len(), 1000);
        let b = extract_training_set(&manifest, load, &cfg).unwrap();
        assert_eq!(a.patches, b.patches);
        let gt: GroundTruth = manifest.records[0].gt;
        assert_eq!(gt.dominant().to_array(), [2.0, 4.0, 2.0]);
    }
}
