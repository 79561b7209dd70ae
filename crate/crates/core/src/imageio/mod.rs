//! Linear sensor images, their saturation model, and dataset manifests.

mod manifest;
mod ppm;

pub use manifest::{
    load_manifest, read_manifest, write_manifest, DatasetManifest, Dominant, GroundTruth, ManifestRecord,
    MANIFEST_HEADER,
};
pub use ppm::{decode_ppm, encode_ppm16, read_ppm16, write_ppm16};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row-major `height x width x 3` raster of linear sensor counts.
///
/// `saturation` and `iso` are unset right after decoding; see
/// [`LinearImage::with_metadata`] and [`resolve_saturation`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
    pub saturation: Option<f64>,
    pub iso: Option<u32>,
}

impl LinearImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty {width}x{height} raster")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "{width}x{height}x3 raster needs {} samples, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidImage("negative or non-finite sample".into()));
        }
        Ok(Self {
            width,
            height,
            data,
            saturation: None,
            iso: None,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn with_metadata(mut self, saturation: f64, iso: Option<u32>) -> Self {
        self.saturation = Some(saturation);
        self.iso = iso;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copies the square `side x side` window at `(x, y)` into f64.
    pub fn crop_square(&self, x: usize, y: usize, side: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(side * side * 3);
        for row in y..y + side {
            let start = (row * self.width + x) * 3;
            out.extend(self.data[start..start + side * 3].iter().map(|&v| f64::from(v)));
        }
        out
    }

    pub(crate) fn replace_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            data,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: Vec::new(),
            saturation: self.saturation,
            iso: self.iso,
        }
    }
}

/// Saturation levels of the Canon 550D keyed by ISO.
pub const ISO_SATURATION_TABLE: [(f64, &[u32]); 4] = [
    (12652.0, &[160, 320, 640, 1250]),
    (13584.0, &[100, 125]),
    (15306.0, &[200, 250, 400, 500, 800, 1000, 1600]),
    (15324.0, &[6400]),
];

/// Looks up the sensor clipping level for an ISO setting.
pub fn saturation_for_iso(iso: u32) -> Result<f64> {
    ISO_SATURATION_TABLE
        .iter()
        .find(|(_, isos)| isos.contains(&iso))
        .map(|(sat, _)| *sat)
        .ok_or(Error::UnknownIso(iso))
}

/// Largest sample over all pixels and channels.
pub fn infer_saturation(image: &LinearImage) -> f64 {
    image.data.iter().fold(0.0f32, |m, &v| m.max(v)) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaturationSource {
    IsoTable,
    ImageMax,
}

impl SaturationSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SaturationSource::IsoTable => "iso_table",
            SaturationSource::ImageMax => "image_max",
        }
    }
}

/// ISO table first, image maximum as fallback.
pub fn resolve_saturation(image: &LinearImage, iso: Option<u32>) -> (f64, SaturationSource) {
    match iso.map(saturation_for_iso) {
        Some(Ok(sat)) => (sat, SaturationSource::IsoTable),
        _ => (infer_saturation(image), SaturationSource::ImageMax),
    }
}

/// Marks every channel sample at or above `saturation - 2`.
pub fn clip_mask(image: &LinearImage) -> Result<Vec<bool>> {
    let sat = image.saturation.ok_or(Error::MissingSaturation)?;
    if !(sat > 2.0) {
        return Err(Error::DegenerateSaturation(sat));
    }
    let threshold = sat - 2.0;
    Ok(image.data.iter().map(|&v| f64::from(v) >= threshold).collect())
}

pub fn has_clipped(image: &LinearImage) -> Result<bool> {
    Ok(clip_mask(image)?.into_iter().any(|c| c))
}

/// Keeps columns `[0, x_max)`.
pub fn apply_roi(image: &LinearImage, x_max: usize) -> Result<LinearImage> {
    if x_max == 0 || x_max > image.width {
        return Err(Error::RoiOutOfBounds {
            x_max,
            width: image.width,
        });
    }
    if x_max == image.width {
        return Ok(image.clone());
    }
    let mut data = Vec::with_capacity(x_max * image.height * 3);
    for row in image.data.chunks_exact(image.width * 3) {
        data.extend_from_slice(&row[..x_max * 3]);
    }
    Ok(LinearImage {
        width: x_max,
        data,
        ..image.clone_meta()
    })
}
