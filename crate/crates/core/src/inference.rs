//! Whole-image prediction and dataset evaluation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::baselines::{constant_estimator, gray_world};
use crate::error::{Error, Result};
use crate::imageio::{
    apply_roi, resolve_saturation, saturation_for_iso, DatasetManifest, LinearImage, ManifestRecord, SaturationSource,
};
use crate::metrics::{aggregate, reproduction_error, Chromaticity, ErrorStats};
use crate::nncore::{Model, Tensor};
use crate::patches::{extract_patch, sample_patch_specs, DEFAULT_ROI_X, VALIDATION_SIDE};
use crate::stream_rng;
use crate::train::head_estimate;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictConfig {
    pub k_patches: usize,
    pub side: usize,
    pub roi_x: usize,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            k_patches: 1,
            side: VALIDATION_SIDE,
            roi_x: DEFAULT_ROI_X,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub estimate: Chromaticity,
    /// Normalized `(dominant, left, right)` head medians.
    pub heads: [[f64; 3]; 3],
}

fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

/// Component-wise (lower) median of raw 9-output vectors, then each head is
/// clamped and normalized.
pub fn combine_outputs(outputs: &[Vec<f64>]) -> Result<Prediction> {
    if outputs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut med = [0.0; 9];
    for (j, m) in med.iter_mut().enumerate() {
        let mut col: Vec<f64> = outputs.iter().map(|o| o[j]).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        *m = lower_median(&mut col);
    }
    let heads: [[f64; 3]; 3] = std::array::from_fn(|h| head_estimate(&med, h));
    Ok(Prediction {
        estimate: Chromaticity::from_array(heads[0])?,
        heads,
    })
}

/// Predicts the dominant illuminant of `image` from `k_patches` random
/// patches. With `k_patches = 1` the patch is the one the validation
/// extraction would cut for manifest position `index` under the same seed.
pub fn predict_image(model: &Model, image: &LinearImage, config: &PredictConfig, index: usize) -> Result<Prediction> {
    if config.k_patches == 0 {
        return Err(Error::EmptyInput);
    }
    let roi_w = config.roi_x.min(image.width());
    let saturation = image
        .saturation
        .unwrap_or_else(|| resolve_saturation(image, image.iso).0);
    if !(saturation > 0.0) {
        return Err(Error::DegenerateSaturation(saturation));
    }
    let mut rng = stream_rng(config.seed, index as u64);
    let specs = sample_patch_specs(roi_w, image.height(), config.k_patches, &[config.side], &mut rng)?;
    let outputs = specs
        .into_iter()
        .map(|spec| {
            let data = extract_patch(image, spec, saturation)?;
            model.forward(&Tensor::from_f32(model.input_shape().to_vec(), &data)?)
        })
        .collect::<Result<Vec<_>>>()?;
    combine_outputs(&outputs)
}

#[derive(Debug, Clone)]
pub enum Estimator {
    GrayWorld {
        roi_x: usize,
    },
    Constant,
    Model {
        model: Box<Model>,
        config: PredictConfig,
    },
    /// Returns the ground truth; a harness self-check.
    Oracle,
}

impl Estimator {
    pub fn gray_world() -> Self {
        Estimator::GrayWorld { roi_x: DEFAULT_ROI_X }
    }

    fn estimate(&self, image: &LinearImage, record: &ManifestRecord, index: usize) -> Result<Chromaticity> {
        match self {
            Estimator::GrayWorld { roi_x } => gray_world(&apply_roi(image, (*roi_x).min(image.width()))?),
            Estimator::Constant => Ok(constant_estimator()),
            Estimator::Model { model, config } => Ok(predict_image(model, image, config, index)?.estimate),
            Estimator::Oracle => Ok(record.gt.dominant()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub path: String,
    pub error_deg: f64,
    pub estimate: [f64; 3],
    pub gt: [f64; 3],
    pub saturation: f64,
    pub saturation_source: SaturationSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub stats: ErrorStats,
}

/// The fixed JSON summary written next to the per-image report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median_deg: f64,
    pub mean_deg: f64,
    pub trimean_deg: f64,
    pub best25_deg: f64,
    pub worst25_deg: f64,
    pub count: usize,
}

impl From<ErrorStats> for Summary {
    fn from(s: ErrorStats) -> Self {
        Self {
            median_deg: s.median,
            mean_deg: s.mean,
            trimean_deg: s.trimean,
            best25_deg: s.best25_mean,
            worst25_deg: s.worst25_mean,
            count: s.count,
        }
    }
}

/// Scores `estimator` on every manifest record against its dominant ground
/// truth. `load` supplies each record's image; failures name the path.
pub fn evaluate<F>(manifest: &DatasetManifest, mut load: F, estimator: &Estimator) -> Result<Evaluation>
where
    F: FnMut(&ManifestRecord) -> Result<LinearImage>,
{
    let mut rows = Vec::with_capacity(manifest.len());
    for (i, record) in manifest.records.iter().enumerate() {
        let row = (|| {
            let mut image = load(record)?;
            let (saturation, source) = match image.saturation {
                Some(s) if saturation_for_iso(record.iso).ok() == Some(s) => (s, SaturationSource::IsoTable),
                Some(s) => (s, SaturationSource::ImageMax),
                None => resolve_saturation(&image, Some(record.iso)),
            };
            image.saturation = Some(saturation);
            let est = estimator.estimate(&image, record, i)?;
            let gt = record.gt.dominant();
            Ok(EvalRow {
                path: record.image_path.clone(),
                error_deg: reproduction_error(&gt, &est)?,
                estimate: est.canonical().to_array(),
                gt: gt.canonical().to_array(),
                saturation,
                saturation_source: source,
            })
        })()
        .map_err(|e: Error| e.at(&record.image_path))?;
        rows.push(row);
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.error_deg).collect();
    let stats = aggregate(&errors)?;
    Ok(Evaluation { rows, stats })
}

pub const REPORT_HEADER: [&str; 10] = [
    "path",
    "error_deg",
    "est_r",
    "est_g",
    "est_b",
    "gt_r",
    "gt_g",
    "gt_b",
    "saturation",
    "saturation_source",
];

/// Per-image CSV. Floats are written in shortest round-trip form, so the
/// errors re-aggregate to the summary exactly.
pub fn write_report_csv(rows: &[EvalRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        let mut rec = vec![r.path.clone(), r.error_deg.to_string()];
        rec.extend(r.estimate.iter().chain(&r.gt).map(f64::to_string));
        rec.push(r.saturation.to_string());
        rec.push(r.saturation_source.as_str().to_string());
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))
}

/// Error column of a report written by [`write_report_csv`].
pub fn read_report_errors(input: impl std::io::Read) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(input);
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            rec.get(1).and_then(|v| v.parse().ok()).ok_or(Error::Parse {
                line: i as u64 + 2,
                message: "bad error_deg".into(),
            })
        })
        .collect()
}
