use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cerberus::analysis::{
    saturation_clusters, scatter_export, write_clusters_csv, write_histogram_csv, write_scatter_csv, MaxHistogram,
};
use cerberus::augment::{augment_image, AugmentConfig};
use cerberus::imageio::{
    encode_ppm16, load_manifest, resolve_saturation, write_manifest, DatasetManifest, ManifestRecord,
};
use cerberus::inference::{evaluate, write_report_csv, Estimator, PredictConfig, Summary};
use cerberus::nncore::{load_checkpoint, write_checkpoint, ArchConfig, Model};
use cerberus::patches::{extract_set, read_tensor_file, write_tensors, ExtractConfig};
use cerberus::synth::{synth_dataset, SynthConfig};
use cerberus::train::{select_best, train as train_model, write_history_csv, TrainConfig, TrainedModel};
use cerberus::{stream_rng, Error};

use crate::files::{create_dir, image_path, load_image, write_atomic};
use crate::{AnalyzeArgs, AugmentArgs, EvalArgs, Mode, PatchesArgs, SynthArgs, TrainArgs};

fn manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest(path).with_context(|| format!("reading manifest {}", path.display()))
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let m = manifest(&a.manifest)?;
    let images = match a.images {
        Some(d) => d,
        None => a.manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let scatter = scatter_export(&m, a.which)?;
    let mut hist = MaxHistogram::new(a.bin_width)?;
    for record in &m.records {
        let image = load_image(&images, record).map_err(|e| e.at(&record.image_path))?;
        hist.add_image(&image);
    }
    if hist.maxima.is_empty() {
        bail!(Error::EmptyInput);
    }
    let clusters = saturation_clusters(&hist.maxima, a.cluster_tol)?;
    create_dir(&a.out)?;
    write_atomic(&a.out.join("scatter.csv"), |w| Ok(write_scatter_csv(&scatter, w)?))?;
    write_atomic(&a.out.join("maxhist.csv"), |w| Ok(write_histogram_csv(&hist, w)?))?;
    write_atomic(&a.out.join("clusters.csv"), |w| Ok(write_clusters_csv(&clusters, w)?))?;
    println!("{} images, {} saturation clusters", m.len(), clusters.len());
    Ok(())
}

pub fn patches(a: PatchesArgs) -> Result<()> {
    let m = manifest(&a.manifest)?;
    let config = match a.mode {
        Mode::Train => ExtractConfig {
            count: a.count,
            sides: a.sides,
            roi_x: a.roi_x,
            seed: a.seed,
        },
        Mode::Val => ExtractConfig {
            count: 1,
            sides: vec![a.val_side],
            roi_x: a.roi_x,
            seed: a.seed,
        },
    };
    let got = extract_set(&m, |r| load_image(&a.images, r), &config)?;
    for w in &got.warnings {
        eprintln!("warning: {w}");
    }
    write_atomic(&a.out, |w| Ok(write_tensors(w, &got.patches)?))?;
    println!("{}", got.patches.len());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    if a.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let train_set = read_tensor_file(&a.train).with_context(|| format!("reading {}", a.train.display()))?;
    let val_set = read_tensor_file(&a.val).with_context(|| format!("reading {}", a.val.display()))?;
    let mut candidates: Vec<TrainedModel> = Vec::with_capacity(a.runs);
    for run in 0..a.runs as u64 {
        let seed = a.seed + run;
        let config = TrainConfig {
            batch_size: a.batch,
            drop_worst_frac: a.drop_worst,
            drop_best_frac: a.drop_best,
            l2: a.l2,
            epochs: a.epochs,
            learning_rate: a.lr,
            optimizer: a.optimizer,
            patience: (a.patience > 0).then_some(a.patience),
            seed,
        };
        let model = Model::new(ArchConfig::default(), seed)?;
        let trained =
            train_model(model, &train_set, &val_set, &config).with_context(|| format!("run with seed {seed}"))?;
        match trained.history.get(trained.best_epoch.wrapping_sub(1)) {
            Some(h) => eprintln!(
                "seed {seed}: best epoch {} val median {:.4} deg",
                trained.best_epoch, h.val_median_deg
            ),
            None => eprintln!("seed {seed}: untrained"),
        }
        candidates.push(trained);
    }
    let (index, best) = select_best(candidates, &val_set)?;
    write_atomic(&a.out, |w| Ok(write_checkpoint(&best.model, w)?))?;
    let history = a.history.unwrap_or_else(|| a.out.with_file_name("history.csv"));
    write_atomic(&history, |w| Ok(write_history_csv(&best.history, w)?))?;
    println!("selected seed {}", a.seed + index as u64);
    Ok(())
}

fn parse_estimator(a: &EvalArgs) -> Result<Estimator> {
    Ok(match a.estimator.as_str() {
        "grayworld" => Estimator::GrayWorld { roi_x: a.roi_x },
        "constant" => Estimator::Constant,
        s => match s.strip_prefix("model:") {
            Some(path) => {
                let model = load_checkpoint(path, None).with_context(|| format!("loading model {path}"))?;
                Estimator::Model {
                    model: Box::new(model),
                    config: PredictConfig {
                        k_patches: a.k_patches,
                        side: a.patch_side,
                        roi_x: a.roi_x,
                        seed: a.seed,
                    },
                }
            }
            None => bail!("unknown estimator {s:?}; expected grayworld, constant or model:<path>"),
        },
    })
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let m = manifest(&a.manifest)?;
    let estimator = parse_estimator(&a)?;
    let ev = evaluate(&m, |r| load_image(&a.images, r), &estimator)?;
    let summary = Summary::from(ev.stats);
    let json = serde_json::to_string_pretty(&summary)?;
    create_dir(&a.out)?;
    write_atomic(&a.out.join("report.csv"), |w| Ok(write_report_csv(&ev.rows, w)?))?;
    write_atomic(&a.out.join("summary.json"), |w| {
        writeln!(w, "{json}")?;
        Ok(())
    })?;
    println!("{json}");
    Ok(())
}

/// Hard-links `src` to `dst`, copying when linking is not possible.
fn link_or_copy(src: &Path, dst: &Path) -> Result<()> {
    if dst.exists() {
        fs::remove_file(dst).with_context(|| format!("replacing {}", dst.display()))?;
    }
    if fs::hard_link(src, dst).is_err() {
        fs::copy(src, dst).with_context(|| format!("copying {} to {}", src.display(), dst.display()))?;
    }
    Ok(())
}

fn augmented_name(path: &str, j: usize) -> String {
    let p = Path::new(path);
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let name = format!("{stem}_aug{j:03}.ppm");
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(name).to_string_lossy().into_owned(),
        _ => name,
    }
}

pub fn augment(a: AugmentArgs) -> Result<()> {
    let m = manifest(&a.manifest)?;
    let config = AugmentConfig {
        gain_min: a.gain_min,
        gain_max: a.gain_max,
        max_chroma_shift_deg: a.max_shift_deg,
        saturation_policy: a.sat_policy,
        seed: a.seed,
    };
    config.validate()?;
    create_dir(&a.out)?;
    let mut records = Vec::new();
    let (mut written, mut skipped) = (0usize, 0usize);
    for (i, record) in m.records.iter().enumerate() {
        let dst = a.out.join(&record.image_path);
        if let Some(parent) = dst.parent() {
            create_dir(parent)?;
        }
        link_or_copy(&image_path(&a.images, record), &dst).with_context(|| record.image_path.clone())?;
        records.push(record.clone());
        if a.per_image == 0 {
            continue;
        }
        let mut image = load_image(&a.images, record).map_err(|e| e.at(&record.image_path))?;
        if image.saturation.is_none() {
            image.saturation = Some(resolve_saturation(&image, Some(record.iso)).0);
        }
        let mut rng = stream_rng(a.seed, i as u64);
        let results =
            augment_image(&image, &record.gt, a.per_image, &config, &mut rng).map_err(|e| e.at(&record.image_path))?;
        for (j, aug) in results.into_iter().enumerate() {
            match aug.result {
                Ok((img, gt)) => {
                    let name = augmented_name(&record.image_path, j);
                    let bytes = encode_ppm16(&img).map_err(|e| e.at(&name))?;
                    write_atomic(&a.out.join(&name), |w| Ok(w.write_all(&bytes)?))?;
                    records.push(ManifestRecord {
                        image_path: name,
                        gt,
                        iso: record.iso,
                    });
                    written += 1;
                }
                Err(e) => {
                    eprintln!("skipped {} gain {:?}: {e}", record.image_path, aug.gain.to_array());
                    skipped += 1;
                }
            }
        }
    }
    let out = DatasetManifest { records };
    write_atomic(&a.out.join("manifest.csv"), |w| Ok(write_manifest(&out, w)?))?;
    println!("{written} augmented images written, {skipped} skipped");
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        width: a.width,
        height: a.height,
        seed: a.seed,
        ..Default::default()
    };
    let (images, m) = synth_dataset(&config, a.count)?;
    create_dir(&a.out)?;
    for (image, record) in images.iter().zip(&m.records) {
        let bytes = encode_ppm16(image)?;
        write_atomic(&a.out.join(&record.image_path), |w| Ok(w.write_all(&bytes)?))?;
    }
    write_atomic(&a.out.join("manifest.csv"), |w| Ok(write_manifest(&m, w)?))?;
    println!("{} scenes written", m.len());
    Ok(())
}
