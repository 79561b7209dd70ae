//! Dataset forensics: chromaticity-plane scatter, per-channel maxima
//! histograms and saturation-level clustering.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imageio::{DatasetManifest, LinearImage};
use crate::metrics::Chromaticity;

/// A point on the (R/G, B/G) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChromaticityPoint {
    pub rg: f64,
    pub bg: f64,
}

pub fn chromaticity_point(c: &Chromaticity) -> Result<ChromaticityPoint> {
    if !(c.g > 0.0) {
        return Err(Error::ZeroGreen { path: None });
    }
    Ok(ChromaticityPoint {
        rg: c.r / c.g,
        bg: c.b / c.g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Left,
    Right,
    Dominant,
}

impl std::str::FromStr for Which {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "left" => Ok(Which::Left),
            "right" => Ok(Which::Right),
            "dominant" => Ok(Which::Dominant),
            _ => Err(format!("expected left, right or dominant, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub path: String,
    pub rg: f64,
    pub bg: f64,
}

pub fn scatter_export(manifest: &DatasetManifest, which: Which) -> Result<Vec<ScatterRow>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let c = match which {
                Which::Left => r.gt.left,
                Which::Right => r.gt.right,
                Which::Dominant => r.gt.dominant(),
            };
            let p = chromaticity_point(&c).map_err(|_| Error::ZeroGreen {
                path: Some(r.image_path.clone()),
            })?;
            Ok(ScatterRow {
                path: r.image_path.clone(),
                rg: p.rg,
                bg: p.bg,
            })
        })
        .collect()
}

/// Per-image, per-channel maxima, keyed by bin lower edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxHistogram {
    pub bin_width: f64,
    pub bins: BTreeMap<i64, u64>,
    pub maxima: Vec<f64>,
}

impl MaxHistogram {
    pub fn new(bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) || !bin_width.is_finite() {
            return Err(Error::InvalidTolerance(bin_width));
        }
        Ok(Self {
            bin_width,
            bins: BTreeMap::new(),
            maxima: Vec::new(),
        })
    }

    pub fn add_image(&mut self, image: &LinearImage) {
        let mut max = [0.0f32; 3];
        for px in image.data().chunks_exact(3) {
            for c in 0..3 {
                max[c] = max[c].max(px[c]);
            }
        }
        for m in max {
            let m = f64::from(m);
            let bin = (m / self.bin_width).floor() as i64;
            *self.bins.entry(bin).or_default() += 1;
            self.maxima.push(m);
        }
    }

    pub fn total(&self) -> u64 {
        self.bins.values().sum()
    }

    /// `(bin_lo, count)` pairs in ascending order.
    pub fn rows(&self) -> Vec<(f64, u64)> {
        self.bins
            .iter()
            .map(|(&b, &n)| (b as f64 * self.bin_width, n))
            .collect()
    }
}

pub fn max_histogram<'a>(images: impl IntoIterator<Item = &'a LinearImage>, bin_width: f64) -> Result<MaxHistogram> {
    let mut hist = MaxHistogram::new(bin_width)?;
    for img in images {
        hist.add_image(img);
    }
    if hist.maxima.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cluster {
    pub center: f64,
    pub count: usize,
}

/// Single-linkage grouping over sorted values: a value joins the current
/// cluster when it lies within `tolerance` of that cluster's running mean.
pub fn saturation_clusters(maxima: &[f64], tolerance: f64) -> Result<Vec<Cluster>> {
    if maxima.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(tolerance > 0.0) {
        return Err(Error::InvalidTolerance(tolerance));
    }
    let mut sorted = maxima.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    for v in sorted {
        match clusters.last_mut() {
            Some((sum, n)) if (v - *sum / *n as f64).abs() <= tolerance => {
                *sum += v;
                *n += 1;
            }
            _ => clusters.push((v, 1)),
        }
    }
    Ok(clusters
        .into_iter()
        .map(|(sum, n)| Cluster {
            center: sum / n as f64,
            count: n,
        })
        .collect())
}

pub fn write_scatter_csv(rows: &[ScatterRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "rg", "bg"])?;
    for r in rows {
        w.write_record([r.path.clone(), r.rg.to_string(), r.bg.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<scatter>", e))
}

pub fn write_histogram_csv(hist: &MaxHistogram, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_lo", "count"])?;
    for (lo, n) in hist.rows() {
        w.write_record([lo.to_string(), n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<histogram>", e))
}

pub fn write_clusters_csv(clusters: &[Cluster], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["center", "count"])?;
    for c in clusters {
        w.write_record([c.center.to_string(), c.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<clusters>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::read_manifest;
    use proptest::prelude::*;

    #[test]
    fn chromaticity_plane_coordinates() {
        let p = chromaticity_point(&Chromaticity::new(0.17, 0.40, 0.27).unwrap()).unwrap();
        assert!((p.rg - 0.425).abs() < 1e-15);
        assert!((p.bg - 0.675).abs() < 1e-15);
        let p = chromaticity_point(&Chromaticity::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(p, ChromaticityPoint { rg: 1.0, bg: 1.0 });
        assert!(matches!(
            chromaticity_point(&Chromaticity::new(0.2, 0.0, 0.3).unwrap()),
            Err(Error::ZeroGreen { .. })
        ));
    }

    const MANIFEST: &str = "path,lr,lg,lb,rr,rg,rb,dominant,iso\n\
        a.ppm,0.2,0.5,0.3,0.21,0.5,0.29,left,160\n\
        b.ppm,0.1,0.4,0.5,0.3,0.6,0.1,right,100\n\
        c.ppm,0.3,0.3,0.4,0.2,0.4,0.4,left,200\n";

    #[test]
    fn scatter_rows_follow_manifest_order() {
        let m = read_manifest(MANIFEST.as_bytes()).unwrap();
        let rows = scatter_export(&m, Which::Dominant).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].path, "b.ppm");
        assert!((rows[1].rg - 0.5).abs() < 1e-15);
        let left = scatter_export(&m, Which::Left).unwrap();
        assert!((left[1].rg - 0.25).abs() < 1e-15);

        let mut buf = Vec::new();
        write_scatter_csv(
            &scatter_export(&DatasetManifest::default(), Which::Left).unwrap(),
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "path,rg,bg\n");
    }

    #[test]
    fn scatter_zero_green_names_path() {
        let mut m = read_manifest(MANIFEST.as_bytes()).unwrap();
        m.records[2].gt.left = Chromaticity::new(0.3, 0.0, 0.4).unwrap();
        match scatter_export(&m, Which::Left) {
            Err(Error::ZeroGreen { path }) => assert_eq!(path.as_deref(), Some("c.ppm")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn histogram_of_table_levels() {
        let img = LinearImage::new(2, 1, vec![12652., 100., 13584., 5., 12652., 0.]).unwrap();
        let h = max_histogram([&img], 100.0).unwrap();
        // brute-force: maxima are (12652, 12652, 13584)
        let expected: BTreeMap<i64, u64> = [(126, 2), (135, 1)].into_iter().collect();
        assert_eq!(h.bins, expected);
        assert_eq!(h.rows(), vec![(12600.0, 2), (13500.0, 1)]);

        let twice = max_histogram([&img, &img], 100.0).unwrap();
        assert_eq!(twice.rows(), vec![(12600.0, 4), (13500.0, 2)]);

        let zero = LinearImage::filled(3, 3, [0.0; 3]).unwrap();
        assert_eq!(max_histogram([&zero], 100.0).unwrap().maxima, vec![0.0; 3]);
        assert!(matches!(max_histogram([], 100.0), Err(Error::EmptyInput)));
    }

    #[test]
    fn clusters_of_table_levels() {
        let c = saturation_clusters(&[15306., 12650., 13584., 12654., 15306.], 50.0).unwrap();
        assert_eq!(
            c,
            vec![
                Cluster {
                    center: 12652.0,
                    count: 2
                },
                Cluster {
                    center: 13584.0,
                    count: 1
                },
                Cluster {
                    center: 15306.0,
                    count: 2
                },
            ]
        );
        assert_eq!(saturation_clusters(&[7.0; 5], 1.0).unwrap().len(), 1);
        assert_eq!(saturation_clusters(&[1.0, 2.0, 3.0], 1e-9).unwrap().len(), 3);
        assert!(matches!(saturation_clusters(&[], 1.0), Err(Error::EmptyInput)));
    }

    proptest! {
        #[test]
        fn cluster_counts_and_centers(v in prop::collection::vec(0.0f64..20000.0, 1..200), tol in 1.0f64..500.0) {
            let clusters = saturation_clusters(&v, tol).unwrap();
            prop_assert_eq!(clusters.iter().map(|c| c.count).sum::<usize>(), v.len());
            // rebuild membership by walking the sorted input
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let mut i = 0;
            for c in &clusters {
                let members = &sorted[i..i + c.count];
                prop_assert!(c.center >= members[0] - 1e-9 && c.center <= members[c.count - 1] + 1e-9);
                i += c.count;
            }
        }

        #[test]
        fn histogram_mass(n in 1usize..6, seed in 0u32..1000) {
            let imgs: Vec<LinearImage> = (0..n)
                .map(|k| LinearImage::filled(2, 2, [(seed + k as u32) as f32, 1.0, 2.0]).unwrap())
                .collect();
            prop_assert_eq!(max_histogram(&imgs, 100.0).unwrap().total(), 3 * n as u64);
        }
    }
}
