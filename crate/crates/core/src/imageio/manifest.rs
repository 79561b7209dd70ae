//! Dataset manifest CSV: `path,lr,lg,lb,rr,rg,rb,dominant,iso`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Chromaticity;

pub const MANIFEST_HEADER: [&str; 9] = ["path", "lr", "lg", "lb", "rr", "rg", "rb", "dominant", "iso"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dominant {
    Left,
    Right,
}

impl Dominant {
    pub fn as_str(self) -> &'static str {
        match self {
            Dominant::Left => "left",
            Dominant::Right => "right",
        }
    }
}

/// Ground truth for one scene: both cube faces plus the selected dominant one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub left: Chromaticity,
    pub right: Chromaticity,
    pub dominant: Dominant,
}

impl GroundTruth {
    pub fn dominant(&self) -> Chromaticity {
        match self.dominant {
            Dominant::Left => self.left,
            Dominant::Right => self.right,
        }
    }

    pub fn scaled(&self, gain: [f64; 3]) -> Self {
        Self {
            left: self.left.scaled(gain),
            right: self.right.scaled(gain),
            dominant: self.dominant,
        }
    }

    /// `(dominant, left, right)`, each rescaled to unit sum.
    pub fn target9(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (k, c) in [self.dominant(), self.left, self.right].into_iter().enumerate() {
            out[3 * k..3 * k + 3].copy_from_slice(&c.canonical().to_array());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_path: String,
    pub gt: GroundTruth,
    pub iso: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(file)
}

pub fn read_manifest(reader: impl Read) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = rdr.records();
    let parse_err = |line: u64, message: String| Error::Parse { line, message };

    let header = rows
        .next()
        .ok_or_else(|| parse_err(1, "missing header row".into()))?
        .map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(parse_err(1, format!("header must be `{}`", MANIFEST_HEADER.join(","))));
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != MANIFEST_HEADER.len() {
            return Err(parse_err(line, format!("expected 9 fields, found {}", row.len())));
        }
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("{}: not a number: {:?}", MANIFEST_HEADER[i], &row[i])))
        };
        let vals = [num(1)?, num(2)?, num(3)?, num(4)?, num(5)?, num(6)?];
        if vals.iter().any(|v| *v <= 0.0) {
            return Err(Error::NonPositiveGroundTruth { line });
        }
        let dominant = match &row[7] {
            "left" => Dominant::Left,
            "right" => Dominant::Right,
            other => {
                return Err(parse_err(
                    line,
                    format!("dominant must be left or right, got {other:?}"),
                ))
            }
        };
        let iso = row[8]
            .parse::<u32>()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| parse_err(line, format!("iso: not a positive integer: {:?}", &row[8])))?;
        let image_path = row[0].to_string();
        if image_path.is_empty() {
            return Err(parse_err(line, "empty path".into()));
        }
        if !seen.insert(image_path.clone()) {
            return Err(Error::DuplicatePath(image_path).at(format!("line {line}")));
        }
        records.push(ManifestRecord {
            image_path,
            gt: GroundTruth {
                left: Chromaticity::new(vals[0], vals[1], vals[2])?,
                right: Chromaticity::new(vals[3], vals[4], vals[5])?,
                dominant,
            },
            iso,
        });
    }
    Ok(DatasetManifest { records })
}

pub fn write_manifest(manifest: &DatasetManifest, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MANIFEST_HEADER)?;
    for r in &manifest.records {
        let (l, rt) = (r.gt.left, r.gt.right);
        w.write_record([
            r.image_path.clone(),
            l.r.to_string(),
            l.g.to_string(),
            l.b.to_string(),
            rt.r.to_string(),
            rt.g.to_string(),
            rt.b.to_string(),
            r.gt.dominant.as_str().to_string(),
            r.iso.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<manifest>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "path,lr,lg,lb,rr,rg,rb,dominant,iso\n";

    #[test]
    fn parses_one_record() {
        let text = format!("{HEADER}a.ppm,0.2,0.5,0.3,0.21,0.5,0.29,left,160\n");
        let m = read_manifest(text.as_bytes()).unwrap();
        assert_eq!(m.len(), 1);
        let r = &m.records[0];
        assert_eq!(r.image_path, "a.ppm");
        assert_eq!(r.gt.dominant, Dominant::Left);
        assert_eq!(r.gt.dominant(), Chromaticity::new(0.2, 0.5, 0.3).unwrap());
        assert_eq!(r.iso, 160);
    }

    #[test]
    fn rejects_bad_dominant_with_line() {
        let text =
            format!("{HEADER}a.ppm,0.2,0.5,0.3,0.21,0.5,0.29,left,160\nb.ppm,0.2,0.5,0.3,0.21,0.5,0.29,center,160\n");
        match read_manifest(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_zero_ground_truth() {
        let text = format!("{HEADER}a.ppm,0.2,0,0.3,0.21,0.5,0.29,left,160\n");
        assert!(matches!(
            read_manifest(text.as_bytes()),
            Err(Error::NonPositiveGroundTruth { line: 2 })
        ));
    }

    #[test]
    fn rejects_wrong_header_and_duplicates() {
        assert!(matches!(
            read_manifest("path,r,g,b\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let row = "a.ppm,0.2,0.5,0.3,0.21,0.5,0.29,left,160\n";
        let text = format!("{HEADER}{row}{row}");
        assert!(matches!(
            read_manifest(text.as_bytes()).unwrap_err().root(),
            Error::DuplicatePath(_)
        ));
    }

    #[test]
    fn header_only_is_empty() {
        assert!(read_manifest(HEADER.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn write_then_read() {
        let text = format!(
            "{HEADER}a.ppm,0.2,0.5,0.3,0.21,0.5,0.29,left,160\nsub/b.ppm,0.1,0.4,0.5,0.125,0.5,0.375,right,6400\n"
        );
        let m = read_manifest(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_manifest(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn target_order_is_dominant_left_right() {
        let gt = GroundTruth {
            left: Chromaticity::new(1.0, 1.0, 2.0).unwrap(),
            right: Chromaticity::new(2.0, 4.0, 2.0).unwrap(),
            dominant: Dominant::Right,
        };
        assert_eq!(gt.target9(), [0.25, 0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.5, 0.25]);
    }
}
