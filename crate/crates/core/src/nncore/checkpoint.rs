//! `.ccnn` checkpoints, all integers and floats little-endian:
//!
//! ```text
//! "CCNN" | version: u32 | tag_len: u32 | tag (utf-8) | n_tensors: u32
//! n_tensors x ( name_len: u32 | name | ndims: u32 | dims: ndims x u32 | data: f32... )
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::model::{ArchConfig, Model};
use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CCNN";
const VERSION: u32 = 1;

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> std::io::Result<()> {
    let put_u32 = |w: &mut dyn Write, v: u32| w.write_all(&v.to_le_bytes());
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut w, VERSION)?;
    let tag = model.arch().tag();
    put_u32(&mut w, tag.len() as u32)?;
    w.write_all(tag.as_bytes())?;
    let params = model.params();
    put_u32(&mut w, params.len() as u32)?;
    for (info, t) in model.param_info().iter().zip(params) {
        put_u32(&mut w, info.name.len() as u32)?;
        w.write_all(info.name.as_bytes())?;
        put_u32(&mut w, t.shape().len() as u32)?;
        for &d in t.shape() {
            put_u32(&mut w, d as u32)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.inner)
            .take(n as u64)
            .read_to_end(&mut buf)
            .map_err(|e| match e.kind() {
                ErrorKind::UnexpectedEof => Error::TruncatedFile,
                _ => Error::io("<checkpoint>", e),
            })?;
        if buf.len() != n {
            return Err(Error::TruncatedFile);
        }
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?).map_err(|_| Error::InvalidConfig("non-utf8 string in checkpoint".into()))
    }
}

/// Reads a checkpoint. With `expected` set, a differing architecture is an
/// [`Error::ArchMismatch`]; otherwise the architecture comes from the file.
pub fn read_checkpoint(r: impl Read, expected: Option<&ArchConfig>) -> Result<Model> {
    let mut r = Reader { inner: r };
    if r.bytes(4)? != CHECKPOINT_MAGIC {
        return Err(Error::MagicMismatch { expected: "CCNN" });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let tag = r.string()?;
    let arch = match expected {
        Some(a) if a.tag() != tag => {
            return Err(Error::ArchMismatch {
                expected: a.tag(),
                found: tag,
            })
        }
        Some(a) => a.clone(),
        None => ArchConfig::from_tag(&tag)?,
    };
    let mut model = Model::new(arch, 0)?;
    let n = r.u32()? as usize;
    let info = model.param_info().to_vec();
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|t| t.shape().to_vec()).collect();
    if n != info.len() {
        return Err(Error::ArchMismatch {
            expected: format!("{} tensors", info.len()),
            found: format!("{n} tensors"),
        });
    }
    let mut values = Vec::with_capacity(n);
    for (pi, shape) in info.iter().zip(&shapes) {
        let name = r.string()?;
        let ndims = r.u32()? as usize;
        if ndims > 8 {
            return Err(Error::TruncatedFile);
        }
        let dims = (0..ndims)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if name != pi.name || &dims != shape {
            return Err(Error::ArchMismatch {
                expected: format!("{} {:?}", pi.name, shape),
                found: format!("{name} {dims:?}"),
            });
        }
        let count: usize = dims.iter().product();
        let raw = r.bytes(count * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        values.push(Tensor::new(dims, data)?);
    }
    model.set_params(values)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ArchConfig>) -> Result<Model> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file), expected)
}

impl ArchConfig {
    /// Inverse of [`ArchConfig::tag`].
    pub fn from_tag(tag: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unrecognized architecture tag {tag:?}"));
        let rest = tag.strip_prefix("cerberus-v1;").ok_or_else(bad)?;
        let mut cfg = ArchConfig::default();
        for field in rest.split(';') {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "in" => cfg.input_size = v.parse().map_err(|_| bad())?,
                "gw" => cfg.grayworld = v == "1",
                "conv" => {
                    cfg.conv_widths = if v.is_empty() {
                        vec![]
                    } else {
                        v.split(',')
                            .map(|w| w.parse().map_err(|_| bad()))
                            .collect::<Result<_>>()?
                    }
                }
                "hidden" => {
                    let h: usize = v.parse().map_err(|_| bad())?;
                    cfg.hidden = (h > 0).then_some(h);
                }
                _ => return Err(bad()),
            }
        }
        if cfg.tag() != tag {
            return Err(bad());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(model: &Model) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(model, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Model::new(ArchConfig::default(), 42).unwrap();
        let buf = bytes(&m);
        let back = read_checkpoint(buf.as_slice(), None).unwrap();
        assert_eq!(back, m);
        let back = read_checkpoint(buf.as_slice(), Some(&ArchConfig::default())).unwrap();
        for (a, b) in back.params().iter().zip(m.params()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn wrong_arch_is_rejected() {
        let m = Model::new(ArchConfig::default(), 1).unwrap();
        let other = ArchConfig {
            conv_widths: vec![8, 8],
            ..Default::default()
        };
        assert!(matches!(
            read_checkpoint(bytes(&m).as_slice(), Some(&other)),
            Err(Error::ArchMismatch { .. })
        ));
    }

    #[test]
    fn corrupt_checkpoints() {
        let m = Model::new(ArchConfig::default(), 1).unwrap();
        let buf = bytes(&m);
        assert!(matches!(
            read_checkpoint(&buf[..buf.len() - 7], None),
            Err(Error::TruncatedFile)
        ));
        let mut bad = buf.clone();
        bad[..4].copy_from_slice(b"CCPT");
        assert!(matches!(
            read_checkpoint(bad.as_slice(), None),
            Err(Error::MagicMismatch { .. })
        ));
    }

    #[test]
    fn tags_parse_back() {
        for cfg in [
            ArchConfig::default(),
            ArchConfig {
                input_size: 16,
                grayworld: false,
                conv_widths: vec![],
                hidden: None,
            },
        ] {
            assert_eq!(ArchConfig::from_tag(&cfg.tag()).unwrap(), cfg);
        }
        assert!(ArchConfig::from_tag("lenet").is_err());
    }
}
