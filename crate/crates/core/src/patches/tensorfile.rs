//! `.ccpt` layout, all little-endian:
//!
//! ```text
//! "CCPT" | version: u32 | count: u64 | count x (64*64*3 f32 data, 9 f32 target)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{PatchTensor, PATCH_LEN};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"CCPT";
pub const TENSOR_VERSION: u32 = 1;

pub fn write_tensors(mut w: impl Write, patches: &[PatchTensor]) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&(patches.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity((PATCH_LEN + 9) * 4);
    for p in patches {
        assert_eq!(p.data.len(), PATCH_LEN, "patch tensor size");
        buf.clear();
        for v in p.data.iter().chain(&p.target) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::TruncatedFile,
        _ => Error::io("<tensor file>", e),
    })
}

pub fn read_tensors(mut r: impl Read) -> Result<Vec<PatchTensor>> {
    let mut head = [0u8; 16];
    read_exact_or_truncated(&mut r, &mut head[..4])?;
    if &head[..4] != TENSOR_MAGIC {
        return Err(Error::MagicMismatch { expected: "CCPT" });
    }
    read_exact_or_truncated(&mut r, &mut head[4..])?;
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; (PATCH_LEN + 9) * 4];
    // bounded so a corrupt count cannot trigger a huge allocation
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        read_exact_or_truncated(&mut r, &mut buf)?;
        let mut vals = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let data: Vec<f32> = vals.by_ref().take(PATCH_LEN).collect();
        let mut target = [0f32; 9];
        target.iter_mut().zip(vals).for_each(|(t, v)| *t = v);
        out.push(PatchTensor {
            data,
            target,
            origin: None,
        });
    }
    Ok(out)
}

pub fn write_tensor_file(path: impl AsRef<Path>, patches: &[PatchTensor]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensors(BufWriter::new(file), patches).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Vec<PatchTensor>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensors(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        e => e,
    })
}
