use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cerberus::imageio::{read_ppm16, ManifestRecord};
use cerberus::LinearImage;
use tempfile::NamedTempFile;

/// Writes through a temporary file in the target directory, then renames it
/// into place so readers never see a partial file.
pub fn write_atomic<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp =
        NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        f(&mut w)?;
        w.flush().with_context(|| format!("writing {}", path.display()))?;
    }
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn image_path(images: &Path, record: &ManifestRecord) -> PathBuf {
    images.join(&record.image_path)
}

/// Loads a manifest image; the ISO comes from the manifest.
pub fn load_image(images: &Path, record: &ManifestRecord) -> cerberus::Result<LinearImage> {
    let mut image = read_ppm16(image_path(images, record))?;
    image.iso = Some(record.iso);
    Ok(image)
}
