//! `mdgc preprocess`: crop dark borders, resize to a square, and re-emit the
//! corpus with its manifest.

use std::path::Path;

use mdgc_core::dataset::{load_manifest, render_manifest};
use mdgc_core::image::{load_ppm, write_ppm};
use mdgc_core::transform::{crop_black_border, resize_bilinear};
use mdgc_core::{Error, Result};

use crate::fsio::{atomic_write, ensure_dir};

pub fn run(input: &Path, out: &Path, size: usize, threshold: u8) -> Result<()> {
    if size == 0 {
        return Err(Error::InvalidArgument("--size must be >= 1".into()));
    }
    let manifest_path = input.join("manifest.csv");
    if !manifest_path.is_file() {
        return Err(Error::Manifest(format!(
            "{}: no manifest records (manifest.csv not found)",
            input.display()
        )));
    }
    let records = load_manifest(&manifest_path)?;
    if records.is_empty() {
        return Err(Error::Manifest(format!(
            "{}: no manifest records",
            manifest_path.display()
        )));
    }

    ensure_dir(out)?;
    for record in &records {
        let src = input.join(&record.path);
        let image = load_ppm(&src)?;
        let cropped = crop_black_border(&image, threshold);
        let resized = resize_bilinear(&cropped, size, size)?;
        let dst = out.join(&record.path);
        if let Some(parent) = dst.parent() {
            ensure_dir(parent)?;
        }
        atomic_write(&dst, &write_ppm(&resized))?;
    }
    atomic_write(&out.join("manifest.csv"), render_manifest(&records)?.as_bytes())?;
    println!(
        "processed {} images to {}x{} in {}",
        records.len(),
        size,
        size,
        out.display()
    );
    Ok(())
}
