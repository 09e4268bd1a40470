//! Synthetic two-class blob corpus.
//!
//! Each image is a flat gray field with one Gaussian blob: the disease class
//! gets a bright blob, the healthy class a dark one, at a random position.
//! The generator records the blob's ground-truth bounding box so heatmap
//! localization can be scored against it. All drawing is driven by one
//! splitmix64 stream, so a (count, size, seed) triple pins every byte.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mdgc_core::Rng;

pub const BACKGROUND: f64 = 110.0;
pub const AMPLITUDE: f64 = 90.0;

#[derive(Debug, Clone)]
pub struct BlobRecord {
    /// Path relative to the corpus directory, as written to the manifest.
    pub file: PathBuf,
    /// 0 = healthy (dark blob), 1 = disease (bright blob).
    pub label: usize,
    pub center: (usize, usize),
    /// Inclusive (x0, y0, x1, y1) box covering the blob out to 3 sigma.
    pub bbox: (usize, usize, usize, usize),
}

/// Generates `count` images of `size` x `size` pixels under `dir`, writes a
/// `manifest.csv`, and returns the records in manifest order. Labels
/// alternate healthy/disease so the corpus is balanced.
pub fn generate_blob_corpus(
    dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
) -> io::Result<Vec<BlobRecord>> {
    fs::create_dir_all(dir)?;
    let mut rng = Rng::new(seed);
    let sigma = size as f64 * 3.0 / 32.0;
    let reach = (3.0 * sigma).ceil() as usize;
    let margin = size / 4;

    let mut records = Vec::with_capacity(count);
    let mut manifest = String::from("path,label\n");
    for i in 0..count {
        let label = i % 2;
        let cx = margin + (rng.next_u64() % (size - 2 * margin) as u64) as usize;
        let cy = margin + (rng.next_u64() % (size - 2 * margin) as u64) as usize;

        let mut pixels = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 - cx as f64;
                let dy = y as f64 - cy as f64;
                let blob = AMPLITUDE * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let signed = if label == 1 { blob } else { -blob };
                let noise = (rng.next_u64() % 13) as f64 - 6.0;
                let value = (BACKGROUND + signed + noise).round().clamp(0.0, 255.0) as u8;
                pixels.extend_from_slice(&[value, value, value]);
            }
        }

        let file = PathBuf::from(format!("img_{i:04}.ppm"));
        fs::write(dir.join(&file), ppm_bytes(size, size, &pixels))?;

        let label_name = if label == 1 {
            "macular_degeneration"
        } else {
            "healthy"
        };
        manifest.push_str(&format!("{},{}\n", file.display(), label_name));

        records.push(BlobRecord {
            file,
            label,
            center: (cx, cy),
            bbox: (
                cx.saturating_sub(reach),
                cy.saturating_sub(reach),
                (cx + reach).min(size - 1),
                (cy + reach).min(size - 1),
            ),
        });
    }
    fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(records)
}

/// Minimal independent P6 encoder, used both by the generator and as a
/// cross-check against the production codec.
pub fn ppm_bytes(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    bytes
}
