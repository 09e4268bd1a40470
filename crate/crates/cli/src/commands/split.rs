//! `mdgc split`: balance the classes by downsampling, then stratify into
//! train.csv and test.csv.
//!
//! One generator seeded by `--seed` drives everything: the balancing shuffle
//! consumes it first, then its next draw seeds the per-class split shuffles.
//! Output manifests carry absolute image paths (resolved against the input
//! manifest's directory), so they work from any output directory.

use std::path::{Path, PathBuf};

use mdgc_core::dataset::{
    balance_downsample, class_counts, load_manifest, render_manifest, stratified_split,
    ManifestRecord,
};
use mdgc_core::{Error, Result, Rng};

use crate::fsio::{atomic_write, ensure_dir};

/// Rewrites each record's path to an absolute path under `root`.
fn absolutize(records: Vec<ManifestRecord>, root: &Path) -> Vec<ManifestRecord> {
    records
        .into_iter()
        .map(|r| {
            let path = if r.path.is_absolute() {
                r.path
            } else {
                root.join(&r.path)
            };
            ManifestRecord { path, ..r }
        })
        .collect()
}

pub fn run(manifest: &Path, ratio: f64, seed: u64, out: &Path) -> Result<()> {
    let records = load_manifest(manifest)?;
    let parent = match manifest.parent() {
        Some(p) if !p.as_os_str().is_empty() => PathBuf::from(p),
        _ => PathBuf::from("."),
    };
    let root = parent.canonicalize().map_err(|e| Error::io(&parent, e))?;
    let records = absolutize(records, &root);

    let mut rng = Rng::new(seed);
    let balanced = balance_downsample(&records, &mut rng);
    let (train, test) = stratified_split(&balanced, ratio, rng.next_u64())?;

    ensure_dir(out)?;
    atomic_write(&out.join("train.csv"), render_manifest(&train)?.as_bytes())?;
    atomic_write(&out.join("test.csv"), render_manifest(&test)?.as_bytes())?;

    let train_counts = class_counts(&train);
    let test_counts = class_counts(&test);
    println!(
        "train: {} records ({} healthy, {} macular_degeneration)",
        train.len(),
        train_counts[0],
        train_counts[1]
    );
    println!(
        "test: {} records ({} healthy, {} macular_degeneration)",
        test.len(),
        test_counts[0],
        test_counts[1]
    );
    Ok(())
}
