//! `mdgc eval`: score a checkpoint against a manifest, print the metrics
//! table, and write the JSON report.

use std::path::Path;

use mdgc_core::dataset::load_manifest;
use mdgc_core::metrics::{build_report, render_table, SplitInfo};
use mdgc_core::train::evaluate;
use mdgc_core::{Error, Result};

use crate::checkpoint;
use crate::fsio::atomic_write;

pub fn run(
    ckpt: &Path,
    split: &Path,
    report: &Path,
    train_ratio: f64,
    train_seed: u64,
) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let records = load_manifest(split)?;
    let root = split
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));

    let cm = evaluate(&model, &records, root)?;
    let info = SplitInfo {
        train_ratio,
        seed: train_seed,
    };
    let full = build_report(&model.config().name, info, &cm);

    print!("{}", render_table(&full));
    let mut json = serde_json::to_string_pretty(&full)
        .map_err(|e| Error::InvalidArgument(format!("report not serializable: {e}")))?;
    json.push('\n');
    atomic_write(report, json.as_bytes())?;
    println!("wrote report {}", report.display());
    Ok(())
}
