//! `mdgc train`: fit a model per a run configuration, write the checkpoint,
//! and optionally a JSON training log.

use std::path::Path;

use mdgc_core::dataset::load_manifest;
use mdgc_core::train::{train, EpochStats, TrainConfig, TrainLog};
use mdgc_core::{model::Model, Result, Rng};
use serde::Serialize;

use crate::fsio::atomic_write;
use crate::{checkpoint, config};

/// Log file schema: run metadata plus the per-epoch statistics.
#[derive(Serialize)]
struct LogFile<'a> {
    model: &'a str,
    epochs_requested: usize,
    batch_size: usize,
    seed: u64,
    lr: f64,
    train_ratio: f64,
    epochs: &'a [EpochStats],
}

fn write_log(path: &Path, cfg: &config::RunConfig, arch_name: &str, log: &TrainLog) -> Result<()> {
    let file = LogFile {
        model: arch_name,
        epochs_requested: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        lr: cfg.lr,
        train_ratio: cfg.train_ratio,
        epochs: &log.epochs,
    };
    let mut text = serde_json::to_string_pretty(&file)
        .map_err(|e| mdgc_core::Error::InvalidArgument(format!("log not serializable: {e}")))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn run(config_path: &Path, out: &Path, log_path: Option<&Path>) -> Result<()> {
    let cfg = config::load(config_path)?;
    let base_dir = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let arch = config::resolve_architecture(&cfg.model, base_dir)?;
    let arch_name = arch.name.clone();

    let records = load_manifest(&cfg.manifest)?;
    let root = cfg
        .manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));

    let mut model = Model::init(arch, &mut Rng::new(cfg.seed))?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        lr: cfg.lr,
        augment: cfg.augment,
    };
    println!(
        "training {} on {} records (batch {}, lr {}, seed {})",
        arch_name,
        records.len(),
        cfg.batch_size,
        cfg.lr,
        cfg.seed
    );
    let log = train(&mut model, &records, root, &train_cfg, |stats| {
        println!(
            "epoch {}/{}: loss {:.4} accuracy {:.3}",
            stats.epoch, cfg.epochs, stats.mean_loss, stats.accuracy
        );
    })?;

    checkpoint::save(out, &model)?;
    println!("wrote checkpoint {}", out.display());
    if let Some(path) = log_path {
        write_log(path, &cfg, &arch_name, &log)?;
        println!("wrote log {}", path.display());
    }
    Ok(())
}
