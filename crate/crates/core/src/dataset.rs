//! Labeled image manifests, class balancing, and train/test splitting.
//!
//! A manifest is a two-column CSV (`path,label`) with LF line endings and
//! the literal label names. Splitting is deterministic: one PRNG stream
//! seeds per-class Fisher-Yates shuffles, classes processed in label order,
//! and the train share of each class is `ceil(n * ratio)`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Classification target. The disease class is the positive one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Healthy,
    MacularDegeneration,
}

pub const MANIFEST_HEADER: &str = "path,label";

impl Label {
    pub const COUNT: usize = 2;

    pub fn all() -> [Label; 2] {
        [Label::Healthy, Label::MacularDegeneration]
    }

    pub fn index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::MacularDegeneration => 1,
        }
    }

    pub fn from_index(index: usize) -> Result<Label> {
        match index {
            0 => Ok(Label::Healthy),
            1 => Ok(Label::MacularDegeneration),
            other => Err(Error::InvalidArgument(format!(
                "class index {other} out of range; expected 0 or 1"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::MacularDegeneration => "macular_degeneration",
        }
    }

    pub fn parse(text: &str) -> Option<Label> {
        match text {
            "healthy" => Some(Label::Healthy),
            "macular_degeneration" => Some(Label::MacularDegeneration),
            _ => None,
        }
    }
}

/// One manifest row: an image path (usually relative to the manifest) and
/// its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub label: Label,
}

/// Parses manifest CSV text. Errors carry 1-based line numbers.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Manifest(format!(
                "line 1: expected header {MANIFEST_HEADER:?}, got {header:?}"
            )))
        }
        None => return Err(Error::Manifest("empty manifest".into())),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            return Err(Error::Manifest(format!("line {lineno}: empty line")));
        }
        let mut parts = line.split(',');
        let (path, label) = match (parts.next(), parts.next(), parts.next()) {
            (Some(p), Some(l), None) => (p, l),
            _ => {
                return Err(Error::Manifest(format!(
                    "line {lineno}: expected exactly two comma-separated columns"
                )))
            }
        };
        if path.is_empty() {
            return Err(Error::Manifest(format!("line {lineno}: empty path")));
        }
        let label = Label::parse(label).ok_or_else(|| {
            Error::Manifest(format!(
                "line {lineno}: unknown label {label:?}; expected healthy or macular_degeneration"
            ))
        })?;
        records.push(ManifestRecord {
            path: PathBuf::from(path),
            label,
        });
    }
    Ok(records)
}

/// Renders manifest CSV text (header plus one LF-terminated row per record).
pub fn render_manifest(records: &[ManifestRecord]) -> Result<String> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for record in records {
        let path = record.path.to_str().ok_or_else(|| {
            Error::Manifest(format!("path {:?} is not valid UTF-8", record.path))
        })?;
        if path.contains(',') || path.contains('\n') {
            return Err(Error::Manifest(format!(
                "path {path:?} contains a comma or newline and cannot be written"
            )));
        }
        out.push_str(path);
        out.push(',');
        out.push_str(record.label.as_str());
        out.push('\n');
    }
    Ok(out)
}

/// Reads and parses a manifest file.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text).map_err(|e| match e {
        Error::Manifest(message) => Error::Manifest(format!("{}: {message}", path.display())),
        other => other,
    })
}

/// Per-class record counts, indexed by label.
pub fn class_counts(records: &[ManifestRecord]) -> [usize; Label::COUNT] {
    let mut counts = [0; Label::COUNT];
    for r in records {
        counts[r.label.index()] += 1;
    }
    counts
}

/// Downsamples the majority class to the minority's size. The records to
/// keep are chosen by shuffling the majority class's positions and keeping
/// the first `minority` of them; the survivors stay in their original
/// manifest order, interleaved exactly as before. Balanced input comes back
/// untouched with no PRNG draws.
pub fn balance_downsample(records: &[ManifestRecord], rng: &mut Rng) -> Vec<ManifestRecord> {
    let counts = class_counts(records);
    if counts[0] == counts[1] {
        return records.to_vec();
    }
    let (majority, keep) = if counts[0] > counts[1] {
        (Label::Healthy, counts[1])
    } else {
        (Label::MacularDegeneration, counts[0])
    };
    let mut positions: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label == majority)
        .map(|(i, _)| i)
        .collect();
    rng.shuffle(&mut positions);
    positions.truncate(keep);
    positions.sort_unstable();
    let mut next_kept = positions.into_iter().peekable();
    records
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            if r.label != majority {
                return true;
            }
            if next_kept.peek() == Some(i) {
                next_kept.next();
                true
            } else {
                false
            }
        })
        .map(|(_, r)| r.clone())
        .collect()
}

/// Stratified train/test split. Each class is shuffled independently off
/// one PRNG stream (classes in label order), the first `ceil(n * ratio)`
/// of each go to train, and both outputs keep that shuffled order with
/// class blocks concatenated.
pub fn stratified_split(
    records: &[ManifestRecord],
    train_ratio: f64,
    seed: u64,
) -> Result<(Vec<ManifestRecord>, Vec<ManifestRecord>)> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train ratio must be strictly between 0 and 1, got {train_ratio}"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in Label::all() {
        let mut positions: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        if positions.len() < 2 {
            return Err(Error::Manifest(format!(
                "class {:?} has {} records; a stratified split needs at least 2 per class",
                label.as_str(),
                positions.len()
            )));
        }
        rng.shuffle(&mut positions);
        let take = ((positions.len() as f64) * train_ratio).ceil() as usize;
        for (k, &pos) in positions.iter().enumerate() {
            let target = if k < take { &mut train } else { &mut test };
            target.push(records[pos].clone());
        }
    }
    Ok((train, test))
}
