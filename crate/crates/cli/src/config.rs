//! Run-configuration files: a JSON object naming the model, the training
//! manifest, and the hyperparameters for one training run.
//!
//! Validation is exhaustive: every schema violation in the file is collected
//! and reported in a single error, so a bad config is fixed in one pass
//! rather than one field at a time.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mdgc_core::transform::AugmentPolicy;
use mdgc_core::zoo::{self, PRESETS};
use mdgc_core::{model::ArchitectureConfig, Error, Result};
use serde_json::Value;

pub const SCHEMA_VERSION: u64 = 1;

/// A fully validated training run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Preset name (see `zoo::PRESETS`) or path to an architecture JSON file.
    pub model: String,
    /// Manifest of training images.
    pub manifest: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    /// Train fraction the manifest was split with; recorded as provenance
    /// in logs and reports.
    pub train_ratio: f64,
    pub augment: AugmentPolicy,
}

const KNOWN_KEYS: [&str; 9] = [
    "schema_version",
    "model",
    "manifest",
    "epochs",
    "batch_size",
    "seed",
    "lr",
    "train_ratio",
    "augment",
];

struct Check<'a> {
    object: &'a serde_json::Map<String, Value>,
    violations: Vec<String>,
}

impl<'a> Check<'a> {
    fn fail(&mut self, message: String) {
        self.violations.push(message);
    }

    /// Non-negative integer field; records a violation when absent (unless a
    /// default is supplied) or not an unsigned integer.
    fn u64_field(&mut self, key: &str, default: Option<u64>) -> Option<u64> {
        match self.object.get(key) {
            None => match default {
                Some(v) => Some(v),
                None => {
                    self.fail(format!("{key}: required field is missing"));
                    None
                }
            },
            Some(value) => match value.as_u64() {
                Some(v) => Some(v),
                None => {
                    self.fail(format!("{key}: expected a non-negative integer, got {value}"));
                    None
                }
            },
        }
    }

    fn f64_field(&mut self, key: &str, default: Option<f64>) -> Option<f64> {
        match self.object.get(key) {
            None => match default {
                Some(v) => Some(v),
                None => {
                    self.fail(format!("{key}: required field is missing"));
                    None
                }
            },
            Some(value) => match value.as_f64() {
                Some(v) => Some(v),
                None => {
                    self.fail(format!("{key}: expected a number, got {value}"));
                    None
                }
            },
        }
    }

    fn string_field(&mut self, key: &str) -> Option<&'a str> {
        match self.object.get(key) {
            None => {
                self.fail(format!("{key}: required field is missing"));
                None
            }
            Some(Value::String(s)) if !s.is_empty() => Some(s),
            Some(Value::String(_)) => {
                self.fail(format!("{key}: must not be empty"));
                None
            }
            Some(other) => {
                self.fail(format!("{key}: expected a string, got {other}"));
                None
            }
        }
    }
}

/// Parses and validates config JSON. All violations are reported together.
pub fn parse(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::InvalidArgument(format!("config is not valid JSON: {e}")))?;
    let object = match value.as_object() {
        Some(o) => o,
        None => {
            return Err(Error::InvalidArgument(
                "config must be a JSON object".into(),
            ))
        }
    };
    let mut check = Check {
        object,
        violations: Vec::new(),
    };

    for key in object.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            check.fail(format!("{key}: unknown field"));
        }
    }

    match check.u64_field("schema_version", None) {
        Some(SCHEMA_VERSION) | None => {}
        Some(other) => check.fail(format!(
            "schema_version: expected {SCHEMA_VERSION}, got {other}"
        )),
    }

    let model = check.string_field("model").map(str::to_owned);
    if let Some(model) = &model {
        if !PRESETS.contains(&model.as_str()) && !base_dir.join(model).is_file() {
            check.fail(format!(
                "model: {model:?} is neither a preset ({}) nor an existing architecture file",
                PRESETS.join(", ")
            ));
        }
    }

    let manifest = check.string_field("manifest").map(|s| base_dir.join(s));
    if let Some(path) = &manifest {
        if !path.is_file() {
            check.fail(format!("manifest: file {} does not exist", path.display()));
        }
    }

    if let Some(0) = check.u64_field("epochs", None) {
        check.fail("epochs: must be >= 1".into());
    }
    if let Some(0) = check.u64_field("batch_size", Some(mdgc_core::train::DEFAULT_BATCH_SIZE as u64))
    {
        check.fail("batch_size: must be >= 1".into());
    }
    check.u64_field("seed", None);
    if let Some(lr) = check.f64_field("lr", Some(mdgc_core::train::DEFAULT_LEARNING_RATE)) {
        if !(lr.is_finite() && lr > 0.0) {
            check.fail(format!("lr: must be finite and positive, got {lr}"));
        }
    }
    if let Some(ratio) = check.f64_field("train_ratio", None) {
        if !(ratio > 0.0 && ratio < 1.0) {
            check.fail(format!(
                "train_ratio: must be strictly between 0 and 1, got {ratio}"
            ));
        }
    }

    let augment = match object.get("augment") {
        None => Some(AugmentPolicy::default()),
        Some(value) => match serde_json::from_value::<AugmentPolicy>(value.clone()) {
            Ok(policy) => match policy.validate() {
                Ok(()) => Some(policy),
                Err(e) => {
                    check.fail(format!("augment: {e}"));
                    None
                }
            },
            Err(e) => {
                check.fail(format!("augment: {e}"));
                None
            }
        },
    };

    let mut violations = check.violations;
    if !violations.is_empty() {
        violations.sort();
        let mut message = format!("config has {} violation(s):", violations.len());
        for v in &violations {
            let _ = write!(message, "\n  - {v}");
        }
        return Err(Error::InvalidArgument(message));
    }

    // All checks passed, so every extractor above returned Some.
    Ok(RunConfig {
        model: model.expect("validated"),
        manifest: manifest.expect("validated"),
        epochs: object["epochs"].as_u64().expect("validated") as usize,
        batch_size: object
            .get("batch_size")
            .map_or(mdgc_core::train::DEFAULT_BATCH_SIZE, |v| {
                v.as_u64().expect("validated") as usize
            }),
        seed: object["seed"].as_u64().expect("validated"),
        lr: object
            .get("lr")
            .map_or(mdgc_core::train::DEFAULT_LEARNING_RATE, |v| {
                v.as_f64().expect("validated")
            }),
        train_ratio: object["train_ratio"].as_f64().expect("validated"),
        augment: augment.expect("validated"),
    })
}

/// Loads and validates a config file. Relative paths inside the file are
/// resolved against the file's own directory.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    parse(&text, base_dir.unwrap_or_else(|| Path::new(".")))
}

/// Resolves the config's model reference: a preset name builds that preset,
/// anything else is read as an architecture JSON file.
pub fn resolve_architecture(model: &str, base_dir: &Path) -> Result<ArchitectureConfig> {
    if PRESETS.contains(&model) {
        return zoo::preset(model);
    }
    let path = base_dir.join(model);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let config: ArchitectureConfig = serde_json::from_str(&text).map_err(|e| {
        Error::InvalidArchitecture(format!("{}: not a valid architecture file: {e}", path.display()))
    })?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(name: &str, content: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("cfg-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    fn valid_json(manifest: &Path) -> String {
        format!(
            r#"{{"schema_version": 1, "model": "cnn6-tiny", "manifest": {:?},
                "epochs": 3, "seed": 7, "train_ratio": 0.8}}"#,
            manifest.display().to_string()
        )
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let manifest = write_temp("m.csv", "path,label\n");
        let cfg = parse(&valid_json(&manifest), Path::new(".")).unwrap();
        assert_eq!(cfg.model, "cnn6-tiny");
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train_ratio, 0.8);
        assert_eq!(cfg.augment, AugmentPolicy::default());
    }

    #[test]
    fn all_violations_come_back_at_once() {
        let err = parse(
            r#"{"schema_version": 9, "model": "", "epochs": 0,
                "batch_size": 0, "lr": -2.0, "train_ratio": 1.5,
                "seed": -4, "bogus": true}"#,
            Path::new("."),
        )
        .unwrap_err();
        let message = err.to_string();
        for needle in [
            "schema_version: expected 1, got 9",
            "model: must not be empty",
            "manifest: required field is missing",
            "epochs: must be >= 1",
            "batch_size: must be >= 1",
            "lr: must be finite and positive",
            "train_ratio: must be strictly between 0 and 1",
            "seed: expected a non-negative integer",
            "bogus: unknown field",
        ] {
            assert!(message.contains(needle), "missing {needle:?} in:\n{message}");
        }
        assert!(message.contains("9 violation(s)"), "{message}");
    }

    #[test]
    fn unknown_model_and_missing_manifest_are_violations() {
        let err = parse(
            r#"{"schema_version": 1, "model": "cnn7", "manifest": "nope.csv",
                "epochs": 1, "seed": 0, "train_ratio": 0.5}"#,
            Path::new("/definitely/not/here"),
        )
        .unwrap_err();
        let message = err.to_string();
        assert!(message.contains("neither a preset"), "{message}");
        assert!(message.contains("does not exist"), "{message}");
    }

    #[test]
    fn augment_policy_is_validated() {
        let manifest = write_temp("m2.csv", "path,label\n");
        let json = format!(
            r#"{{"schema_version": 1, "model": "cnn6-tiny", "manifest": {:?},
                "epochs": 1, "seed": 0, "train_ratio": 0.8,
                "augment": {{"hflip_prob": 1.5}}}}"#,
            manifest.display().to_string()
        );
        let err = parse(&json, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("hflip_prob"), "{err}");
    }

    #[test]
    fn non_json_input_is_one_clear_error() {
        let err = parse("not json", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("not valid JSON"), "{err}");
        let err = parse("[1, 2]", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("must be a JSON object"), "{err}");
    }

    #[test]
    fn architecture_files_resolve_relative_to_base_dir() {
        let arch = zoo::preset("cnn6-tiny").unwrap();
        let path = write_temp("arch.json", &serde_json::to_string(&arch).unwrap());
        let resolved =
            resolve_architecture(path.file_name().unwrap().to_str().unwrap(), path.parent().unwrap())
                .unwrap();
        assert_eq!(resolved, arch);
        assert_eq!(resolve_architecture("cnn6-tiny", Path::new(".")).unwrap(), arch);
        assert!(resolve_architecture("missing.json", Path::new(".")).is_err());
    }
}
