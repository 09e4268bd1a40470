//! End-to-end tests that drive the compiled `mdgc` binary through the full
//! pipeline: preprocess, split, train, eval, gradcam, plus every exit-code
//! class.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdgc_core::dataset::parse_manifest;
use mdgc_core::layer::LayerSpec;
use mdgc_core::model::{ArchitectureConfig, LayerEntry};
use mdgc_core::nn::Padding;
use mdgc_testkit::corpus::generate_blob_corpus;

fn mdgc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdgc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn assert_code(output: &Output, code: i32, context: &str) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "{context}: expected exit {code}\nstdout: {}\nstderr: {}",
        stdout_of(output),
        stderr_of(output)
    );
}

/// Fresh per-test scratch directory.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mdgc-cli-{name}-{}", std::process::id()));
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn path_str(path: &Path) -> String {
    path.to_str().expect("utf-8 path").to_owned()
}

/// A small architecture for 32x32 inputs, written as a JSON file.
fn tiny_architecture(dir: &Path) -> PathBuf {
    let config = ArchitectureConfig {
        name: "tiny32".into(),
        input: (3, 32, 32),
        layers: vec![
            LayerEntry {
                name: "conv1".into(),
                spec: LayerSpec::Conv2d {
                    filters: 6,
                    kernel: 3,
                    stride: 1,
                    padding: Padding::Same,
                    bias: true,
                },
            },
            LayerEntry {
                name: "relu1".into(),
                spec: LayerSpec::Relu,
            },
            LayerEntry {
                name: "pool1".into(),
                spec: LayerSpec::Maxpool2d { pool: 2, stride: 2 },
            },
            LayerEntry {
                name: "conv2".into(),
                spec: LayerSpec::Conv2d {
                    filters: 12,
                    kernel: 3,
                    stride: 1,
                    padding: Padding::Same,
                    bias: true,
                },
            },
            LayerEntry {
                name: "relu2".into(),
                spec: LayerSpec::Relu,
            },
            LayerEntry {
                name: "gap".into(),
                spec: LayerSpec::GlobalAvgPool,
            },
            LayerEntry {
                name: "fc".into(),
                spec: LayerSpec::Dense { width: 2 },
            },
        ],
        tap: "conv2".into(),
        classes: 2,
    };
    let path = dir.join("tiny32.json");
    fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    path
}

fn write_config(dir: &Path, manifest: &Path, arch: &Path, epochs: usize, lr: f64) -> PathBuf {
    let config = serde_json::json!({
        "schema_version": 1,
        "model": path_str(arch),
        "manifest": path_str(manifest),
        "epochs": epochs,
        "batch_size": 8,
        "seed": 9,
        "lr": lr,
        "train_ratio": 0.8,
        "augment": {"hflip_prob": 0.5, "vflip_prob": 0.5, "rotate_degrees": 10.0},
    });
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn preprocess_resizes_and_reruns_byte_identically() {
    let dir = scratch("preprocess");
    let corpus = dir.join("corpus");
    generate_blob_corpus(&corpus, 6, 32, 3).unwrap();

    let out1 = dir.join("out1");
    let run1 = mdgc(&[
        "preprocess",
        "--in",
        &path_str(&corpus),
        "--out",
        &path_str(&out1),
        "--size",
        "24",
    ]);
    assert_code(&run1, 0, "first preprocess");

    let manifest = fs::read_to_string(out1.join("manifest.csv")).unwrap();
    let records = parse_manifest(&manifest).unwrap();
    assert_eq!(records.len(), 6);
    for record in &records {
        let image = mdgc_core::image::load_ppm(&out1.join(&record.path)).unwrap();
        assert_eq!((image.width(), image.height()), (24, 24));
    }

    // Processing its own output again must not change a byte.
    let out2 = dir.join("out2");
    let run2 = mdgc(&[
        "preprocess",
        "--in",
        &path_str(&out1),
        "--out",
        &path_str(&out2),
        "--size",
        "24",
    ]);
    assert_code(&run2, 0, "second preprocess");
    for record in &records {
        let a = fs::read(out1.join(&record.path)).unwrap();
        let b = fs::read(out2.join(&record.path)).unwrap();
        assert_eq!(a, b, "{} changed on re-run", record.path.display());
    }
    assert_eq!(
        fs::read(out1.join("manifest.csv")).unwrap(),
        fs::read(out2.join("manifest.csv")).unwrap()
    );
}

#[test]
fn preprocess_of_empty_corpus_names_the_problem() {
    let dir = scratch("preprocess-empty");
    let empty = dir.join("empty");
    fs::create_dir_all(&empty).unwrap();
    let run = mdgc(&[
        "preprocess",
        "--in",
        &path_str(&empty),
        "--out",
        &path_str(&dir.join("out")),
        "--size",
        "24",
    ]);
    assert_code(&run, 3, "empty dir");
    assert!(
        stderr_of(&run).contains("no manifest records"),
        "{}",
        stderr_of(&run)
    );

    // A manifest with zero data rows reports the same condition.
    fs::write(empty.join("manifest.csv"), "path,label\n").unwrap();
    let run = mdgc(&[
        "preprocess",
        "--in",
        &path_str(&empty),
        "--out",
        &path_str(&dir.join("out")),
        "--size",
        "24",
    ]);
    assert_code(&run, 3, "header-only manifest");
    assert!(
        stderr_of(&run).contains("no manifest records"),
        "{}",
        stderr_of(&run)
    );
}

#[test]
fn split_stratifies_deterministically() {
    let dir = scratch("split");
    let corpus = dir.join("corpus");
    generate_blob_corpus(&corpus, 20, 16, 5).unwrap();
    let manifest = corpus.join("manifest.csv");

    let out1 = dir.join("s1");
    let run1 = mdgc(&[
        "split",
        "--manifest",
        &path_str(&manifest),
        "--ratio",
        "0.8",
        "--seed",
        "7",
        "--out",
        &path_str(&out1),
    ]);
    assert_code(&run1, 0, "split");

    let train = parse_manifest(&fs::read_to_string(out1.join("train.csv")).unwrap()).unwrap();
    let test = parse_manifest(&fs::read_to_string(out1.join("test.csv")).unwrap()).unwrap();
    assert_eq!(train.len(), 16, "ceil(10 * 0.8) = 8 per class");
    assert_eq!(test.len(), 4);
    for records in [&train, &test] {
        let counts = mdgc_core::dataset::class_counts(records);
        assert_eq!(counts[0], counts[1], "split must stay balanced");
    }
    let train_paths: std::collections::BTreeSet<_> =
        train.iter().map(|r| r.path.clone()).collect();
    let test_paths: std::collections::BTreeSet<_> = test.iter().map(|r| r.path.clone()).collect();
    assert!(train_paths.is_disjoint(&test_paths));
    assert_eq!(train_paths.len() + test_paths.len(), 20, "exhaustive");
    for path in train_paths.iter().chain(&test_paths) {
        assert!(path.is_absolute(), "split output paths are absolute");
        assert!(path.exists(), "{} missing", path.display());
    }

    // Same seed, second directory: byte-identical manifests.
    let out2 = dir.join("s2");
    let run2 = mdgc(&[
        "split",
        "--manifest",
        &path_str(&manifest),
        "--ratio",
        "0.8",
        "--seed",
        "7",
        "--out",
        &path_str(&out2),
    ]);
    assert_code(&run2, 0, "second split");
    assert_eq!(
        fs::read(out1.join("train.csv")).unwrap(),
        fs::read(out2.join("train.csv")).unwrap()
    );
    assert_eq!(
        fs::read(out1.join("test.csv")).unwrap(),
        fs::read(out2.join("test.csv")).unwrap()
    );
}

#[test]
fn split_rejects_ratio_one_and_single_class_manifests() {
    let dir = scratch("split-bad");
    let corpus = dir.join("corpus");
    generate_blob_corpus(&corpus, 8, 16, 6).unwrap();
    let manifest = corpus.join("manifest.csv");

    let run = mdgc(&[
        "split",
        "--manifest",
        &path_str(&manifest),
        "--ratio",
        "1.0",
        "--seed",
        "7",
        "--out",
        &path_str(&dir.join("out")),
    ]);
    assert_code(&run, 2, "ratio 1.0");
    assert!(
        stderr_of(&run).contains("strictly between 0 and 1"),
        "{}",
        stderr_of(&run)
    );

    let single = dir.join("single.csv");
    fs::write(&single, "path,label\na.ppm,healthy\nb.ppm,healthy\n").unwrap();
    let run = mdgc(&[
        "split",
        "--manifest",
        &path_str(&single),
        "--ratio",
        "0.8",
        "--seed",
        "7",
        "--out",
        &path_str(&dir.join("out")),
    ]);
    assert_code(&run, 3, "single-class manifest");
    assert!(
        stderr_of(&run).contains("at least 2"),
        "{}",
        stderr_of(&run)
    );
}

#[test]
fn train_eval_gradcam_round_trip() {
    let dir = scratch("flow");
    let corpus = dir.join("corpus");
    generate_blob_corpus(&corpus, 32, 32, 11).unwrap();

    let split_out = dir.join("split");
    assert_code(
        &mdgc(&[
            "split",
            "--manifest",
            &path_str(&corpus.join("manifest.csv")),
            "--ratio",
            "0.75",
            "--seed",
            "3",
            "--out",
            &path_str(&split_out),
        ]),
        0,
        "split",
    );

    let arch = tiny_architecture(&dir);
    let config = write_config(&dir, &split_out.join("train.csv"), &arch, 2, 1e-3);
    let ckpt = dir.join("model.ckpt");
    let log = dir.join("train.json");
    let run = mdgc(&[
        "train",
        "--config",
        &path_str(&config),
        "--out",
        &path_str(&ckpt),
        "--log",
        &path_str(&log),
    ]);
    assert_code(&run, 0, "train");
    let stdout = stdout_of(&run);
    assert!(stdout.contains("epoch 1/2"), "{stdout}");
    assert!(stdout.contains("epoch 2/2"), "{stdout}");
    assert!(ckpt.is_file());

    // Log metadata records the run's shape.
    let log_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(log_json["model"], "tiny32");
    assert_eq!(log_json["batch_size"], 8);
    assert_eq!(log_json["epochs"].as_array().unwrap().len(), 2);
    assert!(log_json["epochs"][0]["mean_loss"].is_f64());

    // Evaluate on the held-out split.
    let report = dir.join("report.json");
    let run = mdgc(&[
        "eval",
        "--ckpt",
        &path_str(&ckpt),
        "--split",
        &path_str(&split_out.join("test.csv")),
        "--report",
        &path_str(&report),
        "--train-ratio",
        "0.75",
        "--train-seed",
        "3",
    ]);
    assert_code(&run, 0, "eval");
    let table = stdout_of(&run);
    assert!(table.contains("accuracy:"), "{table}");
    assert!(table.contains("macular_degeneration"), "{table}");
    let report_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report_json["model"], "tiny32");
    assert_eq!(report_json["split"]["train_ratio"], 0.75);
    assert_eq!(report_json["split"]["seed"], 3);
    let confusion = &report_json["confusion"];
    let total = confusion["tp"].as_u64().unwrap()
        + confusion["tn"].as_u64().unwrap()
        + confusion["fp"].as_u64().unwrap()
        + confusion["fn"].as_u64().unwrap();
    assert_eq!(total, 8, "32 records at ratio 0.75 leave 8 for test");

    // Heatmap one image from the corpus.
    let image = corpus.join("img_0000.ppm");
    let prefix = dir.join("cam");
    let run = mdgc(&[
        "gradcam",
        "--ckpt",
        &path_str(&ckpt),
        "--image",
        &path_str(&image),
        "--out",
        &path_str(&prefix),
    ]);
    assert_code(&run, 0, "gradcam");
    let stdout = stdout_of(&run);
    assert!(stdout.contains("predicted:"), "{stdout}");
    assert!(stdout.contains("confidence"), "{stdout}");
    assert!(stdout.contains("class"), "{stdout}");

    let heat = fs::read(dir.join("cam.heat.pgm")).unwrap();
    assert!(heat.starts_with(b"P5\n32 32\n255\n"), "PGM header + input-resolution map");
    assert_eq!(heat.len(), 13 + 32 * 32);
    let overlay = fs::read(dir.join("cam.overlay.ppm")).unwrap();
    assert!(overlay.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(overlay.len(), 13 + 3 * 32 * 32);

    // Explaining an explicit class and an explicit tap layer also works.
    let run = mdgc(&[
        "gradcam",
        "--ckpt",
        &path_str(&ckpt),
        "--image",
        &path_str(&image),
        "--class",
        "1",
        "--layer",
        "conv1",
        "--out",
        &path_str(&dir.join("cam1")),
    ]);
    assert_code(&run, 0, "gradcam explicit class+layer");
    assert!(
        stdout_of(&run).contains("explained: class 1"),
        "{}",
        stdout_of(&run)
    );
}

#[test]
fn train_lists_every_config_violation_at_once() {
    let dir = scratch("badconfig");
    let config = dir.join("run.json");
    fs::write(
        &config,
        r#"{"schema_version": 1, "model": "no-such-preset", "epochs": 0, "train_ratio": 2.0, "seed": 1}"#,
    )
    .unwrap();
    let run = mdgc(&[
        "train",
        "--config",
        &path_str(&config),
        "--out",
        &path_str(&dir.join("m.ckpt")),
    ]);
    assert_code(&run, 2, "invalid config");
    let stderr = stderr_of(&run);
    for needle in [
        "model:",
        "manifest: required field is missing",
        "epochs: must be >= 1",
        "train_ratio: must be strictly between 0 and 1",
    ] {
        assert!(stderr.contains(needle), "missing {needle:?} in: {stderr}");
    }
    assert!(!dir.join("m.ckpt").exists(), "no artifact on failure");
}

#[test]
fn diverging_training_exits_with_the_numeric_code() {
    let dir = scratch("diverge");
    let corpus = dir.join("corpus");
    generate_blob_corpus(&corpus, 16, 32, 13).unwrap();
    let arch = tiny_architecture(&dir);
    // An absurd learning rate overflows the forward pass on the second
    // batch, which must abort with the numeric exit code.
    let config = write_config(&dir, &corpus.join("manifest.csv"), &arch, 2, 1e200);
    let run = mdgc(&[
        "train",
        "--config",
        &path_str(&config),
        "--out",
        &path_str(&dir.join("m.ckpt")),
    ]);
    assert_code(&run, 4, "non-finite loss");
    assert!(
        stderr_of(&run).contains("non-finite loss"),
        "{}",
        stderr_of(&run)
    );
}

#[test]
fn eval_rejects_a_corrupted_checkpoint() {
    let dir = scratch("badckpt");
    let corpus = dir.join("corpus");
    generate_blob_corpus(&corpus, 8, 32, 17).unwrap();
    let arch = tiny_architecture(&dir);
    let config = write_config(&dir, &corpus.join("manifest.csv"), &arch, 1, 1e-3);
    let ckpt = dir.join("m.ckpt");
    assert_code(
        &mdgc(&[
            "train",
            "--config",
            &path_str(&config),
            "--out",
            &path_str(&ckpt),
        ]),
        0,
        "train",
    );

    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xFF;
    let corrupt = dir.join("corrupt.ckpt");
    fs::write(&corrupt, &bytes).unwrap();

    let run = mdgc(&[
        "eval",
        "--ckpt",
        &path_str(&corrupt),
        "--split",
        &path_str(&corpus.join("manifest.csv")),
        "--report",
        &path_str(&dir.join("r.json")),
    ]);
    assert_code(&run, 3, "corrupt checkpoint");
    assert!(stderr_of(&run).contains("bad magic"), "{}", stderr_of(&run));

    // Truncation names the tensor that could not be read.
    let full = fs::read(&ckpt).unwrap();
    let truncated = dir.join("short.ckpt");
    fs::write(&truncated, &full[..full.len() - 8]).unwrap();
    let run = mdgc(&[
        "eval",
        "--ckpt",
        &path_str(&truncated),
        "--split",
        &path_str(&corpus.join("manifest.csv")),
        "--report",
        &path_str(&dir.join("r.json")),
    ]);
    assert_code(&run, 3, "truncated checkpoint");
    let stderr = stderr_of(&run);
    assert!(stderr.contains("truncated"), "{stderr}");
    assert!(stderr.contains("fc."), "names the tensor: {stderr}");
}

#[test]
fn gradcam_rejects_bad_layers_classes_and_sizes() {
    let dir = scratch("gradcam-bad");
    let corpus = dir.join("corpus");
    generate_blob_corpus(&corpus, 8, 32, 19).unwrap();
    let arch = tiny_architecture(&dir);
    let config = write_config(&dir, &corpus.join("manifest.csv"), &arch, 1, 1e-3);
    let ckpt = dir.join("m.ckpt");
    assert_code(
        &mdgc(&[
            "train",
            "--config",
            &path_str(&config),
            "--out",
            &path_str(&ckpt),
        ]),
        0,
        "train",
    );
    let image = path_str(&corpus.join("img_0000.ppm"));

    // Unknown layer: the error lists the layers that can be tapped.
    let run = mdgc(&[
        "gradcam",
        "--ckpt",
        &path_str(&ckpt),
        "--image",
        &image,
        "--layer",
        "missing",
        "--out",
        &path_str(&dir.join("cam")),
    ]);
    assert_code(&run, 2, "unknown layer");
    let stderr = stderr_of(&run);
    assert!(stderr.contains("conv1"), "{stderr}");
    assert!(stderr.contains("conv2"), "{stderr}");

    // Class index out of range and unparsable class.
    for (class, needle) in [("7", "out of range"), ("banana", "must be \"auto\"")] {
        let run = mdgc(&[
            "gradcam",
            "--ckpt",
            &path_str(&ckpt),
            "--image",
            &image,
            "--class",
            class,
            "--out",
            &path_str(&dir.join("cam")),
        ]);
        assert_code(&run, 2, "bad class");
        assert!(stderr_of(&run).contains(needle), "{}", stderr_of(&run));
    }

    // Image size must match the model input.
    let small = dir.join("small.ppm");
    fs::write(
        &small,
        mdgc_testkit::corpus::ppm_bytes(16, 16, &[128; 16 * 16 * 3]),
    )
    .unwrap();
    let run = mdgc(&[
        "gradcam",
        "--ckpt",
        &path_str(&ckpt),
        "--image",
        &path_str(&small),
        "--out",
        &path_str(&dir.join("cam")),
    ]);
    assert_code(&run, 2, "wrong image size");
    assert!(
        stderr_of(&run).contains("expected a 32x32 image"),
        "{}",
        stderr_of(&run)
    );
}

#[test]
fn usage_errors_exit_with_code_two() {
    let run = mdgc(&["split"]);
    assert_code(&run, 2, "missing required flags");
    let run = mdgc(&["no-such-command"]);
    assert_code(&run, 2, "unknown subcommand");
}
