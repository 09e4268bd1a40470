//! `mdgc gradcam`: render the class-activation heatmap and its overlay for
//! one image, printing the predicted class and confidence.

use std::path::{Path, PathBuf};

use mdgc_core::gradcam::{explain, heatmap_gray, superimpose};
use mdgc_core::image::{load_ppm, write_pgm, write_ppm};
use mdgc_core::transform::to_tensor;
use mdgc_core::{Error, Result, Tensor};

use crate::checkpoint;
use crate::fsio::{atomic_write, ensure_dir};

/// Parses `--class`: "auto" explains the predicted class, an integer
/// explains that class.
fn parse_class(text: &str, classes: usize) -> Result<Option<usize>> {
    if text == "auto" {
        return Ok(None);
    }
    match text.parse::<usize>() {
        Ok(index) if index < classes => Ok(Some(index)),
        Ok(index) => Err(Error::InvalidArgument(format!(
            "--class {index} is out of range; the model has {classes} classes"
        ))),
        Err(_) => Err(Error::InvalidArgument(format!(
            "--class must be \"auto\" or a class index, got {text:?}"
        ))),
    }
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    prefix.with_file_name(name)
}

pub fn run(
    ckpt: &Path,
    image_path: &Path,
    class: &str,
    layer: Option<&str>,
    out_prefix: &Path,
) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let target = parse_class(class, model.config().classes)?;

    let image = load_ppm(image_path)?;
    let (_, h, w) = model.config().input;
    if image.width() != w || image.height() != h {
        return Err(Error::InvalidArgument(format!(
            "{}: expected a {w}x{h} image for this model, got {}x{}; run the preprocess step first",
            image_path.display(),
            image.width(),
            image.height()
        )));
    }

    let input = Tensor::stack(&[to_tensor(&image)])?;
    let explanation = explain(&model, &input, target, layer)?;
    let heatmap = &explanation.heatmap;

    let heat_path = suffixed(out_prefix, ".heat.pgm");
    let overlay_path = suffixed(out_prefix, ".overlay.ppm");
    if let Some(parent) = out_prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    atomic_write(
        &heat_path,
        &write_pgm(heatmap.width, heatmap.height, &heatmap_gray(heatmap))?,
    )?;
    atomic_write(&overlay_path, &write_ppm(&superimpose(&image, heatmap)?))?;

    let predicted = explanation.predicted;
    println!(
        "predicted: {} (class {}), confidence {:.3}",
        predicted.as_str(),
        predicted.index(),
        explanation.probabilities[predicted.index()]
    );
    println!(
        "explained: class {} ({}) via layer {}",
        explanation.target.index(),
        explanation.target.as_str(),
        heatmap.layer
    );
    println!("wrote {} and {}", heat_path.display(), overlay_path.display());
    Ok(())
}
