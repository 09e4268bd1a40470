//! Class-activation heatmaps from gradient-weighted feature maps.
//!
//! For a chosen class logit, each feature map of the tap layer is weighted
//! by the spatial mean of the logit's gradient over that map; the ReLU of
//! the weighted sum, normalized by its own maximum, is the coarse heatmap.
//! It is bilinearly upsampled to input resolution and renormalized, so the
//! final map's maximum is exactly 1 (or identically 0 when the class has no
//! positive evidence). The whole computation runs in inference mode and is
//! linear in the upstream gradient, which makes the normalized map
//! invariant to positive rescaling of the classifier weights.

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Model, TapeRequest};
use crate::nn::{softmax_rows, Mode};
use crate::tensor::Tensor;
use crate::train::argmax_row;

/// A normalized attention map at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities in [0, 1]; the maximum is exactly 0 or 1.
    pub values: Vec<f64>,
    /// Layer the map was read from.
    pub layer: String,
    /// Class the map explains.
    pub class_index: usize,
}

/// Heatmap plus the classification it explains.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub heatmap: Heatmap,
    pub predicted: Label,
    pub target: Label,
    /// Softmax probabilities, indexed by class.
    pub probabilities: Vec<f64>,
}

/// Weighted-sum heatmap at the tap layer's own resolution: ReLU of the
/// alpha-weighted activation sum, normalized to a 0/1 maximum. Inputs are
/// a single image's activations and gradients, both (1, K, h, w).
pub fn coarse_map(activations: &Tensor, gradients: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    if activations.rank() != 4 || activations.shape()[0] != 1 {
        return Err(Error::InvalidArgument(format!(
            "expected single-image activations (1, K, h, w), got {:?}",
            activations.shape()
        )));
    }
    if gradients.shape() != activations.shape() {
        return Err(Error::shape_mismatch(
            "activation vs gradient",
            activations.shape(),
            gradients.shape(),
        ));
    }
    let (k, h, w) = (
        activations.shape()[1],
        activations.shape()[2],
        activations.shape()[3],
    );
    let area = (h * w) as f64;
    let mut map = vec![0.0; h * w];
    for ch in 0..k {
        let mut alpha = 0.0;
        for y in 0..h {
            for x in 0..w {
                alpha += gradients.at4(0, ch, y, x);
            }
        }
        alpha /= area;
        for y in 0..h {
            for x in 0..w {
                map[y * w + x] += alpha * activations.at4(0, ch, y, x);
            }
        }
    }
    let mut max = 0.0f64;
    for v in map.iter_mut() {
        *v = v.max(0.0);
        max = max.max(*v);
    }
    if max > 0.0 {
        for v in map.iter_mut() {
            *v /= max;
        }
    }
    Ok((map, h, w))
}

/// Bilinear upsampling of a scalar field, same center-aligned convention as
/// image resizing, without quantization.
fn resize_field(values: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let scale_x = w as f64 / out_w as f64;
    let scale_y = h as f64 / out_h as f64;
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let top = values[y0 * w + x0] * (1.0 - fx) + values[y0 * w + x1] * fx;
            let bottom = values[y1 * w + x0] * (1.0 - fx) + values[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Computes the explanation for one preprocessed image tensor (1, 3, H, W).
/// `target` picks the class to explain (default: the predicted one);
/// `layer` overrides the architecture's tap.
pub fn explain(
    model: &Model,
    input: &Tensor,
    target: Option<usize>,
    layer: Option<&str>,
) -> Result<Explanation> {
    if input.rank() != 4 || input.shape()[0] != 1 {
        return Err(Error::InvalidArgument(format!(
            "heatmaps are computed one image at a time; got batch shape {:?}",
            input.shape()
        )));
    }
    let layer = match layer {
        Some(name) => {
            let config = model.config();
            let shapes = config.chain_shapes()?;
            let tappable = |i: usize| matches!(shapes[i + 1], crate::layer::ChainShape::Map { .. });
            let position = config.layers.iter().position(|l| l.name == name);
            match position {
                Some(i) if tappable(i) => name,
                _ => {
                    let taps: Vec<&str> = config
                        .layers
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| tappable(*i))
                        .map(|(_, l)| l.name.as_str())
                        .collect();
                    return Err(Error::InvalidArgument(format!(
                        "layer {name:?} cannot be tapped for a heatmap; available taps: {}",
                        taps.join(", ")
                    )));
                }
            }
        }
        None => &model.config().tap,
    };
    let pass = model.forward(
        input,
        Mode::Infer,
        TapeRequest::After(layer),
        Some(layer),
    )?;
    let activations = pass
        .captured
        .expect("capture requested from forward pass");

    let probabilities = {
        let p = softmax_rows(&pass.output)?;
        p.data().to_vec()
    };
    let predicted = Label::from_index(argmax_row(&pass.output, 0))?;
    let target = match target {
        Some(index) => Label::from_index(index)?,
        None => predicted,
    };

    let mut upstream = Tensor::zeros(pass.output.shape());
    let hot = upstream.idx2(0, target.index());
    upstream.data_mut()[hot] = 1.0;
    let tape = pass.tape.as_ref().expect("partial tape requested");
    let gradients = model.backward_to(tape, &upstream, layer)?;

    let (coarse, ch, cw) = coarse_map(&activations, &gradients)?;
    let (in_h, in_w) = (input.shape()[2], input.shape()[3]);
    let mut values = resize_field(&coarse, cw, ch, in_w, in_h);
    // Interpolation can only lower the peak; renormalize so the maximum is
    // exactly 1 again (identically zero maps stay zero).
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in values.iter_mut() {
            *v /= max;
        }
    }
    Ok(Explanation {
        heatmap: Heatmap {
            width: in_w,
            height: in_h,
            values,
            layer: layer.to_string(),
            class_index: target.index(),
        },
        predicted,
        target,
        probabilities,
    })
}

/// Clamps to [0, 1].
fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Jet colormap on [0, 1], returned in unit scale.
pub fn colormap_jet(t: f64) -> (f64, f64, f64) {
    let t = clamp01(t);
    let r = clamp01((4.0 * t - 1.5).min(-4.0 * t + 4.5));
    let g = clamp01((4.0 * t - 0.5).min(-4.0 * t + 3.5));
    let b = clamp01((4.0 * t + 0.5).min(-4.0 * t + 2.5));
    (r, g, b)
}

#[inline]
fn to_byte(unit: f64) -> u8 {
    (unit * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Heatmap intensities as 8-bit grayscale, row-major.
pub fn heatmap_gray(heatmap: &Heatmap) -> Vec<u8> {
    heatmap.values.iter().map(|&v| to_byte(clamp01(v))).collect()
}

/// Blends the jet-colored heatmap over the image: 0.6 image + 0.4 color,
/// computed in unit scale and quantized half-up.
pub fn superimpose(image: &Image, heatmap: &Heatmap) -> Result<Image> {
    if image.width() != heatmap.width || image.height() != heatmap.height {
        return Err(Error::shape_mismatch(
            "overlay image vs heatmap",
            &[image.width(), image.height()],
            &[heatmap.width, heatmap.height],
        ));
    }
    let mut out = image.clone();
    for y in 0..heatmap.height {
        for x in 0..heatmap.width {
            let (r, g, b) = image.rgb(x, y);
            let (jr, jg, jb) = colormap_jet(heatmap.values[y * heatmap.width + x]);
            out.set_rgb(
                x,
                y,
                (
                    to_byte(clamp01(0.6 * (r as f64 / 255.0) + 0.4 * jr)),
                    to_byte(clamp01(0.6 * (g as f64 / 255.0) + 0.4 * jg)),
                    to_byte(clamp01(0.6 * (b as f64 / 255.0) + 0.4 * jb)),
                ),
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerSpec;
    use crate::model::{ArchitectureConfig, LayerEntry};
    use crate::nn::Padding;
    use crate::rng::Rng;

    #[test]
    fn jet_hits_the_anchor_colors() {
        assert_eq!(colormap_jet(0.0), (0.0, 0.0, 0.5));
        assert_eq!(colormap_jet(0.25), (0.0, 0.5, 1.0));
        assert_eq!(colormap_jet(0.5), (0.5, 1.0, 0.5));
        assert_eq!(colormap_jet(0.75), (1.0, 0.5, 0.0));
        assert_eq!(colormap_jet(1.0), (0.5, 0.0, 0.0));
    }

    #[test]
    fn coarse_map_matches_hand_arithmetic() {
        // Two 2x2 feature maps; alphas are the gradient means 1.0 and -2.0.
        let a = Tensor::new(
            &[1, 2, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0, 1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let g = Tensor::new(
            &[1, 2, 2, 2],
            vec![1.0, 1.0, 1.0, 1.0, -2.0, -2.0, -2.0, -2.0],
        )
        .unwrap();
        let (map, h, w) = coarse_map(&a, &g).unwrap();
        assert_eq!((h, w), (2, 2));
        // Weighted sums: A1 - 2*A2 = [-1, 0, 1, 2]; ReLU then / 2.
        assert_eq!(map, vec![0.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn zero_gradients_produce_an_identically_zero_map() {
        let a = Tensor::filled(&[1, 3, 4, 4], 2.0);
        let g = Tensor::zeros(&[1, 3, 4, 4]);
        let (map, _, _) = coarse_map(&a, &g).unwrap();
        assert!(map.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn power_of_two_gradient_scaling_is_bit_invariant() {
        let mut rng = Rng::new(4);
        let a = Tensor::new(&[1, 3, 3, 3], (0..27).map(|_| rng.next_normal()).collect()).unwrap();
        let g = Tensor::new(&[1, 3, 3, 3], (0..27).map(|_| rng.next_normal()).collect()).unwrap();
        let (base, _, _) = coarse_map(&a, &g).unwrap();
        let (scaled, _, _) = coarse_map(&a, &g.scale(4.0)).unwrap();
        assert_eq!(base, scaled);
    }

    fn tap_model(seed: u64) -> Model {
        let config = ArchitectureConfig {
            name: "t".into(),
            input: (3, 8, 8),
            layers: vec![
                LayerEntry {
                    name: "conv1".into(),
                    spec: LayerSpec::Conv2d {
                        filters: 4,
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
                    name: "gap".into(),
                    spec: LayerSpec::GlobalAvgPool,
                },
                LayerEntry {
                    name: "fc".into(),
                    spec: LayerSpec::Dense { width: 2 },
                },
            ],
            tap: "conv1".into(),
            classes: 2,
        };
        Model::init(config, &mut Rng::new(seed)).unwrap()
    }

    fn sample_input(seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::new(
            &[1, 3, 8, 8],
            (0..192).map(|_| rng.next_f64()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn explanation_is_normalized_and_at_input_resolution() {
        let model = tap_model(11);
        let out = explain(&model, &sample_input(3), None, None).unwrap();
        assert_eq!((out.heatmap.width, out.heatmap.height), (8, 8));
        assert_eq!(out.heatmap.layer, "conv1");
        let max = out.heatmap.values.iter().cloned().fold(0.0f64, f64::max);
        assert!(max == 1.0 || max == 0.0, "max {max}");
        assert!(out.heatmap.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let p: f64 = out.probabilities.iter().sum();
        assert!((p - 1.0).abs() < 1e-12);
        assert_eq!(out.predicted, out.target);
    }

    #[test]
    fn explicit_target_class_is_honored() {
        let model = tap_model(12);
        let out = explain(&model, &sample_input(4), Some(1), None).unwrap();
        assert_eq!(out.target, Label::MacularDegeneration);
        assert!(explain(&model, &sample_input(4), Some(2), None).is_err());
    }

    #[test]
    fn bad_layer_names_list_the_available_taps() {
        let model = tap_model(14);
        for bad in ["gap", "fc", "nope"] {
            let err = explain(&model, &sample_input(4), None, Some(bad)).unwrap_err();
            let message = err.to_string();
            assert!(message.contains("conv1"), "{message}");
            assert!(message.contains("pool1"), "{message}");
        }
        assert!(explain(&model, &sample_input(4), None, Some("pool1")).is_ok());
    }

    #[test]
    fn zeroed_classifier_weights_yield_a_zero_heatmap() {
        let mut model = tap_model(13);
        model.visit_tensors_mut(&mut |name, t, _| {
            if name == "fc.weight" {
                *t = Tensor::zeros(t.shape());
            }
        });
        let out = explain(&model, &sample_input(5), Some(1), None).unwrap();
        assert!(out.heatmap.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsampling_then_renormalizing_keeps_a_unit_peak() {
        let coarse = vec![0.0, 0.25, 0.5, 1.0];
        let up = resize_field(&coarse, 2, 2, 8, 8);
        // Interpolation lowers the peak below 1 at off-center samples.
        let raw_max = up.iter().cloned().fold(0.0f64, f64::max);
        assert!(raw_max <= 1.0);
        let renorm: Vec<f64> = up.iter().map(|v| v / raw_max).collect();
        let max = renorm.iter().cloned().fold(0.0f64, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn overlay_blends_with_the_pinned_ratio() {
        let white = Image::filled(2, 1, (255, 255, 255)).unwrap();
        let heat = Heatmap {
            width: 2,
            height: 1,
            values: vec![1.0, 0.0],
            layer: "conv1".into(),
            class_index: 1,
        };
        let out = superimpose(&white, &heat).unwrap();
        // 0.6 * white + 0.4 * jet(1) = (0.8, 0.6, 0.6).
        assert_eq!(out.rgb(0, 0), (204, 153, 153));
        // 0.6 * white + 0.4 * jet(0) = (0.6, 0.6, 0.8).
        assert_eq!(out.rgb(1, 0), (153, 153, 204));

        let black = Image::filled(1, 1, (0, 0, 0)).unwrap();
        let heat0 = Heatmap {
            width: 1,
            height: 1,
            values: vec![0.0],
            layer: "conv1".into(),
            class_index: 0,
        };
        assert_eq!(
            superimpose(&black, &heat0).unwrap().rgb(0, 0),
            (0, 0, 51)
        );
        // Dimension mismatches are rejected.
        assert!(superimpose(&white, &heat0).is_err());
    }

    #[test]
    fn gray_rendering_rounds_half_up() {
        let heat = Heatmap {
            width: 3,
            height: 1,
            values: vec![0.0, 0.5, 1.0],
            layer: "l".into(),
            class_index: 0,
        };
        assert_eq!(heatmap_gray(&heat), vec![0, 128, 255]);
    }

    #[test]
    fn permuting_channels_with_their_gradients_leaves_the_map_unchanged() {
        let mut rng = Rng::new(31);
        let draw = |rng: &mut Rng| {
            Tensor::new(&[1, 3, 4, 4], (0..48).map(|_| rng.next_normal()).collect()).unwrap()
        };
        let a = draw(&mut rng);
        let g = draw(&mut rng);
        let permute = |t: &Tensor| {
            let mut out = Tensor::zeros(t.shape());
            for (dst, src) in [(0usize, 2usize), (1, 0), (2, 1)] {
                for y in 0..4 {
                    for x in 0..4 {
                        let v = t.at4(0, src, y, x);
                        let i = out.idx4(0, dst, y, x);
                        out.data_mut()[i] = v;
                    }
                }
            }
            out
        };
        let (base, _, _) = coarse_map(&a, &g).unwrap();
        let (permuted, _, _) = coarse_map(&permute(&a), &permute(&g)).unwrap();
        // Permutation reorders the channel summation, so agreement is exact
        // up to addition rounding.
        for (x, y) in base.iter().zip(&permuted) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn tap_gradient_matches_end_to_end_finite_differences() {
        use crate::nn::{dense_forward, global_avg_pool_forward, relu_forward};

        // Pool-free model so the suffix is smooth except for the relu.
        let config = ArchitectureConfig {
            name: "t".into(),
            input: (3, 6, 6),
            layers: vec![
                LayerEntry {
                    name: "conv1".into(),
                    spec: LayerSpec::Conv2d {
                        filters: 3,
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
                    name: "gap".into(),
                    spec: LayerSpec::GlobalAvgPool,
                },
                LayerEntry {
                    name: "fc".into(),
                    spec: LayerSpec::Dense { width: 2 },
                },
            ],
            tap: "conv1".into(),
            classes: 2,
        };
        let model = Model::init(config, &mut Rng::new(41)).unwrap();
        let mut rng = Rng::new(6);
        let input = Tensor::new(
            &[1, 3, 6, 6],
            (0..108).map(|_| rng.next_f64()).collect(),
        )
        .unwrap();
        let target = 1usize;
        let pass = model
            .forward(
                &input,
                crate::nn::Mode::Infer,
                crate::model::TapeRequest::After("conv1"),
                Some("conv1"),
            )
            .unwrap();
        let activation = pass.captured.unwrap();
        let mut seed = Tensor::zeros(pass.output.shape());
        let hot = seed.idx2(0, target);
        seed.data_mut()[hot] = 1.0;
        let analytic = model
            .backward_to(pass.tape.as_ref().unwrap(), &seed, "conv1")
            .unwrap();

        // Reconstruct the suffix (relu -> gap -> fc) from the model's own
        // parameters and differentiate the target logit numerically.
        let tensors: std::collections::HashMap<String, Tensor> = model
            .named_tensors()
            .into_iter()
            .map(|(name, t, _)| (name, t.clone()))
            .collect();
        let logit = |a: &Tensor| -> f64 {
            let pooled = global_avg_pool_forward(&relu_forward(a)).unwrap();
            let out = dense_forward(&pooled, &tensors["fc.weight"], &tensors["fc.bias"]).unwrap();
            out.at2(0, target)
        };
        let h = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..activation.len() {
            let mut plus = activation.clone();
            plus.data_mut()[i] += h;
            let mut minus = activation.clone();
            minus.data_mut()[i] -= h;
            let numeric = (logit(&plus) - logit(&minus)) / (2.0 * h);
            worst = worst.max(crate::gradcheck::rel_err(analytic.data()[i], numeric));
        }
        assert!(worst < 1e-4, "worst rel err {worst:.3e}");
    }

    #[test]
    fn scaling_the_classifier_by_a_power_of_two_is_bit_invariant() {
        let base = tap_model(51);
        let input = sample_input(7);
        let reference = explain(&base, &input, Some(1), None).unwrap();

        let mut scaled = tap_model(51);
        scaled.visit_tensors_mut(&mut |name, t, _| {
            if name.starts_with("fc.") {
                *t = t.scale(4.0);
            }
        });
        let out = explain(&scaled, &input, Some(1), None).unwrap();
        assert_eq!(out.heatmap.values, reference.heatmap.values);
        assert_eq!(out.predicted, reference.predicted);
    }
}
