//! Finite-difference verification of analytic gradients.
//!
//! Every backward kernel in this crate is checked against central
//! differences through its own forward pass: build a scalar probe
//! `L = sum(r . f(x))` with a fixed random projection `r`, compare the
//! analytic gradient of `L` against `(L(x+h) - L(x-h)) / 2h` element by
//! element. [`standard_suite`] packages randomized checks for every layer
//! kind plus the classification loss, so test targets share one
//! implementation.

use crate::error::Result;
use crate::layer::{layer_forward, layer_vjp, ChainShape, LayerParams, LayerSpec, TapeEntry};
use crate::nn::{softmax_cross_entropy, Mode, Padding};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Step size used by the standard suite.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor: |a-b| / max(|a|, |b|, 1e-8).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Below this magnitude a central difference at `FD_STEP` carries no
/// relative information in f64: the difference quotient's roundoff is about
/// 1e-9 absolute, so components this small cannot be certified to 1e-5
/// relative accuracy by any correct implementation.
const FD_INFORMATION_FLOOR: f64 = 1e-4;

/// Absolute agreement required of components too small to compare
/// relatively. Far above the difference quotient's roundoff, far below any
/// genuine gradient defect.
const FD_ABSOLUTE_BACKSTOP: f64 = 1e-7;

/// Largest elementwise [`rel_err`] between two same-shape tensors.
///
/// Components where both sides sit under `FD_INFORMATION_FLOOR` are compared
/// absolutely instead: they must agree within `FD_ABSOLUTE_BACKSTOP`, and
/// count as maximal disagreement otherwise. A gradient that is wrongly tiny
/// still fails, because the numeric side stays large and the pair falls
/// through to the relative test.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let mut worst = 0.0f64;
    for (&a, &b) in analytic.data().iter().zip(numeric.data()) {
        if a.abs() < FD_INFORMATION_FLOOR && b.abs() < FD_INFORMATION_FLOOR {
            if (a - b).abs() < FD_ABSOLUTE_BACKSTOP {
                continue;
            }
            return f64::INFINITY;
        }
        worst = worst.max(rel_err(a, b));
    }
    worst
}

/// Central-difference gradient of a scalar function at `at`.
pub fn fd_gradient(
    f: &mut impl FnMut(&Tensor) -> Result<f64>,
    at: &Tensor,
    h: f64,
) -> Result<Tensor> {
    let mut work = at.clone();
    let mut grad = vec![0.0; at.len()];
    for (i, slot) in grad.iter_mut().enumerate() {
        let orig = work.data()[i];
        work.data_mut()[i] = orig + h;
        let up = f(&work)?;
        work.data_mut()[i] = orig - h;
        let down = f(&work)?;
        work.data_mut()[i] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    Tensor::new(at.shape(), grad)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "probe projection shape mismatch");
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.next_normal()).collect();
    Tensor::new(shape, data).expect("shape/data generated together")
}

fn batch_shape(input: &ChainShape, batch: usize) -> Vec<usize> {
    match input {
        ChainShape::Map { c, h, w } => vec![batch, *c, *h, *w],
        ChainShape::Flat { d } => vec![batch, *d],
    }
}

/// True when every pooling window's best value beats its runner-up by more
/// than `gap` — a finite-difference step then cannot flip the argmax.
fn pool_windows_separated(input: &Tensor, pool: usize, stride: usize, gap: f64) -> bool {
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = ((h - pool) / stride + 1, (w - pool) / stride + 1);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut second = f64::NEG_INFINITY;
                    for ky in 0..pool {
                        for kx in 0..pool {
                            let v = input.at4(b, ch, oy * stride + ky, ox * stride + kx);
                            if v > best {
                                second = best;
                                best = v;
                            } else if v > second {
                                second = v;
                            }
                        }
                    }
                    if pool > 1 && best - second <= gap {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Checks one layer: analytic input and parameter gradients against central
/// differences through the layer's own forward pass. Returns the worst
/// relative error observed.
pub fn check_layer(
    spec: &LayerSpec,
    input_chain: &ChainShape,
    batch: usize,
    mode: Mode,
    rng: &mut Rng,
    h: f64,
) -> Result<f64> {
    let mut params = LayerParams::init(spec, input_chain, rng)?;
    // Move the normalization parameters off their identity defaults. With
    // gamma = 1 and beta = 0, a normalize -> relu -> conv -> normalize chain
    // is scale-invariant in single-channel bottlenecks, so some true
    // gradients collapse to O(eps) and the finite difference measures pure
    // roundoff. Random gamma/beta keep every direction well conditioned and
    // exercise the general code path.
    params.visit_mut(&mut |name, tensor, _| {
        if name.ends_with("gamma") {
            *tensor = Tensor::new(
                tensor.shape(),
                (0..tensor.len()).map(|_| 0.75 + 0.5 * rng.next_f64()).collect(),
            )
            .expect("same shape");
        } else if name.ends_with("beta") {
            *tensor = Tensor::new(
                tensor.shape(),
                (0..tensor.len()).map(|_| 0.5 * rng.next_normal()).collect(),
            )
            .expect("same shape");
        }
    });
    if mode == Mode::Infer {
        // Give inference something nontrivial to normalize with.
        params.visit_mut(&mut |name, tensor, _| {
            if name.ends_with("running_mean") {
                *tensor = Tensor::new(
                    tensor.shape(),
                    (0..tensor.len()).map(|_| 0.2 * rng.next_normal()).collect(),
                )
                .expect("same shape");
            } else if name.ends_with("running_var") {
                *tensor = Tensor::new(
                    tensor.shape(),
                    (0..tensor.len()).map(|_| 0.6 + rng.next_f64()).collect(),
                )
                .expect("same shape");
            }
        });
    }

    let shape = batch_shape(input_chain, batch);
    let mut input = random_tensor(&shape, rng);
    // Keep the probe away from non-differentiable points that would make
    // the finite difference itself wrong (kinks and argmax flips).
    match spec {
        LayerSpec::Relu => {
            while input.data().iter().any(|v| v.abs() < 1e-3) {
                input = random_tensor(&shape, rng);
            }
        }
        LayerSpec::Maxpool2d { pool, stride } => {
            while !pool_windows_separated(&input, *pool, *stride, 1e-3) {
                input = random_tensor(&shape, rng);
            }
        }
        LayerSpec::ResidualBlockV1 { .. } | LayerSpec::ResidualBlockV2 { .. } => {
            // The internal ReLUs see batch-normalized values, so kinks are
            // common; probe with a tape and redraw until none is nearby.
            for _ in 0..500 {
                let fwd = layer_forward(spec, &params, &input, mode, true)?;
                if let Some(TapeEntry::Residual(tape)) = &fwd.tape {
                    if crate::residual::min_relu_margin(tape) > 1e-3 {
                        break;
                    }
                }
                input = random_tensor(&shape, rng);
            }
        }
        _ => {}
    }

    let fwd = layer_forward(spec, &params, &input, mode, true)?;
    let projection = random_tensor(fwd.output.shape(), rng);
    let tape = fwd
        .tape
        .expect("tape requested from layer_forward");
    let (analytic_input, analytic_params) = layer_vjp(spec, &params, &tape, &projection)?;

    let mut probe_input = |x: &Tensor| -> Result<f64> {
        let out = layer_forward(spec, &params, x, mode, false)?;
        Ok(dot(&out.output, &projection))
    };
    let numeric_input = fd_gradient(&mut probe_input, &input, h)?;
    let mut worst = max_rel_err(&analytic_input, &numeric_input);

    let defs = spec.param_defs(input_chain)?;
    let mut tensors: Vec<Tensor> = Vec::with_capacity(defs.len());
    params.visit(&mut |_, t, _| tensors.push(t.clone()));
    let trainable: Vec<usize> = defs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.trainable)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(
        trainable.len(),
        analytic_params.len(),
        "vjp must cover every trainable tensor"
    );
    for (grad, &slot) in analytic_params.iter().zip(&trainable) {
        let mut probe_param = |p: &Tensor| -> Result<f64> {
            let mut replaced = tensors.clone();
            replaced[slot] = p.clone();
            let candidate = LayerParams::assemble(spec, input_chain, replaced);
            let out = layer_forward(spec, &candidate, &input, mode, false)?;
            Ok(dot(&out.output, &projection))
        };
        let numeric = fd_gradient(&mut probe_param, &tensors[slot], h)?;
        worst = worst.max(max_rel_err(grad, &numeric));
    }
    Ok(worst)
}

/// Checks the softmax cross-entropy loss gradient for one random problem.
pub fn check_softmax_ce(batch: usize, classes: usize, rng: &mut Rng, h: f64) -> Result<f64> {
    let logits = random_tensor(&[batch, classes], rng);
    let labels: Vec<usize> = (0..batch)
        .map(|_| (rng.next_u64() % classes as u64) as usize)
        .collect();
    let (_, analytic) = softmax_cross_entropy(&logits, &labels)?;
    let mut probe = |l: &Tensor| -> Result<f64> { Ok(softmax_cross_entropy(l, &labels)?.0) };
    let numeric = fd_gradient(&mut probe, &logits, h)?;
    Ok(max_rel_err(&analytic, &numeric))
}

/// Result of one kind's randomized checks.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub kind: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
}

fn pick(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}

/// Randomized finite-difference suite over every layer kind and the loss.
/// Runs `cases` independent random configurations per kind and reports the
/// worst relative error for each.
pub fn standard_suite(seed: u64, cases: usize) -> Result<Vec<SuiteResult>> {
    let mut rng = Rng::new(seed);
    let h = FD_STEP;
    let mut results = Vec::new();

    let mut run = |kind: &'static str,
                   rng: &mut Rng,
                   case: &mut dyn FnMut(&mut Rng) -> Result<f64>|
     -> Result<()> {
        let mut worst = 0.0f64;
        for _ in 0..cases {
            worst = worst.max(case(rng)?);
        }
        results.push(SuiteResult {
            kind,
            cases,
            max_rel_err: worst,
        });
        Ok(())
    };

    run("conv2d", &mut rng, &mut |rng| {
        let spec = LayerSpec::Conv2d {
            filters: pick(rng, 1, 4),
            kernel: pick(rng, 1, 3),
            stride: pick(rng, 1, 3),
            padding: if rng.next_u64() % 2 == 0 {
                Padding::Same
            } else {
                Padding::Valid
            },
            bias: rng.next_u64() % 2 == 0,
        };
        let input = ChainShape::Map {
            c: pick(rng, 1, 3),
            h: pick(rng, 3, 6),
            w: pick(rng, 3, 6),
        };
        check_layer(&spec, &input, pick(rng, 1, 3), Mode::Train, rng, h)
    })?;

    run("maxpool2d", &mut rng, &mut |rng| {
        let pool = pick(rng, 2, 3);
        let spec = LayerSpec::Maxpool2d {
            pool,
            stride: pick(rng, 1, 3),
        };
        let input = ChainShape::Map {
            c: pick(rng, 1, 3),
            h: pick(rng, pool, 7),
            w: pick(rng, pool, 7),
        };
        check_layer(&spec, &input, pick(rng, 1, 3), Mode::Train, rng, h)
    })?;

    run("global_avg_pool", &mut rng, &mut |rng| {
        let input = ChainShape::Map {
            c: pick(rng, 1, 4),
            h: pick(rng, 1, 5),
            w: pick(rng, 1, 5),
        };
        check_layer(
            &LayerSpec::GlobalAvgPool,
            &input,
            pick(rng, 1, 3),
            Mode::Train,
            rng,
            h,
        )
    })?;

    run("dense", &mut rng, &mut |rng| {
        let spec = LayerSpec::Dense {
            width: pick(rng, 1, 5),
        };
        let input = ChainShape::Flat { d: pick(rng, 1, 8) };
        check_layer(&spec, &input, pick(rng, 1, 4), Mode::Train, rng, h)
    })?;

    run("relu", &mut rng, &mut |rng| {
        let input = ChainShape::Map {
            c: pick(rng, 1, 3),
            h: pick(rng, 2, 5),
            w: pick(rng, 2, 5),
        };
        check_layer(&LayerSpec::Relu, &input, pick(rng, 1, 3), Mode::Train, rng, h)
    })?;

    let bn_case = |mode: Mode| {
        move |rng: &mut Rng| -> Result<f64> {
            let spec = LayerSpec::Batchnorm {
                eps: 1e-5,
                momentum: 0.9,
            };
            let input = ChainShape::Map {
                c: pick(rng, 1, 4),
                h: pick(rng, 2, 5),
                w: pick(rng, 2, 5),
            };
            check_layer(&spec, &input, pick(rng, 2, 3), mode, rng, h)
        }
    };
    run("batchnorm", &mut rng, &mut bn_case(Mode::Train))?;
    run("batchnorm_infer", &mut rng, &mut bn_case(Mode::Infer))?;

    let residual_case = |v1: bool, mode: Mode| {
        move |rng: &mut Rng| -> Result<f64> {
            let c_in = pick(rng, 2, 4);
            // A single-channel bottleneck makes every element of the last
            // 1x1 convolution a pure per-channel scaling, which the next
            // normalization cancels exactly (up to eps): the true gradient
            // is then O(eps) and the finite difference measures only
            // roundoff. Two channels keep every probed direction mixed.
            let mid = pick(rng, 2, 3);
            // Half the cases project (stride 2 or widened output), half are
            // identity blocks.
            let (out, stride) = if rng.next_u64().is_multiple_of(2) {
                (c_in, 1)
            } else {
                (pick(rng, 2, 6), 2)
            };
            let spec = if v1 {
                LayerSpec::ResidualBlockV1 {
                    mid,
                    out,
                    stride,
                    eps: 1e-5,
                    momentum: 0.9,
                }
            } else {
                LayerSpec::ResidualBlockV2 {
                    mid,
                    out,
                    stride,
                    eps: 1e-5,
                    momentum: 0.9,
                }
            };
            let input = ChainShape::Map {
                c: c_in,
                h: pick(rng, 4, 6),
                w: pick(rng, 4, 6),
            };
            check_layer(&spec, &input, 2, mode, rng, h)
        }
    };
    run(
        "residual_block_v1",
        &mut rng,
        &mut residual_case(true, Mode::Train),
    )?;
    run(
        "residual_block_v1_infer",
        &mut rng,
        &mut residual_case(true, Mode::Infer),
    )?;
    run(
        "residual_block_v2",
        &mut rng,
        &mut residual_case(false, Mode::Train),
    )?;
    run(
        "residual_block_v2_infer",
        &mut rng,
        &mut residual_case(false, Mode::Infer),
    )?;

    run("softmax_cross_entropy", &mut rng, &mut |rng| {
        check_softmax_ce(pick(rng, 1, 5), pick(rng, 2, 5), rng, h)
    })?;

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_uses_absolute_floor() {
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
        // Both tiny: denominator is the 1e-8 floor.
        assert!((rel_err(0.0, 1e-9) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fd_gradient_matches_quadratic_exactly_enough() {
        let at = Tensor::new(&[3], vec![0.5, -1.5, 2.0]).unwrap();
        let mut f = |x: &Tensor| -> Result<f64> { Ok(x.data().iter().map(|v| v * v).sum()) };
        let grad = fd_gradient(&mut f, &at, 1e-5).unwrap();
        for (g, x) in grad.data().iter().zip(at.data()) {
            assert!((g - 2.0 * x).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_layer_passes_a_single_check() {
        let err = check_layer(
            &LayerSpec::Dense { width: 3 },
            &ChainShape::Flat { d: 4 },
            2,
            Mode::Train,
            &mut Rng::new(12),
            FD_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "dense rel err {err}");
    }

    #[test]
    fn conv_layer_passes_a_single_check() {
        let err = check_layer(
            &LayerSpec::Conv2d {
                filters: 2,
                kernel: 3,
                stride: 2,
                padding: Padding::Same,
                bias: true,
            },
            &ChainShape::Map { c: 2, h: 5, w: 5 },
            2,
            Mode::Train,
            &mut Rng::new(13),
            FD_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "conv rel err {err}");
    }
}
