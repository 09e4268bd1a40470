//! Bottleneck residual blocks.
//!
//! Both versions use the 1x1 -> 3x3 -> 1x1 bottleneck with the stride on
//! the 3x3 convolution and no convolution biases. V1 normalizes after each
//! convolution and applies ReLU after the addition; v2 pre-activates
//! (batchnorm + ReLU before each convolution) and adds with no final
//! activation, so the identity path of a non-projecting block is the raw
//! block input. A projection (1x1 convolution at the block stride) replaces
//! the identity exactly when the stride is not 1 or the channel count
//! changes; v1 normalizes the projection output, v2 projects the
//! pre-activated input without normalization.

use crate::error::{Error, Result};
use crate::layer::{BnParams, LayerForward, RunningUpdate, TapeEntry};
use crate::nn::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, relu_backward,
    relu_forward, BatchNormTape, Mode, Padding,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualVersion {
    V1,
    V2,
}

/// Parameters of one bottleneck block. `bn0` is present only for v2
/// (entry pre-activation), `bn3` only for v1 (after the last convolution),
/// `shortcut_bn` only for projecting v1 blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualParams {
    pub bn0: Option<BnParams>,
    pub conv1: Tensor,
    pub bn1: BnParams,
    pub conv2: Tensor,
    pub bn2: BnParams,
    pub conv3: Tensor,
    pub bn3: Option<BnParams>,
    pub shortcut_conv: Option<Tensor>,
    pub shortcut_bn: Option<BnParams>,
}

/// Intermediate values cached for the backward pass. In both versions the
/// projection consumes the same tensor as conv1 (the block input for v1,
/// the pre-activation for v2), so `conv1_input` serves double duty.
pub struct ResidualTape {
    pub bn0: Option<(BatchNormTape, Tensor)>,
    pub conv1_input: Tensor,
    pub bn1: BatchNormTape,
    pub relu1_input: Tensor,
    pub conv2_input: Tensor,
    pub bn2: BatchNormTape,
    pub relu2_input: Tensor,
    pub conv3_input: Tensor,
    pub bn3: Option<BatchNormTape>,
    pub shortcut_bn: Option<BatchNormTape>,
    pub sum: Option<Tensor>,
}

struct BnRun {
    output: Tensor,
    tape: BatchNormTape,
}

fn run_bn(
    input: &Tensor,
    bn: &BnParams,
    slot: &str,
    mode: Mode,
    eps: f64,
    momentum: f64,
    updates: &mut Vec<RunningUpdate>,
) -> Result<BnRun> {
    let out = batchnorm_forward(
        input,
        &bn.gamma,
        &bn.beta,
        &bn.running_mean,
        &bn.running_var,
        mode,
        eps,
        momentum,
    )?;
    if let Some((mean, var)) = out.updated_running {
        updates.push(RunningUpdate {
            slot: slot.to_string(),
            mean,
            var,
        });
    }
    Ok(BnRun {
        output: out.output,
        tape: out.tape,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn residual_forward(
    version: ResidualVersion,
    params: &ResidualParams,
    input: &Tensor,
    stride: usize,
    eps: f64,
    momentum: f64,
    mode: Mode,
    want_tape: bool,
) -> Result<LayerForward> {
    let mut updates = Vec::new();

    match version {
        ResidualVersion::V1 => {
            let c1 = conv2d_forward(input, &params.conv1, None, 1, Padding::Same)?;
            let b1 = run_bn(&c1, &params.bn1, "bn1", mode, eps, momentum, &mut updates)?;
            let r1 = relu_forward(&b1.output);
            let c2 = conv2d_forward(&r1, &params.conv2, None, stride, Padding::Same)?;
            let b2 = run_bn(&c2, &params.bn2, "bn2", mode, eps, momentum, &mut updates)?;
            let r2 = relu_forward(&b2.output);
            let c3 = conv2d_forward(&r2, &params.conv3, None, 1, Padding::Same)?;
            let bn3 = params
                .bn3
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("v1 block is missing bn3".into()))?;
            let b3 = run_bn(&c3, bn3, "bn3", mode, eps, momentum, &mut updates)?;

            let (short, shortcut_tape) = if let Some(sc) = &params.shortcut_conv {
                let sc_bn = params.shortcut_bn.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("projecting v1 block is missing shortcut bn".into())
                })?;
                let s = conv2d_forward(input, sc, None, stride, Padding::Same)?;
                let bs = run_bn(&s, sc_bn, "shortcut.bn", mode, eps, momentum, &mut updates)?;
                (bs.output, Some(bs.tape))
            } else {
                (input.clone(), None)
            };

            let sum = b3.output.add(&short)?;
            let output = relu_forward(&sum);
            let tape = want_tape.then(|| {
                TapeEntry::Residual(Box::new(ResidualTape {
                    bn0: None,
                    conv1_input: input.clone(),
                    bn1: b1.tape,
                    relu1_input: b1.output,
                    conv2_input: r1,
                    bn2: b2.tape,
                    relu2_input: b2.output,
                    conv3_input: r2,
                    bn3: Some(b3.tape),
                    shortcut_bn: shortcut_tape,
                    sum: Some(sum),
                }))
            });
            Ok(LayerForward {
                output,
                tape,
                updates,
            })
        }
        ResidualVersion::V2 => {
            let bn0 = params
                .bn0
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("v2 block is missing bn0".into()))?;
            let b0 = run_bn(input, bn0, "bn0", mode, eps, momentum, &mut updates)?;
            let pre = relu_forward(&b0.output);

            let short = if let Some(sc) = &params.shortcut_conv {
                conv2d_forward(&pre, sc, None, stride, Padding::Same)?
            } else {
                input.clone()
            };

            let c1 = conv2d_forward(&pre, &params.conv1, None, 1, Padding::Same)?;
            let b1 = run_bn(&c1, &params.bn1, "bn1", mode, eps, momentum, &mut updates)?;
            let r1 = relu_forward(&b1.output);
            let c2 = conv2d_forward(&r1, &params.conv2, None, stride, Padding::Same)?;
            let b2 = run_bn(&c2, &params.bn2, "bn2", mode, eps, momentum, &mut updates)?;
            let r2 = relu_forward(&b2.output);
            let c3 = conv2d_forward(&r2, &params.conv3, None, 1, Padding::Same)?;

            let output = c3.add(&short)?;
            let tape = want_tape.then(|| {
                TapeEntry::Residual(Box::new(ResidualTape {
                    bn0: Some((b0.tape, b0.output)),
                    conv1_input: pre,
                    bn1: b1.tape,
                    relu1_input: b1.output,
                    conv2_input: r1,
                    bn2: b2.tape,
                    relu2_input: b2.output,
                    conv3_input: r2,
                    bn3: None,
                    shortcut_bn: None,
                    sum: None,
                }))
            });
            Ok(LayerForward {
                output,
                tape,
                updates,
            })
        }
    }
}

/// Smallest absolute value reaching any ReLU inside the block. Gradient
/// checking regenerates inputs while this is tiny, because a finite
/// difference stepping across a kink measures the wrong slope.
pub(crate) fn min_relu_margin(tape: &ResidualTape) -> f64 {
    let mut margin = f64::INFINITY;
    let mut scan = |t: &Tensor| {
        for v in t.data() {
            margin = margin.min(v.abs());
        }
    };
    if let Some((_, b0)) = &tape.bn0 {
        scan(b0);
    }
    scan(&tape.relu1_input);
    scan(&tape.relu2_input);
    if let Some(sum) = &tape.sum {
        scan(sum);
    }
    margin
}

/// Backward pass through one block. Returns the gradient at the block input
/// and the trainable-parameter gradients in declaration order.
pub fn residual_vjp(
    version: ResidualVersion,
    params: &ResidualParams,
    tape: &ResidualTape,
    stride: usize,
    upstream: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    let project = params.shortcut_conv.is_some();
    match version {
        ResidualVersion::V1 => {
            let sum = tape
                .sum
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("v1 tape is missing the sum".into()))?;
            let bn3 = params
                .bn3
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("v1 block is missing bn3".into()))?;
            let bn3_tape = tape
                .bn3
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("v1 tape is missing bn3".into()))?;

            let d_sum = relu_backward(sum, upstream)?;

            let (d_c3, g3_gamma, g3_beta) = batchnorm_backward(bn3_tape, &bn3.gamma, &d_sum)?;
            let (d_r2, g_conv3, _) =
                conv2d_backward(&tape.conv3_input, &params.conv3, 1, Padding::Same, &d_c3)?;
            let d_b2 = relu_backward(&tape.relu2_input, &d_r2)?;
            let (d_c2, g2_gamma, g2_beta) = batchnorm_backward(&tape.bn2, &params.bn2.gamma, &d_b2)?;
            let (d_r1, g_conv2, _) =
                conv2d_backward(&tape.conv2_input, &params.conv2, stride, Padding::Same, &d_c2)?;
            let d_b1 = relu_backward(&tape.relu1_input, &d_r1)?;
            let (d_c1, g1_gamma, g1_beta) = batchnorm_backward(&tape.bn1, &params.bn1.gamma, &d_b1)?;
            let (d_input_main, g_conv1, _) =
                conv2d_backward(&tape.conv1_input, &params.conv1, 1, Padding::Same, &d_c1)?;

            let mut grads = vec![
                g_conv1, g1_gamma, g1_beta, g_conv2, g2_gamma, g2_beta, g_conv3, g3_gamma, g3_beta,
            ];
            let d_input_short = if project {
                let sc = params.shortcut_conv.as_ref().expect("project checked");
                let sc_bn = params.shortcut_bn.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("projecting v1 block is missing shortcut bn".into())
                })?;
                let sc_tape = tape.shortcut_bn.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("v1 tape is missing the shortcut bn".into())
                })?;
                let (d_sc, gs_gamma, gs_beta) = batchnorm_backward(sc_tape, &sc_bn.gamma, &d_sum)?;
                let (d_input_sc, g_sc, _) =
                    conv2d_backward(&tape.conv1_input, sc, stride, Padding::Same, &d_sc)?;
                grads.push(g_sc);
                grads.push(gs_gamma);
                grads.push(gs_beta);
                d_input_sc
            } else {
                d_sum
            };
            Ok((d_input_main.add(&d_input_short)?, grads))
        }
        ResidualVersion::V2 => {
            let bn0 = params
                .bn0
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("v2 block is missing bn0".into()))?;
            let (bn0_tape, relu0_input) = tape
                .bn0
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("v2 tape is missing bn0".into()))?;

            let (d_r2, g_conv3, _) =
                conv2d_backward(&tape.conv3_input, &params.conv3, 1, Padding::Same, upstream)?;
            let d_b2 = relu_backward(&tape.relu2_input, &d_r2)?;
            let (d_c2, g2_gamma, g2_beta) = batchnorm_backward(&tape.bn2, &params.bn2.gamma, &d_b2)?;
            let (d_r1, g_conv2, _) =
                conv2d_backward(&tape.conv2_input, &params.conv2, stride, Padding::Same, &d_c2)?;
            let d_b1 = relu_backward(&tape.relu1_input, &d_r1)?;
            let (d_c1, g1_gamma, g1_beta) = batchnorm_backward(&tape.bn1, &params.bn1.gamma, &d_b1)?;
            let (d_pre_main, g_conv1, _) =
                conv2d_backward(&tape.conv1_input, &params.conv1, 1, Padding::Same, &d_c1)?;

            let mut shortcut_grad = None;
            let d_pre = if project {
                let sc = params.shortcut_conv.as_ref().expect("project checked");
                let (d_pre_sc, g_sc, _) =
                    conv2d_backward(&tape.conv1_input, sc, stride, Padding::Same, upstream)?;
                shortcut_grad = Some(g_sc);
                d_pre_main.add(&d_pre_sc)?
            } else {
                d_pre_main
            };

            let d_b0 = relu_backward(relu0_input, &d_pre)?;
            let (d_input_pre, g0_gamma, g0_beta) =
                batchnorm_backward(bn0_tape, &bn0.gamma, &d_b0)?;
            let d_input = if project {
                d_input_pre
            } else {
                d_input_pre.add(upstream)?
            };

            let mut grads = vec![
                g0_gamma, g0_beta, g_conv1, g1_gamma, g1_beta, g_conv2, g2_gamma, g2_beta, g_conv3,
            ];
            if let Some(g_sc) = shortcut_grad {
                grads.push(g_sc);
            }
            Ok((d_input, grads))
        }
    }
}
