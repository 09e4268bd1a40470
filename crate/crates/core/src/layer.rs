//! Layer descriptors and their parameter stores.
//!
//! A [`LayerSpec`] is a purely declarative description: hyperparameters
//! only, serializable, with no tensors. Given the shape flowing into it, a
//! spec can derive its full parameter layout ([`LayerSpec::param_defs`]),
//! its output shape, and an initialized [`LayerParams`]. Everything that
//! needs to agree on parameter order (initialization, optimization,
//! checkpoints) derives it from the same `param_defs` sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_forward, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    global_avg_pool_backward, global_avg_pool_forward, maxpool2d_backward, maxpool2d_forward,
    relu_backward, relu_forward, BatchNormTape, Mode, Padding,
};
use crate::residual::{
    residual_forward, residual_vjp, ResidualParams, ResidualTape, ResidualVersion,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

/// Shape of the value flowing between layers, without the batch axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainShape {
    /// A feature map: channels x height x width.
    Map { c: usize, h: usize, w: usize },
    /// A flat feature vector.
    Flat { d: usize },
}

impl ChainShape {
    pub fn describe(&self) -> String {
        match self {
            ChainShape::Map { c, h, w } => format!("{c}x{h}x{w} map"),
            ChainShape::Flat { d } => format!("{d}-vector"),
        }
    }
}

fn default_stride() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_padding() -> Padding {
    Padding::Same
}
fn default_eps() -> f64 {
    DEFAULT_BN_EPS
}
fn default_momentum() -> f64 {
    DEFAULT_BN_MOMENTUM
}

/// Declarative layer description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Maxpool2d {
        pool: usize,
        #[serde(default = "default_stride")]
        stride: usize,
    },
    GlobalAvgPool,
    Dense {
        width: usize,
    },
    Relu,
    Batchnorm {
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    ResidualBlockV1 {
        mid: usize,
        out: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    ResidualBlockV2 {
        mid: usize,
        out: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
}

/// How a parameter tensor is filled at initialization time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamInit {
    /// Normal(0, sqrt(2 / fan_in)), two PRNG draws per element.
    He { fan_in: usize },
    Zeros,
    Ones,
}

/// One parameter tensor of a layer: relative name, shape, whether the
/// optimizer updates it, and its initialization rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDef {
    pub name: String,
    pub dims: Vec<usize>,
    pub trainable: bool,
    pub init: ParamInit,
}

fn bn_defs(prefix: &str, channels: usize) -> Vec<ParamDef> {
    let name = |suffix: &str| {
        if prefix.is_empty() {
            suffix.to_string()
        } else {
            format!("{prefix}.{suffix}")
        }
    };
    vec![
        ParamDef {
            name: name("gamma"),
            dims: vec![channels],
            trainable: true,
            init: ParamInit::Ones,
        },
        ParamDef {
            name: name("beta"),
            dims: vec![channels],
            trainable: true,
            init: ParamInit::Zeros,
        },
        ParamDef {
            name: name("running_mean"),
            dims: vec![channels],
            trainable: false,
            init: ParamInit::Zeros,
        },
        ParamDef {
            name: name("running_var"),
            dims: vec![channels],
            trainable: false,
            init: ParamInit::Ones,
        },
    ]
}

impl LayerSpec {
    fn require_map(&self, input: &ChainShape, what: &str) -> Result<(usize, usize, usize)> {
        match input {
            ChainShape::Map { c, h, w } => Ok((*c, *h, *w)),
            ChainShape::Flat { .. } => Err(Error::InvalidArchitecture(format!(
                "{what} requires a feature map input, got {}",
                input.describe()
            ))),
        }
    }

    /// Shape produced when this layer consumes `input`. Errors mean the
    /// layer cannot be applied at all (wrong rank, window too large, ...).
    pub fn output_shape(&self, input: &ChainShape) -> Result<ChainShape> {
        match self {
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
                ..
            } => {
                let (_, h, w) = self.require_map(input, "conv2d")?;
                if *filters == 0 || *kernel == 0 {
                    return Err(Error::InvalidArchitecture(
                        "conv2d filters and kernel must be >= 1".into(),
                    ));
                }
                let g = crate::nn::conv_geometry(h, w, *kernel, *kernel, *stride, *padding)?;
                Ok(ChainShape::Map {
                    c: *filters,
                    h: g.out_h,
                    w: g.out_w,
                })
            }
            LayerSpec::Maxpool2d { pool, stride } => {
                let (c, h, w) = self.require_map(input, "maxpool2d")?;
                if *pool == 0 || *stride == 0 {
                    return Err(Error::InvalidArchitecture(
                        "maxpool2d pool and stride must be >= 1".into(),
                    ));
                }
                if *pool > h || *pool > w {
                    return Err(Error::InvalidArchitecture(format!(
                        "maxpool2d window {pool} exceeds input {h}x{w}"
                    )));
                }
                Ok(ChainShape::Map {
                    c,
                    h: (h - pool) / stride + 1,
                    w: (w - pool) / stride + 1,
                })
            }
            LayerSpec::GlobalAvgPool => {
                let (c, _, _) = self.require_map(input, "global_avg_pool")?;
                Ok(ChainShape::Flat { d: c })
            }
            LayerSpec::Dense { width } => match input {
                ChainShape::Flat { .. } if *width == 0 => Err(Error::InvalidArchitecture(
                    "dense width must be >= 1".into(),
                )),
                ChainShape::Flat { .. } => Ok(ChainShape::Flat { d: *width }),
                ChainShape::Map { .. } => Err(Error::InvalidArchitecture(format!(
                    "dense requires a flat input, got {}",
                    input.describe()
                ))),
            },
            LayerSpec::Relu => Ok(*input),
            LayerSpec::Batchnorm { eps, momentum } => {
                self.require_map(input, "batchnorm")?;
                if !eps.is_finite() || *eps <= 0.0 {
                    return Err(Error::InvalidArchitecture(
                        "batchnorm eps must be positive and finite".into(),
                    ));
                }
                if !(0.0..=1.0).contains(momentum) {
                    return Err(Error::InvalidArchitecture(
                        "batchnorm momentum must be in [0, 1]".into(),
                    ));
                }
                Ok(*input)
            }
            LayerSpec::ResidualBlockV1 {
                mid, out, stride, ..
            }
            | LayerSpec::ResidualBlockV2 {
                mid, out, stride, ..
            } => {
                let (_, h, w) = self.require_map(input, "residual block")?;
                if *mid == 0 || *out == 0 || *stride == 0 {
                    return Err(Error::InvalidArchitecture(
                        "residual block widths and stride must be >= 1".into(),
                    ));
                }
                Ok(ChainShape::Map {
                    c: *out,
                    h: h.div_ceil(*stride),
                    w: w.div_ceil(*stride),
                })
            }
        }
    }

    /// Whether this block needs a projection on its identity path.
    pub fn residual_projects(&self, input: &ChainShape) -> Result<bool> {
        match self {
            LayerSpec::ResidualBlockV1 { out, stride, .. }
            | LayerSpec::ResidualBlockV2 { out, stride, .. } => {
                let (c, _, _) = self.require_map(input, "residual block")?;
                Ok(*stride != 1 || c != *out)
            }
            _ => Err(Error::InvalidArgument(
                "residual_projects called on a non-residual layer".into(),
            )),
        }
    }

    /// Full parameter layout for this layer applied to `input`, in the
    /// canonical order shared by initialization, gradients, the optimizer,
    /// and checkpoints.
    pub fn param_defs(&self, input: &ChainShape) -> Result<Vec<ParamDef>> {
        // Validates the application as a side effect.
        self.output_shape(input)?;
        match self {
            LayerSpec::Conv2d {
                filters,
                kernel,
                bias,
                ..
            } => {
                let (c, _, _) = self.require_map(input, "conv2d")?;
                let fan_in = c * kernel * kernel;
                let mut defs = vec![ParamDef {
                    name: "weight".into(),
                    dims: vec![*filters, c, *kernel, *kernel],
                    trainable: true,
                    init: ParamInit::He { fan_in },
                }];
                if *bias {
                    defs.push(ParamDef {
                        name: "bias".into(),
                        dims: vec![*filters],
                        trainable: true,
                        init: ParamInit::Zeros,
                    });
                }
                Ok(defs)
            }
            LayerSpec::Dense { width } => {
                let d = match input {
                    ChainShape::Flat { d } => *d,
                    ChainShape::Map { .. } => unreachable!("output_shape validated input"),
                };
                Ok(vec![
                    ParamDef {
                        name: "weight".into(),
                        dims: vec![d, *width],
                        trainable: true,
                        init: ParamInit::He { fan_in: d },
                    },
                    ParamDef {
                        name: "bias".into(),
                        dims: vec![*width],
                        trainable: true,
                        init: ParamInit::Zeros,
                    },
                ])
            }
            LayerSpec::Batchnorm { .. } => {
                let (c, _, _) = self.require_map(input, "batchnorm")?;
                Ok(bn_defs("", c))
            }
            LayerSpec::ResidualBlockV1 { mid, out, .. } => {
                let (c, _, _) = self.require_map(input, "residual block")?;
                let project = self.residual_projects(input)?;
                let mut defs = Vec::new();
                defs.push(conv_def("conv1.weight", *mid, c, 1));
                defs.extend(bn_defs("bn1", *mid));
                defs.push(conv_def("conv2.weight", *mid, *mid, 3));
                defs.extend(bn_defs("bn2", *mid));
                defs.push(conv_def("conv3.weight", *out, *mid, 1));
                defs.extend(bn_defs("bn3", *out));
                if project {
                    defs.push(conv_def("shortcut.conv.weight", *out, c, 1));
                    defs.extend(bn_defs("shortcut.bn", *out));
                }
                Ok(defs)
            }
            LayerSpec::ResidualBlockV2 { mid, out, .. } => {
                let (c, _, _) = self.require_map(input, "residual block")?;
                let project = self.residual_projects(input)?;
                let mut defs = Vec::new();
                defs.extend(bn_defs("bn0", c));
                defs.push(conv_def("conv1.weight", *mid, c, 1));
                defs.extend(bn_defs("bn1", *mid));
                defs.push(conv_def("conv2.weight", *mid, *mid, 3));
                defs.extend(bn_defs("bn2", *mid));
                defs.push(conv_def("conv3.weight", *out, *mid, 1));
                if project {
                    defs.push(conv_def("shortcut.conv.weight", *out, c, 1));
                }
                Ok(defs)
            }
            LayerSpec::Maxpool2d { .. } | LayerSpec::GlobalAvgPool | LayerSpec::Relu => {
                Ok(Vec::new())
            }
        }
    }

    /// Total trainable element count for this layer applied to `input`.
    pub fn param_count(&self, input: &ChainShape) -> Result<usize> {
        Ok(self
            .param_defs(input)?
            .iter()
            .filter(|d| d.trainable)
            .map(|d| d.dims.iter().product::<usize>())
            .sum())
    }
}

fn conv_def(name: &str, filters: usize, channels: usize, kernel: usize) -> ParamDef {
    ParamDef {
        name: name.into(),
        dims: vec![filters, channels, kernel, kernel],
        trainable: true,
        init: ParamInit::He {
            fan_in: channels * kernel * kernel,
        },
    }
}

/// Batch normalization parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Parameter tensors of one layer.
// Residual variants are much larger than the rest, but models hold at most
// a few dozen layers, so boxing would buy nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Empty,
    Conv {
        weight: Tensor,
        bias: Option<Tensor>,
    },
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    BatchNorm(BnParams),
    Residual(ResidualParams),
}

/// Fills one parameter tensor according to its definition. He tensors
/// consume exactly two PRNG draws per element, in row-major order; constant
/// tensors consume none.
fn materialize(def: &ParamDef, rng: &mut Rng) -> Tensor {
    match def.init {
        ParamInit::He { fan_in } => {
            let std = (2.0 / fan_in as f64).sqrt();
            let len: usize = def.dims.iter().product();
            let data = (0..len).map(|_| std * rng.next_normal()).collect();
            Tensor::new(&def.dims, data).expect("parameter definition is self-consistent")
        }
        ParamInit::Zeros => Tensor::zeros(&def.dims),
        ParamInit::Ones => Tensor::filled(&def.dims, 1.0),
    }
}

fn take_bn(tensors: &mut impl Iterator<Item = Tensor>) -> BnParams {
    BnParams {
        gamma: tensors.next().expect("bn gamma"),
        beta: tensors.next().expect("bn beta"),
        running_mean: tensors.next().expect("bn running mean"),
        running_var: tensors.next().expect("bn running var"),
    }
}

impl LayerParams {
    /// He-initializes parameters for `spec` applied to `input`, drawing from
    /// `rng` in `param_defs` order.
    pub fn init(spec: &LayerSpec, input: &ChainShape, rng: &mut Rng) -> Result<LayerParams> {
        let defs = spec.param_defs(input)?;
        let tensors: Vec<Tensor> = defs.iter().map(|d| materialize(d, rng)).collect();
        Ok(Self::assemble(spec, input, tensors))
    }

    /// Zero-filled parameters with the correct shapes (checkpoint loading
    /// overwrites them tensor by tensor).
    pub fn zeroed(spec: &LayerSpec, input: &ChainShape) -> Result<LayerParams> {
        let defs = spec.param_defs(input)?;
        let tensors: Vec<Tensor> = defs.iter().map(|d| Tensor::zeros(&d.dims)).collect();
        Ok(Self::assemble(spec, input, tensors))
    }

    /// Builds the parameter structure from tensors listed in `param_defs`
    /// order. The caller guarantees count and shapes.
    pub fn assemble(spec: &LayerSpec, input: &ChainShape, tensors: Vec<Tensor>) -> LayerParams {
        let mut it = tensors.into_iter();
        let params = match spec {
            LayerSpec::Conv2d { bias, .. } => LayerParams::Conv {
                weight: it.next().expect("conv weight"),
                bias: if *bias {
                    Some(it.next().expect("conv bias"))
                } else {
                    None
                },
            },
            LayerSpec::Dense { .. } => LayerParams::Dense {
                weight: it.next().expect("dense weight"),
                bias: it.next().expect("dense bias"),
            },
            LayerSpec::Batchnorm { .. } => LayerParams::BatchNorm(take_bn(&mut it)),
            LayerSpec::ResidualBlockV1 { .. } => {
                let project = spec
                    .residual_projects(input)
                    .expect("assemble follows a successful param_defs");
                LayerParams::Residual(ResidualParams {
                    bn0: None,
                    conv1: it.next().expect("conv1"),
                    bn1: take_bn(&mut it),
                    conv2: it.next().expect("conv2"),
                    bn2: take_bn(&mut it),
                    conv3: it.next().expect("conv3"),
                    bn3: Some(take_bn(&mut it)),
                    shortcut_conv: project.then(|| it.next().expect("shortcut conv")),
                    shortcut_bn: project.then(|| take_bn(&mut it)),
                })
            }
            LayerSpec::ResidualBlockV2 { .. } => {
                let project = spec
                    .residual_projects(input)
                    .expect("assemble follows a successful param_defs");
                LayerParams::Residual(ResidualParams {
                    bn0: Some(take_bn(&mut it)),
                    conv1: it.next().expect("conv1"),
                    bn1: take_bn(&mut it),
                    conv2: it.next().expect("conv2"),
                    bn2: take_bn(&mut it),
                    conv3: it.next().expect("conv3"),
                    bn3: None,
                    shortcut_conv: project.then(|| it.next().expect("shortcut conv")),
                    shortcut_bn: None,
                })
            }
            LayerSpec::Maxpool2d { .. } | LayerSpec::GlobalAvgPool | LayerSpec::Relu => {
                LayerParams::Empty
            }
        };
        debug_assert!(it.next().is_none(), "assemble consumed every tensor");
        params
    }

    /// Visits every parameter tensor as (relative name, tensor, trainable),
    /// in exactly `param_defs` order.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&str, &'a Tensor, bool)) {
        fn visit_bn<'a>(
            prefix: &str,
            bn: &'a BnParams,
            f: &mut impl FnMut(&str, &'a Tensor, bool),
        ) {
            let name = |suffix: &str| {
                if prefix.is_empty() {
                    suffix.to_string()
                } else {
                    format!("{prefix}.{suffix}")
                }
            };
            f(&name("gamma"), &bn.gamma, true);
            f(&name("beta"), &bn.beta, true);
            f(&name("running_mean"), &bn.running_mean, false);
            f(&name("running_var"), &bn.running_var, false);
        }
        match self {
            LayerParams::Empty => {}
            LayerParams::Conv { weight, bias } => {
                f("weight", weight, true);
                if let Some(b) = bias {
                    f("bias", b, true);
                }
            }
            LayerParams::Dense { weight, bias } => {
                f("weight", weight, true);
                f("bias", bias, true);
            }
            LayerParams::BatchNorm(bn) => visit_bn("", bn, f),
            LayerParams::Residual(r) => {
                if let Some(bn0) = &r.bn0 {
                    visit_bn("bn0", bn0, f);
                }
                f("conv1.weight", &r.conv1, true);
                visit_bn("bn1", &r.bn1, f);
                f("conv2.weight", &r.conv2, true);
                visit_bn("bn2", &r.bn2, f);
                f("conv3.weight", &r.conv3, true);
                if let Some(bn3) = &r.bn3 {
                    visit_bn("bn3", bn3, f);
                }
                if let Some(sc) = &r.shortcut_conv {
                    f("shortcut.conv.weight", sc, true);
                }
                if let Some(bn) = &r.shortcut_bn {
                    visit_bn("shortcut.bn", bn, f);
                }
            }
        }
    }

    /// Mutable counterpart of [`visit`](Self::visit), same order.
    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor, bool)) {
        fn visit_bn(prefix: &str, bn: &mut BnParams, f: &mut impl FnMut(&str, &mut Tensor, bool)) {
            let name = |suffix: &str| {
                if prefix.is_empty() {
                    suffix.to_string()
                } else {
                    format!("{prefix}.{suffix}")
                }
            };
            f(&name("gamma"), &mut bn.gamma, true);
            f(&name("beta"), &mut bn.beta, true);
            f(&name("running_mean"), &mut bn.running_mean, false);
            f(&name("running_var"), &mut bn.running_var, false);
        }
        match self {
            LayerParams::Empty => {}
            LayerParams::Conv { weight, bias } => {
                f("weight", weight, true);
                if let Some(b) = bias {
                    f("bias", b, true);
                }
            }
            LayerParams::Dense { weight, bias } => {
                f("weight", weight, true);
                f("bias", bias, true);
            }
            LayerParams::BatchNorm(bn) => visit_bn("", bn, f),
            LayerParams::Residual(r) => {
                if let Some(bn0) = &mut r.bn0 {
                    visit_bn("bn0", bn0, f);
                }
                f("conv1.weight", &mut r.conv1, true);
                visit_bn("bn1", &mut r.bn1, f);
                f("conv2.weight", &mut r.conv2, true);
                visit_bn("bn2", &mut r.bn2, f);
                f("conv3.weight", &mut r.conv3, true);
                if let Some(bn3) = &mut r.bn3 {
                    visit_bn("bn3", bn3, f);
                }
                if let Some(sc) = &mut r.shortcut_conv {
                    f("shortcut.conv.weight", sc, true);
                }
                if let Some(bn) = &mut r.shortcut_bn {
                    visit_bn("shortcut.bn", bn, f);
                }
            }
        }
    }

    /// Applies pending running-statistic updates produced by a training
    /// forward pass. Slots name the batchnorm group within this layer.
    pub fn commit_running(&mut self, updates: Vec<RunningUpdate>) {
        for update in updates {
            let bn = match self {
                LayerParams::BatchNorm(bn) => {
                    debug_assert!(update.slot.is_empty());
                    bn
                }
                LayerParams::Residual(r) => match update.slot.as_str() {
                    "bn0" => r.bn0.as_mut().expect("bn0 update on a v2 block"),
                    "bn1" => &mut r.bn1,
                    "bn2" => &mut r.bn2,
                    "bn3" => r.bn3.as_mut().expect("bn3 update on a v1 block"),
                    "shortcut.bn" => r
                        .shortcut_bn
                        .as_mut()
                        .expect("shortcut update on a projecting block"),
                    other => unreachable!("unknown batchnorm slot {other}"),
                },
                _ => unreachable!("running update on a layer without batchnorm"),
            };
            bn.running_mean = update.mean;
            bn.running_var = update.var;
        }
    }
}

/// Deferred running-statistics update from one batchnorm application.
pub struct RunningUpdate {
    /// Batchnorm group within the layer: empty for a plain batchnorm layer,
    /// else "bn0" | "bn1" | "bn2" | "bn3" | "shortcut.bn".
    pub slot: String,
    pub mean: Tensor,
    pub var: Tensor,
}

/// Values cached by a forward pass for the corresponding backward pass.
pub enum TapeEntry {
    Conv {
        input: Tensor,
    },
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Gap {
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor,
    },
    Relu {
        input: Tensor,
    },
    BatchNorm(BatchNormTape),
    Residual(Box<ResidualTape>),
}

/// Output of one layer application.
pub struct LayerForward {
    pub output: Tensor,
    pub tape: Option<TapeEntry>,
    pub updates: Vec<RunningUpdate>,
}

/// Runs one layer. Pure: running-statistic changes are returned in
/// `updates`, never applied. `want_tape` controls whether backward-pass
/// caches are recorded.
pub fn layer_forward(
    spec: &LayerSpec,
    params: &LayerParams,
    input: &Tensor,
    mode: Mode,
    want_tape: bool,
) -> Result<LayerForward> {
    match (spec, params) {
        (
            LayerSpec::Conv2d {
                stride, padding, ..
            },
            LayerParams::Conv { weight, bias },
        ) => {
            let output = conv2d_forward(input, weight, bias.as_ref(), *stride, *padding)?;
            Ok(LayerForward {
                output,
                tape: want_tape.then(|| TapeEntry::Conv {
                    input: input.clone(),
                }),
                updates: Vec::new(),
            })
        }
        (LayerSpec::Maxpool2d { pool, stride }, LayerParams::Empty) => {
            let (output, argmax) = maxpool2d_forward(input, *pool, *stride)?;
            Ok(LayerForward {
                output,
                tape: want_tape.then(|| TapeEntry::MaxPool {
                    input_shape: input.shape().to_vec(),
                    argmax,
                }),
                updates: Vec::new(),
            })
        }
        (LayerSpec::GlobalAvgPool, LayerParams::Empty) => {
            let output = global_avg_pool_forward(input)?;
            Ok(LayerForward {
                output,
                tape: want_tape.then(|| TapeEntry::Gap {
                    input_shape: input.shape().to_vec(),
                }),
                updates: Vec::new(),
            })
        }
        (LayerSpec::Dense { .. }, LayerParams::Dense { weight, bias }) => {
            let output = dense_forward(input, weight, bias)?;
            Ok(LayerForward {
                output,
                tape: want_tape.then(|| TapeEntry::Dense {
                    input: input.clone(),
                }),
                updates: Vec::new(),
            })
        }
        (LayerSpec::Relu, LayerParams::Empty) => Ok(LayerForward {
            output: relu_forward(input),
            tape: want_tape.then(|| TapeEntry::Relu {
                input: input.clone(),
            }),
            updates: Vec::new(),
        }),
        (LayerSpec::Batchnorm { eps, momentum }, LayerParams::BatchNorm(bn)) => {
            let result = batchnorm_forward(
                input,
                &bn.gamma,
                &bn.beta,
                &bn.running_mean,
                &bn.running_var,
                mode,
                *eps,
                *momentum,
            )?;
            let updates = result
                .updated_running
                .map(|(mean, var)| {
                    vec![RunningUpdate {
                        slot: String::new(),
                        mean,
                        var,
                    }]
                })
                .unwrap_or_default();
            Ok(LayerForward {
                output: result.output,
                tape: want_tape.then_some(TapeEntry::BatchNorm(result.tape)),
                updates,
            })
        }
        (
            LayerSpec::ResidualBlockV1 {
                stride,
                eps,
                momentum,
                ..
            },
            LayerParams::Residual(r),
        ) => residual_forward(
            ResidualVersion::V1,
            r,
            input,
            *stride,
            *eps,
            *momentum,
            mode,
            want_tape,
        ),
        (
            LayerSpec::ResidualBlockV2 {
                stride,
                eps,
                momentum,
                ..
            },
            LayerParams::Residual(r),
        ) => residual_forward(
            ResidualVersion::V2,
            r,
            input,
            *stride,
            *eps,
            *momentum,
            mode,
            want_tape,
        ),
        _ => Err(Error::InvalidArgument(
            "layer parameters do not match the layer kind".into(),
        )),
    }
}

/// Vector-Jacobian product of one layer: maps the gradient flowing into the
/// layer's output to (gradient at its input, gradients of its trainable
/// parameters). Parameter gradients come back in `param_defs` order,
/// trainable entries only.
pub fn layer_vjp(
    spec: &LayerSpec,
    params: &LayerParams,
    tape: &TapeEntry,
    upstream: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    match (spec, params, tape) {
        (
            LayerSpec::Conv2d {
                stride, padding, ..
            },
            LayerParams::Conv { weight, bias },
            TapeEntry::Conv { input },
        ) => {
            let (gi, gw, gb) = conv2d_backward(input, weight, *stride, *padding, upstream)?;
            let mut grads = vec![gw];
            if bias.is_some() {
                grads.push(gb);
            }
            Ok((gi, grads))
        }
        (
            LayerSpec::Maxpool2d { .. },
            LayerParams::Empty,
            TapeEntry::MaxPool { input_shape, argmax },
        ) => Ok((maxpool2d_backward(input_shape, argmax, upstream)?, Vec::new())),
        (LayerSpec::GlobalAvgPool, LayerParams::Empty, TapeEntry::Gap { input_shape }) => Ok((
            global_avg_pool_backward(input_shape, upstream)?,
            Vec::new(),
        )),
        (
            LayerSpec::Dense { .. },
            LayerParams::Dense { weight, .. },
            TapeEntry::Dense { input },
        ) => {
            let (gi, gw, gb) = dense_backward(input, weight, upstream)?;
            Ok((gi, vec![gw, gb]))
        }
        (LayerSpec::Relu, LayerParams::Empty, TapeEntry::Relu { input }) => {
            Ok((relu_backward(input, upstream)?, Vec::new()))
        }
        (
            LayerSpec::Batchnorm { .. },
            LayerParams::BatchNorm(bn),
            TapeEntry::BatchNorm(tape),
        ) => {
            let (gi, gg, gb) = crate::nn::batchnorm_backward(tape, &bn.gamma, upstream)?;
            Ok((gi, vec![gg, gb]))
        }
        (
            LayerSpec::ResidualBlockV1 { stride, .. },
            LayerParams::Residual(r),
            TapeEntry::Residual(tape),
        ) => residual_vjp(ResidualVersion::V1, r, tape, *stride, upstream),
        (
            LayerSpec::ResidualBlockV2 { stride, .. },
            LayerParams::Residual(r),
            TapeEntry::Residual(tape),
        ) => residual_vjp(ResidualVersion::V2, r, tape, *stride, upstream),
        _ => Err(Error::InvalidArgument(
            "layer tape does not match the layer kind".into(),
        )),
    }
}
