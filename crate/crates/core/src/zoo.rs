//! Ready-made architectures: the 6-block CNN and bottleneck-residual
//! backbones with a small convolutional classifier head.
//!
//! Builders produce [`ArchitectureConfig`]s; nothing here allocates
//! parameters. Named presets cover the shipped configurations, including
//! reduced-width variants small enough for quick end-to-end runs.

use crate::error::{Error, Result};
use crate::layer::{LayerSpec, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
use crate::model::{ArchitectureConfig, LayerEntry};
use crate::nn::Padding;
use crate::residual::ResidualVersion;

/// Exact rational width scaling for residual backbones. Every scaled width
/// must come out a positive integer, so reduced models stay exactly
/// proportional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidthMultiplier {
    num: usize,
    den: usize,
}

impl WidthMultiplier {
    pub fn new(num: usize, den: usize) -> Result<WidthMultiplier> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::InvalidArchitecture(format!(
                "width multiplier must be a rational in (0, 1], got {num}/{den}"
            )));
        }
        Ok(WidthMultiplier { num, den })
    }

    pub fn one() -> WidthMultiplier {
        WidthMultiplier { num: 1, den: 1 }
    }

    pub fn scale(&self, width: usize) -> Result<usize> {
        let scaled = width * self.num;
        if !scaled.is_multiple_of(self.den) || scaled / self.den == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "width {width} scaled by {}/{} is not a positive integer",
                self.num, self.den
            )));
        }
        Ok(scaled / self.den)
    }
}

fn conv(name: &str, filters: usize, kernel: usize, stride: usize, bias: bool) -> LayerEntry {
    LayerEntry {
        name: name.into(),
        spec: LayerSpec::Conv2d {
            filters,
            kernel,
            stride,
            padding: Padding::Same,
            bias,
        },
    }
}

fn relu(name: &str) -> LayerEntry {
    LayerEntry {
        name: name.into(),
        spec: LayerSpec::Relu,
    }
}

fn maxpool(name: &str, pool: usize, stride: usize) -> LayerEntry {
    LayerEntry {
        name: name.into(),
        spec: LayerSpec::Maxpool2d { pool, stride },
    }
}

fn batchnorm(name: &str) -> LayerEntry {
    LayerEntry {
        name: name.into(),
        spec: LayerSpec::Batchnorm {
            eps: DEFAULT_BN_EPS,
            momentum: DEFAULT_BN_MOMENTUM,
        },
    }
}

/// The plain 6-block network: each block is a biased 3x3 convolution,
/// ReLU, and a 2x2/2 max-pool; global average pooling and a 2-way linear
/// classifier finish the chain. The last convolution is the heatmap tap.
pub fn build_cnn6(name: &str, input_size: usize, filters: [usize; 6]) -> Result<ArchitectureConfig> {
    let mut layers = Vec::new();
    for (i, f) in filters.iter().enumerate() {
        let n = i + 1;
        layers.push(conv(&format!("conv{n}"), *f, 3, 1, true));
        layers.push(relu(&format!("relu{n}")));
        layers.push(maxpool(&format!("pool{n}"), 2, 2));
    }
    layers.push(LayerEntry {
        name: "gap".into(),
        spec: LayerSpec::GlobalAvgPool,
    });
    layers.push(LayerEntry {
        name: "fc".into(),
        spec: LayerSpec::Dense { width: 2 },
    });
    let config = ArchitectureConfig {
        name: name.into(),
        input: (3, input_size, input_size),
        layers,
        tap: "conv6".into(),
        classes: 2,
    };
    config.validate().map_err(|e| {
        Error::InvalidArchitecture(format!(
            "input {input_size} is too small for six pooling stages: {e}"
        ))
    })?;
    Ok(config)
}

/// Blocks per stage for the supported backbone depths.
pub fn resnet_stage_blocks(depth: usize) -> Result<[usize; 4]> {
    match depth {
        50 => Ok([3, 4, 6, 3]),
        101 => Ok([3, 4, 23, 3]),
        152 => Ok([3, 8, 36, 3]),
        other => Err(Error::InvalidArchitecture(format!(
            "unsupported backbone depth {other}; expected 50, 101, or 152"
        ))),
    }
}

/// Residual backbone: a 7x7/2 stem convolution (batchnorm + ReLU for v1),
/// a 3x3/2 max-pool, then four bottleneck stages. Stages 2-4 downsample in
/// their first block. Backbone convolutions carry no bias; v2 appends a
/// final batchnorm + ReLU pair.
pub fn resnet_backbone(
    depth: usize,
    version: ResidualVersion,
    width: WidthMultiplier,
) -> Result<Vec<LayerEntry>> {
    let blocks = resnet_stage_blocks(depth)?;
    let mut layers = Vec::new();
    layers.push(conv("stem.conv", width.scale(64)?, 7, 2, false));
    if version == ResidualVersion::V1 {
        layers.push(batchnorm("stem.bn"));
        layers.push(relu("stem.relu"));
    }
    layers.push(maxpool("stem.pool", 3, 2));

    let mids = [64usize, 128, 256, 512];
    for (stage, (&mid_base, &count)) in mids.iter().zip(&blocks).enumerate() {
        let mid = width.scale(mid_base)?;
        let out = width.scale(mid_base * 4)?;
        for block in 0..count {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let spec = match version {
                ResidualVersion::V1 => LayerSpec::ResidualBlockV1 {
                    mid,
                    out,
                    stride,
                    eps: DEFAULT_BN_EPS,
                    momentum: DEFAULT_BN_MOMENTUM,
                },
                ResidualVersion::V2 => LayerSpec::ResidualBlockV2 {
                    mid,
                    out,
                    stride,
                    eps: DEFAULT_BN_EPS,
                    momentum: DEFAULT_BN_MOMENTUM,
                },
            };
            layers.push(LayerEntry {
                name: format!("s{}.b{}", stage + 1, block + 1),
                spec,
            });
        }
    }
    if version == ResidualVersion::V2 {
        layers.push(batchnorm("post.bn"));
        layers.push(relu("post.relu"));
    }
    Ok(layers)
}

/// Trainable parameter count of a bare layer chain fed with `input`.
pub fn layer_param_count(
    layers: &[LayerEntry],
    input: crate::layer::ChainShape,
) -> Result<usize> {
    let mut shape = input;
    let mut total = 0;
    for entry in layers {
        total += entry.spec.param_count(&shape)?;
        shape = entry.spec.output_shape(&shape)?;
    }
    Ok(total)
}

/// Appends the convolutional classifier head to a backbone: two biased 3x3
/// convolution + ReLU + 2x2/2 pool blocks, global average pooling, a ReLU
/// hidden layer, and the 2-way classifier. The second head convolution is
/// the heatmap tap, so the backbone must hand it at least a 4x4 map for
/// both pools to apply.
pub fn attach_hybrid_head(
    name: &str,
    input_size: usize,
    backbone: Vec<LayerEntry>,
    head_conv: (usize, usize),
    head_dense: usize,
) -> Result<ArchitectureConfig> {
    let input = crate::layer::ChainShape::Map {
        c: 3,
        h: input_size,
        w: input_size,
    };
    let mut shape = input;
    for entry in &backbone {
        shape = entry.spec.output_shape(&shape).map_err(|e| {
            Error::InvalidArchitecture(format!("backbone layer {:?}: {e}", entry.name))
        })?;
    }
    match shape {
        crate::layer::ChainShape::Map { h, w, .. } if h >= 4 && w >= 4 => {}
        other => {
            return Err(Error::InvalidArchitecture(format!(
                "classifier head needs at least a 4x4 feature map from the backbone, got {}",
                other.describe()
            )))
        }
    }

    let mut layers = backbone;
    layers.push(conv("head.conv1", head_conv.0, 3, 1, true));
    layers.push(relu("head.relu1"));
    layers.push(maxpool("head.pool1", 2, 2));
    layers.push(conv("head.conv2", head_conv.1, 3, 1, true));
    layers.push(relu("head.relu2"));
    layers.push(maxpool("head.pool2", 2, 2));
    layers.push(LayerEntry {
        name: "gap".into(),
        spec: LayerSpec::GlobalAvgPool,
    });
    layers.push(LayerEntry {
        name: "head.dense1".into(),
        spec: LayerSpec::Dense { width: head_dense },
    });
    layers.push(relu("head.relu3"));
    layers.push(LayerEntry {
        name: "fc".into(),
        spec: LayerSpec::Dense { width: 2 },
    });

    let config = ArchitectureConfig {
        name: name.into(),
        input: (3, input_size, input_size),
        layers,
        tap: "head.conv2".into(),
        classes: 2,
    };
    config.validate()?;
    Ok(config)
}

fn build_resnet_hybrid(
    name: &str,
    depth: usize,
    version: ResidualVersion,
    width: WidthMultiplier,
    input_size: usize,
    head_conv: (usize, usize),
    head_dense: usize,
) -> Result<ArchitectureConfig> {
    let backbone = resnet_backbone(depth, version, width)?;
    attach_hybrid_head(name, input_size, backbone, head_conv, head_dense)
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 9] = [
    "cnn6",
    "cnn6-tiny",
    "resnet50-cnn",
    "resnet101-cnn",
    "resnet152-cnn",
    "resnet50v2-cnn",
    "resnet101v2-cnn",
    "resnet152v2-cnn",
    "resnet50-w8",
];

/// Builds a preset architecture by name.
pub fn preset(name: &str) -> Result<ArchitectureConfig> {
    match name {
        "cnn6" => build_cnn6("cnn6", 299, [32, 64, 64, 64, 128, 128]),
        "cnn6-tiny" => build_cnn6("cnn6-tiny", 64, [8, 16, 16, 16, 32, 32]),
        "resnet50-cnn" => build_resnet_hybrid(
            name,
            50,
            ResidualVersion::V1,
            WidthMultiplier::one(),
            299,
            (256, 128),
            64,
        ),
        "resnet101-cnn" => build_resnet_hybrid(
            name,
            101,
            ResidualVersion::V1,
            WidthMultiplier::one(),
            299,
            (256, 128),
            64,
        ),
        "resnet152-cnn" => build_resnet_hybrid(
            name,
            152,
            ResidualVersion::V1,
            WidthMultiplier::one(),
            299,
            (256, 128),
            64,
        ),
        "resnet50v2-cnn" => build_resnet_hybrid(
            name,
            50,
            ResidualVersion::V2,
            WidthMultiplier::one(),
            299,
            (256, 128),
            64,
        ),
        "resnet101v2-cnn" => build_resnet_hybrid(
            name,
            101,
            ResidualVersion::V2,
            WidthMultiplier::one(),
            299,
            (256, 128),
            64,
        ),
        "resnet152v2-cnn" => build_resnet_hybrid(
            name,
            152,
            ResidualVersion::V2,
            WidthMultiplier::one(),
            299,
            (256, 128),
            64,
        ),
        // Eighth-width residual backbone on 128px inputs: small enough to
        // exercise end to end while keeping the head's 4x4 minimum.
        "resnet50-w8" => build_resnet_hybrid(
            name,
            50,
            ResidualVersion::V1,
            WidthMultiplier::new(1, 8)?,
            128,
            (32, 16),
            8,
        ),
        other => Err(Error::InvalidArchitecture(format!(
            "unknown preset {other:?}; available: {}",
            PRESETS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::ChainShape;

    #[test]
    fn cnn6_parameter_count_is_exact() {
        let config = preset("cnn6").unwrap();
        assert_eq!(config.count_parameters().unwrap(), 314_946);
    }

    #[test]
    fn cnn6_tap_feature_map_shrinks_to_nine() {
        let config = preset("cnn6").unwrap();
        let shapes = config.chain_shapes().unwrap();
        let tap = config
            .layers
            .iter()
            .position(|l| l.name == "conv6")
            .unwrap();
        assert_eq!(shapes[tap + 1], ChainShape::Map { c: 128, h: 9, w: 9 });
        assert_eq!(*shapes.last().unwrap(), ChainShape::Flat { d: 2 });
    }

    #[test]
    fn cnn6_tiny_bottoms_out_at_a_2x2_tap() {
        let config = preset("cnn6-tiny").unwrap();
        let shapes = config.chain_shapes().unwrap();
        let tap = config
            .layers
            .iter()
            .position(|l| l.name == "conv6")
            .unwrap();
        assert_eq!(shapes[tap + 1], ChainShape::Map { c: 32, h: 2, w: 2 });
    }

    #[test]
    fn cnn6_rejects_inputs_too_small_to_pool_six_times() {
        assert!(build_cnn6("t", 63, [8, 16, 16, 16, 32, 32]).is_err());
        assert!(build_cnn6("t", 64, [8, 16, 16, 16, 32, 32]).is_ok());
    }

    #[test]
    fn resnet50_backbone_parameter_count_matches_reference() {
        let backbone =
            resnet_backbone(50, ResidualVersion::V1, WidthMultiplier::one()).unwrap();
        let count = layer_param_count(
            &backbone,
            ChainShape::Map {
                c: 3,
                h: 299,
                w: 299,
            },
        )
        .unwrap();
        assert_eq!(count, 23_508_032);
    }

    #[test]
    fn stage_tables_match_depth() {
        assert_eq!(resnet_stage_blocks(50).unwrap(), [3, 4, 6, 3]);
        assert_eq!(resnet_stage_blocks(101).unwrap(), [3, 4, 23, 3]);
        assert_eq!(resnet_stage_blocks(152).unwrap(), [3, 8, 36, 3]);
        assert!(resnet_stage_blocks(34).is_err());

        let names: Vec<String> = resnet_backbone(101, ResidualVersion::V1, WidthMultiplier::one())
            .unwrap()
            .iter()
            .map(|l| l.name.clone())
            .collect();
        assert!(names.contains(&"s3.b23".to_string()));
        assert!(!names.contains(&"s3.b24".to_string()));
    }

    #[test]
    fn v2_backbone_ends_with_post_activation() {
        let layers = resnet_backbone(50, ResidualVersion::V2, WidthMultiplier::one()).unwrap();
        let tail: Vec<&str> = layers.iter().rev().take(2).map(|l| l.name.as_str()).collect();
        assert_eq!(tail, ["post.relu", "post.bn"]);
        // V2 stems are a bare convolution.
        assert!(!layers.iter().any(|l| l.name == "stem.bn"));
    }

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            let config = preset(name).unwrap();
            assert_eq!(config.name, name);
            config.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("resnet18").is_err());
    }

    #[test]
    fn width_multiplier_requires_exact_division() {
        let w8 = WidthMultiplier::new(1, 8).unwrap();
        assert_eq!(w8.scale(64).unwrap(), 8);
        assert!(w8.scale(4).is_err());
        assert!(WidthMultiplier::new(3, 2).is_err());
        assert!(WidthMultiplier::new(0, 1).is_err());
    }

    #[test]
    fn w8_preset_keeps_a_4x4_backbone_output() {
        let config = preset("resnet50-w8").unwrap();
        let shapes = config.chain_shapes().unwrap();
        let last_backbone = config
            .layers
            .iter()
            .position(|l| l.name == "s4.b3")
            .unwrap();
        assert_eq!(
            shapes[last_backbone + 1],
            ChainShape::Map { c: 256, h: 4, w: 4 }
        );
    }

    #[test]
    fn hybrid_head_rejects_undersized_backbones() {
        // A 64px input leaves this backbone at 2x2 before the head.
        let backbone =
            resnet_backbone(50, ResidualVersion::V1, WidthMultiplier::new(1, 8).unwrap()).unwrap();
        let err = attach_hybrid_head("t", 64, backbone, (32, 16), 8).unwrap_err();
        assert!(err.to_string().contains("4x4"));
    }
}
