//! Whole-network assembly: a named chain of layers with a classifier head.
//!
//! An [`ArchitectureConfig`] is the serializable description (it is what a
//! checkpoint embeds); a [`Model`] pairs it with live parameter tensors.
//! Validation walks the chain once, propagating shapes, so every
//! incompatibility is caught at build time rather than mid-batch.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{layer_forward, layer_vjp, ChainShape, LayerParams, LayerSpec, TapeEntry};
use crate::nn::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One named layer in an architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    #[serde(flatten)]
    pub spec: LayerSpec,
}

/// Serializable description of a network: input geometry, the layer chain,
/// the default layer whose feature maps class-activation maps read, and the
/// number of output classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub name: String,
    /// Input geometry as (channels, height, width).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerEntry>,
    /// Name of the layer whose output feature maps heatmaps are built from.
    pub tap: String,
    pub classes: usize,
}

impl ArchitectureConfig {
    pub fn input_shape(&self) -> ChainShape {
        ChainShape::Map {
            c: self.input.0,
            h: self.input.1,
            w: self.input.2,
        }
    }

    /// Validates the whole chain and returns the shape flowing *into* each
    /// layer plus the final output shape (`len = layers.len() + 1`).
    pub fn chain_shapes(&self) -> Result<Vec<ChainShape>> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "input dimensions must all be >= 1, got {c}x{h}x{w}"
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "a classifier needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArchitecture(
                "architecture has no layers".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut shape = self.input_shape();
        shapes.push(shape);
        for entry in &self.layers {
            if entry.name.is_empty() {
                return Err(Error::InvalidArchitecture("layer with empty name".into()));
            }
            if !seen.insert(entry.name.as_str()) {
                return Err(Error::InvalidArchitecture(format!(
                    "duplicate layer name {:?}",
                    entry.name
                )));
            }
            shape = entry.spec.output_shape(&shape).map_err(|e| {
                Error::InvalidArchitecture(format!("layer {:?}: {e}", entry.name))
            })?;
            shapes.push(shape);
        }
        match shape {
            ChainShape::Flat { d } if d == self.classes => {}
            other => {
                return Err(Error::InvalidArchitecture(format!(
                    "network must end in a {}-way flat output, got {}",
                    self.classes,
                    other.describe()
                )))
            }
        }
        let tap_index = self
            .layers
            .iter()
            .position(|l| l.name == self.tap)
            .ok_or_else(|| {
                Error::InvalidArchitecture(format!("tap layer {:?} does not exist", self.tap))
            })?;
        match shapes[tap_index + 1] {
            ChainShape::Map { .. } => {}
            ChainShape::Flat { .. } => {
                return Err(Error::InvalidArchitecture(format!(
                    "tap layer {:?} must produce a feature map",
                    self.tap
                )))
            }
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.chain_shapes().map(|_| ())
    }

    /// Total trainable parameter count (running statistics excluded).
    pub fn count_parameters(&self) -> Result<usize> {
        let shapes = self.chain_shapes()?;
        let mut total = 0;
        for (entry, input) in self.layers.iter().zip(&shapes) {
            total += entry.spec.param_count(input)?;
        }
        Ok(total)
    }
}

/// One layer with its parameters.
#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
    pub params: LayerParams,
}

/// A validated architecture with live parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ArchitectureConfig,
    layers: Vec<Layer>,
}

/// How much backward-pass state a forward pass should record.
#[derive(Debug, Clone, Copy)]
pub enum TapeRequest<'a> {
    /// Record nothing; the pass cannot be differentiated.
    None,
    /// Record every layer.
    Full,
    /// Record only layers after the named one — enough to backpropagate
    /// down to that layer's output and no further.
    After(&'a str),
}

/// Per-layer backward-pass caches from one forward pass.
pub struct ModelTape {
    entries: Vec<Option<TapeEntry>>,
    batch: usize,
}

/// Result of a forward pass.
pub struct ForwardPass {
    /// Classifier logits, shape (N, classes).
    pub output: Tensor,
    pub tape: Option<ModelTape>,
    /// Output of the capture layer, if one was requested.
    pub captured: Option<Tensor>,
}

/// Result of a full backward pass.
pub struct Backprop {
    /// Gradient at the model input.
    pub input_grad: Tensor,
    /// Per layer, the gradients of its trainable tensors in declaration
    /// order (empty for parameterless layers).
    pub param_grads: Vec<Vec<Tensor>>,
}

impl Model {
    fn build(
        config: ArchitectureConfig,
        mut make: impl FnMut(&LayerSpec, &ChainShape) -> Result<LayerParams>,
    ) -> Result<Model> {
        let shapes = config.chain_shapes()?;
        let mut layers = Vec::with_capacity(config.layers.len());
        for (entry, input) in config.layers.iter().zip(&shapes) {
            layers.push(Layer {
                name: entry.name.clone(),
                spec: entry.spec.clone(),
                params: make(&entry.spec, input)?,
            });
        }
        Ok(Model { config, layers })
    }

    /// He-initializes a model, drawing parameters in layer order from `rng`.
    pub fn init(config: ArchitectureConfig, rng: &mut Rng) -> Result<Model> {
        Self::build(config, |spec, input| LayerParams::init(spec, input, rng))
    }

    /// Builds a model with zero-filled parameters, for checkpoint loading.
    pub fn zeroed(config: ArchitectureConfig) -> Result<Model> {
        Self::build(config, LayerParams::zeroed)
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no layer named {name:?}")))
    }

    /// Runs the network without touching any state. Running-statistic
    /// updates from train-mode batch normalization are discarded; use
    /// [`forward_training`](Self::forward_training) to apply them.
    pub fn forward(
        &self,
        batch: &Tensor,
        mode: Mode,
        tape: TapeRequest,
        capture: Option<&str>,
    ) -> Result<ForwardPass> {
        self.run(batch, mode, tape, capture, None)
    }

    /// Train-mode forward pass that commits batch-normalization running
    /// statistics into the model.
    pub fn forward_training(
        &mut self,
        batch: &Tensor,
        tape: TapeRequest,
    ) -> Result<ForwardPass> {
        let mut pending: Vec<(usize, Vec<crate::layer::RunningUpdate>)> = Vec::new();
        let pass = {
            let this: &Model = self;
            this.run(batch, Mode::Train, tape, None, Some(&mut pending))?
        };
        for (index, updates) in pending {
            self.layers[index].params.commit_running(updates);
        }
        Ok(pass)
    }

    fn run(
        &self,
        batch: &Tensor,
        mode: Mode,
        tape: TapeRequest,
        capture: Option<&str>,
        mut pending: Option<&mut Vec<(usize, Vec<crate::layer::RunningUpdate>)>>,
    ) -> Result<ForwardPass> {
        if batch.rank() != 4 {
            return Err(Error::InvalidArgument(format!(
                "model input must be an NCHW batch, got shape {:?}",
                batch.shape()
            )));
        }
        let (c, h, w) = self.config.input;
        if batch.shape()[1..] != [c, h, w] {
            return Err(Error::shape_mismatch(
                "model input",
                &[batch.shape()[0], c, h, w],
                batch.shape(),
            ));
        }
        let record_from = match tape {
            TapeRequest::None => usize::MAX,
            TapeRequest::Full => 0,
            TapeRequest::After(name) => self.layer_index(name)? + 1,
        };
        let capture_index = capture.map(|name| self.layer_index(name)).transpose()?;

        let mut entries = Vec::with_capacity(self.layers.len());
        let mut captured = None;
        let mut value = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let want_tape = i >= record_from;
            let out = layer_forward(&layer.spec, &layer.params, &value, mode, want_tape)
                .map_err(|e| {
                    Error::InvalidArgument(format!("layer {:?}: {e}", layer.name))
                })?;
            entries.push(out.tape);
            if !out.updates.is_empty() {
                if let Some(pending) = pending.as_deref_mut() {
                    pending.push((i, out.updates));
                }
            }
            value = out.output;
            if capture_index == Some(i) {
                captured = Some(value.clone());
            }
        }
        let tape = match tape {
            TapeRequest::None => None,
            _ => Some(ModelTape {
                entries,
                batch: batch.shape()[0],
            }),
        };
        Ok(ForwardPass {
            output: value,
            tape,
            captured,
        })
    }

    /// Full backward pass from a logits gradient, producing input and
    /// parameter gradients. Requires a [`TapeRequest::Full`] tape.
    pub fn backward(&self, tape: &ModelTape, upstream: &Tensor) -> Result<Backprop> {
        let mut param_grads: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let mut grad = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let entry = tape.entries[i].as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no tape recorded for layer {:?}; request a full tape",
                    layer.name
                ))
            })?;
            let (next, grads) = layer_vjp(&layer.spec, &layer.params, entry, &grad)?;
            param_grads[i] = grads;
            grad = next;
        }
        Ok(Backprop {
            input_grad: grad,
            param_grads,
        })
    }

    /// Backpropagates from a logits gradient down to the *output* of the
    /// named layer and stops there, returning that gradient. Works with a
    /// tape recorded via [`TapeRequest::After`] on the same layer.
    pub fn backward_to(
        &self,
        tape: &ModelTape,
        upstream: &Tensor,
        stop_layer: &str,
    ) -> Result<Tensor> {
        let stop = self.layer_index(stop_layer)?;
        let mut grad = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i <= stop {
                break;
            }
            let entry = tape.entries[i].as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no tape recorded for layer {:?}",
                    layer.name
                ))
            })?;
            let (next, _) = layer_vjp(&layer.spec, &layer.params, entry, &grad)?;
            grad = next;
        }
        Ok(grad)
    }

    pub fn batch_size_of(tape: &ModelTape) -> usize {
        tape.batch
    }

    /// Every parameter tensor as (qualified name, tensor, trainable), in
    /// the canonical layer-then-definition order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            layer.params.visit(&mut |suffix, tensor, trainable| {
                out.push((format!("{}.{}", layer.name, suffix), tensor, trainable));
            });
        }
        out
    }

    /// Mutable visitation in the same order as
    /// [`named_tensors`](Self::named_tensors).
    pub fn visit_tensors_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor, bool)) {
        for layer in &mut self.layers {
            let name = layer.name.clone();
            layer.params.visit_mut(&mut |suffix, tensor, trainable| {
                f(&format!("{name}.{suffix}"), tensor, trainable);
            });
        }
    }

    /// Replaces every parameter from `(name, tensor)` pairs. The pairs must
    /// cover the architecture exactly: unknown names, missing names, or
    /// shape mismatches are rejected.
    pub fn set_named_tensors(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        let mut provided: HashMap<String, Tensor> = HashMap::with_capacity(tensors.len());
        for (name, tensor) in tensors {
            if provided.insert(name.clone(), tensor).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "tensor {name:?} appears twice"
                )));
            }
        }
        let mut error = None;
        self.visit_tensors_mut(&mut |name, slot, _| {
            if error.is_some() {
                return;
            }
            match provided.remove(name) {
                Some(tensor) if tensor.shape() == slot.shape() => *slot = tensor,
                Some(tensor) => {
                    error = Some(Error::shape_mismatch(
                        &format!("tensor {name:?}"),
                        slot.shape(),
                        tensor.shape(),
                    ))
                }
                None => {
                    error = Some(Error::InvalidArgument(format!(
                        "tensor {name:?} is missing"
                    )))
                }
            }
        });
        if let Some(e) = error {
            return Err(e);
        }
        if !provided.is_empty() {
            let mut names: Vec<_> = provided.keys().cloned().collect();
            names.sort();
            return Err(Error::InvalidArgument(format!(
                "unknown tensors: {}",
                names.join(", ")
            )));
        }
        Ok(())
    }

    /// Total trainable parameter count.
    pub fn count_parameters(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(_, t, _)| t.len())
            .sum()
    }
}
