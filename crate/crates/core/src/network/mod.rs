//! Layer pipelines: declarative layout, shape propagation, forward/backward and
//! the model file format.

mod io;
mod presets;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use io::{MODEL_MAGIC, MODEL_VERSION};
pub use presets::{Task, PATCH_SIZE, POSITION_INPUTS};

use crate::error::{Error, Result};
use crate::layers::{ActivationKind, Cache, Layer, LayerParams, LayerSpec, Mode};
use crate::tensor::Tensor;
use crate::trainer::InitScheme;

/// Description of a patch network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// (channels, height, width) of an input patch.
    pub input_patch: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    /// Zero-based index of the fully connected layer that receives the
    /// normalized (x, y) patch position.
    #[serde(default)]
    pub aux_layer_index: Option<usize>,
    /// Per-channel mean subtracted from patches before the first layer.
    #[serde(default)]
    pub channel_mean: Option<Vec<f32>>,
}

/// Per-layer shapes produced by [`NetworkSpec::propagate`].
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeReport {
    /// `shapes[0]` is the input; `shapes[i + 1]` is the output of layer `i`.
    pub shapes: Vec<Vec<usize>>,
}

impl ShapeReport {
    pub fn output_width(&self) -> usize {
        self.shapes.last().map(|s| s.iter().product()).unwrap_or(0)
    }
}

impl NetworkSpec {
    pub fn aux_width(&self) -> usize {
        self.aux_layer_index
            .and_then(|i| self.layers.get(i))
            .map(|l| match l {
                LayerSpec::FullyConnected { aux_inputs, .. } => *aux_inputs,
                _ => 0,
            })
            .unwrap_or(0)
    }

    /// Checks every invariant and returns the per-layer shapes. Errors name
    /// the first failing layer.
    pub fn propagate(&self) -> Result<ShapeReport> {
        let (c, h, w) = self.input_patch;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Build {
                layer: 0,
                reason: format!("invalid input patch {:?}", self.input_patch),
            });
        }
        if self.layers.is_empty() {
            return Err(Error::Build {
                layer: 0,
                reason: "network has no layers".into(),
            });
        }
        if let Some(mean) = &self.channel_mean {
            if mean.len() != c {
                return Err(Error::Build {
                    layer: 0,
                    reason: format!("channel mean has {} entries for {c} channels", mean.len()),
                });
            }
        }
        let aux_layers: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::FullyConnected { aux_inputs, .. } if *aux_inputs > 0))
            .map(|(i, _)| i)
            .collect();
        match (self.aux_layer_index, aux_layers.as_slice()) {
            (None, []) => {}
            (Some(i), [j]) if i == *j => {}
            (Some(i), _) => {
                return Err(Error::Build {
                    layer: i,
                    reason: "auxiliary input index must name the single fully connected layer with aux_inputs > 0".into(),
                })
            }
            (None, [j, ..]) => {
                return Err(Error::Build {
                    layer: *j,
                    reason: "layer takes auxiliary inputs but no aux_layer_index is set".into(),
                })
            }
        }

        let mut shapes = vec![vec![c, h, w]];
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = shapes.last().expect("non-empty");
            let next = layer.output_shape(prev).map_err(|e| Error::Build {
                layer: i,
                reason: e.to_string(),
            })?;
            shapes.push(next);
        }
        let report = ShapeReport { shapes };
        if report.output_width() == 0 {
            return Err(Error::Build {
                layer: self.layers.len() - 1,
                reason: "network output is empty".into(),
            });
        }
        Ok(report)
    }
}

/// Descriptive data carried along with the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Full run configuration, embedded for reproducibility.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

/// A built network: its spec, the parameter-carrying layers and metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    shapes: ShapeReport,
    pub meta: ModelMeta,
}

/// Caches kept by a training forward pass.
#[derive(Debug)]
pub struct Trace {
    caches: Vec<Cache>,
    /// Per layer: whether it is a ReLU.
    relu: Vec<bool>,
}

impl Trace {
    /// ReLU on/off pattern and pooling winners; two traces with equal
    /// signatures took the same branch at every non-smooth point.
    pub fn branch_signature(&self) -> Vec<u32> {
        let mut sig = Vec::new();
        for (cache, &relu) in self.caches.iter().zip(&self.relu) {
            match cache {
                Cache::MaxPool { argmax, .. } => sig.extend_from_slice(argmax),
                Cache::Activation { output } if relu => {
                    sig.extend(output.data().iter().map(|&v| u32::from(v > 0.0)))
                }
                _ => {}
            }
        }
        sig
    }
}

impl Model {
    /// Builds a network and initializes every parameter.
    pub fn build(spec: NetworkSpec, init: InitScheme, rng: &mut dyn RngCore) -> Result<Model> {
        let mut model = Model::zeroed(spec)?;
        for layer in &mut model.layers {
            if let Some((fan_in, fan_out)) = layer.fans() {
                let params = layer.params_mut().expect("parametric layer");
                init.fill(&mut params.weights, fan_in, fan_out, rng);
                params.bias.fill(0.0);
            }
        }
        Ok(model)
    }

    /// Builds a network with every parameter set to zero.
    pub fn zeroed(spec: NetworkSpec) -> Result<Model> {
        let shapes = spec.propagate()?;
        let layers = spec
            .layers
            .iter()
            .zip(&shapes.shapes)
            .enumerate()
            .map(|(i, (ls, input))| {
                Layer::from_spec(ls, input).map_err(|e| Error::Build {
                    layer: i,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            spec,
            layers,
            shapes,
            meta: ModelMeta::default(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &ShapeReport {
        &self.shapes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_width(&self) -> usize {
        self.shapes.output_width()
    }

    pub fn uses_positions(&self) -> bool {
        self.spec.aux_layer_index.is_some()
    }

    pub fn params(&self) -> impl Iterator<Item = &LayerParams> {
        self.layers.iter().filter_map(|l| l.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.layers.iter_mut().filter_map(|l| l.params_mut())
    }

    pub fn num_params(&self) -> usize {
        self.params().map(|p| p.num_params()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().for_each(|p| p.zero_grads());
    }

    fn check_inputs(&self, patches: &Tensor, positions: Option<&Tensor>) -> Result<()> {
        let (n, c, h, w) = patches.dims4()?;
        if (c, h, w) != self.spec.input_patch {
            return Err(Error::dim(format!(
                "network expects {:?} patches, got {:?}",
                self.spec.input_patch,
                patches.shape()
            )));
        }
        match (self.uses_positions(), positions) {
            (true, None) => Err(Error::AuxInput(
                "network has a spatial prior layer but no positions were given".into(),
            )),
            (false, Some(_)) => Err(Error::AuxInput(
                "positions given to a network without a spatial prior layer".into(),
            )),
            (true, Some(p)) if p.shape() != [n, self.spec.aux_width()] => {
                Err(Error::AuxInput(format!(
                    "positions must have shape [{n}, {}], got {:?}",
                    self.spec.aux_width(),
                    p.shape()
                )))
            }
            _ => Ok(()),
        }
    }

    fn centered(&self, patches: &Tensor) -> Option<Tensor> {
        let mean = self.spec.channel_mean.as_ref()?;
        let mut out = patches.clone();
        let (_, c, h, w) = out.dims4().ok()?;
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v -= mean[(i / (h * w)) % c];
        }
        Some(out)
    }

    fn run(
        &self,
        start: usize,
        input: Tensor,
        positions: Option<&Tensor>,
        mode: &mut Mode<'_>,
        caches: Option<&mut Vec<Cache>>,
    ) -> Result<Tensor> {
        let mut x = input;
        let mut caches = caches;
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            let aux = if Some(i) == self.spec.aux_layer_index {
                positions
            } else {
                None
            };
            let (y, cache) = layer.forward(&x, aux, mode).map_err(|e| match e {
                Error::Dimension(msg) => {
                    Error::Dimension(format!("layer {i} ({}): {msg}", layer.spec()))
                }
                other => other,
            })?;
            if let Some(c) = caches.as_deref_mut() {
                c.push(cache);
            }
            x = y;
        }
        let n = x.batch();
        let width = x.sample_len();
        x.reshape(&[n, width])
    }

    /// Inference forward pass: `patches` is N×C×H×W, `positions` N×2 when
    /// the network has a spatial prior. Returns N×O scores.
    pub fn forward(&self, patches: &Tensor, positions: Option<&Tensor>) -> Result<Tensor> {
        self.check_inputs(patches, positions)?;
        let input = self.centered(patches).unwrap_or_else(|| patches.clone());
        self.run(0, input, positions, &mut Mode::Infer, None)
    }

    /// Output of the first layer alone, for callers that share it between
    /// overlapping patches.
    pub fn first_layer(&self, input: &Tensor) -> Result<Tensor> {
        input.dims4()?;
        let centered = self.centered(input);
        let input = centered.as_ref().unwrap_or(input);
        Ok(self.layers[0].forward(input, None, &mut Mode::Infer)?.0)
    }

    /// Runs layers `1..` on precomputed first-layer activations.
    pub fn forward_after_first(&self, first: Tensor, positions: Option<&Tensor>) -> Result<Tensor> {
        if self.uses_positions() && self.spec.aux_layer_index == Some(0) {
            return Err(Error::AuxInput(
                "the first layer takes positions and cannot be shared".into(),
            ));
        }
        self.run(1, first, positions, &mut Mode::Infer, None)
    }

    /// Training forward pass; keeps the caches needed by [`Model::backward`].
    pub fn forward_train(
        &self,
        patches: &Tensor,
        positions: Option<&Tensor>,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor, Trace)> {
        self.check_inputs(patches, positions)?;
        let input = self.centered(patches).unwrap_or_else(|| patches.clone());
        let mut caches = Vec::with_capacity(self.layers.len());
        let out = self.run(
            0,
            input,
            positions,
            &mut Mode::Train(rng),
            Some(&mut caches),
        )?;
        let relu = self
            .layers
            .iter()
            .map(|l| matches!(l, Layer::Activation(ActivationKind::Relu)))
            .collect();
        Ok((out, Trace { caches, relu }))
    }

    /// Backpropagates `loss_grad` (N×O) and accumulates every parameter
    /// gradient. Returns the gradient with respect to the input patches.
    pub fn backward(&mut self, trace: &Trace, loss_grad: &Tensor) -> Result<Tensor> {
        self.backward_inner(trace, loss_grad, true)
            .map(|g| g.expect("input gradient requested"))
    }

    /// Like [`Model::backward`] but skips the input gradient of the first
    /// layer, which training never needs.
    pub fn backward_params(&mut self, trace: &Trace, loss_grad: &Tensor) -> Result<()> {
        self.backward_inner(trace, loss_grad, false).map(|_| ())
    }

    fn backward_inner(
        &mut self,
        trace: &Trace,
        loss_grad: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::dim("trace does not match this network"));
        }
        let mut grad = loss_grad.clone();
        let last = self.shapes.shapes.len() - 1;
        let mut out_shape = vec![grad.batch()];
        out_shape.extend_from_slice(&self.shapes.shapes[last]);
        grad = grad.reshape(&out_shape)?;
        for (i, (layer, cache)) in self.layers.iter_mut().zip(&trace.caches).enumerate().rev() {
            let need = i > 0 || need_input_grad;
            match layer.backward(&grad, cache, need)? {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        let n = grad.batch();
        let (c, h, w) = self.spec.input_patch;
        grad.reshape(&[n, c, h, w]).map(Some)
    }
}
