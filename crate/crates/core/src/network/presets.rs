//! The road-detection and urban-scene architectures, plus shrunken copies
//! of both for gradient checking.

use super::NetworkSpec;
use crate::layers::{ActivationKind, LayerSpec};

/// Number of position features appended at the spatial-prior layer.
pub const POSITION_INPUTS: usize = 2;
pub const PATCH_SIZE: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Road,
    Urban,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Road => 2,
            Task::Urban => 8,
        }
    }
}

struct Sizes {
    patch: usize,
    conv1: (usize, usize),
    conv2: (usize, usize),
    fc1: usize,
    fc2: usize,
    out: usize,
    hidden: ActivationKind,
    last: ActivationKind,
}

fn assemble(s: Sizes) -> NetworkSpec {
    use LayerSpec::*;
    let act = |kind| Activation { kind };
    NetworkSpec {
        input_patch: (3, s.patch, s.patch),
        layers: vec![
            Conv {
                kh: s.conv1.0,
                kw: s.conv1.0,
                out_channels: s.conv1.1,
            },
            MaxPool { ph: 2, pw: 2 },
            act(s.hidden),
            Conv {
                kh: s.conv2.0,
                kw: s.conv2.0,
                out_channels: s.conv2.1,
            },
            act(s.hidden),
            FullyConnected {
                out: s.fc1,
                aux_inputs: 0,
            },
            act(s.hidden),
            FullyConnected {
                out: s.fc2,
                aux_inputs: POSITION_INPUTS,
            },
            act(s.hidden),
            FullyConnected {
                out: s.out,
                aux_inputs: 0,
            },
            act(s.last),
        ],
        aux_layer_index: Some(7),
        channel_mean: None,
    }
}

impl NetworkSpec {
    /// Road detection: 28×28 patches, ReLU hidden units, one tanh output.
    pub fn road() -> NetworkSpec {
        assemble(Sizes {
            patch: PATCH_SIZE,
            conv1: (7, 12),
            conv2: (5, 6),
            fc1: 48,
            fc2: 192,
            out: 1,
            hidden: ActivationKind::Relu,
            last: ActivationKind::Tanh,
        })
    }

    /// Urban scenes: 28×28 patches, tanh hidden units, eight sigmoid outputs.
    pub fn urban() -> NetworkSpec {
        assemble(Sizes {
            patch: PATCH_SIZE,
            conv1: (7, 16),
            conv2: (5, 12),
            fc1: 64,
            fc2: 192,
            out: 8,
            hidden: ActivationKind::Tanh,
            last: ActivationKind::Sigmoid,
        })
    }

    pub fn preset(task: Task) -> NetworkSpec {
        match task {
            Task::Road => NetworkSpec::road(),
            Task::Urban => NetworkSpec::urban(),
        }
    }

    /// Same layer sequence as [`NetworkSpec::preset`] on 8×8 patches with
    /// two-filter convolutions.
    pub fn tiny(task: Task) -> NetworkSpec {
        let (out, hidden, last) = match task {
            Task::Road => (1, ActivationKind::Relu, ActivationKind::Tanh),
            Task::Urban => (8, ActivationKind::Tanh, ActivationKind::Sigmoid),
        };
        assemble(Sizes {
            patch: 8,
            conv1: (3, 2),
            conv2: (2, 2),
            fc1: 6,
            fc2: 5,
            out,
            hidden,
            last,
        })
    }

    /// Drops the position input from the spatial-prior layer.
    pub fn without_prior(mut self) -> NetworkSpec {
        for layer in &mut self.layers {
            if let LayerSpec::FullyConnected { aux_inputs, .. } = layer {
                *aux_inputs = 0;
            }
        }
        self.aux_layer_index = None;
        self
    }

    /// Inserts dropout after every hidden fully connected activation.
    pub fn with_dropout(mut self, rate: f32) -> NetworkSpec {
        let mut layers = Vec::with_capacity(self.layers.len() + 2);
        let last = self.layers.len() - 1;
        let mut aux = self.aux_layer_index;
        let mut after_fc = false;
        for (i, layer) in self.layers.into_iter().enumerate() {
            let is_act = matches!(layer, LayerSpec::Activation { .. });
            let is_fc = matches!(layer, LayerSpec::FullyConnected { .. });
            if Some(i) == self.aux_layer_index {
                aux = Some(layers.len());
            }
            layers.push(layer);
            if is_act && after_fc && i != last {
                layers.push(LayerSpec::Dropout { rate });
            }
            after_fc = is_fc;
        }
        self.layers = layers;
        self.aux_layer_index = aux;
        self
    }

    /// Replaces every hidden activation, leaving the output activation.
    pub fn with_hidden_activation(mut self, kind: ActivationKind) -> NetworkSpec {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let LayerSpec::Activation { kind: k } = layer {
                if i != last {
                    *k = kind;
                }
            }
        }
        self
    }
}
