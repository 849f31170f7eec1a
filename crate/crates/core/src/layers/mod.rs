//! Differentiable layers and the weighted quadratic loss.
//!
//! Forward passes take `&self` and hand back a [`Cache`] with whatever the
//! backward pass needs, so a trained network can be shared read-only across
//! inference threads. Backward passes accumulate into the gradient tensors
//! of [`LayerParams`].

mod activation;
mod conv;
mod dropout;
mod fc;
mod loss;
mod pool;

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use activation::ActivationKind;
pub use conv::ConvLayer;
pub use dropout::dropout_forward;
pub use fc::FcLayer;
pub use loss::weighted_quadratic_loss;
pub use pool::{maxpool_backward, maxpool_forward};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of one layer together with their accumulated gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub weight_grad: Tensor,
    pub bias_grad: Tensor,
}

impl LayerParams {
    pub fn zeros(weight_shape: &[usize], bias_len: usize) -> Self {
        LayerParams {
            weights: Tensor::zeros(weight_shape),
            bias: Tensor::zeros(&[bias_len]),
            weight_grad: Tensor::zeros(weight_shape),
            bias_grad: Tensor::zeros(&[bias_len]),
        }
    }

    pub fn zero_grads(&mut self) {
        self.weight_grad.fill(0.0);
        self.bias_grad.fill(0.0);
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        kh: usize,
        kw: usize,
        out_channels: usize,
    },
    MaxPool {
        ph: usize,
        pw: usize,
    },
    Activation {
        kind: ActivationKind,
    },
    FullyConnected {
        out: usize,
        #[serde(default)]
        aux_inputs: usize,
    },
    Dropout {
        rate: f32,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Conv {
                kh,
                kw,
                out_channels,
            } => kh >= 1 && kw >= 1 && out_channels >= 1,
            LayerSpec::MaxPool { ph, pw } => ph >= 1 && pw >= 1,
            LayerSpec::Activation { .. } => true,
            LayerSpec::FullyConnected { out, .. } => out >= 1,
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "invalid layer parameters: {self}"
            )))
        }
    }

    /// Per-sample output shape for a per-sample input shape ([C, H, W] or [D]).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        match *self {
            LayerSpec::Conv {
                kh,
                kw,
                out_channels,
            } => {
                let [_, h, w] = spatial(input, self)?;
                if kh > h || kw > w {
                    return Err(Error::dim(format!(
                        "{self}: kernel does not fit a {h}x{w} input"
                    )));
                }
                Ok(vec![out_channels, h - kh + 1, w - kw + 1])
            }
            LayerSpec::MaxPool { ph, pw } => {
                let [c, h, w] = spatial(input, self)?;
                if h % ph != 0 || w % pw != 0 {
                    return Err(Error::dim(format!(
                        "{self}: input {h}x{w} is not divisible by the pooling window"
                    )));
                }
                Ok(vec![c, h / ph, w / pw])
            }
            LayerSpec::Activation { .. } | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::FullyConnected { out, .. } => Ok(vec![out]),
        }
    }
}

fn spatial(input: &[usize], spec: &LayerSpec) -> Result<[usize; 3]> {
    match *input {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::dim(format!(
            "{spec} needs image-shaped input, got {input:?}"
        ))),
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                kh,
                kw,
                out_channels,
            } => write!(f, "conv {kh}x{kw}x{out_channels}"),
            LayerSpec::MaxPool { ph, pw } => write!(f, "max-pool {ph}x{pw}"),
            LayerSpec::Activation { kind } => write!(f, "{kind}"),
            LayerSpec::FullyConnected { out, aux_inputs: 0 } => write!(f, "fc o={out}"),
            LayerSpec::FullyConnected { out, aux_inputs } => {
                write!(f, "fc o={out} (+{aux_inputs} aux)")
            }
            LayerSpec::Dropout { rate } => write!(f, "dropout {rate}"),
        }
    }
}

/// Whether a forward pass is for training (dropout active, caches kept) or
/// inference.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Infer,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Data saved by a forward pass for the matching backward pass.
#[derive(Debug)]
pub enum Cache {
    Conv {
        cols: Tensor,
        input_shape: [usize; 4],
    },
    MaxPool {
        argmax: Vec<u32>,
        input_shape: Vec<usize>,
    },
    Activation {
        output: Tensor,
    },
    FullyConnected {
        joined: Tensor,
        input_shape: Vec<usize>,
    },
    Dropout {
        mask: Option<Vec<f32>>,
    },
    Empty,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    MaxPool { ph: usize, pw: usize },
    Activation(ActivationKind),
    FullyConnected(FcLayer),
    Dropout { rate: f32 },
}

impl Layer {
    /// Builds a zero-parameter layer for a per-sample input shape.
    pub fn from_spec(spec: &LayerSpec, input: &[usize]) -> Result<Layer> {
        spec.output_shape(input)?;
        Ok(match *spec {
            LayerSpec::Conv {
                kh,
                kw,
                out_channels,
            } => Layer::Conv(ConvLayer::new(input[0], out_channels, kh, kw)),
            LayerSpec::MaxPool { ph, pw } => Layer::MaxPool { ph, pw },
            LayerSpec::Activation { kind } => Layer::Activation(kind),
            LayerSpec::FullyConnected { out, aux_inputs } => {
                Layer::FullyConnected(FcLayer::new(input.iter().product(), aux_inputs, out))
            }
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::Conv {
                kh: c.kh,
                kw: c.kw,
                out_channels: c.out_channels,
            },
            Layer::MaxPool { ph, pw } => LayerSpec::MaxPool { ph: *ph, pw: *pw },
            Layer::Activation(kind) => LayerSpec::Activation { kind: *kind },
            Layer::FullyConnected(fc) => LayerSpec::FullyConnected {
                out: fc.out_features,
                aux_inputs: fc.aux_inputs,
            },
            Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
        }
    }

    pub fn params(&self) -> Option<&LayerParams> {
        match self {
            Layer::Conv(c) => Some(&c.params),
            Layer::FullyConnected(fc) => Some(&fc.params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams> {
        match self {
            Layer::Conv(c) => Some(&mut c.params),
            Layer::FullyConnected(fc) => Some(&mut fc.params),
            _ => None,
        }
    }

    /// (fan-in, fan-out) used by the initialization schemes.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Conv(c) => Some((c.in_channels * c.kh * c.kw, c.out_channels * c.kh * c.kw)),
            Layer::FullyConnected(fc) => Some((fc.in_features + fc.aux_inputs, fc.out_features)),
            _ => None,
        }
    }

    pub fn aux_inputs(&self) -> usize {
        match self {
            Layer::FullyConnected(fc) => fc.aux_inputs,
            _ => 0,
        }
    }

    pub fn forward(
        &self,
        input: &Tensor,
        aux: Option<&Tensor>,
        mode: &mut Mode<'_>,
    ) -> Result<(Tensor, Cache)> {
        let keep = mode.is_train();
        match self {
            Layer::Conv(conv) => {
                let (out, cols) = conv.forward(input)?;
                let cache = if keep {
                    let (n, c, h, w) = input.dims4()?;
                    Cache::Conv {
                        cols,
                        input_shape: [n, c, h, w],
                    }
                } else {
                    Cache::Empty
                };
                Ok((out, cache))
            }
            Layer::MaxPool { ph, pw } => {
                let (out, argmax) = maxpool_forward(input, *ph, *pw)?;
                let cache = if keep {
                    Cache::MaxPool {
                        argmax,
                        input_shape: input.shape().to_vec(),
                    }
                } else {
                    Cache::Empty
                };
                Ok((out, cache))
            }
            Layer::Activation(kind) => {
                let out = kind.forward(input);
                let cache = if keep {
                    Cache::Activation {
                        output: out.clone(),
                    }
                } else {
                    Cache::Empty
                };
                Ok((out, cache))
            }
            Layer::FullyConnected(fc) => {
                let (out, joined) = fc.forward(input, aux)?;
                let cache = if keep {
                    Cache::FullyConnected {
                        joined,
                        input_shape: input.shape().to_vec(),
                    }
                } else {
                    Cache::Empty
                };
                Ok((out, cache))
            }
            Layer::Dropout { rate } => {
                let (out, mask) = match mode {
                    Mode::Train(rng) => dropout_forward(input, *rate, true, *rng),
                    Mode::Infer => (input.clone(), None),
                };
                Ok((out, Cache::Dropout { mask }))
            }
        }
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the layer input when `need_input_grad` is set.
    pub fn backward(
        &mut self,
        grad_out: &Tensor,
        cache: &Cache,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        match (self, cache) {
            (Layer::Conv(conv), Cache::Conv { cols, input_shape }) => {
                conv.backward(grad_out, cols, *input_shape, need_input_grad)
            }
            (
                Layer::MaxPool { .. },
                Cache::MaxPool {
                    argmax,
                    input_shape,
                },
            ) => Ok(need_input_grad.then(|| maxpool_backward(grad_out, argmax, input_shape))),
            (Layer::Activation(kind), Cache::Activation { output }) => {
                Ok(need_input_grad.then(|| kind.backward(output, grad_out)))
            }
            (
                Layer::FullyConnected(fc),
                Cache::FullyConnected {
                    joined,
                    input_shape,
                },
            ) => fc.backward(grad_out, joined, input_shape, need_input_grad),
            (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                Ok(need_input_grad.then(|| match mask {
                    Some(mask) => {
                        let mut g = grad_out.clone();
                        g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                        g
                    }
                    None => grad_out.clone(),
                }))
            }
            (layer, _) => Err(Error::dim(format!(
                "cache does not belong to layer {}",
                layer.spec()
            ))),
        }
    }
}
