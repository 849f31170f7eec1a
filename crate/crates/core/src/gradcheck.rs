//! Central finite-difference checks of analytic gradients.
//!
//! The probe loss is `L = Σ r ⊙ out` for a fixed random `r`, accumulated in
//! f64. For each tensor (input, then weights and bias of every parametric
//! layer) the error is `‖g_a − g_n‖ / max(‖g_a‖, ‖g_n‖)` over the checked
//! coordinates. A step that changes a ReLU on/off state or a pooling winner
//! crosses a point where the loss is not differentiable; such a coordinate
//! is retried with smaller steps and skipped only if every step crosses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::layers::{weighted_quadratic_loss, ActivationKind, LayerSpec};
use crate::network::{Model, NetworkSpec, Task};
use crate::tensor::Tensor;
use crate::trainer::InitScheme;

pub const TOLERANCE: f64 = 1e-3;
pub const EPSILON: f32 = 1e-2;
/// Step multipliers tried in turn when a step crosses a kink.
const STEPS: [f32; 3] = [1.0, 0.5, 0.25];

/// Outcome for one tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub suite: String,
    pub tensor: String,
    pub rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl TensorCheck {
    pub fn passed(&self) -> bool {
        self.rel_error < TOLERANCE
    }
}

struct Probe<'a> {
    positions: Option<&'a Tensor>,
    weights: Tensor,
    mask_seed: u64,
}

impl Probe<'_> {
    fn eval(&self, model: &Model, x: &Tensor) -> Result<(f64, Vec<u32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.mask_seed);
        let (out, trace) = model.forward_train(x, self.positions, &mut rng)?;
        let loss = out
            .data()
            .iter()
            .zip(self.weights.data())
            .map(|(&o, &r)| o as f64 * r as f64)
            .sum();
        Ok((loss, trace.branch_signature()))
    }
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Where a perturbed value lives.
#[derive(Clone, Copy)]
enum Target {
    Input,
    Weights(usize),
    Bias(usize),
}

fn value_mut<'m>(model: &'m mut Model, x: &'m mut Tensor, t: Target) -> &'m mut [f32] {
    match t {
        Target::Input => x.data_mut(),
        Target::Weights(j) => model.params_mut().nth(j).expect("layer").weights.data_mut(),
        Target::Bias(j) => model.params_mut().nth(j).expect("layer").bias.data_mut(),
    }
}

/// Checks input and parameter gradients of `model` at input `x`.
pub fn check_model(
    suite: &str,
    model: &mut Model,
    x: &Tensor,
    positions: Option<&Tensor>,
    seed: u64,
) -> Result<Vec<TensorCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let out_shape = [x.batch(), model.output_width()];
    let r: Vec<f32> = (0..out_shape[0] * out_shape[1])
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let probe = Probe {
        positions,
        weights: Tensor::from_vec(&out_shape, r)?,
        mask_seed: seed,
    };

    model.zero_grads();
    let mut mask_rng = ChaCha8Rng::seed_from_u64(probe.mask_seed);
    let (_, trace) = model.forward_train(x, positions, &mut mask_rng)?;
    let base_sig = trace.branch_signature();
    let input_grad = model.backward(&trace, &probe.weights)?;

    let mut targets = vec![(Target::Input, "input".to_string(), input_grad)];
    let param_layers: Vec<usize> = model
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.params().is_some())
        .map(|(i, _)| i)
        .collect();
    for (j, p) in model.params().enumerate() {
        let li = param_layers[j];
        targets.push((
            Target::Weights(j),
            format!("layer {li} weights"),
            p.weight_grad.clone(),
        ));
        targets.push((
            Target::Bias(j),
            format!("layer {li} bias"),
            p.bias_grad.clone(),
        ));
    }

    let mut x = x.clone();
    let mut results = Vec::new();
    for (target, name, analytic) in targets {
        let (mut a, mut n) = (Vec::new(), Vec::new());
        let mut skipped = 0;
        for i in 0..analytic.len() {
            let orig = value_mut(model, &mut x, target)[i];
            let mut numeric = None;
            for eps in STEPS.map(|f| EPSILON * f) {
                value_mut(model, &mut x, target)[i] = orig + eps;
                let (lp, sp) = probe.eval(model, &x)?;
                value_mut(model, &mut x, target)[i] = orig - eps;
                let (lm, sm) = probe.eval(model, &x)?;
                value_mut(model, &mut x, target)[i] = orig;
                if sp == base_sig && sm == base_sig {
                    // The step actually taken in f32.
                    let h = ((orig + eps) as f64) - ((orig - eps) as f64);
                    numeric = Some((lp - lm) / h);
                    break;
                }
            }
            match numeric {
                Some(v) => {
                    n.push(v);
                    a.push(analytic.data()[i] as f64);
                }
                None => skipped += 1,
            }
        }
        results.push(TensorCheck {
            suite: suite.to_string(),
            tensor: name,
            rel_error: rel_error(&a, &n),
            checked: a.len(),
            skipped,
        });
    }
    Ok(results)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .expect("shape")
}

fn single_layer(input: (usize, usize, usize), layer: LayerSpec, aux: bool) -> NetworkSpec {
    NetworkSpec {
        input_patch: input,
        layers: vec![layer],
        aux_layer_index: aux.then_some(0),
        channel_mean: None,
    }
}

/// One network per layer kind, each a single layer on a small input.
pub fn layer_suites() -> Vec<(String, NetworkSpec)> {
    use LayerSpec::*;
    let mut v = vec![
        (
            "conv 3x3".to_string(),
            single_layer(
                (3, 6, 5),
                Conv {
                    kh: 3,
                    kw: 3,
                    out_channels: 4,
                },
                false,
            ),
        ),
        (
            "conv 1x4".to_string(),
            single_layer(
                (2, 4, 6),
                Conv {
                    kh: 1,
                    kw: 4,
                    out_channels: 3,
                },
                false,
            ),
        ),
        (
            "max-pool 2x2".to_string(),
            single_layer((2, 6, 4), MaxPool { ph: 2, pw: 2 }, false),
        ),
        (
            "fc".to_string(),
            single_layer(
                (2, 3, 3),
                FullyConnected {
                    out: 5,
                    aux_inputs: 0,
                },
                false,
            ),
        ),
        (
            "fc with aux".to_string(),
            single_layer(
                (1, 2, 3),
                FullyConnected {
                    out: 4,
                    aux_inputs: 2,
                },
                true,
            ),
        ),
        (
            "dropout".to_string(),
            single_layer((2, 3, 3), Dropout { rate: 0.5 }, false),
        ),
    ];
    for kind in [
        ActivationKind::Tanh,
        ActivationKind::Relu,
        ActivationKind::Sigmoid,
    ] {
        v.push((
            format!("{kind}"),
            single_layer((2, 3, 3), Activation { kind }, false),
        ));
    }
    v
}

/// Runs the checks of one spec at one seed with a batch of two samples.
pub fn check_spec(suite: &str, spec: NetworkSpec, seed: u64) -> Result<Vec<TensorCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::build(spec, InitScheme::Normalized, &mut rng)?;
    // Non-zero biases exercise their gradients off the initial point.
    for p in model.params_mut() {
        for b in p.bias.data_mut() {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let (c, h, w) = model.spec().input_patch;
    let x = random_tensor(&mut rng, &[2, c, h, w], 1.0);
    let pos = model
        .uses_positions()
        .then(|| Tensor::from_vec(&[2, 2], (0..4).map(|_| rng.gen()).collect()).expect("shape"));
    check_model(suite, &mut model, &x, pos.as_ref(), seed)
}

/// Finite-difference check of the weighted quadratic loss with respect to
/// its predictions.
pub fn check_loss(seed: u64) -> Result<TensorCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = random_tensor(&mut rng, &[4, 3], 1.0);
    let target = random_tensor(&mut rng, &[4, 3], 1.0);
    let weights: Vec<f32> = (0..4).map(|_| rng.gen_range(0.1..2.0)).collect();
    let (_, grad) = weighted_quadratic_loss(&pred, &target, &weights)?;
    let mut numeric = Vec::new();
    let mut p = pred.clone();
    for i in 0..p.len() {
        let orig = p.data()[i];
        p.data_mut()[i] = orig + EPSILON;
        let (lp, _) = weighted_quadratic_loss(&p, &target, &weights)?;
        p.data_mut()[i] = orig - EPSILON;
        let (lm, _) = weighted_quadratic_loss(&p, &target, &weights)?;
        p.data_mut()[i] = orig;
        let h = ((orig + EPSILON) as f64) - ((orig - EPSILON) as f64);
        numeric.push((lp - lm) / h);
    }
    let analytic: Vec<f64> = grad.data().iter().map(|&g| g as f64).collect();
    Ok(TensorCheck {
        suite: "weighted quadratic loss".into(),
        tensor: "prediction".into(),
        rel_error: rel_error(&analytic, &numeric),
        checked: analytic.len(),
        skipped: 0,
    })
}

/// Every layer suite, the loss and both shrunken presets over `seeds`.
pub fn run_all(seeds: std::ops::Range<u64>) -> Result<Vec<TensorCheck>> {
    let mut all = Vec::new();
    for seed in seeds {
        for (name, spec) in layer_suites() {
            all.extend(check_spec(&name, spec, seed)?);
        }
        all.push(check_loss(seed)?);
        for task in [Task::Road, Task::Urban] {
            let name = format!("{task:?} preset (8x8)").to_lowercase();
            all.extend(check_spec(&name, NetworkSpec::tiny(task), seed)?);
        }
    }
    Ok(all)
}
