use crate::network::Model;
use crate::tensor::Tensor;

/// Momentum buffers, one pair (weights, bias) per parametric layer.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<(Tensor, Tensor)>,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        OptimizerState {
            velocity: model
                .params()
                .map(|p| {
                    (
                        Tensor::zeros(p.weights.shape()),
                        Tensor::zeros(p.bias.shape()),
                    )
                })
                .collect(),
        }
    }

    pub fn velocities(&self) -> &[(Tensor, Tensor)] {
        &self.velocity
    }
}

fn update(param: &mut Tensor, grad: &Tensor, vel: &mut Tensor, lr: f32, momentum: f32) {
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(vel.data_mut())
    {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

/// `v ← momentum·v − lr·g; θ ← θ + v` for every parameter, using the
/// gradients currently accumulated in the model.
pub fn sgd_step(model: &mut Model, state: &mut OptimizerState, lr: f32, momentum: f32) {
    for (p, (vw, vb)) in model.params_mut().zip(state.velocity.iter_mut()) {
        update(&mut p.weights, &p.weight_grad, vw, lr, momentum);
        update(&mut p.bias, &p.bias_grad, vb, lr, momentum);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;
    use crate::network::NetworkSpec;

    /// One fully connected layer with a single weight and bias.
    fn scalar_model(w: f32) -> Model {
        let spec = NetworkSpec {
            input_patch: (1, 1, 1),
            layers: vec![LayerSpec::FullyConnected {
                out: 1,
                aux_inputs: 0,
            }],
            aux_layer_index: None,
            channel_mean: None,
        };
        let mut m = Model::zeroed(spec).unwrap();
        m.params_mut().next().unwrap().weights.data_mut()[0] = w;
        m
    }

    fn weight(m: &Model) -> f32 {
        m.params().next().unwrap().weights.data()[0]
    }

    fn set_grad(m: &mut Model, g: f32) {
        m.params_mut().next().unwrap().weight_grad.data_mut()[0] = g;
    }

    #[test]
    fn plain_step_without_momentum() {
        let mut m = scalar_model(1.0);
        let mut st = OptimizerState::new(&m);
        set_grad(&mut m, 0.5);
        sgd_step(&mut m, &mut st, 0.1, 0.0);
        assert_eq!(weight(&m), 1.0 - 0.1 * 0.5);
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        let (lr, mu) = (0.05f32, 0.9f32);
        let mut m = scalar_model(2.0);
        let mut st = OptimizerState::new(&m);
        set_grad(&mut m, 0.3);
        sgd_step(&mut m, &mut st, lr, mu);
        set_grad(&mut m, -0.7);
        sgd_step(&mut m, &mut st, lr, mu);
        let v1 = -lr * 0.3;
        let t1 = 2.0 + v1;
        let v2 = mu * v1 - lr * -0.7;
        let t2 = t1 + v2;
        assert_eq!(weight(&m), t2);
    }

    #[test]
    fn zero_gradient_decays_velocity_geometrically() {
        let mu = 0.5f32;
        let mut m = scalar_model(0.0);
        let mut st = OptimizerState::new(&m);
        set_grad(&mut m, -1.0);
        sgd_step(&mut m, &mut st, 1.0, mu);
        set_grad(&mut m, 0.0);
        let mut expected = 1.0f64;
        let mut v = 1.0f64;
        for _ in 0..10 {
            sgd_step(&mut m, &mut st, 1.0, mu);
            v *= mu as f64;
            expected += v;
            assert!((weight(&m) as f64 - expected).abs() < 1e-6);
        }
        // Closed form: θ∞ = v₀ / (1 − μ).
        assert!((expected - 2.0).abs() < 2e-3);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let mut m = scalar_model(1.0);
        let mut st = OptimizerState::new(&m);
        for _ in 0..200 {
            let theta = weight(&m);
            set_grad(&mut m, theta); // ∇(½θ²)
            sgd_step(&mut m, &mut st, 0.1, 0.9);
        }
        assert!(weight(&m).abs() < 1e-3, "θ = {}", weight(&m));
    }
}
