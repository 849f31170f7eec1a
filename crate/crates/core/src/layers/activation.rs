use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Tanh,
    Relu,
    Sigmoid,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f32) -> f32 {
        match self {
            ActivationKind::Tanh => 1.0 - y * y,
            // relu(x) > 0 iff x > 0, so the derivative at exactly 0 is 0.
            ActivationKind::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn forward(self, input: &Tensor) -> Tensor {
        input.map(|v| self.apply(v))
    }

    pub fn backward(self, output: &Tensor, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for (gv, &y) in g.data_mut().iter_mut().zip(output.data()) {
            *gv *= self.derivative_from_output(y);
        }
        g
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(ActivationKind::Tanh.apply(0.0), 0.0);
        assert_eq!(ActivationKind::Relu.apply(-1.0), 0.0);
        assert_eq!(ActivationKind::Sigmoid.apply(0.0), 0.5);
        let x = Tensor::from_vec(&[2], vec![-2.0, 3.0]).unwrap();
        assert_eq!(ActivationKind::Relu.forward(&x).data(), &[0.0, 3.0]);
    }

    #[test]
    fn relu_derivative_at_zero() {
        assert_eq!(ActivationKind::Relu.derivative_from_output(0.0), 0.0);
    }

    #[test]
    fn derivative_matches_central_difference() {
        for kind in [
            ActivationKind::Tanh,
            ActivationKind::Relu,
            ActivationKind::Sigmoid,
        ] {
            for &x in &[-2.3f64, -0.7, 0.4, 1.9] {
                let h = 1e-4;
                let f = |v: f64| kind.apply(v as f32) as f64;
                let numeric = (f(x + h) - f(x - h)) / (2.0 * h);
                let analytic = kind.derivative_from_output(kind.apply(x as f32)) as f64;
                assert!((numeric - analytic).abs() < 2e-3, "{kind} at {x}");
            }
        }
    }
}
