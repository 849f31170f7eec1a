use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weighted quadratic loss normalized by the total weight:
/// `Σ wᵢ‖predᵢ − targetᵢ‖² / Σ wᵢ`, with its gradient with respect to `pred`.
pub fn weighted_quadratic_loss(
    pred: &Tensor,
    target: &Tensor,
    weights: &[f32],
) -> Result<(f64, Tensor)> {
    pred.check_same_shape(target)?;
    let (n, o) = pred.dims2()?;
    if weights.len() != n {
        return Err(Error::Weight(format!(
            "{} weights for {n} examples",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::Weight(format!("invalid example weight {w}")));
    }
    let mass: f64 = weights.iter().map(|&w| w as f64).sum();
    if mass <= 0.0 {
        return Err(Error::Weight("all example weights are zero".into()));
    }

    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(&[n, o]);
    let gd = grad.data_mut();
    for i in 0..n {
        let w = weights[i] as f64;
        let coef = (2.0 * w / mass) as f32;
        let mut sq = 0.0f64;
        for j in 0..o {
            let diff = pred.data()[i * o + j] - target.data()[i * o + j];
            sq += (diff as f64) * (diff as f64);
            gd[i * o + j] = coef * diff;
        }
        loss += w * sq;
    }
    Ok((loss / mass, grad))
}
