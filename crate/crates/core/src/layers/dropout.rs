use rand::{Rng, RngCore};

use crate::tensor::Tensor;

/// Inverted dropout. In training each unit is zeroed with probability `rate`
/// and survivors are scaled by `1 / (1 - rate)`; the returned mask holds the
/// per-unit multiplier. Inference is the identity.
pub fn dropout_forward(
    input: &Tensor,
    rate: f32,
    training: bool,
    rng: &mut dyn RngCore,
) -> (Tensor, Option<Vec<f32>>) {
    if !training || rate <= 0.0 {
        return (input.clone(), None);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f32> = (0..input.len())
        .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { keep })
        .collect();
    let mut out = input.clone();
    out.data_mut()
        .iter_mut()
        .zip(&mask)
        .for_each(|(v, m)| *v *= m);
    (out, Some(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_vec(&[4], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dropout_forward(&x, 0.0, true, &mut rng).0, x);
        assert_eq!(dropout_forward(&x, 0.9, false, &mut rng).0, x);
    }

    #[test]
    fn zero_fraction_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Tensor::filled(&[100_000], 1.0);
        let (out, _) = dropout_forward(&x, 0.5, true, &mut rng);
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.5).abs() <= 0.01, "zero fraction {zeros}");
        assert!(out.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
