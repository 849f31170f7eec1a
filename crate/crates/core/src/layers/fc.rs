use super::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::{gemm_slices, Tensor, Transpose};

/// Fully connected layer whose input may be extended by `aux_inputs` extra
/// features (the normalized patch position). The weight matrix is
/// `out × (in + aux)` and acts on `[input ‖ aux]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FcLayer {
    pub in_features: usize,
    pub aux_inputs: usize,
    pub out_features: usize,
    pub params: LayerParams,
}

impl FcLayer {
    pub fn new(in_features: usize, aux_inputs: usize, out_features: usize) -> Self {
        FcLayer {
            in_features,
            aux_inputs,
            out_features,
            params: LayerParams::zeros(&[out_features, in_features + aux_inputs], out_features),
        }
    }

    fn joined_width(&self) -> usize {
        self.in_features + self.aux_inputs
    }

    /// Returns the output and the concatenated `[input ‖ aux]` matrix.
    pub fn forward(&self, input: &Tensor, aux: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let n = input.batch();
        let d = input.sample_len();
        if d != self.in_features {
            return Err(Error::dim(format!(
                "fc expects {} input features, got {d} (input {:?})",
                self.in_features,
                input.shape()
            )));
        }
        let joined = match (self.aux_inputs, aux) {
            (0, None) => input.clone().reshape(&[n, d])?,
            (0, Some(_)) => {
                return Err(Error::AuxInput(
                    "auxiliary input supplied to a layer that takes none".into(),
                ))
            }
            (a, None) => {
                return Err(Error::AuxInput(format!(
                    "layer needs {a} auxiliary inputs but none were supplied"
                )))
            }
            (a, Some(aux)) => {
                if aux.shape() != [n, a] {
                    return Err(Error::AuxInput(format!(
                        "expected auxiliary input of shape [{n}, {a}], got {:?}",
                        aux.shape()
                    )));
                }
                let mut data = Vec::with_capacity(n * (d + a));
                for i in 0..n {
                    data.extend_from_slice(input.sample(i));
                    data.extend_from_slice(aux.sample(i));
                }
                Tensor::from_vec(&[n, d + a], data)?
            }
        };

        let o = self.out_features;
        let mut out = vec![0.0; n * o];
        gemm_slices(
            Transpose::No,
            Transpose::Yes,
            n,
            o,
            self.joined_width(),
            1.0,
            joined.data(),
            self.params.weights.data(),
            0.0,
            &mut out,
        );
        let bias = self.params.bias.data();
        for row in out.chunks_mut(o) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok((Tensor::from_vec(&[n, o], out)?, joined))
    }

    pub fn backward(
        &mut self,
        grad_out: &Tensor,
        joined: &Tensor,
        input_shape: &[usize],
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let (n, o) = grad_out.dims2()?;
        if o != self.out_features || n != joined.batch() {
            return Err(Error::dim(format!(
                "fc gradient {:?} does not match layer output",
                grad_out.shape()
            )));
        }
        let width = self.joined_width();
        gemm_slices(
            Transpose::Yes,
            Transpose::No,
            o,
            width,
            n,
            1.0,
            grad_out.data(),
            joined.data(),
            1.0,
            self.params.weight_grad.data_mut(),
        );
        let bg = self.params.bias_grad.data_mut();
        for row in grad_out.data().chunks(o) {
            for (b, g) in bg.iter_mut().zip(row) {
                *b += g;
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let mut gj = vec![0.0; n * width];
        gemm_slices(
            Transpose::No,
            Transpose::No,
            n,
            width,
            o,
            1.0,
            grad_out.data(),
            self.params.weights.data(),
            0.0,
            &mut gj,
        );
        let d = self.in_features;
        let data: Vec<f32> = gj
            .chunks(width)
            .flat_map(|row| row[..d].iter().copied())
            .collect();
        Tensor::from_vec(input_shape, data).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_without_aux() {
        let mut fc = FcLayer::new(3, 0, 3);
        for i in 0..3 {
            fc.params.weights.set(&[i, i], 1.0);
        }
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (out, _) = fc.forward(&x, None).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn aux_hand_computed() {
        let mut fc = FcLayer::new(1, 2, 1);
        fc.params.weights.fill(1.0);
        let x = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let aux = Tensor::from_vec(&[1, 2], vec![0.5, 0.25]).unwrap();
        let (out, _) = fc.forward(&x, Some(&aux)).unwrap();
        assert_eq!(out.data(), &[1.75]);
    }

    #[test]
    fn road_layer_eight_dimensions() {
        let fc = FcLayer::new(48, 2, 192);
        assert_eq!(fc.params.weights.shape(), &[192, 50]);
        let (out, _) = fc
            .forward(&Tensor::zeros(&[4, 48]), Some(&Tensor::zeros(&[4, 2])))
            .unwrap();
        assert_eq!(out.shape(), &[4, 192]);
    }

    #[test]
    fn aux_errors() {
        let fc = FcLayer::new(4, 2, 3);
        let x = Tensor::zeros(&[2, 4]);
        assert!(matches!(fc.forward(&x, None), Err(Error::AuxInput(_))));
        assert!(matches!(
            fc.forward(&x, Some(&Tensor::zeros(&[2, 3]))),
            Err(Error::AuxInput(_))
        ));
        let plain = FcLayer::new(4, 0, 3);
        assert!(matches!(
            plain.forward(&x, Some(&Tensor::zeros(&[2, 2]))),
            Err(Error::AuxInput(_))
        ));
    }

    #[test]
    fn aux_equals_explicit_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut with_aux = FcLayer::new(5, 2, 3);
        for v in with_aux.params.weights.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in with_aux.params.bias.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut plain = FcLayer::new(7, 0, 3);
        plain.params.weights = with_aux.params.weights.clone();
        plain.params.bias = with_aux.params.bias.clone();

        let x: Vec<f32> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pos: Vec<f32> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut cat = Vec::new();
        for i in 0..2 {
            cat.extend_from_slice(&x[i * 5..(i + 1) * 5]);
            cat.extend_from_slice(&pos[i * 2..(i + 1) * 2]);
        }
        let x = Tensor::from_vec(&[2, 5], x).unwrap();
        let pos = Tensor::from_vec(&[2, 2], pos).unwrap();
        let cat = Tensor::from_vec(&[2, 7], cat).unwrap();
        let (a, _) = with_aux.forward(&x, Some(&pos)).unwrap();
        let (b, _) = plain.forward(&cat, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn image_input_is_flattened() {
        let fc = FcLayer::new(2 * 3 * 3, 0, 4);
        let img = Tensor::zeros(&[5, 2, 3, 3]);
        let (out, joined) = fc.forward(&img, None).unwrap();
        assert_eq!(out.shape(), &[5, 4]);
        assert_eq!(joined.shape(), &[5, 18]);
    }
}
