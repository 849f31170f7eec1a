use super::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::{col2im, gemm_slices, im2col, Tensor, Transpose};

/// Valid, stride-1 convolution (cross-correlation) computed as im2col + GEMM.
///
/// Filters are stored `[F, C, kh, kw]`, which is already the `F × (C·kh·kw)`
/// row-major matrix the GEMM wants.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub params: LayerParams,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize, kh: usize, kw: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            kh,
            kw,
            params: LayerParams::zeros(&[out_channels, in_channels, kh, kw], out_channels),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    /// Returns the output and the unfolded input columns.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let (n, c, h, w) = input.dims4()?;
        if c != self.in_channels {
            return Err(Error::dim(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let cols = im2col(input, self.kh, self.kw, 1)?;
        let (oh, ow) = (h - self.kh + 1, w - self.kw + 1);
        let plane = oh * ow;
        let f = self.out_channels;
        let mut mat = vec![0.0; f * n * plane];
        gemm_slices(
            Transpose::No,
            Transpose::No,
            f,
            n * plane,
            self.patch_len(),
            1.0,
            self.params.weights.data(),
            cols.data(),
            0.0,
            &mut mat,
        );
        // [F, N·OH·OW] -> [N, F, OH, OW], adding the bias on the way.
        let mut out = Tensor::zeros(&[n, f, oh, ow]);
        let dst = out.data_mut();
        let bias = self.params.bias.data();
        for fi in 0..f {
            for ni in 0..n {
                let src = &mat[(fi * n + ni) * plane..(fi * n + ni + 1) * plane];
                let d = &mut dst[(ni * f + fi) * plane..(ni * f + fi + 1) * plane];
                for (o, &s) in d.iter_mut().zip(src) {
                    *o = s + bias[fi];
                }
            }
        }
        Ok((out, cols))
    }

    pub fn backward(
        &mut self,
        grad_out: &Tensor,
        cols: &Tensor,
        input_shape: [usize; 4],
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let (n, f, oh, ow) = grad_out.dims4()?;
        if f != self.out_channels || n != input_shape[0] {
            return Err(Error::dim(format!(
                "conv gradient {:?} does not match layer output",
                grad_out.shape()
            )));
        }
        let plane = oh * ow;
        let total = n * plane;
        // [N, F, OH, OW] -> [F, N·OH·OW]
        let mut g = vec![0.0; f * total];
        let src = grad_out.data();
        for ni in 0..n {
            for fi in 0..f {
                g[(fi * n + ni) * plane..(fi * n + ni + 1) * plane]
                    .copy_from_slice(&src[(ni * f + fi) * plane..(ni * f + fi + 1) * plane]);
            }
        }

        let k = self.patch_len();
        gemm_slices(
            Transpose::No,
            Transpose::Yes,
            f,
            k,
            total,
            1.0,
            &g,
            cols.data(),
            1.0,
            self.params.weight_grad.data_mut(),
        );
        for (fi, b) in self.params.bias_grad.data_mut().iter_mut().enumerate() {
            *b += g[fi * total..(fi + 1) * total].iter().sum::<f32>();
        }

        if !need_input_grad {
            return Ok(None);
        }
        let mut dcols = vec![0.0; k * total];
        gemm_slices(
            Transpose::Yes,
            Transpose::No,
            k,
            total,
            f,
            1.0,
            self.params.weights.data(),
            &g,
            0.0,
            &mut dcols,
        );
        let dcols = Tensor::from_vec(&[k, total], dcols)?;
        col2im(&dcols, input_shape, self.kh, self.kw, 1).map(Some)
    }
}
