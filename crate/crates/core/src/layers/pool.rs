use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-overlapping max pooling. Returns the pooled tensor and, for every
/// output element, the flat input index of the window maximum (first hit in
/// row-major order on ties).
pub fn maxpool_forward(input: &Tensor, ph: usize, pw: usize) -> Result<(Tensor, Vec<u32>)> {
    let (n, c, h, w) = input.dims4()?;
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::dim(format!(
            "max-pool {ph}x{pw}: input {h}x{w} is not divisible by the pooling window"
        )));
    }
    if input.len() > u32::MAX as usize {
        return Err(Error::dim("max-pool input too large for argmax indices"));
    }
    let (oh, ow) = (h / ph, w / pw);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * ph * w + ox * pw;
                for dy in 0..ph {
                    let row = base + (oy * ph + dy) * w + ox * pw;
                    for idx in row..row + pw {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                dst[o] = src[best];
                argmax[o] = best as u32;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient to the recorded argmax position.
pub fn maxpool_backward(grad_out: &Tensor, argmax: &[u32], input_shape: &[usize]) -> Tensor {
    let mut grad_in = Tensor::zeros(input_shape);
    let dst = grad_in.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        dst[idx as usize] += g;
    }
    grad_in
}
