use super::Tensor;
use crate::error::{Error, Result};

/// Output extent of a valid (unpadded) window sweep.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::dim("kernel and stride must be at least 1"));
    }
    if kernel > input {
        return Err(Error::dim(format!(
            "kernel extent {kernel} is larger than input extent {input}"
        )));
    }
    Ok((input - kernel) / stride + 1)
}

/// Unfolds receptive fields into columns.
///
/// Result is `(C·kh·kw) × (N·OH·OW)`: row `(c·kh + ky)·kw + kx`, column
/// `(n·OH + oy)·OW + ox`.
pub fn im2col(input: &Tensor, kh: usize, kw: usize, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let oh = conv_output_size(h, kh, stride)?;
    let ow = conv_output_size(w, kw, stride)?;
    let cols_per_sample = oh * ow;
    let total_cols = n * cols_per_sample;
    // Rows are produced in order, so the buffer is filled by appending.
    let mut dst = Vec::with_capacity(c * kh * kw * total_cols);
    let src = input.data();
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                for ni in 0..n {
                    let plane = &src[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let y = oy * stride + ky;
                        if stride == 1 {
                            dst.extend_from_slice(&plane[y * w + kx..y * w + kx + ow]);
                        } else {
                            dst.extend((0..ow).map(|ox| plane[y * w + ox * stride + kx]));
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c * kh * kw, total_cols], dst)
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto an input-shaped
/// tensor of shape `input_shape` (N, C, H, W).
pub fn col2im(
    cols: &Tensor,
    input_shape: [usize; 4],
    kh: usize,
    kw: usize,
    stride: usize,
) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    let oh = conv_output_size(h, kh, stride)?;
    let ow = conv_output_size(w, kw, stride)?;
    let cols_per_sample = oh * ow;
    let total_cols = n * cols_per_sample;
    let (rows, ncols) = cols.dims2()?;
    if rows != c * kh * kw || ncols != total_cols {
        return Err(Error::dim(format!(
            "col2im: columns {:?} do not match input {input_shape:?} with {kh}x{kw} kernel",
            cols.shape()
        )));
    }
    let mut out = Tensor::zeros(&input_shape);
    let src = cols.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let srow = &src[row * total_cols..(row + 1) * total_cols];
                for ni in 0..n {
                    let plane = &mut dst[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let y = oy * stride + ky;
                        let s0 = ni * cols_per_sample + oy * ow;
                        for (ox, &v) in srow[s0..s0 + ow].iter().enumerate() {
                            plane[y * w + ox * stride + kx] += v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gemm_slices, Transpose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn unit_kernel_is_reshape() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cols = im2col(&x, 1, 1, 1).unwrap();
        assert_eq!(cols.shape(), &[1, 4]);
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0]);
        let back = col2im(&cols, [1, 1, 2, 2], 1, 1, 1).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn full_kernel_is_single_column() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let cols = im2col(&x, 3, 3, 1).unwrap();
        assert_eq!(cols.shape(), &[9, 1]);
        assert_eq!(cols.data(), x.data());
    }

    #[test]
    fn kernel_larger_than_input() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(im2col(&x, 3, 1, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn coverage_count() {
        let ones = Tensor::filled(&[4, 4], 1.0);
        let cover = col2im(&ones, [1, 1, 3, 3], 2, 2, 1).unwrap();
        assert_eq!(cover.data(), &[1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn col2im_rejects_wrong_columns() {
        let cols = Tensor::zeros(&[4, 3]);
        assert!(col2im(&cols, [1, 1, 3, 3], 2, 2, 1).is_err());
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for stride in [1, 2] {
            let x = random(&mut rng, &[1, 2, 5, 5]);
            let cols = im2col(&x, 3, 3, stride).unwrap();
            let y = random(&mut rng, cols.shape());
            let lhs = cols.dot(&y).unwrap();
            let rhs = x
                .dot(&col2im(&y, [1, 2, 5, 5], 3, 3, stride).unwrap())
                .unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-5 * lhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn conv_via_gemm_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, c, h, w, f, k) = (2, 3, 8, 8, 4, 3);
        let x = random(&mut rng, &[n, c, h, w]);
        let filt = random(&mut rng, &[f, c, k, k]);
        let cols = im2col(&x, k, k, 1).unwrap();
        let (oh, ow) = (h - k + 1, w - k + 1);
        let mut out = vec![0.0; f * n * oh * ow];
        gemm_slices(
            Transpose::No,
            Transpose::No,
            f,
            n * oh * ow,
            c * k * k,
            1.0,
            filt.data(),
            cols.data(),
            0.0,
            &mut out,
        );
        for ni in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0f64;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    acc += x.at4(ni, ci, oy + ky, ox + kx) as f64
                                        * filt.at4(fi, ci, ky, kx) as f64;
                                }
                            }
                        }
                        let got = out[fi * n * oh * ow + (ni * oh + oy) * ow + ox] as f64;
                        assert!((got - acc).abs() <= 1e-5 * acc.abs().max(1.0));
                    }
                }
            }
        }
    }
}
