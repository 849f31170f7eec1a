//! Dense per-pixel labeling of whole images.

use rayon::prelude::*;

use crate::data::{
    extract_patch, image_dims, normalized_position, pad_reflect, LabelMap, LabeledImage,
};
use crate::error::{Error, Result};
use crate::eval::{
    argmax_labels, binary_eval, confusion, max_f, orr_arr, BinaryEval, ConfusionMatrix, Metrics,
    Prediction,
};
use crate::layers::Layer;
use crate::network::Model;
use crate::postproc::{fuse_labels, segment, FusionRule, SegmentMap, SegmentationParams};
use crate::tensor::Tensor;

/// Image rows handled by one parallel work item.
const BLOCK_ROWS: usize = 4;

/// K×H×W class probabilities; every pixel's column sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap(Tensor);

impl ProbMap {
    /// Converts raw network outputs (H·W × O, row-major pixels) into
    /// probabilities. A single output is a tanh score `s` mapped to
    /// `[1 − s', s']` with `s' = (s + 1)/2`; several outputs are rescaled
    /// to sum to one.
    pub fn from_scores(scores: &Tensor, height: usize, width: usize) -> Result<ProbMap> {
        let (n, o) = scores.dims2()?;
        if n != height * width || o == 0 {
            return Err(Error::dim(format!(
                "{:?} scores for a {height}x{width} image",
                scores.shape()
            )));
        }
        let k = if o == 1 { 2 } else { o };
        let mut t = Tensor::zeros(&[k, height, width]);
        let d = t.data_mut();
        for (p, row) in scores.data().chunks(o).enumerate() {
            if o == 1 {
                let s = ((row[0] + 1.0) * 0.5).clamp(0.0, 1.0);
                d[p] = 1.0 - s;
                d[n + p] = s;
            } else {
                let sum: f32 = row.iter().map(|v| v.max(0.0)).sum();
                for (c, &v) in row.iter().enumerate() {
                    d[c * n + p] = if sum > 0.0 {
                        v.max(0.0) / sum
                    } else {
                        1.0 / o as f32
                    };
                }
            }
        }
        Ok(ProbMap(t))
    }

    pub fn from_tensor(t: Tensor) -> Result<ProbMap> {
        match *t.shape() {
            [k, _, _] if k >= 2 => Ok(ProbMap(t)),
            _ => Err(Error::dim(format!("probability map shape {:?}", t.shape()))),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn argmax(&self) -> LabelMap {
        argmax_labels(&self.0).expect("valid probability map")
    }
}

/// Post-processing request for [`label_image`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PostProcess {
    pub params: SegmentationParams,
    pub rule: FusionRule,
}

/// Result of labeling one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeling {
    pub prob: ProbMap,
    pub labels: LabelMap,
    pub segments: Option<SegmentMap>,
}

fn positions_for(pixels: &[(usize, usize)], h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(&[pixels.len(), 2]);
    for (i, &(r, c)) in pixels.iter().enumerate() {
        let (x, y) = normalized_position(r, c, h, w);
        t.data_mut()[2 * i] = x;
        t.data_mut()[2 * i + 1] = y;
    }
    t
}

/// Per-pixel scores by explicit patch extraction. Reference path.
pub fn score_pixels_naive(model: &Model, image: &Tensor, batch_size: usize) -> Result<Tensor> {
    let (h, w) = image_dims(image)?;
    let (_, ph, _) = model.spec().input_patch;
    let o = model.output_width();
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
    let mut out = Tensor::zeros(&[h * w, o]);
    for (b, chunk) in pixels.chunks(batch_size.max(1)).enumerate() {
        let patches = chunk
            .iter()
            .map(|&(r, c)| extract_patch(image, r, c, ph))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = patches.iter().collect();
        let x = Tensor::stack(&refs)?;
        let pos = model.uses_positions().then(|| positions_for(chunk, h, w));
        let y = model.forward(&x, pos.as_ref())?;
        let start = b * batch_size.max(1) * o;
        out.data_mut()[start..start + y.len()].copy_from_slice(y.data());
    }
    Ok(out)
}

/// Rows `[r0, r1)` of the score map. The first convolution runs once over
/// the reflection-padded strip; each pixel then takes its window of that
/// output, which equals the first-layer output of its own patch.
fn score_block(
    model: &Model,
    image: &Tensor,
    r0: usize,
    r1: usize,
    batch_size: usize,
) -> Result<Vec<f32>> {
    let (h, w) = image_dims(image)?;
    let (_, p, _) = model.spec().input_patch;
    let Layer::Conv(conv) = &model.layers()[0] else {
        unreachable!("checked by caller")
    };
    let half = (p / 2) as isize;
    let strip = pad_reflect(
        image,
        r0 as isize - half..r1 as isize - half + p as isize - 1,
        -half..w as isize - half + p as isize - 1,
    )?;
    let first = model.first_layer(&strip)?;
    let (_, f, sh, sw) = first.dims4()?;
    let (oh, ow) = (p - conv.kh + 1, p - conv.kw + 1);
    debug_assert_eq!((sh, sw), (r1 - r0 + oh - 1, w + ow - 1));

    let pixels: Vec<(usize, usize)> = (r0..r1).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
    let mut out = Vec::with_capacity(pixels.len() * model.output_width());
    let src = first.data();
    for chunk in pixels.chunks(batch_size.max(1)) {
        let mut crops = Tensor::zeros(&[chunk.len(), f, oh, ow]);
        let dst = crops.data_mut();
        for (i, &(r, c)) in chunk.iter().enumerate() {
            for ch in 0..f {
                for y in 0..oh {
                    let s = (ch * sh + (r - r0) + y) * sw + c;
                    let d = ((i * f + ch) * oh + y) * ow;
                    dst[d..d + ow].copy_from_slice(&src[s..s + ow]);
                }
            }
        }
        let pos = model.uses_positions().then(|| positions_for(chunk, h, w));
        let y = model.forward_after_first(crops, pos.as_ref())?;
        out.extend_from_slice(y.data());
    }
    Ok(out)
}

/// Per-pixel raw network outputs (H·W × O). Uses the shared first-layer
/// path when the first layer is a convolution without position input, and
/// the naive path otherwise; both give identical results.
pub fn score_pixels(model: &Model, image: &Tensor, batch_size: usize) -> Result<Tensor> {
    let (h, w) = image_dims(image)?;
    let shareable = matches!(model.layers().first(), Some(Layer::Conv(_)))
        && model.spec().aux_layer_index != Some(0);
    if !shareable {
        return score_pixels_naive(model, image, batch_size);
    }
    let blocks: Vec<(usize, usize)> = (0..h)
        .step_by(BLOCK_ROWS)
        .map(|r0| (r0, (r0 + BLOCK_ROWS).min(h)))
        .collect();
    let parts = blocks
        .par_iter()
        .map(|&(r0, r1)| score_block(model, image, r0, r1, batch_size))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_vec(&[h * w, model.output_width()], parts.concat())
}

/// Labels every pixel of a 3×H×W image. With `postproc`, labels are fused
/// over a segmentation of the image; otherwise they are the per-pixel
/// argmax of the probability map.
pub fn label_image(
    model: &Model,
    image: &Tensor,
    batch_size: usize,
    postproc: Option<&PostProcess>,
) -> Result<Labeling> {
    let (h, w) = image_dims(image)?;
    let scores = score_pixels(model, image, batch_size)?;
    let prob = ProbMap::from_scores(&scores, h, w)?;
    match postproc {
        None => Ok(Labeling {
            labels: prob.argmax(),
            prob,
            segments: None,
        }),
        Some(pp) => {
            let seg = segment(image, &pp.params)?;
            Ok(Labeling {
                labels: fuse_labels(prob.tensor(), &seg, pp.rule)?,
                prob,
                segments: Some(seg),
            })
        }
    }
}

/// Display colours per class id; road maps use index 1 for road.
const PALETTE: [[f32; 3]; 8] = [
    [0.8, 0.3, 0.2],
    [0.2, 0.4, 0.9],
    [0.5, 0.8, 1.0],
    [0.5, 0.5, 0.5],
    [0.1, 0.8, 0.1],
    [0.9, 0.1, 0.9],
    [0.9, 0.8, 0.1],
    [0.9, 0.6, 0.7],
];

/// Image blended half-and-half with class colours. Two-class maps tint
/// only the positive class, in green.
pub fn render_overlay(image: &Tensor, labels: &LabelMap, num_classes: usize) -> Result<Tensor> {
    let (h, w) = image_dims(image)?;
    if (labels.height, labels.width) != (h, w) {
        return Err(Error::dim("overlay labels do not match the image"));
    }
    let mut out = image.clone();
    let n = h * w;
    let d = out.data_mut();
    for (p, &l) in labels.data.iter().enumerate() {
        let colour = match (num_classes, l) {
            (2, 1) => Some([0.0, 1.0, 0.0]),
            (2, _) => None,
            (_, l) => PALETTE.get(l as usize).copied(),
        };
        if let Some(rgb) = colour {
            for c in 0..3 {
                d[c * n + p] = 0.5 * d[c * n + p] + 0.5 * rgb[c];
            }
        }
    }
    Ok(out)
}

/// Number of classes a model distinguishes; single-output models are
/// binary.
pub fn model_classes(model: &Model) -> usize {
    match model.output_width() {
        1 => 2,
        k => k,
    }
}

/// Labels every image and pools the pixels into one dataset metric: maxF
/// over the positive-class probability for binary models (weighted by the
/// images' weight maps when `weighted`), ORR/ARR of the final labels
/// otherwise.
pub fn evaluate_images(
    model: &Model,
    images: &[LabeledImage],
    batch_size: usize,
    postproc: Option<&PostProcess>,
    weighted: bool,
) -> Result<Metrics> {
    let k = model_classes(model);
    let mut bin = BinaryEval::default();
    let mut cm = ConfusionMatrix::new(k);
    for img in images {
        let out = label_image(model, &img.pixels, batch_size, postproc)?;
        if k == 2 {
            let wm = if weighted {
                img.weight_map.as_ref()
            } else {
                None
            };
            let pred = match postproc {
                Some(_) => Prediction::Labels(&out.labels),
                None => Prediction::Probabilities(out.prob.tensor()),
            };
            bin.extend(&binary_eval(pred, &img.labels, wm)?);
        } else {
            cm.merge(&confusion(Prediction::Labels(&out.labels), &img.labels, k)?)?;
        }
    }
    if k == 2 {
        Ok(Metrics::Binary(max_f(&bin)?))
    } else {
        let (orr, arr) = orr_arr(&cm)?;
        Ok(Metrics::MultiClass {
            orr,
            arr,
            confusion: cm.rows(),
        })
    }
}
