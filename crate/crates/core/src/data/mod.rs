//! Labeled images, patch extraction and training pools.

mod manifest;
pub mod pnm;
pub mod synth;

use std::collections::BTreeMap;

use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, parse_manifest, write_manifest, ManifestEntry};
pub use synth::{
    generate_imbalanced_scene, generate_position_scene, generate_synthetic_scene, SceneKind,
    ROAD_CLASSES, URBAN_CLASSES,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::compute_class_weights;

/// Label value for pixels excluded from training and evaluation.
pub const UNLABELED: u8 = 255;

/// Per-pixel class ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::dim(format!(
                "label map {width}x{height} with {} entries",
                data.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        LabelMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    /// Pixel counts per class, ignoring [`UNLABELED`].
    pub fn histogram(&self) -> BTreeMap<u8, usize> {
        let mut h = BTreeMap::new();
        for &l in self.data.iter().filter(|&&l| l != UNLABELED) {
            *h.entry(l).or_insert(0) += 1;
        }
        h
    }
}

/// An RGB image in `[0, 1]` (3×H×W) with its label map and optional
/// per-pixel example weights (H×W).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub labels: LabelMap,
    pub weight_map: Option<Tensor>,
}

impl LabeledImage {
    pub fn new(pixels: Tensor, labels: LabelMap, weight_map: Option<Tensor>) -> Result<Self> {
        let (h, w) = image_dims(&pixels)?;
        if (labels.height, labels.width) != (h, w) {
            return Err(Error::dim(format!(
                "labels {}x{} do not match image {h}x{w}",
                labels.height, labels.width
            )));
        }
        if let Some(wm) = &weight_map {
            if wm.shape() != [h, w] {
                return Err(Error::dim(format!(
                    "weight map {:?} does not match image {h}x{w}",
                    wm.shape()
                )));
            }
            if wm.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Weight(
                    "weight map has negative or non-finite entries".into(),
                ));
            }
        }
        Ok(LabeledImage {
            pixels,
            labels,
            weight_map,
        })
    }

    pub fn height(&self) -> usize {
        self.labels.height
    }

    pub fn width(&self) -> usize {
        self.labels.width
    }
}

/// (height, width) of a 3×H×W image tensor.
pub fn image_dims(pixels: &Tensor) -> Result<(usize, usize)> {
    match *pixels.shape() {
        [3, h, w] => Ok((h, w)),
        _ => Err(Error::dim(format!(
            "images must be 3xHxW, got {:?}",
            pixels.shape()
        ))),
    }
}

/// One training example: a patch around a pixel, the pixel's normalized
/// position, its class and its example weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub patch: Tensor,
    /// (x, y) in `[0, 1]²`.
    pub position: (f32, f32),
    pub label: u8,
    pub weight: f32,
}

/// How example weights are assigned when building a pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    None,
    InverseClassFrequency,
    PixelWeightMap,
}

/// Symmetric reflection of a possibly out-of-range coordinate into
/// `[0, len)`: -1 maps to 0, -2 to 1, `len` to `len - 1`.
#[inline]
pub fn reflect(i: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized position: `x = col/(W−1)`, `y = row/(H−1)`; a single-pixel
/// extent maps to 0.
pub fn normalized_position(row: usize, col: usize, height: usize, width: usize) -> (f32, f32) {
    let norm = |v: usize, n: usize| {
        if n > 1 {
            v as f32 / (n - 1) as f32
        } else {
            0.0
        }
    };
    (norm(col, width), norm(row, height))
}

/// `size × size` window whose center (index `size/2`) is pixel (row, col);
/// pixels outside the image are filled by reflection.
pub fn extract_patch(pixels: &Tensor, row: usize, col: usize, size: usize) -> Result<Tensor> {
    let (h, w) = image_dims(pixels)?;
    if row >= h || col >= w {
        return Err(Error::Bounds(format!(
            "patch center ({row}, {col}) outside {h}x{w} image"
        )));
    }
    let mut patch = Tensor::zeros(&[3, size, size]);
    let half = (size / 2) as isize;
    let src = pixels.data();
    let dst = patch.data_mut();
    let cols: Vec<usize> = (0..size)
        .map(|dx| reflect(col as isize - half + dx as isize, w))
        .collect();
    for c in 0..3 {
        for dy in 0..size {
            let y = reflect(row as isize - half + dy as isize, h);
            let srow = &src[(c * h + y) * w..(c * h + y + 1) * w];
            let drow = &mut dst[(c * size + dy) * size..(c * size + dy + 1) * size];
            for (d, &x) in drow.iter_mut().zip(&cols) {
                *d = srow[x];
            }
        }
    }
    Ok(patch)
}

/// Reflection-pads an image by `top/left` rows/cols before and
/// `bottom/right` after, using the same rule as [`extract_patch`].
pub fn pad_reflect(
    pixels: &Tensor,
    rows: std::ops::Range<isize>,
    cols: std::ops::Range<isize>,
) -> Result<Tensor> {
    let (h, w) = image_dims(pixels)?;
    let (ph, pw) = (rows.len(), cols.len());
    let mut out = Tensor::zeros(&[1, 3, ph, pw]);
    let xs: Vec<usize> = cols.map(|x| reflect(x, w)).collect();
    let src = pixels.data();
    let dst = out.data_mut();
    for c in 0..3 {
        for (dy, y) in rows.clone().enumerate() {
            let y = reflect(y, h);
            let srow = &src[(c * h + y) * w..(c * h + y + 1) * w];
            let drow = &mut dst[(c * ph + dy) * pw..(c * ph + dy + 1) * pw];
            for (d, &x) in drow.iter_mut().zip(&xs) {
                *d = srow[x];
            }
        }
    }
    Ok(out)
}

/// Draws up to `samples_per_image` labeled pixels per image (all of them
/// when fewer exist) and turns each into a [`PatchSample`].
pub fn build_training_pool(
    images: &[LabeledImage],
    samples_per_image: usize,
    patch_size: usize,
    weighting: Weighting,
    rng: &mut dyn RngCore,
) -> Result<Vec<PatchSample>> {
    let mut pool = Vec::new();
    for (i, img) in images.iter().enumerate() {
        if weighting == Weighting::PixelWeightMap && img.weight_map.is_none() {
            return Err(Error::Data(format!(
                "image {i} has no weight map but pixel weighting was requested"
            )));
        }
        let (h, w) = (img.height(), img.width());
        let candidates: Vec<usize> = (0..h * w)
            .filter(|&p| img.labels.data[p] != UNLABELED)
            .filter(|&p| match (&img.weight_map, weighting) {
                (Some(wm), Weighting::PixelWeightMap) => wm.data()[p] > 0.0,
                _ => true,
            })
            .collect();
        let picks: Vec<usize> = if candidates.len() <= samples_per_image {
            candidates
        } else {
            index::sample(rng, candidates.len(), samples_per_image)
                .into_iter()
                .map(|k| candidates[k])
                .collect()
        };
        for p in picks {
            let (row, col) = (p / w, p % w);
            let weight = match (weighting, &img.weight_map) {
                (Weighting::PixelWeightMap, Some(wm)) => wm.data()[p],
                _ => 1.0,
            };
            pool.push(PatchSample {
                patch: extract_patch(&img.pixels, row, col, patch_size)?,
                position: normalized_position(row, col, h, w),
                label: img.labels.data[p],
                weight,
            });
        }
    }
    if weighting == Weighting::InverseClassFrequency {
        let mut hist = BTreeMap::new();
        for s in &pool {
            *hist.entry(s.label).or_insert(0usize) += 1;
        }
        let weights = compute_class_weights(&hist)?;
        for s in &mut pool {
            s.weight = weights[&s.label] as f32;
        }
    }
    Ok(pool)
}

/// Synthetic birds-eye example weights: zero at and above the horizon,
/// `(1/(row − horizon))^strength` below, rescaled so the nonzero entries
/// average to one. Returns an H×W tensor.
pub fn birdseye_weight_map(
    height: usize,
    width: usize,
    horizon_row: usize,
    strength: f32,
) -> Result<Tensor> {
    if horizon_row >= height {
        return Err(Error::Parameter(format!(
            "horizon row {horizon_row} outside [0, {height})"
        )));
    }
    if height == 0 || width == 0 || !(strength >= 0.0) {
        return Err(Error::Parameter("invalid weight map parameters".into()));
    }
    let raw: Vec<f64> = (0..height)
        .map(|r| {
            if r <= horizon_row {
                0.0
            } else {
                (1.0 / (r - horizon_row) as f64).powf(strength as f64)
            }
        })
        .collect();
    let nonzero = raw.iter().filter(|&&v| v > 0.0).count();
    if nonzero == 0 {
        return Err(Error::Parameter(
            "horizon is on the last row; no pixels below it".into(),
        ));
    }
    let mean = raw.iter().sum::<f64>() / nonzero as f64;
    let mut map = Tensor::zeros(&[height, width]);
    for (r, row) in map.data_mut().chunks_mut(width).enumerate() {
        row.fill((raw[r] / mean) as f32);
    }
    Ok(map)
}
