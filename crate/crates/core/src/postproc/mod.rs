//! Graph-based over-segmentation and region-consistent label fusion.

use serde::{Deserialize, Serialize};

use crate::data::{
    image_dims,
    pnm::{quantize, Pnm},
    LabelMap,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationParams {
    /// Scale of the merge threshold, in 0–255 intensity units.
    pub k: f64,
    /// Standard deviation of the pre-smoothing Gaussian, in pixels.
    pub sigma: f64,
    /// Components smaller than this are merged into a neighbour afterwards.
    pub min_size: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            k: 550.0,
            sigma: 0.5,
            min_size: 0,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::Parameter(format!("k must be > 0, got {}", self.k)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Parameter(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Segment id per pixel, row-major; ids are dense in `[0, count)` and
/// numbered in order of first appearance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u32>,
    pub count: usize,
}

impl SegmentMap {
    /// Every pixel its own segment.
    pub fn identity(width: usize, height: usize) -> Self {
        SegmentMap {
            width,
            height,
            ids: (0..(width * height) as u32).collect(),
            count: width * height,
        }
    }

    /// Ids modulo 256 as an 8-bit P5 raster.
    pub fn to_pgm(&self) -> Vec<u8> {
        Pnm {
            width: self.width,
            height: self.height,
            channels: 1,
            maxval: 255,
            samples: self.ids.iter().map(|&i| (i % 256) as u16).collect(),
        }
        .encode()
    }

    /// Exact ids as an H×W tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[self.height, self.width],
            self.ids.iter().map(|&i| i as f32).collect(),
        )
        .expect("segment map dims")
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
    size: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
            size: vec![1; n],
        }
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    /// Joins two roots; returns the new root.
    fn join(&mut self, a: u32, b: u32) -> u32 {
        let (a, b) = if self.rank[a as usize] < self.rank[b as usize] {
            (b, a)
        } else {
            (a, b)
        };
        self.parent[b as usize] = a;
        self.size[a as usize] += self.size[b as usize];
        if self.rank[a as usize] == self.rank[b as usize] {
            self.rank[a as usize] += 1;
        }
        a
    }

    fn size(&self, root: u32) -> usize {
        self.size[root as usize] as usize
    }
}

/// Normalized 1-D Gaussian taps `g[0..=L]` with `L = ceil(4σ)`.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let len = (4.0 * sigma).ceil() as usize + 1;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum = taps[0] + 2.0 * taps[1..].iter().sum::<f64>();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian blur of one H×W plane with clamped borders.
fn smooth(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return plane.to_vec();
    }
    let taps = gaussian_taps(sigma);
    let l = taps.len() as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = taps[0] * plane[r * w + c];
            for i in 1..l {
                let left = plane[r * w + clamp(c as isize - i, w)];
                let right = plane[r * w + clamp(c as isize + i, w)];
                acc += taps[i as usize] * (left + right);
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = taps[0] * tmp[r * w + c];
            for i in 1..l {
                let up = tmp[clamp(r as isize - i, h) * w + c];
                let down = tmp[clamp(r as isize + i, h) * w + c];
                acc += taps[i as usize] * (up + down);
            }
            out[r * w + c] = acc;
        }
    }
    out
}

#[derive(Clone, Copy)]
struct Edge {
    w: f64,
    a: u32,
    b: u32,
}

/// Felzenszwalb–Huttenlocher segmentation of a 3×H×W image in `[0, 1]`.
///
/// Intensities are taken at their nearest 8-bit level, 0–255, so `k` keeps
/// its customary meaning and edge weights between 8-bit images are exact.
/// Edges join 8-connected neighbours with Euclidean RGB weights and are
/// processed in nondecreasing weight order, equal weights in generation
/// order (row-major pixel, then right, down, down-right, up-right).
pub fn segment(image: &Tensor, params: &SegmentationParams) -> Result<SegmentMap> {
    params.validate()?;
    let (h, w) = image_dims(image)?;
    let n = h * w;
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let raw: Vec<f64> = image.data()[c * n..(c + 1) * n]
                .iter()
                .map(|&v| f64::from(quantize(v)))
                .collect();
            smooth(&raw, h, w, params.sigma)
        })
        .collect();
    let diff = |p: usize, q: usize| -> f64 {
        planes
            .iter()
            .map(|pl| (pl[p] - pl[q]).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let mut edges = Vec::with_capacity(4 * n);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            let mut push = |q: usize| {
                edges.push(Edge {
                    w: diff(p, q),
                    a: p as u32,
                    b: q as u32,
                })
            };
            if c + 1 < w {
                push(p + 1);
            }
            if r + 1 < h {
                push(p + w);
            }
            if c + 1 < w && r + 1 < h {
                push(p + w + 1);
            }
            if c + 1 < w && r > 0 {
                push(p - w + 1);
            }
        }
    }
    edges.sort_by(|x, y| x.w.total_cmp(&y.w));

    let mut ds = DisjointSet::new(n);
    let mut threshold = vec![params.k; n];
    for e in &edges {
        let a = ds.find(e.a);
        let b = ds.find(e.b);
        if a != b && e.w <= threshold[a as usize] && e.w <= threshold[b as usize] {
            let root = ds.join(a, b);
            threshold[root as usize] = e.w + params.k / ds.size(root) as f64;
        }
    }
    if params.min_size > 0 {
        for e in &edges {
            let a = ds.find(e.a);
            let b = ds.find(e.b);
            if a != b && (ds.size(a) < params.min_size || ds.size(b) < params.min_size) {
                ds.join(a, b);
            }
        }
    }

    let mut dense = vec![u32::MAX; n];
    let mut ids = Vec::with_capacity(n);
    let mut count = 0u32;
    for p in 0..n {
        let root = ds.find(p as u32) as usize;
        if dense[root] == u32::MAX {
            dense[root] = count;
            count += 1;
        }
        ids.push(dense[root]);
    }
    Ok(SegmentMap {
        width: w,
        height: h,
        ids,
        count: count as usize,
    })
}

/// How per-pixel probabilities are combined within a segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    /// Argmax of the mean class probability.
    #[default]
    MeanProbability,
    /// Most frequent per-pixel argmax.
    MajorityVote,
}

/// One label per segment from a K×H×W probability map; ties go to the
/// lowest class id.
pub fn fuse_labels(prob: &Tensor, seg: &SegmentMap, rule: FusionRule) -> Result<LabelMap> {
    let [k, h, w] = *prob.shape() else {
        return Err(Error::dim(format!("probability map {:?}", prob.shape())));
    };
    if (h, w) != (seg.height, seg.width) {
        return Err(Error::dim(format!(
            "probability map {h}x{w} vs segments {}x{}",
            seg.height, seg.width
        )));
    }
    let n = h * w;
    let d = prob.data();
    let mut acc = vec![0.0f64; seg.count * k];
    for p in 0..n {
        let s = seg.ids[p] as usize;
        match rule {
            FusionRule::MeanProbability => {
                for c in 0..k {
                    acc[s * k + c] += d[c * n + p] as f64;
                }
            }
            FusionRule::MajorityVote => {
                let mut best = 0;
                for c in 1..k {
                    if d[c * n + p] > d[best * n + p] {
                        best = c;
                    }
                }
                acc[s * k + best] += 1.0;
            }
        }
    }
    // Sums and means share their argmax within a segment.
    let seg_label: Vec<u8> = acc
        .chunks(k.max(1))
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(
        w,
        h,
        seg.ids.iter().map(|&s| seg_label[s as usize]).collect(),
    )
}
