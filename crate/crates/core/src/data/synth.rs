//! Procedural scenes for desk-scale experiments.
//!
//! Every generator is a pure function of its seed. Pixel values are
//! quantized to multiples of 1/255 so a scene survives an 8-bit P6 round
//! trip unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{birdseye_weight_map, pnm::quantize, LabelMap, LabeledImage, UNLABELED};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Road,
    Urban,
}

/// (height, width) of road scenes.
pub const ROAD_SIZE: (usize, usize) = (48, 64);
/// (height, width) of urban scenes.
pub const URBAN_SIZE: (usize, usize) = (64, 64);
/// (height, width) of position-task and imbalanced scenes.
pub const SMALL_SIZE: (usize, usize) = (48, 48);

/// Class names of the urban task, indexed by class id.
pub const URBAN_CLASSES: [&str; 8] = [
    "building",
    "window",
    "sky",
    "road",
    "vegetation",
    "car",
    "door",
    "pavement",
];
pub const ROAD_CLASSES: [&str; 2] = ["non_road", "road"];

const BUILDING: u8 = 0;
const WINDOW: u8 = 1;
const SKY: u8 = 2;
const ROAD: u8 = 3;
const VEGETATION: u8 = 4;
const CAR: u8 = 5;
const DOOR: u8 = 6;
const PAVEMENT: u8 = 7;

type Rgb = [f32; 3];

struct Canvas {
    h: usize,
    w: usize,
    rgb: Vec<Rgb>,
    labels: Vec<u8>,
    rng: ChaCha8Rng,
}

impl Canvas {
    fn new(h: usize, w: usize, seed: u64) -> Self {
        Canvas {
            h,
            w,
            rgb: vec![[0.0; 3]; h * w],
            labels: vec![UNLABELED; h * w],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `base` shifted by a per-call random offset of at most `spread`.
    fn jitter(&mut self, base: Rgb, spread: f32) -> Rgb {
        let s: f32 = self.rng.gen_range(-spread..=spread);
        let mut c = base;
        for v in &mut c {
            *v += s + self.rng.gen_range(-spread..=spread) * 0.5;
        }
        c
    }

    /// Paints pixel `p` with `color` plus uniform noise of amplitude `noise`.
    fn paint(&mut self, p: usize, color: Rgb, noise: f32, label: u8) {
        let n: f32 = self.rng.gen_range(-noise..=noise);
        let mut c = color;
        for v in &mut c {
            *v += n + self.rng.gen_range(-noise..=noise) * 0.3;
        }
        self.rgb[p] = c;
        self.labels[p] = label;
    }

    fn fill_rect(
        &mut self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
        color: Rgb,
        noise: f32,
        label: u8,
    ) {
        for r in rows.start.min(self.h)..rows.end.min(self.h) {
            for c in cols.start.min(self.w)..cols.end.min(self.w) {
                self.paint(r * self.w + c, color, noise, label);
            }
        }
    }

    fn finish(self, weight_map: Option<Tensor>) -> LabeledImage {
        let (h, w) = (self.h, self.w);
        let mut pixels = Tensor::zeros(&[3, h, w]);
        let d = pixels.data_mut();
        for (p, rgb) in self.rgb.iter().enumerate() {
            for c in 0..3 {
                d[c * h * w + p] = quantize(rgb[c]) as f32 / 255.0;
            }
        }
        let labels = LabelMap::new(w, h, self.labels).expect("canvas dims");
        LabeledImage::new(pixels, labels, weight_map).expect("consistent scene")
    }
}

pub fn generate_synthetic_scene(kind: SceneKind, seed: u64) -> LabeledImage {
    match kind {
        SceneKind::Road => road_scene(seed),
        SceneKind::Urban => urban_scene(seed),
    }
}

/// Road scene with a birds-eye weight map below its horizon.
fn road_scene(seed: u64) -> LabeledImage {
    let (h, w) = ROAD_SIZE;
    let mut cv = Canvas::new(h, w, seed ^ 0x524f_4144);
    let horizon = cv.rng.gen_range(h * 3 / 10..=h * 9 / 20);
    let sky = cv.jitter([0.55, 0.7, 0.9], 0.06);
    let grass = cv.jitter([0.3, 0.48, 0.2], 0.06);
    let dirt = cv.jitter([0.5, 0.42, 0.3], 0.05);
    let asphalt = cv.jitter([0.42, 0.42, 0.44], 0.06);
    let vanish = w as f32 * cv.rng.gen_range(0.4..0.6);
    let bottom = w as f32 * cv.rng.gen_range(0.35..0.65);
    let top_half = cv.rng.gen_range(0.5..2.5f32);
    let bottom_half = w as f32 * cv.rng.gen_range(0.3..0.42);
    let dashed = cv.rng.gen_bool(0.5);

    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            if r < horizon {
                let fade = 0.12 * r as f32 / horizon as f32;
                let col = [sky[0] + fade, sky[1] + fade, sky[2]];
                cv.paint(p, col, 0.03, 0);
                continue;
            }
            let t = (r - horizon) as f32 / (h - 1 - horizon) as f32;
            let center = vanish + t * (bottom - vanish);
            let half = top_half + t * (bottom_half - top_half);
            let dx = (c as f32 + 0.5 - center).abs();
            if dx <= half && r > horizon {
                let mut col = asphalt;
                if dashed && dx < 0.5 + 0.8 * t && (r / 3) % 2 == 0 {
                    col = [0.9, 0.9, 0.85];
                }
                cv.paint(p, col, 0.05, 1);
            } else {
                // Coarse two-tone texture for the verge.
                let blotch = ((r / 3) * 7 + (c / 3) * 13 + seed as usize) % 5 == 0;
                let col = if blotch { dirt } else { grass };
                cv.paint(p, col, 0.1, 0);
            }
        }
    }
    let weights = birdseye_weight_map(h, w, horizon, 1.0).expect("horizon inside image");
    cv.finish(Some(weights))
}

fn urban_scene(seed: u64) -> LabeledImage {
    let (h, w) = URBAN_SIZE;
    let mut cv = Canvas::new(h, w, seed ^ 0x5552_4241);
    let rng = &mut cv.rng;
    let split = rng.gen_range(w / 3..2 * w / 3);
    let roof = [rng.gen_range(6..14), rng.gen_range(6..14)];
    let ground = rng.gen_range(44..48usize);
    let road_top = ground + rng.gen_range(4..7usize);
    let facades: [Rgb; 4] = [
        [0.62, 0.36, 0.28],
        [0.78, 0.7, 0.55],
        [0.6, 0.6, 0.62],
        [0.72, 0.55, 0.4],
    ];
    let fa = facades[rng.gen_range(0..4)];
    let fb = facades[rng.gen_range(0..4)];

    let sky = cv.jitter([0.55, 0.72, 0.95], 0.05);
    let fa = cv.jitter(fa, 0.04);
    let fb = cv.jitter(fb, 0.04);
    let glass = cv.jitter([0.2, 0.26, 0.35], 0.04);
    let pave = cv.jitter([0.88, 0.86, 0.8], 0.03);
    let asphalt = cv.jitter([0.3, 0.3, 0.32], 0.04);
    let door = cv.jitter([0.35, 0.2, 0.1], 0.04);
    let leaf = cv.jitter([0.18, 0.45, 0.15], 0.04);

    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            let top = if c < split { roof[0] } else { roof[1] };
            if r < top {
                cv.paint(p, sky, 0.03, SKY);
            } else if r < ground {
                cv.paint(p, if c < split { fa } else { fb }, 0.05, BUILDING);
            } else if r < road_top {
                cv.paint(p, pave, 0.04, PAVEMENT);
            } else {
                cv.paint(p, asphalt, 0.05, ROAD);
            }
        }
    }

    // Door on one facade, touching the pavement.
    let dw = cv.rng.gen_range(6..9);
    let dh = cv.rng.gen_range(10..13);
    let dc = cv.rng.gen_range(2..w - dw - 2);
    cv.fill_rect(ground - dh..ground, dc..dc + dw, door, 0.04, DOOR);

    // Window grid on the upper floors, skipping the door columns.
    let (ww, wh) = (cv.rng.gen_range(4..6), cv.rng.gen_range(5..7));
    let (gx, gy) = (ww + cv.rng.gen_range(3..5), wh + cv.rng.gen_range(3..5));
    let first_row = roof[0].max(roof[1]) + 3;
    let mut r0 = first_row;
    while r0 + wh + 2 < ground - dh {
        let mut c0 = 2;
        while c0 + ww < w - 1 {
            let crosses_split = c0 < split && c0 + ww >= split;
            if !crosses_split {
                cv.fill_rect(r0..r0 + wh, c0..c0 + ww, glass, 0.04, WINDOW);
            }
            c0 += gx;
        }
        r0 += gy;
    }

    // Shrub in front of the facade, away from the door.
    let rad = cv.rng.gen_range(4..7) as isize;
    let x = cv.rng.gen_range(rad..w as isize - rad);
    let cx = if x + rad < dc as isize - 1 || x - rad > (dc + dw) as isize + 1 {
        x
    } else if dc > w / 2 {
        rad + 1
    } else {
        w as isize - rad - 2
    };
    let cy = ground as isize - 1;
    for r in (cy - rad).max(0)..(cy + rad / 2).min(h as isize) {
        for c in (cx - rad).max(0)..(cx + rad + 1).min(w as isize) {
            let (dy, dx) = (r - cy, c - cx);
            if dy * dy + dx * dx <= rad * rad {
                cv.paint(r as usize * w + c as usize, leaf, 0.08, VEGETATION);
            }
        }
    }

    // Car on the road.
    let palette: [Rgb; 3] = [[0.75, 0.12, 0.1], [0.12, 0.2, 0.7], [0.9, 0.9, 0.9]];
    let body = palette[cv.rng.gen_range(0..3)];
    let (car_w, car_h) = (cv.rng.gen_range(14..20), cv.rng.gen_range(6..9));
    let car_c = cv.rng.gen_range(1..w - car_w - 1);
    let car_r = (h - 1 - car_h).max(road_top);
    cv.fill_rect(
        car_r..car_r + car_h - 2,
        car_c..car_c + car_w,
        body,
        0.04,
        CAR,
    );
    let tyre = [0.08, 0.08, 0.08];
    cv.fill_rect(
        car_r + car_h - 2..car_r + car_h,
        car_c + 1..car_c + 5,
        tyre,
        0.02,
        CAR,
    );
    cv.fill_rect(
        car_r + car_h - 2..car_r + car_h,
        car_c + car_w - 5..car_c + car_w - 1,
        tyre,
        0.02,
        CAR,
    );

    // Clutter excluded from the labels.
    if cv.rng.gen_bool(0.5) {
        let (sz, r, c) = (
            cv.rng.gen_range(3..6),
            cv.rng.gen_range(roof[0].max(roof[1])..ground - 6),
            cv.rng.gen_range(0..w - 6),
        );
        for rr in r..r + sz {
            for cc in c..c + sz {
                let col = [cv.rng.gen(), cv.rng.gen(), cv.rng.gen()];
                cv.paint(rr * w + cc, col, 0.0, UNLABELED);
            }
        }
    }
    cv.finish(None)
}

/// Road-task scene where one texture covers the whole image and the label
/// depends only on the row (road in the lower half). An appearance-distinct
/// non-road patch is placed at a random location.
pub fn generate_position_scene(seed: u64) -> LabeledImage {
    let (h, w) = SMALL_SIZE;
    let mut cv = Canvas::new(h, w, seed ^ 0x504f_5349);
    let asphalt = cv.jitter([0.45, 0.45, 0.47], 0.05);
    let grass = cv.jitter([0.25, 0.55, 0.2], 0.04);
    for r in 0..h {
        for c in 0..w {
            let label = u8::from(2 * r >= h);
            cv.paint(r * w + c, asphalt, 0.08, label);
        }
    }
    let (rh, rw) = (cv.rng.gen_range(6..12), cv.rng.gen_range(6..12));
    let (r0, c0) = (cv.rng.gen_range(0..h - rh), cv.rng.gen_range(0..w - rw));
    cv.fill_rect(r0..r0 + rh, c0..c0 + rw, grass, 0.06, 0);
    cv.finish(None)
}

/// Two-class scene for the urban preset: a facade (class 0) with
/// rectangles of a different material (class 1) covering a tenth of the
/// pixels. Both are tinted along one colour direction: facade tiles by
/// `u ~ U[0, 0.5]`, rectangles by `v ~ U[0.3, 0.6]`. In the overlap band
/// the facade is denser than the minority by less than the 9:1 prior, so
/// the accuracy-optimal and balanced-accuracy-optimal decisions differ.
pub fn generate_imbalanced_scene(seed: u64) -> LabeledImage {
    const TILE: usize = 6;
    const TINT: [f32; 3] = [-0.8, -0.4, 0.8];
    let (h, w) = SMALL_SIZE;
    let mut cv = Canvas::new(h, w, seed ^ 0x494d_4241);
    let base = cv.jitter([0.6, 0.52, 0.45], 0.03);
    let tinted = |t: f32| [0, 1, 2].map(|i| base[i] + t * TINT[i]);
    let (th, tw) = (h.div_ceil(TILE), w.div_ceil(TILE));
    let tiles: Vec<f32> = (0..th * tw).map(|_| cv.rng.gen_range(0.0..0.5)).collect();
    for r in 0..h {
        for c in 0..w {
            let col = tinted(tiles[(r / TILE) * tw + c / TILE]);
            cv.paint(r * w + c, col, 0.05, BUILDING);
        }
    }
    let target = h * w / 10;
    let mut covered = 0;
    while covered < target {
        let (rh, rw) = (cv.rng.gen_range(3..8), cv.rng.gen_range(3..8));
        let (r0, c0) = (cv.rng.gen_range(0..h - rh), cv.rng.gen_range(0..w - rw));
        let col = tinted(cv.rng.gen_range(0.3..0.6));
        for r in r0..r0 + rh {
            for c in c0..c0 + rw {
                let p = r * w + c;
                if cv.labels[p] != WINDOW && covered < target {
                    cv.paint(p, col, 0.05, WINDOW);
                    covered += 1;
                }
            }
        }
    }
    cv.finish(None)
}
