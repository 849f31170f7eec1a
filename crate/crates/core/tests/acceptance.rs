//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Numeric arguments select a subset, e.g. `-- 6 7`.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use patchnet::data::{
    build_training_pool, generate_imbalanced_scene, generate_position_scene,
    generate_synthetic_scene, LabelMap, LabeledImage, PatchSample, SceneKind, Weighting,
};
use patchnet::eval::{confusion, max_f, orr_arr, BinaryEval, ConfusionMatrix, Prediction};
use patchnet::gradcheck;
use patchnet::inference::{label_image, model_classes, PostProcess};
use patchnet::layers::ConvLayer;
use patchnet::network::{Model, NetworkSpec, PATCH_SIZE};
use patchnet::postproc::{segment, SegmentationParams};
use patchnet::trainer::{evaluate_loss, train, InitScheme, TrainConfig};
use patchnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: std::ops::Range<u64> = 0..5;
const TRAIN_SCENES: u64 = 20;
const VAL_SCENES: u64 = 5;
const SAMPLES_PER_IMAGE: usize = 300;
const BATCH: usize = 48;

type Check = fn() -> Result<(bool, String), String>;

fn main() -> ExitCode {
    let criteria: [(u32, &str, u64, Check); 9] = [
        (1, "gradient correctness", 120, gradients),
        (2, "convolution oracle", 60, convolution),
        (3, "spatial-prior effect", 15 * 60, spatial_prior),
        (4, "initialization ordering", 15 * 60, init_ordering),
        (5, "class-weighting trade-off", 20 * 60, class_weighting),
        (6, "maxF exactness", 10, max_f_exactness),
        (7, "post-processing consistency", 5 * 60, postprocessing),
        (8, "determinism", 5 * 60, determinism),
        (9, "end-to-end pipeline", 30 * 60, end_to_end),
    ];
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, limit, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let (pass, detail) = match outcome {
            Ok((ok, detail)) => (ok && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{id}] {name}: {detail} ({:.1}s, limit {limit}s)",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------- 1

fn gradients() -> Result<(bool, String), String> {
    let checks = gradcheck::run_all(0..20).map_err(err)?;
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .ok_or("no checks ran")?;
    let failing = checks.iter().filter(|c| !c.passed()).count();
    let unchecked = checks.iter().filter(|c| c.checked == 0).count();
    let skipped: usize = checks.iter().map(|c| c.skipped).sum();
    let total: usize = checks.iter().map(|c| c.checked + c.skipped).sum();
    Ok((
        failing == 0 && unchecked == 0,
        format!(
            "{} tensor checks over 20 seeds, {failing} above 1e-3, {unchecked} with no \
             usable coordinate, {skipped}/{total} coordinates skipped at kinks, worst {:.2e} \
             ({} / {})",
            checks.len(),
            worst.rel_error,
            worst.suite,
            worst.tensor
        ),
    ))
}

// ---------------------------------------------------------------- 2

/// Direct six-loop cross-correlation in f64.
fn naive_conv(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Vec<f64> {
    let [n, c, h, w] = *input.shape() else {
        unreachable!()
    };
    let [f, _, kh, kw] = *weights.shape() else {
        unreachable!()
    };
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let (x, k) = (input.data(), weights.data());
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for r in 0..oh {
                for q in 0..ow {
                    let mut acc = f64::from(bias.data()[fi]);
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let xv = x[((ni * c + ci) * h + r + i) * w + q + j];
                                let kv = k[((fi * c + ci) * kh + i) * kw + j];
                                acc += f64::from(xv) * f64::from(kv);
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + r) * ow + q] = acc;
                }
            }
        }
    }
    out
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn convolution() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (kh, kw) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let (n, c, f) = (
            rng.gen_range(1..=4),
            rng.gen_range(1..=8),
            rng.gen_range(1..=12),
        );
        let (h, w) = (kh + rng.gen_range(0..12), kw + rng.gen_range(0..12));
        let mut layer = ConvLayer::new(c, f, kh, kw);
        layer.params.weights = random_tensor(&[f, c, kh, kw], &mut rng);
        layer.params.bias = random_tensor(&[f], &mut rng);
        let input = random_tensor(&[n, c, h, w], &mut rng);
        let (got, _) = layer.forward(&input).map_err(err)?;
        let want = naive_conv(&input, &layer.params.weights, &layer.params.bias);
        // Max-norm relative error: elementwise ratios are meaningless where
        // terms cancel to near zero.
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = got
            .data()
            .iter()
            .zip(&want)
            .fold(0.0f64, |m, (&g, &w)| m.max((f64::from(g) - w).abs()));
        worst = worst.max(diff / scale.max(f64::MIN_POSITIVE));
    }
    Ok((
        worst <= 1e-5,
        format!("100 shapes, worst max-norm relative error {worst:.2e} (tolerance 1e-5)"),
    ))
}

// ------------------------------------------------------------ 3, 4, 5

struct Split {
    train: Vec<LabeledImage>,
    val: Vec<LabeledImage>,
}

fn split(seed: u64, make: impl Fn(u64) -> LabeledImage) -> Split {
    Split {
        train: (0..TRAIN_SCENES).map(|i| make(seed * 1000 + i)).collect(),
        val: (0..VAL_SCENES)
            .map(|i| make(seed * 1000 + 500 + i))
            .collect(),
    }
}

fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn config(seed: u64, learning_rate: f32, epochs: usize, weighting: Weighting) -> TrainConfig {
    TrainConfig {
        learning_rate,
        epochs,
        iterations_per_epoch: 200,
        weighting,
        seed,
        ..TrainConfig::default()
    }
}

/// Trains a freshly initialised model; `per_epoch` receives each epoch's
/// model.
fn fit(
    spec: NetworkSpec,
    init: InitScheme,
    pool: &[PatchSample],
    cfg: &TrainConfig,
    mut per_epoch: impl FnMut(&Model) -> patchnet::Result<f64>,
) -> Result<Model, String> {
    let mut model =
        Model::build(spec, init, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).map_err(err)?;
    let mut v = |_epoch: usize, m: &Model| per_epoch(m);
    train(&mut model, pool, cfg, Some(&mut v)).map_err(err)?;
    Ok(model)
}

fn pooled_confusion(model: &Model, images: &[LabeledImage]) -> Result<ConfusionMatrix, String> {
    let k = model_classes(model);
    let mut cm = ConfusionMatrix::new(k);
    for img in images {
        let out = label_image(model, &img.pixels, BATCH, None).map_err(err)?;
        let part = confusion(Prediction::Labels(&out.labels), &img.labels, k).map_err(err)?;
        cm.merge(&part).map_err(err)?;
    }
    Ok(cm)
}

fn spatial_prior() -> Result<(bool, String), String> {
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let data = split(seed, generate_position_scene);
        let cfg = config(seed, 0.003, 5, Weighting::None);
        let pool = build_training_pool(
            &data.train,
            SAMPLES_PER_IMAGE,
            PATCH_SIZE,
            Weighting::None,
            &mut data_rng(seed),
        )
        .map_err(err)?;
        for (spec, acc) in [
            (NetworkSpec::road(), &mut with),
            (NetworkSpec::road().without_prior(), &mut without),
        ] {
            let model = fit(spec, InitScheme::Normalized, &pool, &cfg, |_| Ok(0.0))?;
            acc.push(
                orr_arr(&pooled_confusion(&model, &data.val)?)
                    .map_err(err)?
                    .0,
            );
        }
    }
    let (mw, mo) = (median(with.clone()), median(without.clone()));
    Ok((
        mw >= 0.95 && mo <= 0.80,
        format!(
            "median validation pixel accuracy with prior {mw:.3} (>= 0.95), without {mo:.3} \
             (<= 0.80); per seed {} vs {}",
            fmt_list(&with),
            fmt_list(&without)
        ),
    ))
}

/// First epoch (1-based) whose loss is at most `target`; one past the end
/// when none is.
fn epochs_to_reach(losses: &[f64], target: f64) -> f64 {
    losses
        .iter()
        .position(|&l| l <= target)
        .map_or(losses.len() + 1, |i| i + 1) as f64
}

fn init_ordering() -> Result<(bool, String), String> {
    let (mut heuristic, mut normalized) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let data = split(seed, |s| generate_synthetic_scene(SceneKind::Road, s));
        let cfg = config(seed, 0.001, 5, Weighting::None);
        let mut rng = data_rng(seed);
        let pool = build_training_pool(
            &data.train,
            SAMPLES_PER_IMAGE,
            PATCH_SIZE,
            Weighting::None,
            &mut rng,
        )
        .map_err(err)?;
        let val = build_training_pool(
            &data.val,
            SAMPLES_PER_IMAGE,
            PATCH_SIZE,
            Weighting::None,
            &mut rng,
        )
        .map_err(err)?;
        let mut curves = Vec::new();
        for init in [InitScheme::Heuristic, InitScheme::Normalized] {
            let mut losses = Vec::new();
            fit(NetworkSpec::road(), init, &pool, &cfg, |m| {
                let l = evaluate_loss(m, &val, 96)?;
                losses.push(l);
                Ok(l)
            })?;
            curves.push(losses);
        }
        let target = *curves[0].last().ok_or("no epochs")?;
        heuristic.push(epochs_to_reach(&curves[0], target));
        normalized.push(epochs_to_reach(&curves[1], target));
    }
    let (mh, mn) = (median(heuristic.clone()), median(normalized.clone()));
    Ok((
        mn < mh,
        format!(
            "median epochs to reach heuristic's epoch-5 validation loss: normalized {mn} vs \
             heuristic {mh}; per seed {:?} vs {:?}",
            normalized, heuristic
        ),
    ))
}

fn class_weighting() -> Result<(bool, String), String> {
    let mut rates = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for seed in SEEDS {
        let data = split(seed, generate_imbalanced_scene);
        for (weighting, (orrs, arrs)) in [Weighting::None, Weighting::InverseClassFrequency]
            .into_iter()
            .zip(rates.iter_mut())
        {
            let cfg = config(seed, 0.003, 5, weighting);
            let pool = build_training_pool(
                &data.train,
                SAMPLES_PER_IMAGE,
                PATCH_SIZE,
                weighting,
                &mut data_rng(seed),
            )
            .map_err(err)?;
            let model = fit(
                NetworkSpec::urban(),
                InitScheme::Normalized,
                &pool,
                &cfg,
                |_| Ok(0.0),
            )?;
            let (orr, arr) = orr_arr(&pooled_confusion(&model, &data.val)?).map_err(err)?;
            orrs.push(orr);
            arrs.push(arr);
        }
    }
    let [(uo, ua), (wo, wa)] = rates;
    let (muo, mua, mwo, mwa) = (
        median(uo.clone()),
        median(ua.clone()),
        median(wo.clone()),
        median(wa.clone()),
    );
    Ok((
        mwa > mua && mwo <= muo,
        format!(
            "median ARR weighted {mwa:.3} vs unweighted {mua:.3}, ORR weighted {mwo:.3} vs \
             unweighted {muo:.3}; ORR per seed {} vs {}, ARR {} vs {}",
            fmt_list(&wo),
            fmt_list(&uo),
            fmt_list(&wa),
            fmt_list(&ua)
        ),
    ))
}

// ---------------------------------------------------------------- 6

/// Exhaustive maxF over integer counts. F at each threshold is the exact
/// ratio 2tp / (2tp + fp + fn); ratios are compared by cross-multiplying.
/// Ties keep the smaller threshold.
fn brute_force_max_f(scores: &[f64], truths: &[bool], weights: &[u64]) -> (u64, u64, f64) {
    let pos: u64 = (0..scores.len())
        .filter(|&i| truths[i])
        .map(|i| weights[i])
        .sum();
    let mut candidates = scores.to_vec();
    candidates.push(0.0);
    let (mut num, mut den, mut best_t) = (0u64, 1u64, f64::INFINITY);
    for &t in &candidates {
        let (mut tp, mut fp) = (0u64, 0u64);
        for i in 0..scores.len() {
            if scores[i] >= t {
                if truths[i] {
                    tp += weights[i];
                } else {
                    fp += weights[i];
                }
            }
        }
        let (n, d) = (2 * tp, 2 * tp + fp + (pos - tp));
        let (lhs, rhs) = (
            u128::from(n) * u128::from(den),
            u128::from(num) * u128::from(d),
        );
        if lhs > rhs || (lhs == rhs && t < best_t) {
            (num, den, best_t) = (n, d, t);
        }
    }
    (num, den, best_t)
}

fn max_f_exactness() -> Result<(bool, String), String> {
    let example = BinaryEval::new(
        vec![0.9, 0.6, 0.4, 0.1],
        vec![true, true, false, true],
        None,
    )
    .map_err(err)?;
    let example_f = max_f(&example).map_err(err)?.max_f;

    let mut rng = ChaCha8Rng::seed_from_u64(0x6);
    let (mut checked, mut mismatches) = (0, 0);
    while checked < 200 {
        let p = rng.gen_range(1..=64);
        // A coarse score grid forces ties.
        let levels = rng.gen_range(2..=40);
        let scores: Vec<f64> = (0..p)
            .map(|_| rng.gen_range(0..=levels) as f64 / levels as f64)
            .collect();
        let truths: Vec<bool> = (0..p).map(|_| rng.gen_bool(0.5)).collect();
        let weights: Vec<u64> = (0..p).map(|_| rng.gen_range(1..=5)).collect();
        if truths.iter().all(|&t| t) || truths.iter().all(|&t| !t) {
            continue;
        }
        let eval = BinaryEval::new(
            scores.clone(),
            truths.clone(),
            Some(weights.iter().map(|&w| w as f64).collect()),
        )
        .map_err(err)?;
        let got = max_f(&eval).map_err(err)?;
        let (num, den, t) = brute_force_max_f(&scores, &truths, &weights);
        // The quotient of two exact integers rounds once.
        if got.max_f != num as f64 / den as f64 || got.threshold != t {
            mismatches += 1;
        }
        checked += 1;
    }
    Ok((
        mismatches == 0 && example_f == 6.0 / 7.0,
        format!(
            "{mismatches}/200 mismatches against exhaustive search; worked example {example_f} \
             (expected 6/7)"
        ),
    ))
}

// ---------------------------------------------------------------- 7

/// Independent graph segmentation: same conventions (8-bit intensities,
/// separable Gaussian with clamped borders, 8-connected edges generated
/// right, down, down-right, up-right per pixel, stable weight order,
/// merge when the weight is within both `Int + k/|C|`), but with explicit
/// component relabeling instead of a disjoint-set forest.
fn reference_segmentation(rgb: &[[u8; 3]], h: usize, w: usize, k: f64, sigma: f64) -> Vec<u32> {
    let len = (sigma * 4.0).ceil() as usize + 1;
    let mut mask: Vec<f64> = (0..len)
        .map(|i| {
            let x = i as f64 / sigma;
            (-0.5 * (x * x)).exp()
        })
        .collect();
    let sum = 2.0 * mask[1..].iter().sum::<f64>() + mask[0];
    mask.iter_mut().for_each(|m| *m /= sum);

    // Convolves each row of a rows×cols image and writes it transposed, so
    // two passes smooth both axes.
    let pass = |src: &[f64], rows: usize, cols: usize| -> Vec<f64> {
        let mut dst = vec![0.0; rows * cols];
        for y in 0..rows {
            for x in 0..cols {
                let mut s = mask[0] * src[y * cols + x];
                for (i, &m) in mask.iter().enumerate().skip(1) {
                    let left = src[y * cols + x.saturating_sub(i)];
                    let right = src[y * cols + (x + i).min(cols - 1)];
                    s += m * (left + right);
                }
                dst[x * rows + y] = s;
            }
        }
        dst
    };
    let channels: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let plane: Vec<f64> = rgb.iter().map(|p| f64::from(p[c])).collect();
            pass(&pass(&plane, h, w), w, h)
        })
        .collect();
    let dist = |a: usize, b: usize| {
        let d: Vec<f64> = channels.iter().map(|ch| ch[a] - ch[b]).collect();
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    };

    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut neighbours = Vec::new();
            if x + 1 < w {
                neighbours.push(p + 1);
            }
            if y + 1 < h {
                neighbours.push(p + w);
            }
            if x + 1 < w && y + 1 < h {
                neighbours.push(p + w + 1);
            }
            if x + 1 < w && y > 0 {
                neighbours.push(p + 1 - w);
            }
            edges.extend(neighbours.into_iter().map(|q| (dist(p, q), p, q)));
        }
    }
    edges.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let n = h * w;
    let mut comp: Vec<usize> = (0..n).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|p| vec![p]).collect();
    let mut thresh = vec![k; n];
    for (wt, p, q) in edges {
        let (a, b) = (comp[p], comp[q]);
        if a == b || wt > thresh[a] || wt > thresh[b] {
            continue;
        }
        let (keep, gone) = if members[a].len() >= members[b].len() {
            (a, b)
        } else {
            (b, a)
        };
        let moved = std::mem::take(&mut members[gone]);
        for &m in &moved {
            comp[m] = keep;
        }
        members[keep].extend(moved);
        thresh[keep] = wt + k / members[keep].len() as f64;
    }

    let mut ids = vec![u32::MAX; n];
    let mut next = 0;
    comp.iter()
        .map(|&c| {
            if ids[c] == u32::MAX {
                ids[c] = next;
                next += 1;
            }
            ids[c]
        })
        .collect()
}

/// 32×32 test image: flat blocks with noise on half the seeds, pure noise
/// on the rest.
fn random_rgb(seed: u64) -> Vec<[u8; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if seed % 2 == 0 {
        return (0..32 * 32).map(|_| rng.gen()).collect();
    }
    let block = rng.gen_range(4..=12);
    let colours: Vec<[u8; 3]> = (0..64).map(|_| rng.gen()).collect();
    (0..32 * 32)
        .map(|p| {
            let base = colours[(p / 32 / block) * 8 + (p % 32) / block];
            base.map(|v| v.saturating_add(rng.gen_range(0..12)).saturating_sub(6))
        })
        .collect()
}

fn rgb_tensor(rgb: &[[u8; 3]], h: usize, w: usize) -> Tensor {
    let mut data = vec![0.0; 3 * h * w];
    for (p, px) in rgb.iter().enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data).unwrap()
}

fn piecewise_constant(labels: &LabelMap, ids: &[u32]) -> bool {
    let mut seen = std::collections::HashMap::new();
    ids.iter()
        .zip(&labels.data)
        .all(|(id, &l)| *seen.entry(*id).or_insert(l) == l)
}

fn postprocessing() -> Result<(bool, String), String> {
    let mut partition_mismatches = 0;
    for seed in 0..20 {
        let rgb = random_rgb(seed);
        let image = rgb_tensor(&rgb, 32, 32);
        for k in [10.0, 550.0] {
            let params = SegmentationParams {
                k,
                sigma: 0.5,
                min_size: 0,
            };
            let got = segment(&image, &params).map_err(err)?;
            if got.ids != reference_segmentation(&rgb, 32, 32, k, 0.5) {
                partition_mismatches += 1;
            }
        }
    }

    let pp = PostProcess::default();
    let (mut raw, mut fused) = (Vec::new(), Vec::new());
    let mut constant = true;
    for seed in SEEDS {
        let make = |s| generate_synthetic_scene(SceneKind::Urban, s);
        let train_set: Vec<_> = (0..TRAIN_SCENES).map(|i| make(seed * 1000 + i)).collect();
        let val: Vec<_> = (0..3).map(|i| make(seed * 1000 + 500 + i)).collect();
        let cfg = config(seed, 0.003, 2, Weighting::None);
        let pool = build_training_pool(
            &train_set,
            SAMPLES_PER_IMAGE,
            PATCH_SIZE,
            Weighting::None,
            &mut data_rng(seed),
        )
        .map_err(err)?;
        let model = fit(
            NetworkSpec::urban(),
            InitScheme::Normalized,
            &pool,
            &cfg,
            |_| Ok(0.0),
        )?;
        let k = model_classes(&model);
        let (mut a, mut b) = (ConfusionMatrix::new(k), ConfusionMatrix::new(k));
        for img in &val {
            let out = label_image(&model, &img.pixels, BATCH, Some(&pp)).map_err(err)?;
            let seg = out.segments.as_ref().ok_or("no segmentation returned")?;
            constant &= piecewise_constant(&out.labels, &seg.ids);
            let per_pixel = out.prob.argmax();
            a.merge(&confusion(Prediction::Labels(&per_pixel), &img.labels, k).map_err(err)?)
                .map_err(err)?;
            b.merge(&confusion(Prediction::Labels(&out.labels), &img.labels, k).map_err(err)?)
                .map_err(err)?;
        }
        raw.push(orr_arr(&a).map_err(err)?.0);
        fused.push(orr_arr(&b).map_err(err)?.0);
    }
    let (mr, mf) = (median(raw.clone()), median(fused.clone()));
    Ok((
        partition_mismatches == 0 && constant && mf >= mr,
        format!(
            "{partition_mismatches}/40 partitions differ from the reference; fused maps \
             piecewise constant: {constant}; median ORR fused {mf:.3} vs per-pixel {mr:.3}, \
             per seed {} vs {}",
            fmt_list(&fused),
            fmt_list(&raw)
        ),
    ))
}

// ------------------------------------------------------------ 8, 9

fn cli(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_patchnet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PATCHNET_THREADS")
        .output()
        .map_err(err)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`patchnet {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

/// Writes `<dir>/<name>.json` training on `<data>/train` and validating on
/// `<data>/val`, paths relative to `dir`.
fn write_config(dir: &Path, name: &str, task: &str, data: &str, extra: &str) -> Result<(), String> {
    let json = format!(
        r#"{{"task":"{task}","manifest":"{data}train/manifest.json",
            "validation_manifest":"{data}val/manifest.json","output_dir":"run",
            "learning_rate":0.003,"epochs":2,"iterations_per_epoch":25,
            "samples_per_image":200,"seed":11{extra}}}"#
    );
    fs::write(dir.join(format!("{name}.json")), json).map_err(err)
}

fn synth(dir: &Path, kind: &str, train: usize, val: usize) -> Result<(), String> {
    cli(
        dir,
        &[
            "synth",
            "--kind",
            kind,
            "--count",
            &train.to_string(),
            "--seed",
            "3",
            "--out",
            "train",
        ],
    )?;
    cli(
        dir,
        &[
            "synth",
            "--kind",
            kind,
            "--count",
            &val.to_string(),
            "--seed",
            "900",
            "--out",
            "val",
        ],
    )
}

/// Report lines without their wall-clock field.
fn report_without_timing(path: &Path) -> Result<Vec<serde_json::Value>, String> {
    fs::read_to_string(path)
        .map_err(err)?
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).map_err(err)?;
            v.as_object_mut()
                .ok_or("report line is not an object")?
                .remove("wall_ms");
            Ok(v)
        })
        .collect()
}

fn determinism() -> Result<(bool, String), String> {
    let tmp = tempfile::tempdir().map_err(err)?;
    let dir = tmp.path();
    synth(dir, "road", 3, 1)?;
    let image = dir.join("val/road_0000.ppm");
    let image = image.to_str().ok_or("non-UTF-8 path")?;
    // Each thread count gets its own directory holding the same config.
    for threads in ["1", "4"] {
        let sub = dir.join(format!("threads{threads}"));
        fs::create_dir(&sub).map_err(err)?;
        write_config(
            &sub,
            "run",
            "road",
            "../",
            r#","weighting":"pixel_weight_map","dropout":true"#,
        )?;
        cli(
            &sub,
            &["--threads", threads, "train", "--config", "run.json"],
        )?;
        let model = sub.join("run/model.ptnm");
        let model = model.to_str().ok_or("non-UTF-8 path")?;
        cli(
            &sub,
            &[
                "--threads",
                threads,
                "predict",
                "--model",
                model,
                "--image",
                image,
                "--postproc",
            ],
        )?;
    }
    let mut differing = Vec::new();
    for f in [
        "run/model.ptnm",
        "road_0000.labels.pgm",
        "road_0000.prob.ptnt",
        "road_0000.overlay.ppm",
    ] {
        let a = fs::read(dir.join("threads1").join(f)).map_err(err)?;
        let b = fs::read(dir.join("threads4").join(f)).map_err(err)?;
        if a != b {
            differing.push(f.to_string());
        }
    }
    let report = "run/train_report.jsonl";
    if report_without_timing(&dir.join("threads1").join(report))?
        != report_without_timing(&dir.join("threads4").join(report))?
    {
        differing.push(format!("{report} (ignoring wall_ms)"));
    }
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            "1 and 4 threads give byte-identical model and maps, and equal training reports"
                .to_string()
        } else {
            format!("differs between 1 and 4 threads: {}", differing.join(", "))
        },
    ))
}

fn end_to_end() -> Result<(bool, String), String> {
    let mut missing = Vec::new();
    let mut summary = Vec::new();
    for (task, stem, extra) in [
        ("road", "road", r#","weighting":"pixel_weight_map""#),
        ("urban", "urban", ""),
    ] {
        let tmp = tempfile::tempdir().map_err(err)?;
        let dir = tmp.path();
        synth(dir, task, 4, 2)?;
        for f in ["manifest.json", "synth.json"] {
            if !dir.join("val").join(f).is_file() {
                missing.push(format!("{task}: val/{f}"));
            }
        }
        write_config(dir, "run", task, "", extra)?;
        cli(dir, &["train", "--config", "run.json"])?;
        for f in [
            "model.ptnm",
            "train_report.jsonl",
            "loss_curve.csv",
            "config.json",
        ] {
            if !dir.join("run").join(f).is_file() {
                missing.push(format!("{task}: run/{f}"));
            }
        }
        let model = dir.join("run/model.ptnm");
        let model = model.to_str().ok_or("non-UTF-8 path")?;
        for (pred_dir, postproc) in [("pred", false), ("pred_pp", true)] {
            let pred = dir.join(pred_dir);
            fs::create_dir(&pred).map_err(err)?;
            for i in 0..2 {
                let image = dir.join(format!("val/{stem}_{i:04}.ppm"));
                let image = image.to_str().ok_or("non-UTF-8 path")?;
                let mut args = vec!["predict", "--model", model, "--image", image];
                if postproc {
                    args.push("--postproc");
                }
                cli(&pred, &args)?;
                for ext in ["labels.pgm", "prob.ptnt", "overlay.ppm", "predict.json"] {
                    if !pred.join(format!("{stem}_{i:04}.{ext}")).is_file() {
                        missing.push(format!("{task}: {pred_dir}/{stem}_{i:04}.{ext}"));
                    }
                }
            }
            let truth = dir.join("val");
            let truth = truth.to_str().ok_or("non-UTF-8 path")?;
            let mut args = vec!["eval", "--pred", ".", "--truth", truth, "--task", task];
            if task == "road" {
                args.extend(["--weights", truth]);
            }
            cli(&pred, &args)?;
            let mut expected = vec!["metrics.json"];
            if task == "road" {
                expected.push("pr_curve.csv");
            }
            for f in expected {
                if !pred.join(f).is_file() {
                    missing.push(format!("{task}: {pred_dir}/{f}"));
                }
            }
            let metrics = fs::read_to_string(pred.join("metrics.json")).unwrap_or_default();
            let parsed: serde_json::Value = serde_json::from_str(&metrics).map_err(err)?;
            let headline = if task == "road" { "maxF" } else { "orr" };
            match parsed.get(headline).and_then(|v| v.as_f64()) {
                Some(v) => summary.push(format!("{task}/{pred_dir} {headline} {v:.3}")),
                None => missing.push(format!("{task}: {pred_dir}/metrics.json {headline}")),
            }
        }
    }
    Ok((
        missing.is_empty(),
        if missing.is_empty() {
            format!("all artifacts written; {}", summary.join(", "))
        } else {
            format!("missing: {}", missing.join(", "))
        },
    ))
}
