//! Binary (precision/recall, MaxF) and multi-class (ORR/ARR) metrics.

use serde::{Deserialize, Serialize};

use crate::data::{LabelMap, UNLABELED};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::POSITIVE_CLASS;

/// Scored binary predictions with per-example weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BinaryEval {
    scores: Vec<f64>,
    truths: Vec<bool>,
    weights: Vec<f64>,
}

impl BinaryEval {
    pub fn new(scores: Vec<f64>, truths: Vec<bool>, weights: Option<Vec<f64>>) -> Result<Self> {
        let weights = weights.unwrap_or_else(|| vec![1.0; scores.len()]);
        if scores.len() != truths.len() || scores.len() != weights.len() {
            return Err(Error::dim(format!(
                "binary eval lengths differ: {} scores, {} truths, {} weights",
                scores.len(),
                truths.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Weight(
                "evaluation weights must be finite and >= 0".into(),
            ));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("evaluation scores must be finite".into()));
        }
        Ok(BinaryEval {
            scores,
            truths,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn push(&mut self, score: f64, truth: bool, weight: f64) {
        self.scores.push(score);
        self.truths.push(truth);
        self.weights.push(weight);
    }

    pub fn extend(&mut self, other: &BinaryEval) {
        self.scores.extend_from_slice(&other.scores);
        self.truths.extend_from_slice(&other.truths);
        self.weights.extend_from_slice(&other.weights);
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn truths(&self) -> &[bool] {
        &self.truths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// One point of the precision/recall sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxF {
    #[serde(rename = "maxF")]
    pub max_f: f64,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Threshold above every score in `[0, 1]`; predicts nothing positive.
pub const UPPER_SENTINEL: f64 = 1.0 + 1e-9;

/// F-measure from weighted counts. Precision of an empty prediction set is
/// taken as 1; F is 0 whenever `tp` is 0.
///
/// F is formed as `2tp / (2tp + fp + fn)`, equal to the harmonic mean of
/// precision and recall but with a single rounding, so integer counts give
/// the correctly rounded ratio.
pub fn f_measure(tp: f64, fp: f64, fn_: f64) -> (f64, f64, f64) {
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f = if tp > 0.0 {
        2.0 * tp / (2.0 * tp + fp + fn_)
    } else {
        0.0
    };
    (precision, recall, f)
}

/// Precision/recall at every candidate threshold, highest threshold first.
/// Candidates are the sentinel above 1, every distinct score, and 0.
pub fn pr_curve(eval: &BinaryEval) -> Result<Vec<PrPoint>> {
    let pos: f64 = weighted(eval, true);
    let neg: f64 = weighted(eval, false);
    if !(pos > 0.0) || !(neg > 0.0) {
        return Err(Error::DegenerateEval(format!(
            "need positive and negative mass, got {pos} and {neg}"
        )));
    }
    let mut order: Vec<usize> = (0..eval.len()).collect();
    order.sort_by(|&a, &b| eval.scores[b].total_cmp(&eval.scores[a]));

    let mut thresholds: Vec<f64> = eval.scores.clone();
    thresholds.extend([0.0, UPPER_SENTINEL]);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut curve = Vec::with_capacity(thresholds.len());
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    for t in thresholds {
        while i < order.len() && eval.scores[order[i]] >= t {
            let k = order[i];
            if eval.truths[k] {
                tp += eval.weights[k];
            } else {
                fp += eval.weights[k];
            }
            i += 1;
        }
        let (precision, recall, f) = f_measure(tp, fp, pos - tp);
        curve.push(PrPoint {
            threshold: t,
            precision,
            recall,
            f,
        });
    }
    Ok(curve)
}

fn weighted(eval: &BinaryEval, truth: bool) -> f64 {
    eval.truths
        .iter()
        .zip(&eval.weights)
        .filter(|(&t, _)| t == truth)
        .map(|(_, &w)| w)
        .sum()
}

/// Maximum F-measure over all candidate thresholds; ties go to the
/// smallest threshold.
pub fn max_f(eval: &BinaryEval) -> Result<MaxF> {
    let curve = pr_curve(eval)?;
    let mut best = curve[0];
    for p in &curve[1..] {
        if p.f > best.f || (p.f == best.f && p.threshold < best.threshold) {
            best = *p;
        }
    }
    Ok(MaxF {
        max_f: best.f,
        threshold: best.threshold,
        precision: best.precision,
        recall: best.recall,
    })
}

pub fn pr_curve_csv(curve: &[PrPoint]) -> String {
    let mut s = String::from("threshold,precision,recall,f\n");
    for p in curve {
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.threshold, p.precision, p.recall, p.f
        ));
    }
    s
}

/// K×K counts, rows indexed by truth and columns by prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::dim("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: u8, pred: u8) -> Result<()> {
        let (t, p) = (truth as usize, pred as usize);
        if t >= self.k || p >= self.k {
            return Err(Error::Bounds(format!(
                "class pair ({truth}, {pred}) outside {} classes",
                self.k
            )));
        }
        self.counts[t * self.k + p] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::dim(format!(
                "cannot merge {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class * self.k..(class + 1) * self.k]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class recall; `None` for classes without support.
    pub fn class_accuracies(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| match self.support(c) {
                0 => None,
                n => Some(self.get(c, c) as f64 / n as f64),
            })
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.k.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }
}

/// (ORR, ARR). ARR averages only over classes with nonzero support.
pub fn orr_arr(cm: &ConfusionMatrix) -> Result<(f64, f64)> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::DegenerateEval("confusion matrix is empty".into()));
    }
    let trace: u64 = (0..cm.k).map(|c| cm.get(c, c)).sum();
    let accs: Vec<f64> = cm.class_accuracies().into_iter().flatten().collect();
    let arr = accs.iter().sum::<f64>() / accs.len() as f64;
    Ok((trace as f64 / total as f64, arr))
}

/// Metrics of one image or one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metrics {
    Binary(MaxF),
    MultiClass {
        orr: f64,
        arr: f64,
        confusion: Vec<Vec<u64>>,
    },
}

impl Metrics {
    /// maxF for binary metrics, ORR otherwise.
    pub fn headline(&self) -> f64 {
        match self {
            Metrics::Binary(m) => m.max_f,
            Metrics::MultiClass { orr, .. } => *orr,
        }
    }
}

/// Network prediction for one image.
pub enum Prediction<'a> {
    /// K×H×W class probabilities.
    Probabilities(&'a Tensor),
    Labels(&'a LabelMap),
}

fn check_dims(truth: &LabelMap, h: usize, w: usize) -> Result<()> {
    if (truth.height, truth.width) != (h, w) {
        return Err(Error::dim(format!(
            "prediction {h}x{w} vs truth {}x{}",
            truth.height, truth.width
        )));
    }
    Ok(())
}

/// Binary evaluation of a road prediction. The score is the positive-class
/// probability (or 0/1 for a label map); the optional H×W weight map
/// gives per-pixel weights. Unlabeled truth pixels are skipped.
pub fn binary_eval(
    pred: Prediction<'_>,
    truth: &LabelMap,
    weights: Option<&Tensor>,
) -> Result<BinaryEval> {
    let (h, w) = (truth.height, truth.width);
    let scores: Vec<f64> = match pred {
        Prediction::Probabilities(p) => {
            let [k, ph, pw] = *p.shape() else {
                return Err(Error::dim(format!("probability map {:?}", p.shape())));
            };
            check_dims(truth, ph, pw)?;
            if k <= POSITIVE_CLASS as usize {
                return Err(Error::dim(format!("probability map has {k} channels")));
            }
            let off = POSITIVE_CLASS as usize * h * w;
            p.data()[off..off + h * w]
                .iter()
                .map(|&v| v as f64)
                .collect()
        }
        Prediction::Labels(l) => {
            check_dims(truth, l.height, l.width)?;
            l.data
                .iter()
                .map(|&v| f64::from(u8::from(v == POSITIVE_CLASS)))
                .collect()
        }
    };
    if let Some(wm) = weights {
        if wm.shape() != [h, w] {
            return Err(Error::dim(format!(
                "weight map {:?} vs truth {h}x{w}",
                wm.shape()
            )));
        }
    }
    let mut eval = BinaryEval::default();
    for (p, &t) in truth.data.iter().enumerate() {
        if t == UNLABELED {
            continue;
        }
        let wt = weights.map_or(1.0, |wm| wm.data()[p] as f64);
        if !(wt >= 0.0) || !wt.is_finite() {
            return Err(Error::Weight(format!("weight {wt} at pixel {p}")));
        }
        eval.push(scores[p], t == POSITIVE_CLASS, wt);
    }
    Ok(eval)
}

/// Confusion matrix of per-pixel argmax labels (or the given label map)
/// against the truth, skipping unlabeled truth pixels.
pub fn confusion(pred: Prediction<'_>, truth: &LabelMap, k: usize) -> Result<ConfusionMatrix> {
    let labels = match pred {
        Prediction::Labels(l) => {
            check_dims(truth, l.height, l.width)?;
            l.clone()
        }
        Prediction::Probabilities(p) => {
            let [_, ph, pw] = *p.shape() else {
                return Err(Error::dim(format!("probability map {:?}", p.shape())));
            };
            check_dims(truth, ph, pw)?;
            argmax_labels(p)?
        }
    };
    let mut cm = ConfusionMatrix::new(k);
    for (&t, &p) in truth.data.iter().zip(&labels.data) {
        if t != UNLABELED {
            cm.add(t, p)?;
        }
    }
    Ok(cm)
}

/// Per-pixel argmax of a K×H×W map; ties go to the lowest class id.
pub fn argmax_labels(prob: &Tensor) -> Result<LabelMap> {
    let [k, h, w] = *prob.shape() else {
        return Err(Error::dim(format!("probability map {:?}", prob.shape())));
    };
    if k == 0 || k > UNLABELED as usize {
        return Err(Error::dim(format!("{k} classes")));
    }
    let d = prob.data();
    let labels = (0..h * w)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if d[c * h * w + p] > d[best * h * w + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(w, h, labels)
}

/// Metrics bundle for a single prediction: binary for two-class road
/// evaluation, ORR/ARR otherwise.
pub fn evaluate_labelmap(
    pred: Prediction<'_>,
    truth: &LabelMap,
    num_classes: usize,
    weights: Option<&Tensor>,
) -> Result<Metrics> {
    if num_classes == 2 {
        Ok(Metrics::Binary(max_f(&binary_eval(pred, truth, weights)?)?))
    } else {
        let cm = confusion(pred, truth, num_classes)?;
        let (orr, arr) = orr_arr(&cm)?;
        Ok(Metrics::MultiClass {
            orr,
            arr,
            confusion: cm.rows(),
        })
    }
}
