//! The `patchnet` command line: synthesis, training, prediction,
//! evaluation and gradient checking.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub use config::{LoadedConfig, RunConfig};

use crate::data::{
    build_training_pool, generate_synthetic_scene, load_manifest, pnm, write_manifest, LabelMap,
    ManifestEntry, SceneKind, ROAD_CLASSES, URBAN_CLASSES,
};
use crate::error::{Error, Result};
use crate::eval::{
    binary_eval, confusion, max_f, orr_arr, pr_curve, pr_curve_csv, BinaryEval, ConfusionMatrix,
    Metrics, Prediction,
};
use crate::gradcheck::{self, TOLERANCE};
use crate::inference::{evaluate_images, label_image, model_classes, render_overlay, PostProcess};
use crate::network::{Model, Task, PATCH_SIZE};
use crate::postproc::SegmentationParams;
use crate::tensor::Tensor;
use crate::trainer::{self, Validator};

/// Batch size for every whole-image forward pass.
pub const INFERENCE_BATCH: usize = 48;

/// Seeds covered by `gradcheck`.
pub const GRADCHECK_SEEDS: std::ops::Range<u64> = 0..20;

#[derive(Debug, Parser)]
#[command(
    name = "patchnet",
    version,
    about = "Convolutional patch networks for pixel-wise labeling"
)]
pub struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, env = "PATCHNET_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes synthetic labeled scenes and a dataset manifest.
    Synth(SynthArgs),
    /// Trains a model from a JSON run config.
    Train(TrainArgs),
    /// Labels one image; outputs land in the working directory.
    Predict(PredictArgs),
    /// Scores predictions against ground truth; outputs land in the working
    /// directory.
    Eval(EvalArgs),
    /// Finite-difference checks of every layer and both shrunken presets.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Road,
    Urban,
}

impl From<KindArg> for Task {
    fn from(k: KindArg) -> Task {
        match k {
            KindArg::Road => Task::Road,
            KindArg::Urban => Task::Urban,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Fuse labels over a graph-based segmentation of the image.
    #[arg(long)]
    pub postproc: bool,
    #[arg(long, default_value_t = 550.0)]
    pub k: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_enum)]
    pub task: KindArg,
    /// Directory of `<stem>.weights.ptnt` maps for weighted binary counts.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "tiny")]
    pub preset: PresetArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Tiny,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 for invalid input or configuration,
/// 2 when the work itself fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("ERROR: {e}");
            return 1;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ERROR: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn class_names(task: Task) -> Vec<String> {
    let names: &[&str] = match task {
        Task::Road => &ROAD_CLASSES,
        Task::Urban => &URBAN_CLASSES,
    };
    names.iter().map(|s| s.to_string()).collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    Ok(fs::write(
        path,
        serde_json::to_string_pretty(value)? + "\n",
    )?)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::Config("--count must be at least 1".into()));
    }
    let kind = match a.kind {
        KindArg::Road => SceneKind::Road,
        KindArg::Urban => SceneKind::Urban,
    };
    let prefix = match a.kind {
        KindArg::Road => "road",
        KindArg::Urban => "urban",
    };
    fs::create_dir_all(&a.out)?;
    let mut entries = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let scene = generate_synthetic_scene(kind, a.seed.wrapping_add(i as u64));
        let stem = format!("{prefix}_{i:04}");
        let entry = ManifestEntry {
            image: format!("{stem}.ppm").into(),
            labels: format!("{stem}.labels.pgm").into(),
            weights: scene
                .weight_map
                .as_ref()
                .map(|_| format!("{stem}.weights.ptnt").into()),
        };
        pnm::save_image(&a.out.join(&entry.image), &scene.pixels)?;
        pnm::save_labels(&a.out.join(&entry.labels), &scene.labels)?;
        if let (Some(wm), Some(p)) = (&scene.weight_map, &entry.weights) {
            wm.save_ptnt(a.out.join(p))?;
        }
        entries.push(entry);
    }
    write_manifest(&a.out.join("manifest.json"), &entries)?;
    write_json(
        &a.out.join("synth.json"),
        &json!({ "kind": prefix, "count": a.count, "seed": a.seed }),
    )?;
    println!("wrote {} {prefix} scenes to {}", a.count, a.out.display());
    Ok(())
}

/// Trains per `cfg`, returning the model and its per-epoch report. Nothing
/// is written to disk.
pub fn train_from_config(loaded: &LoadedConfig) -> Result<(Model, trainer::TrainReport)> {
    let cfg = &loaded.resolved;
    let images = load_manifest(&cfg.manifest)?;
    let validation = match &cfg.validation_manifest {
        Some(p) => Some(load_manifest(p)?),
        None => None,
    };
    // Stream 0 initializes the model, stream 1 draws the pool.
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pool_rng.set_stream(1);
    let pool = build_training_pool(
        &images,
        cfg.samples_per_image,
        PATCH_SIZE,
        cfg.weighting,
        &mut pool_rng,
    )?;
    let mut model = Model::build(cfg.network_spec(), cfg.init, &mut init_rng)?;
    model.meta.class_names = class_names(cfg.task);
    model.meta.config_hash = Some(loaded.written.hash());
    model.meta.seed = Some(cfg.seed);
    model.meta.config = Some(serde_json::to_value(&loaded.written)?);

    let weighted = cfg.weighting == crate::data::Weighting::PixelWeightMap;
    let mut validate = |_: usize, m: &Model| -> Result<f64> {
        let imgs = validation.as_deref().unwrap_or_default();
        Ok(evaluate_images(m, imgs, INFERENCE_BATCH, None, weighted)?.headline())
    };
    let validator: Option<&mut Validator<'_>> = match validation {
        Some(_) => Some(&mut validate),
        None => None,
    };
    let report = trainer::train(&mut model, &pool, &cfg.train_config(), validator)?;
    Ok((model, report))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let loaded = RunConfig::load(&a.config)?;
    let out = &loaded.resolved.output_dir;
    fs::create_dir_all(out)?;
    let (model, report) = train_from_config(&loaded)?;
    model.save(out.join("model.ptnm"))?;
    fs::write(out.join("train_report.jsonl"), report.to_jsonl())?;
    fs::write(out.join("loss_curve.csv"), report.loss_curve_csv())?;
    write_json(
        &out.join("config.json"),
        &serde_json::to_value(&loaded.written)?,
    )?;
    if let Some(last) = report.epochs.last() {
        println!(
            "trained {} epochs, final train loss {:.6}, model written to {}",
            last.epoch,
            last.train_loss,
            out.join("model.ptnm").display()
        );
    }
    Ok(())
}

fn stem_of(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::Config(format!("cannot derive a name from {}", path.display())))
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let params = SegmentationParams {
        k: a.k,
        sigma: a.sigma,
        ..SegmentationParams::default()
    };
    params.validate()?;
    for p in [&a.model, &a.image] {
        if !p.is_file() {
            return Err(Error::Config(format!("{} not found", p.display())));
        }
    }
    let stem = stem_of(&a.image)?;
    let model = Model::load(&a.model)?;
    let image = pnm::load_image(&a.image)?;
    let pp = PostProcess {
        params,
        ..PostProcess::default()
    };
    let out = label_image(&model, &image, INFERENCE_BATCH, a.postproc.then_some(&pp))?;
    let k = model_classes(&model);
    pnm::save_labels(Path::new(&format!("{stem}.labels.pgm")), &out.labels)?;
    out.prob.tensor().save_ptnt(format!("{stem}.prob.ptnt"))?;
    let overlay = render_overlay(&image, &out.labels, k)?;
    pnm::save_image(Path::new(&format!("{stem}.overlay.ppm")), &overlay)?;
    write_json(
        Path::new(&format!("{stem}.predict.json")),
        &json!({
            "image": a.image,
            "model_config_hash": model.meta.config_hash,
            "postproc": a.postproc,
            "k": a.k,
            "sigma": a.sigma,
        }),
    )?;
    println!("labeled {} ({} classes)", a.image.display(), k);
    Ok(())
}

/// Stems of every `<stem>.labels.pgm` in `dir`, sorted.
fn truth_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        if let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".labels.pgm")) {
            stems.push(stem.to_owned());
        }
    }
    stems.sort();
    Ok(stems)
}

enum Pred {
    Prob(Tensor),
    Labels(LabelMap),
}

/// Loads the prediction for `stem`, preferring probabilities for binary
/// tasks and final labels otherwise.
fn load_prediction(dir: &Path, stem: &str, binary: bool) -> Result<Pred> {
    let prob = dir.join(format!("{stem}.prob.ptnt"));
    let labels = dir.join(format!("{stem}.labels.pgm"));
    let order = if binary { [true, false] } else { [false, true] };
    for want_prob in order {
        if want_prob && prob.is_file() {
            return Ok(Pred::Prob(Tensor::load_ptnt(&prob)?));
        }
        if !want_prob && labels.is_file() {
            return Ok(Pred::Labels(pnm::load_labels(&labels)?));
        }
    }
    Err(Error::Data(format!(
        "no prediction for {stem} in {}",
        dir.display()
    )))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    for d in std::iter::once(&a.pred).chain([&a.truth]).chain(&a.weights) {
        if !d.is_dir() {
            return Err(Error::Config(format!("{} is not a directory", d.display())));
        }
    }
    let task = Task::from(a.task);
    let k = task.num_classes();
    let stems = truth_stems(&a.truth)?;
    if stems.is_empty() {
        return Err(Error::Data(format!(
            "no *.labels.pgm in {}",
            a.truth.display()
        )));
    }
    let mut bin = BinaryEval::default();
    let mut cm = ConfusionMatrix::new(k);
    for stem in &stems {
        let truth = pnm::load_labels(&a.truth.join(format!("{stem}.labels.pgm")))?;
        let pred = load_prediction(&a.pred, stem, k == 2)?;
        let pred = match &pred {
            Pred::Prob(t) => Prediction::Probabilities(t),
            Pred::Labels(l) => Prediction::Labels(l),
        };
        if k == 2 {
            let wm = match &a.weights {
                Some(d) => Some(Tensor::load_ptnt(d.join(format!("{stem}.weights.ptnt")))?),
                None => None,
            };
            bin.extend(&binary_eval(pred, &truth, wm.as_ref())?);
        } else {
            cm.merge(&confusion(pred, &truth, k)?)?;
        }
    }
    let metrics = if k == 2 {
        fs::write("pr_curve.csv", pr_curve_csv(&pr_curve(&bin)?))?;
        Metrics::Binary(max_f(&bin)?)
    } else {
        let (orr, arr) = orr_arr(&cm)?;
        Metrics::MultiClass {
            orr,
            arr,
            confusion: cm.rows(),
        }
    };
    write_json(Path::new("metrics.json"), &serde_json::to_value(&metrics)?)?;
    match &metrics {
        Metrics::Binary(m) => println!(
            "{} images: maxF {:.4} at threshold {:.4} (precision {:.4}, recall {:.4})",
            stems.len(),
            m.max_f,
            m.threshold,
            m.precision,
            m.recall
        ),
        Metrics::MultiClass { orr, arr, .. } => {
            println!("{} images: ORR {orr:.4}, ARR {arr:.4}", stems.len())
        }
    }
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let PresetArg::Tiny = a.preset;
    let results = gradcheck::run_all(GRADCHECK_SEEDS)?;
    // Worst error per (suite, tensor) over all seeds, in first-seen order.
    let mut order = Vec::new();
    let mut worst: BTreeMap<(String, String), f64> = BTreeMap::new();
    for r in &results {
        let key = (r.suite.clone(), r.tensor.clone());
        let e = worst.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            0.0
        });
        *e = e.max(r.rel_error);
    }
    let mut failed = 0;
    for key in &order {
        let e = worst[key];
        let ok = e < TOLERANCE;
        failed += usize::from(!ok);
        println!(
            "{} {:<24} {:<16} max rel error {e:.2e}",
            if ok { "PASS" } else { "FAIL" },
            key.0,
            key.1
        );
    }
    if failed > 0 {
        return Err(Error::CheckFailed(format!(
            "{failed} of {} gradient checks exceed {TOLERANCE:e}",
            order.len()
        )));
    }
    println!(
        "all {} gradient checks pass over seeds {}..{}",
        order.len(),
        GRADCHECK_SEEDS.start,
        GRADCHECK_SEEDS.end
    );
    Ok(())
}
