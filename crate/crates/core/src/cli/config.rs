use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Weighting;
use crate::error::{Error, Result};
use crate::layers::{ActivationKind, LayerSpec};
use crate::network::{NetworkSpec, Task, PATCH_SIZE};
use crate::trainer::{InitScheme, TrainConfig};

/// Flat JSON training configuration. Paths are relative to the config
/// file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,

    /// Explicit layer list on 28×28 RGB patches; the task preset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_layer_index: Option<usize>,
    #[serde(default = "yes")]
    pub spatial_prior: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_activation: Option<ActivationKind>,
    #[serde(default = "normalized")]
    pub init: InitScheme,
    #[serde(default = "half")]
    pub dropout_rate: f32,

    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f32,
    #[serde(default = "defaults::momentum")]
    pub momentum: f32,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::iterations_per_epoch")]
    pub iterations_per_epoch: usize,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub dropout: bool,
    #[serde(default = "defaults::samples_per_image")]
    pub samples_per_image: usize,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

fn normalized() -> InitScheme {
    InitScheme::Normalized
}

fn half() -> f32 {
    0.5
}

mod defaults {
    use crate::trainer::TrainConfig;

    pub fn batch_size() -> usize {
        TrainConfig::default().batch_size
    }
    pub fn learning_rate() -> f32 {
        TrainConfig::default().learning_rate
    }
    pub fn momentum() -> f32 {
        TrainConfig::default().momentum
    }
    pub fn epochs() -> usize {
        TrainConfig::default().epochs
    }
    pub fn iterations_per_epoch() -> usize {
        TrainConfig::default().iterations_per_epoch
    }
    pub fn samples_per_image() -> usize {
        1000
    }
}

/// A config file's contents as written, which are what models record and
/// hash, and a copy with paths resolved against the file's directory, which
/// is what gets read from and written to.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub written: RunConfig,
    pub resolved: RunConfig,
}

impl RunConfig {
    /// Parses a config. Numbers that overflow `f32` are rejected here, since
    /// infinities have no JSON form to be written back as.
    pub fn parse(bytes: &[u8]) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
        let layer_rates = cfg.layers.iter().flatten().filter_map(|l| match l {
            LayerSpec::Dropout { rate } => Some(*rate),
            _ => None,
        });
        let all_finite = [cfg.learning_rate, cfg.momentum, cfg.dropout_rate]
            .into_iter()
            .chain(layer_rates)
            .all(f32::is_finite);
        if !all_finite {
            return Err(Error::Config("numeric field out of range".into()));
        }
        Ok(cfg)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let written = RunConfig::parse(&bytes)?;
        let root = path.parent().unwrap_or(Path::new(""));
        let mut resolved = written.clone();
        resolved.manifest = root.join(&written.manifest);
        resolved.output_dir = root.join(&written.output_dir);
        resolved.validation_manifest = written.validation_manifest.as_ref().map(|v| root.join(v));
        resolved.validate()?;
        Ok(LoadedConfig { written, resolved })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            iterations_per_epoch: self.iterations_per_epoch,
            weighting: self.weighting,
            dropout: self.dropout,
            seed: self.seed,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let mut spec = match &self.layers {
            Some(layers) => NetworkSpec {
                input_patch: (3, PATCH_SIZE, PATCH_SIZE),
                layers: layers.clone(),
                aux_layer_index: self.aux_layer_index,
                channel_mean: None,
            },
            None => NetworkSpec::preset(self.task),
        };
        if !self.spatial_prior {
            spec = spec.without_prior();
        }
        if let Some(kind) = self.hidden_activation {
            spec = spec.with_hidden_activation(kind);
        }
        if self.dropout {
            spec = spec.with_dropout(self.dropout_rate);
        }
        spec
    }

    /// Checks everything that can be checked without training.
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.samples_per_image == 0 {
            return Err(Error::Config("samples_per_image must be at least 1".into()));
        }
        if self.layers.is_none() && self.aux_layer_index.is_some() {
            return Err(Error::Config(
                "aux_layer_index is only meaningful with an explicit layer list".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        let spec = self.network_spec();
        let report = spec.propagate().map_err(|e| Error::Config(e.to_string()))?;
        let want = match self.task.num_classes() {
            2 => 1,
            k => k,
        };
        if report.output_width() != want {
            return Err(Error::Config(format!(
                "network has {} outputs, task {:?} needs {want}",
                report.output_width(),
                self.task
            )));
        }
        for p in std::iter::once(&self.manifest).chain(&self.validation_manifest) {
            if !p.is_file() {
                return Err(Error::Config(format!("manifest {} not found", p.display())));
            }
        }
        Ok(())
    }

    /// FNV-1a over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
