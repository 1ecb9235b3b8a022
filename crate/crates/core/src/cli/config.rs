use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::AugmentSpec;
use crate::error::{Error, Result};
use crate::gan::TrainConfig;
use crate::layers::{InitSpec, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of training PNGs.
    pub data_dir: PathBuf,
    /// Receives the trace, checkpoints, samples and the materialized config.
    pub out_dir: PathBuf,
    /// Final checkpoint; defaults to `out_dir/final.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
            checkpoint: None,
        }
    }
}

/// The full description of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub init: InitSpec,
    pub augment: AugmentSpec,
    pub paths: PathsConfig,
    /// Iterations between checkpoints; 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    /// Iterations between sample grids; 0 disables them.
    pub snapshot_every: u64,
    /// Size of the fixed latent batch rendered in every sample grid.
    pub probe_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            init: InitSpec::default(),
            augment: AugmentSpec::default(),
            paths: PathsConfig::default(),
            checkpoint_every: 500,
            snapshot_every: 500,
            probe_count: 16,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.init.validate()?;
        self.augment.validate()?;
        if self.train.latent_dim != self.model.latent_dim {
            return Err(Error::Config(format!(
                "train.latent_dim {} differs from model.latent_dim {}",
                self.train.latent_dim, self.model.latent_dim
            )));
        }
        if self.probe_count == 0 {
            return Err(Error::Config("probe_count must be positive".into()));
        }
        Ok(())
    }

    /// Parses a JSON document. Every unknown key is reported, not just the
    /// first; an omitted `train.latent_dim` follows `model.latent_dim`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let reference = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        let mut unknown = Vec::new();
        unknown_keys(&value, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )));
        }
        let latent_given = value.pointer("/train/latent_dim").is_some();
        let mut config: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if !latent_given {
            config.train.latent_dim = config.model.latent_dim;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Pretty JSON with every default filled in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("final.ckpt"))
    }
}

// Objects carrying a `mode` or `kind` tag are enum values and are not descended into.
fn unknown_keys(value: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(given), Value::Object(known)) = (value, reference) else {
        return;
    };
    if known.contains_key("mode") || known.contains_key("kind") {
        return;
    }
    for (key, v) in given {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match known.get(key) {
            Some(r) => unknown_keys(v, r, &path, out),
            None => out.push(path),
        }
    }
}
