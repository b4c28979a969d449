use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::CorpusConfig;
use crate::error::{at_path, Error, Result};
use crate::student::{DecoderFamily, ModelDims};
use crate::teacher::TeacherTrainConfig;
use crate::training::HsgConfig;

/// Environment variable overriding the teacher and student seeds.
pub const SEED_ENV: &str = "HSG_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: DecoderFamily,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Pool and match LSTM cell states as well as hidden states.
    pub with_cell: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: DecoderFamily::UpDown,
            embed_dim: 32,
            hidden_dim: 48,
            with_cell: false,
        }
    }
}

/// One experiment: corpus, model shape, teacher and student training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub teacher: TeacherTrainConfig,
    pub student: HsgConfig,
    /// Defaults to `out_dir/teacher.json`.
    pub teacher_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("run"),
            model: ModelConfig::default(),
            teacher: TeacherTrainConfig::default(),
            student: HsgConfig::default(),
            teacher_checkpoint: None,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn invalid(e: Error) -> Error {
    match e {
        Error::Contract(m) => Error::Config(m),
        other => other,
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = at_path(path, std::fs::read_to_string(path))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` where `key` is a dotted path such as
    /// `student.lambda`. The value is read as JSON, falling back to a plain
    /// string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self)?;
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *node = value;
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Seeds both training stages from `seed` when given.
    pub fn apply_seed_override(&mut self, seed: Option<&str>) -> Result<()> {
        if let Some(s) = seed {
            let v: u64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))?;
            self.teacher.seed = v;
            self.student.seed = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate().map_err(invalid)?;
        self.student.validate().map_err(invalid)?;
        let m = &self.model;
        if m.embed_dim == 0 || m.hidden_dim == 0 {
            return Err(Error::Config("embed_dim and hidden_dim must be positive".into()));
        }
        let t = &self.teacher;
        if !(t.lr > 0.0 && t.grad_clip > 0.0) {
            return Err(Error::Config("teacher lr and grad_clip must be positive".into()));
        }
        if let Some(a) = t.target_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config("teacher target_accuracy must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn dims(&self, vocab_size: usize) -> ModelDims {
        ModelDims {
            vocab_size,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            feature_dim: self.corpus.feature_dim,
        }
    }

    pub fn teacher_checkpoint_path(&self) -> PathBuf {
        self.teacher_checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("teacher.json"))
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
