use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;
use crate::error::{at_path, Error, Result};
use crate::nn::ParamSet;
use crate::student::{DecoderFamily, ModelDims, Student};
use crate::teacher::Teacher;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Teacher,
    Student,
}

/// A tensor with each value stored as the 16 hex digits of its IEEE-754 bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<String>,
}

impl StoredTensor {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|x| format!("{:016x}", x.to_bits())).collect(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let data = self
            .data
            .iter()
            .map(|h| {
                u64::from_str_radix(h, 16)
                    .map(f64::from_bits)
                    .map_err(|_| Error::Checkpoint(format!("bad float encoding {h:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Tensor::new(self.shape.clone(), data)
    }
}

pub fn vocab_hash(vocab: &Vocabulary) -> String {
    format!("{:016x}", vocab.digest())
}

/// Model parameters plus everything needed to rebuild and validate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub family: DecoderFamily,
    pub dims: ModelDims,
    pub with_cell: bool,
    pub params: BTreeMap<String, StoredTensor>,
    pub config: serde_json::Value,
    pub corpus_seed: u64,
    pub vocab_hash: String,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: ModelKind,
        family: DecoderFamily,
        dims: ModelDims,
        with_cell: bool,
        params: &ParamSet,
        config: serde_json::Value,
        corpus_seed: u64,
        vocab: &Vocabulary,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT,
            kind,
            family,
            dims,
            with_cell,
            params: params
                .iter()
                .map(|(n, t)| (n.clone(), StoredTensor::from_tensor(t)))
                .collect(),
            config,
            corpus_seed,
            vocab_hash: vocab_hash(vocab),
        }
    }

    pub fn param_set(&self) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        for (n, t) in &self.params {
            p.insert(n.clone(), t.to_tensor()?);
        }
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let version = v.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(CHECKPOINT_FORMAT)) {
            return Err(Error::Checkpoint(format!(
                "format version {version:?}, this build reads {CHECKPOINT_FORMAT}"
            )));
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        at_path(path, std::fs::write(path, self.to_json()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = at_path(path, std::fs::read_to_string(path))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let h = vocab_hash(vocab);
        if self.vocab_hash != h {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash {} does not match the corpus vocabulary {h}",
                self.vocab_hash
            )));
        }
        if self.dims.vocab_size != vocab.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint vocabulary size {} vs corpus {}",
                self.dims.vocab_size,
                vocab.len()
            )));
        }
        Ok(())
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn teacher(&self) -> Result<(Teacher, ParamSet)> {
        self.expect_kind(ModelKind::Teacher)?;
        let t = Teacher::new(self.family, self.dims, self.with_cell);
        let p = self.param_set()?;
        p.check_against(&t.specs())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((t, p))
    }

    pub fn student(&self) -> Result<(Student, ParamSet)> {
        self.expect_kind(ModelKind::Student)?;
        let s = Student::new(self.family, self.dims, self.with_cell);
        let p = self.param_set()?;
        p.check_against(&s.specs())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((s, p))
    }
}
