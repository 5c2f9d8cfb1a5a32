//! Self-describing model checkpoints.
//!
//! A checkpoint is a single JSON document:
//!
//! ```text
//! {
//!   "format": "unlearn-checkpoint",
//!   "format_version": 1,
//!   "backend": "tabular" | "neural",
//!   "metadata": { ...backend specific: vocabulary, question/answer sets, config },
//!   "tensors": [ { "name": ..., "shape": [rows, cols], "data": base64(little-endian f64) } ]
//! }
//! ```
//!
//! Serialization is deterministic, so identical parameters give identical
//! bytes.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::neural::{NeuralConfig, TinyNeuralModel};
use super::tabular::TabularModel;
use super::tokenizer::Vocabulary;
use super::{BackendKind, LanguageModel};
use crate::{util, Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "unlearn-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorBlob {
    pub fn encode(name: &str, shape: Vec<usize>, values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            name: name.to_string(),
            shape,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::InvalidArgument(format!("tensor {}: {e}", self.name)))?;
        let expected: usize = self.shape.iter().product();
        if bytes.len() != expected * 8 {
            return Err(Error::InvalidArgument(format!(
                "tensor {} holds {} bytes, shape {:?} needs {}",
                self.name,
                bytes.len(),
                self.shape,
                expected * 8
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub format_version: u32,
    pub backend: BackendKind,
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorBlob>,
}

impl CheckpointFile {
    pub fn new(backend: BackendKind, metadata: serde_json::Value, tensors: Vec<TensorBlob>) -> Self {
        Self {
            format: FORMAT_TAG.to_string(),
            format_version: CHECKPOINT_FORMAT_VERSION,
            backend,
            metadata,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec(self).expect("checkpoint serializes");
        v.push(b'\n');
        v
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        util::write_file(path.as_ref(), self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let text = util::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if file.format != FORMAT_TAG {
            return Err(bad(format!("not a checkpoint (format tag {:?})", file.format)));
        }
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                file.format_version
            )));
        }
        Ok(file)
    }

    fn tensor(&self, name: &str) -> Result<&TensorBlob> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks tensor {name:?}")))
    }

    fn expect_backend(&self, kind: BackendKind) -> Result<()> {
        if self.backend != kind {
            return Err(Error::InvalidArgument(format!(
                "checkpoint holds a {} model, expected {kind}",
                self.backend
            )));
        }
        Ok(())
    }
}

/// Models that can be written to and restored from a [`CheckpointFile`].
pub trait Checkpointable: LanguageModel {
    fn to_checkpoint(&self) -> CheckpointFile;

    fn from_checkpoint(file: &CheckpointFile) -> Result<Self>;

    fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_checkpoint(&CheckpointFile::load(path)?).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TabularMeta {
    questions: Vec<String>,
    answers: Vec<String>,
}

impl Checkpointable for TabularModel {
    fn to_checkpoint(&self) -> CheckpointFile {
        let meta = TabularMeta {
            questions: self.questions().to_vec(),
            answers: self.answers().to_vec(),
        };
        CheckpointFile::new(
            BackendKind::Tabular,
            serde_json::to_value(meta).expect("metadata serializes"),
            vec![TensorBlob::encode(
                "logits",
                vec![self.questions().len(), self.answers().len()],
                self.parameters(),
            )],
        )
    }

    fn from_checkpoint(file: &CheckpointFile) -> Result<Self> {
        file.expect_backend(BackendKind::Tabular)?;
        let meta: TabularMeta = serde_json::from_value(file.metadata.clone())?;
        let logits = file.tensor("logits")?.decode()?;
        TabularModel::from_parts(meta.questions, meta.answers, logits)
    }
}

#[derive(Serialize, Deserialize)]
struct NeuralMeta {
    config: NeuralConfig,
    vocabulary: Vec<String>,
}

impl Checkpointable for TinyNeuralModel {
    fn to_checkpoint(&self) -> CheckpointFile {
        let meta = NeuralMeta {
            config: *self.config(),
            vocabulary: self.vocabulary().tokens().to_vec(),
        };
        let tensors = self
            .blocks()
            .into_iter()
            .map(|(name, shape, data)| TensorBlob::encode(name, shape, data))
            .collect();
        CheckpointFile::new(
            BackendKind::Neural,
            serde_json::to_value(meta).expect("metadata serializes"),
            tensors,
        )
    }

    fn from_checkpoint(file: &CheckpointFile) -> Result<Self> {
        file.expect_backend(BackendKind::Neural)?;
        let meta: NeuralMeta = serde_json::from_value(file.metadata.clone())?;
        let vocab = Vocabulary::from_tokens(meta.vocabulary);
        // Block order is fixed by the layout; read it from a fresh model.
        let template = TinyNeuralModel::new(vocab.clone(), meta.config)?;
        let mut params = Vec::with_capacity(template.num_parameters());
        for (name, shape, _) in template.blocks() {
            let t = file.tensor(name)?;
            if t.shape != shape {
                return Err(Error::InvalidArgument(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            params.extend(t.decode()?);
        }
        TinyNeuralModel::from_parts(vocab, meta.config, params)
    }
}

/// A checkpoint of either reference backend, for callers that only learn
/// the backend kind at run time.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Tabular(TabularModel),
    Neural(TinyNeuralModel),
}

impl AnyModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = CheckpointFile::load(path)?;
        let wrap = |e: Error| Error::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        match file.backend {
            BackendKind::Tabular => TabularModel::from_checkpoint(&file).map(AnyModel::Tabular).map_err(wrap),
            BackendKind::Neural => TinyNeuralModel::from_checkpoint(&file).map(AnyModel::Neural).map_err(wrap),
        }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            AnyModel::Tabular(_) => BackendKind::Tabular,
            AnyModel::Neural(_) => BackendKind::Neural,
        }
    }
}
