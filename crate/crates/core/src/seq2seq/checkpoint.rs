//! Self-describing JSON checkpoints.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::ModelConfig;
use super::params::Params;
use super::vocab::Vocab;
use super::Model;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "nlmaps-seq2seq";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a {CHECKPOINT_FORMAT} checkpoint (format `{0}`)")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    source_vocabs: Vec<Vocab>,
    target_vocab: Vocab,
    max_decode_len: usize,
    #[serde(default)]
    metadata: serde_json::Value,
    tensors: Vec<TensorRecord>,
}

impl<S: Scalar> Model<S> {
    pub fn to_json(&self, metadata: serde_json::Value) -> Result<String, CheckpointError> {
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| TensorRecord {
                name,
                shape,
                data: data.iter().map(|x| x.to_f64_lossy()).collect(),
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            source_vocabs: self.source_vocabs.clone(),
            target_vocab: self.target_vocab.clone(),
            max_decode_len: self.max_decode_len,
            metadata,
            tensors,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(file.format));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(file.version));
        }
        let sizes: Vec<usize> = file.source_vocabs.iter().map(Vocab::len).collect();
        let mut params = Params::<S>::zeros(&file.config, &sizes, file.target_vocab.len());
        let layout: Vec<(String, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        if layout.len() != file.tensors.len() {
            return Err(CheckpointError::Format(format!(
                "expected {} tensors, found {}",
                layout.len(),
                file.tensors.len()
            )));
        }
        for ((dst, (name, shape)), rec) in params
            .tensors_mut()
            .into_iter()
            .zip(layout)
            .zip(&file.tensors)
        {
            if rec.name != name || rec.shape != shape || rec.data.len() != dst.len() {
                return Err(CheckpointError::Shape {
                    name,
                    expected: shape,
                    found: rec.shape.clone(),
                });
            }
            for (d, &v) in dst.iter_mut().zip(&rec.data) {
                *d = S::from_f64_lossy(v);
            }
        }
        Ok(Model {
            config: file.config,
            source_vocabs: file.source_vocabs,
            target_vocab: file.target_vocab,
            params,
            max_decode_len: file.max_decode_len,
        })
    }

    /// Writes the checkpoint through a temporary file and a rename.
    pub fn save(
        &self,
        path: impl AsRef<Path>,
        metadata: serde_json::Value,
    ) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json(metadata)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The `metadata` object stored in a checkpoint file.
    pub fn read_metadata(path: impl AsRef<Path>) -> Result<serde_json::Value, CheckpointError> {
        let file: CheckpointFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(file.metadata)
    }
}
