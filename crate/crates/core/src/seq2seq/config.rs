use serde::{Deserialize, Serialize};

use super::vocab::Unit;
use super::Seq2SeqError;

/// Network shape. Defaults are the character-based parser's sizes; the toy
/// experiments shrink them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_size: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention_size: usize,
    /// Width of the projection of the concatenated per-encoder contexts.
    pub context_size: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub cell: String,
    pub attention: String,
    pub unit: Unit,
    /// Number of encoders (input streams).
    pub encoders: usize,
    /// 0 means 1.5 × the longest training target.
    pub max_decode_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_size: 620,
            encoder_hidden: 400,
            decoder_hidden: 800,
            attention_size: 400,
            context_size: 400,
            encoder_layers: 1,
            decoder_layers: 1,
            cell: "gru".into(),
            attention: "bahdanau".into(),
            unit: Unit::Char,
            encoders: 1,
            max_decode_len: 0,
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// A small network for tests and desk-scale experiments.
    pub fn tiny() -> Self {
        ModelConfig {
            embedding_size: 16,
            encoder_hidden: 32,
            decoder_hidden: 48,
            attention_size: 24,
            context_size: 32,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), Seq2SeqError> {
        let sizes = [
            ("embedding_size", self.embedding_size),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_size", self.attention_size),
            ("context_size", self.context_size),
            ("encoders", self.encoders),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Seq2SeqError::InvalidConfig(format!("{name} must be > 0")));
        }
        if self.encoder_layers != 1 || self.decoder_layers != 1 {
            return Err(Seq2SeqError::InvalidConfig(
                "only single-layer encoders and decoders are supported".into(),
            ));
        }
        if self.cell != "gru" {
            return Err(Seq2SeqError::InvalidConfig(format!(
                "unsupported cell `{}`",
                self.cell
            )));
        }
        if self.attention != "bahdanau" {
            return Err(Seq2SeqError::InvalidConfig(format!(
                "unsupported attention `{}`",
                self.attention
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Evaluate training exact match every this many epochs (0 = never).
    pub eval_every: usize,
    /// Stop as soon as training exact match reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.1,
            optimizer: OptimizerKind::Sgd,
            clip_norm: 5.0,
            eval_every: 0,
            stop_at_train_accuracy: None,
            shuffle: true,
        }
    }
}
