//! Character-level multi-source GRU encoder-decoder with additive attention.

mod checkpoint;
mod config;
mod decode;
mod gradcheck;
pub mod network;
mod params;
mod train;
mod vocab;


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{CheckpointError, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{ModelConfig, OptimizerKind, TrainConfig};
pub use decode::{Hypothesis, Step};
pub use gradcheck::{grad_check, GradCheckReport, Objective, DEFAULT_EPSILON};
pub use params::{AttentionParams, EncoderParams, GruParams, Params};
pub use train::{train_supervised, EpochRecord, TrainReport, WeightedExample};
pub use vocab::{Unit, Vocab, BOS, EOS, PAD, UNK};

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum Seq2SeqError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("model has {expected} encoders but {found} sources were given")]
    EncoderArityMismatch { expected: usize, found: usize },
    #[error("loss diverged (non-finite) at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("reward length {reward} does not match hypothesis length {hypothesis}")]
    LengthMismatch { reward: usize, hypothesis: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Input streams and gold output for supervised training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    /// One string per encoder; an empty string is a missing source.
    pub sources: Vec<String>,
    pub target: String,
}

impl TrainPair {
    pub fn new<S: Into<String>>(
        sources: impl IntoIterator<Item = S>,
        target: impl Into<String>,
    ) -> Self {
        TrainPair {
            sources: sources.into_iter().map(Into::into).collect(),
            target: target.into(),
        }
    }
}

/// Signed per-character rewards for a hypothesis; each value is +0.5, -0.5 or 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharReward(pub Vec<f64>);

impl CharReward {
    pub const CORRECT: f64 = 0.5;
    pub const INCORRECT: f64 = -0.5;

    pub fn zeros(len: usize) -> Self {
        CharReward(vec![0.0; len])
    }

    pub fn uniform(len: usize, value: f64) -> Self {
        CharReward(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A trained (or freshly initialized) parser.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub source_vocabs: Vec<Vocab>,
    pub target_vocab: Vocab,
    pub params: Params<S>,
    pub max_decode_len: usize,
}

impl<S: Scalar> Model<S> {
    /// Randomly initialized model with the given vocabularies.
    pub fn new(
        config: ModelConfig,
        source_vocabs: Vec<Vocab>,
        target_vocab: Vocab,
        max_decode_len: usize,
    ) -> Result<Self, Seq2SeqError> {
        config.validate()?;
        if source_vocabs.len() != config.encoders {
            return Err(Seq2SeqError::EncoderArityMismatch {
                expected: config.encoders,
                found: source_vocabs.len(),
            });
        }
        if !target_vocab.has_specials() || !source_vocabs.iter().all(Vocab::has_specials) {
            return Err(Seq2SeqError::InvalidConfig(
                "vocabularies must start with PAD/UNK/BOS/EOS".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sizes: Vec<usize> = source_vocabs.iter().map(Vocab::len).collect();
        let params = Params::init(&config, &sizes, target_vocab.len(), &mut rng);
        log::debug!(
            "initialized {} parameters (glorot-uniform weights, uniform(±0.1) embeddings)",
            params.count()
        );
        Ok(Model {
            config,
            source_vocabs,
            target_vocab,
            params,
            max_decode_len: max_decode_len.max(1),
        })
    }

    /// Model whose vocabularies are built from `corpus`.
    pub fn for_corpus(config: ModelConfig, corpus: &[TrainPair]) -> Result<Self, Seq2SeqError> {
        if corpus.is_empty() {
            return Err(Seq2SeqError::EmptyCorpus);
        }
        check_arity(config.encoders, corpus.iter().map(|p| p.sources.len()))?;
        let unit = config.unit;
        let source_vocabs = (0..config.encoders)
            .map(|k| Vocab::build(corpus.iter().flat_map(|p| unit.split_source(&p.sources[k]))))
            .collect();
        let target_vocab = Vocab::build(corpus.iter().flat_map(|p| unit.split_target(&p.target)));
        let longest = corpus
            .iter()
            .map(|p| unit.split_target(&p.target).len())
            .max()
            .unwrap_or(1);
        let max_len = if config.max_decode_len > 0 {
            config.max_decode_len
        } else {
            (longest * 3).div_ceil(2)
        };
        Model::new(config, source_vocabs, target_vocab, max_len)
    }

    pub fn encoders(&self) -> usize {
        self.config.encoders
    }

    pub fn encode_sources<T: AsRef<str>>(
        &self,
        sources: &[T],
    ) -> Result<Vec<Vec<usize>>, Seq2SeqError> {
        check_arity(self.encoders(), std::iter::once(sources.len()))?;
        Ok(self
            .source_vocabs
            .iter()
            .zip(sources)
            .map(|(v, s)| v.encode_source(self.config.unit, s.as_ref()))
            .collect())
    }

    /// Initial decoder state for the given sources.
    pub fn decoder_init<T: AsRef<str>>(
        &self,
        sources: &[T],
    ) -> Result<ndarray::Array1<S>, Seq2SeqError> {
        let ids = self.encode_sources(sources)?;
        let runs: Vec<_> = self
            .params
            .encoders
            .iter()
            .zip(&ids)
            .map(|(e, i)| network::encode(e, i))
            .collect();
        Ok(network::decoder_init(&self.params, &runs).0)
    }

    /// Sum of `-log p` of `target` under teacher forcing.
    pub fn nll<T: AsRef<str>>(&self, sources: &[T], target: &str) -> Result<S, Seq2SeqError> {
        let ids = self.encode_sources(sources)?;
        let tgt = self.target_vocab.encode_target(self.config.unit, target);
        let weights = vec![S::one(); tgt.len()];
        Ok(network::forward_backward(
            &self.params,
            &ids,
            &tgt,
            &weights,
            S::one(),
            None,
        ))
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let sizes: Vec<usize> = self.source_vocabs.iter().map(Vocab::len).collect();
        let mut params = Params::<T>::zeros(&self.config, &sizes, self.target_vocab.len());
        for (dst, (_, _, src)) in params.tensors_mut().into_iter().zip(self.params.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = T::from_f64_lossy(s.to_f64_lossy());
            }
        }
        Model {
            config: self.config.clone(),
            source_vocabs: self.source_vocabs.clone(),
            target_vocab: self.target_vocab.clone(),
            params,
            max_decode_len: self.max_decode_len,
        }
    }
}

fn check_arity(
    expected: usize,
    found: impl IntoIterator<Item = usize>,
) -> Result<(), Seq2SeqError> {
    match found.into_iter().find(|&n| n != expected) {
        Some(found) => Err(Seq2SeqError::EncoderArityMismatch { expected, found }),
        None => Ok(()),
    }
}
