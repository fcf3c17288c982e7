use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, OptimizerKind, TrainConfig};
use super::network;
use super::params::Params;
use super::{check_arity, CharReward, Model, Seq2SeqError, TrainPair};
use crate::mrl;
use crate::scalar::Scalar;

/// A model hypothesis with signed per-character rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedExample {
    pub sources: Vec<String>,
    pub hypothesis: String,
    pub reward: CharReward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub exact_match: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub trace: Vec<EpochRecord>,
    pub updates: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace
            .iter()
            .rev()
            .find(|r| r.split == "train")
            .map(|r| r.loss)
    }

    pub fn final_exact_match(&self) -> Option<f64> {
        self.trace.iter().rev().find_map(|r| r.exact_match)
    }

    /// `epoch,split,loss,exact_match` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,exact_match\n");
        for r in &self.trace {
            let em = r.exact_match.map(|e| format!("{e:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.8},{}", r.epoch, r.split, r.loss, em);
        }
        out
    }
}

/// Encoded example ready for the network.
pub(crate) struct Prepared<S> {
    pub sources: Vec<Vec<usize>>,
    pub target: Vec<usize>,
    pub weights: Vec<S>,
}

/// Mean loss over `batch` and its gradient.
pub(crate) fn batch_gradient<S: Scalar>(
    params: &Params<S>,
    batch: &[&Prepared<S>],
) -> (S, Params<S>) {
    let mut grads = params.zeros_like();
    let scale = S::one() / S::from_usize_lossy(batch.len());
    let mut loss = S::zero();
    for ex in batch {
        loss += network::forward_backward(
            params,
            &ex.sources,
            &ex.target,
            &ex.weights,
            scale,
            Some(&mut grads),
        );
    }
    (loss * scale, grads)
}

struct Optimizer<S> {
    kind: OptimizerKind,
    lr: S,
    clip: S,
    first: Option<Params<S>>,
    second: Option<Params<S>>,
    t: i32,
}

impl<S: Scalar> Optimizer<S> {
    fn new(cfg: &TrainConfig) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            lr: S::from_f64_lossy(cfg.learning_rate),
            clip: S::from_f64_lossy(cfg.clip_norm),
            first: None,
            second: None,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Params<S>, mut grads: Params<S>) {
        if self.clip > S::zero() {
            let norm = grads.norm();
            if norm > self.clip {
                grads.scale(self.clip / norm);
            }
        }
        match self.kind {
            OptimizerKind::Sgd => params.add_scaled(&grads, -self.lr),
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (
                    S::from_f64_lossy(0.9),
                    S::from_f64_lossy(0.999),
                    S::from_f64_lossy(1e-8),
                );
                self.t += 1;
                let m = self.first.get_or_insert_with(|| grads.zeros_like());
                m.zip_mut(&grads, |m, g| {
                    m.iter_mut()
                        .zip(g)
                        .for_each(|(m, &g)| *m = b1 * *m + (S::one() - b1) * g)
                });
                let v = self.second.get_or_insert_with(|| grads.zeros_like());
                v.zip_mut(&grads, |v, g| {
                    v.iter_mut()
                        .zip(g)
                        .for_each(|(v, &g)| *v = b2 * *v + (S::one() - b2) * g * g)
                });
                let c1 = S::one() - b1.powi(self.t);
                let c2 = S::one() - b2.powi(self.t);
                let lr = self.lr;
                let (m, v) = (self.first.as_ref().unwrap(), self.second.as_ref().unwrap());
                for ((p, (_, _, m)), (_, _, v)) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(m.tensors())
                    .zip(v.tensors())
                {
                    for ((p, &m), &v) in p.iter_mut().zip(m).zip(v) {
                        *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Trains a fresh model on `corpus` with teacher-forced cross-entropy.
pub fn train_supervised<S: Scalar>(
    corpus: &[TrainPair],
    config: ModelConfig,
    train: &TrainConfig,
) -> Result<(Model<S>, TrainReport), Seq2SeqError> {
    let mut model = Model::for_corpus(config, corpus)?;
    let report = model.fit(corpus, train)?;
    Ok((model, report))
}

impl<S: Scalar> Model<S> {
    pub(crate) fn prepare_supervised(&self, pair: &TrainPair) -> Result<Prepared<S>, Seq2SeqError> {
        let sources = self.encode_sources(&pair.sources)?;
        let target = self
            .target_vocab
            .encode_target(self.config.unit, &pair.target);
        let weights = vec![S::one(); target.len()];
        Ok(Prepared {
            sources,
            target,
            weights,
        })
    }

    /// Per-symbol weights: the mean reward of the characters a symbol covers;
    /// the end-of-sequence step carries the mean over the whole hypothesis.
    pub(crate) fn prepare_weighted(
        &self,
        ex: &WeightedExample,
    ) -> Result<Prepared<S>, Seq2SeqError> {
        let chars = ex.hypothesis.chars().count();
        if ex.reward.len() != chars {
            return Err(Seq2SeqError::LengthMismatch {
                reward: ex.reward.len(),
                hypothesis: chars,
            });
        }
        let sources = self.encode_sources(&ex.sources)?;
        let pieces = self.config.unit.split_target(&ex.hypothesis);
        let mut weights = Vec::with_capacity(pieces.len() + 1);
        let mut offset = 0;
        for piece in &pieces {
            let n = piece.chars().count();
            let slice = &ex.reward.0[offset..offset + n];
            weights.push(S::from_f64_lossy(mean(slice)));
            offset += n;
        }
        weights.push(S::from_f64_lossy(mean(&ex.reward.0)));
        let target = self
            .target_vocab
            .encode_target(self.config.unit, &ex.hypothesis);
        Ok(Prepared {
            sources,
            target,
            weights,
        })
    }

    /// Continues supervised training on `corpus`.
    pub fn fit(
        &mut self,
        corpus: &[TrainPair],
        train: &TrainConfig,
    ) -> Result<TrainReport, Seq2SeqError> {
        if corpus.is_empty() {
            return Err(Seq2SeqError::EmptyCorpus);
        }
        check_arity(self.encoders(), corpus.iter().map(|p| p.sources.len()))?;
        let data = corpus
            .iter()
            .map(|p| self.prepare_supervised(p))
            .collect::<Result<Vec<_>, _>>()?;
        let eval = |model: &Model<S>| -> f64 {
            let hits = corpus
                .iter()
                .filter(|p| {
                    model
                        .decode_greedy(&p.sources)
                        .map(|h| mrl::canonicalize(&h.text) == mrl::canonicalize(&p.target))
                        .unwrap_or(false)
                })
                .count();
            hits as f64 / corpus.len() as f64
        };
        self.run_epochs(&data, train, Some(&eval))
    }

    /// Maximizes the reward-weighted log-likelihood of the model's own
    /// hypotheses; zero-reward characters contribute no gradient.
    pub fn train_weighted(
        &mut self,
        data: &[WeightedExample],
        train: &TrainConfig,
    ) -> Result<TrainReport, Seq2SeqError> {
        if data.is_empty() {
            return Err(Seq2SeqError::EmptyCorpus);
        }
        let prepared = data
            .iter()
            .map(|ex| self.prepare_weighted(ex))
            .collect::<Result<Vec<_>, _>>()?;
        self.run_epochs(&prepared, train, None)
    }

    fn run_epochs(
        &mut self,
        data: &[Prepared<S>],
        train: &TrainConfig,
        eval: Option<&dyn Fn(&Model<S>) -> f64>,
    ) -> Result<TrainReport, Seq2SeqError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_5eed);
        let mut optimizer = Optimizer::new(train);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let batch_size = train.batch_size.max(1);
        let mut report = TrainReport::default();
        for epoch in 1..=train.epochs {
            if train.shuffle {
                order.shuffle(&mut rng);
            }
            let mut total = 0.0;
            for chunk in order.chunks(batch_size) {
                let batch: Vec<&Prepared<S>> = chunk.iter().map(|&i| &data[i]).collect();
                let (loss, grads) = batch_gradient(&self.params, &batch);
                let loss = loss.to_f64_lossy();
                if !loss.is_finite() {
                    return Err(Seq2SeqError::NonFiniteLoss { epoch });
                }
                total += loss * batch.len() as f64;
                optimizer.step(&mut self.params, grads);
                report.updates += 1;
            }
            if !self.params.is_finite() {
                return Err(Seq2SeqError::NonFiniteLoss { epoch });
            }
            let exact_match = match eval {
                Some(f)
                    if train.eval_every > 0
                        && (epoch % train.eval_every == 0 || epoch == train.epochs) =>
                {
                    Some(f(self))
                }
                _ => None,
            };
            let loss = total / data.len() as f64;
            log::debug!("epoch {epoch}: loss {loss:.5} exact match {exact_match:?}");
            report.trace.push(EpochRecord {
                epoch,
                split: "train".into(),
                loss,
                exact_match,
            });
            if let (Some(em), Some(goal)) = (exact_match, train.stop_at_train_accuracy) {
                if em >= goal {
                    break;
                }
            }
        }
        Ok(report)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
