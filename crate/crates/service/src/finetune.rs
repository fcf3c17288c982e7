//! Offline learning from logged markings.

use std::collections::HashMap;

use nlmaps_core::dialogue::{self, DialogueError, DialogueRecord, MarkingFeedback};
use nlmaps_core::metrics::{self, EvalReport, MetricsError};
use nlmaps_core::seq2seq::{Model, Seq2SeqError, TrainConfig, TrainReport, WeightedExample};
use nlmaps_core::Scalar;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("feedback log is empty")]
    EmptyFeedback,
    #[error("feedback references unknown hypothesis `{0}`")]
    JoinFailure(String),
    #[error("feedback for `{id}`: {source}")]
    Rewards { id: String, source: DialogueError },
    #[error(transparent)]
    Model(#[from] Seq2SeqError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneSummary {
    pub examples: usize,
    pub before: EvalReport,
    pub after: EvalReport,
    pub train: TrainReport,
}

/// Joins each feedback record with the dialogue record of the same id; the
/// record's hypothesis must be the text the marks were made against. The
/// user's answer becomes the logged-answer source and completes a dialogue
/// that has none yet.
pub fn weighted_examples(
    feedback: &[MarkingFeedback],
    records: &[DialogueRecord],
    arity: usize,
) -> Result<Vec<WeightedExample>, FinetuneError> {
    if feedback.is_empty() {
        return Err(FinetuneError::EmptyFeedback);
    }
    let by_id: HashMap<&str, &DialogueRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    feedback
        .iter()
        .map(|fb| {
            let rec = by_id
                .get(fb.hypothesis_id.as_str())
                .ok_or_else(|| FinetuneError::JoinFailure(fb.hypothesis_id.clone()))?;
            let reward = dialogue::distribute_rewards(&rec.hypothesis, fb).map_err(|source| {
                FinetuneError::Rewards {
                    id: fb.hypothesis_id.clone(),
                    source,
                }
            })?;
            let mut rec = (*rec).clone();
            if !rec.is_answered() {
                let question = rec
                    .dialogue
                    .split(dialogue::SEPARATOR)
                    .next()
                    .unwrap_or("")
                    .to_string();
                rec.dialogue = dialogue::join_dialogue(&question, &fb.answer);
            }
            rec.logged_answer = Some(fb.answer.clone());
            Ok(WeightedExample {
                sources: rec.sources(arity),
                hypothesis: rec.hypothesis,
                reward,
            })
        })
        .collect()
}

/// Greedy-decoding report of `model` on `held_out`.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    held_out: &[DialogueRecord],
) -> Result<EvalReport, FinetuneError> {
    let arity = model.encoders();
    let pred = held_out
        .iter()
        .map(|r| model.decode_greedy(&r.sources(arity)).map(|h| h.text))
        .collect::<Result<Vec<_>, _>>()?;
    let gold: Vec<&str> = held_out.iter().map(|r| r.target.as_str()).collect();
    Ok(metrics::f1_report(&pred, &gold)?)
}

/// Trains a copy of `model` on the δ-weighted objective built from the
/// feedback and reports held-out scores before and after.
pub fn finetune<S: Scalar>(
    model: &Model<S>,
    feedback: &[MarkingFeedback],
    records: &[DialogueRecord],
    held_out: &[DialogueRecord],
    train: &TrainConfig,
) -> Result<(Model<S>, FinetuneSummary), FinetuneError> {
    let data = weighted_examples(feedback, records, model.encoders())?;
    let before = evaluate(model, held_out)?;
    let mut tuned = model.clone();
    let report = tuned.train_weighted(&data, train)?;
    let after = evaluate(&tuned, held_out)?;
    log::info!(
        "finetune on {} markings: before [{before}] after [{after}]",
        data.len()
    );
    Ok((
        tuned,
        FinetuneSummary {
            examples: data.len(),
            before,
            after,
            train: report,
        },
    ))
}
