use std::cmp::Ordering;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::network::{self, EncoderRun};
use super::vocab::{BOS, EOS};
use super::{Model, Seq2SeqError};
use crate::scalar::Scalar;

/// One emitted symbol with the distribution it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step<S> {
    pub symbol: usize,
    /// Surface text; empty for EOS.
    pub text: String,
    pub probs: Vec<S>,
    /// Attention weights, one vector per encoder.
    pub attention: Vec<Vec<S>>,
}

impl<S: Scalar> Step<S> {
    pub fn log_prob(&self) -> S {
        self.probs[self.symbol].ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis<S> {
    pub text: String,
    /// Emitted symbols in order, including the final EOS when finished.
    pub steps: Vec<Step<S>>,
    /// Natural-log probability of all steps.
    pub log_prob: S,
    /// Hit the maximum decode length before EOS.
    pub truncated: bool,
}

impl<S: Scalar> Hypothesis<S> {
    /// Index of the step that emitted each character of `text`.
    pub fn char_steps(&self) -> Vec<usize> {
        self.steps
            .iter()
            .enumerate()
            .flat_map(|(i, st)| std::iter::repeat_n(i, st.text.chars().count()))
            .collect()
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn emitted_symbols(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.symbol).filter(|&s| s != EOS)
    }
}

#[derive(Clone)]
struct Partial<S> {
    state: Array1<S>,
    prev: usize,
    steps: Vec<Step<S>>,
    log_prob: S,
}

impl<S: Scalar> Partial<S> {
    fn push(
        &mut self,
        state: Array1<S>,
        symbol: usize,
        text: &str,
        probs: &Array1<S>,
        attention: &[Vec<S>],
    ) {
        let step = Step {
            symbol,
            text: text.to_string(),
            probs: probs.to_vec(),
            attention: attention.to_vec(),
        };
        self.log_prob += step.log_prob();
        self.steps.push(step);
        self.state = state;
        self.prev = symbol;
    }

    fn extend(
        &self,
        state: Array1<S>,
        symbol: usize,
        text: &str,
        probs: &Array1<S>,
        attention: &[Vec<S>],
    ) -> Self {
        let mut next = self.clone();
        next.push(state, symbol, text, probs, attention);
        next
    }

    fn finish(self, truncated: bool) -> Hypothesis<S> {
        let text = self.steps.iter().map(|s| s.text.as_str()).collect();
        Hypothesis {
            text,
            steps: self.steps,
            log_prob: self.log_prob,
            truncated,
        }
    }
}

impl<S: Scalar> Model<S> {
    fn start<T: AsRef<str>>(
        &self,
        sources: &[T],
    ) -> Result<(Vec<EncoderRun<S>>, Partial<S>), Seq2SeqError> {
        let ids = self.encode_sources(sources)?;
        let runs: Vec<EncoderRun<S>> = self
            .params
            .encoders
            .iter()
            .zip(&ids)
            .map(|(e, i)| network::encode(e, i))
            .collect();
        let (state, _) = network::decoder_init(&self.params, &runs);
        Ok((
            runs,
            Partial {
                state,
                prev: BOS,
                steps: Vec::new(),
                log_prob: S::zero(),
            },
        ))
    }

    fn advance(
        &self,
        runs: &[EncoderRun<S>],
        partial: &Partial<S>,
    ) -> (Array1<S>, Array1<S>, Vec<Vec<S>>) {
        let step = network::decoder_step(&self.params, runs, partial.state.view(), partial.prev);
        let probs = network::readout(&self.params, &step);
        let attention = step.attention.iter().map(|a| a.weights.to_vec()).collect();
        (step.state, probs, attention)
    }

    /// Argmax decoding until EOS or the length limit.
    pub fn decode_greedy<T: AsRef<str>>(
        &self,
        sources: &[T],
    ) -> Result<Hypothesis<S>, Seq2SeqError> {
        let (runs, mut partial) = self.start(sources)?;
        for _ in 0..self.max_decode_len {
            let (state, probs, attention) = self.advance(&runs, &partial);
            let best = argmax(&probs);
            partial.push(
                state,
                best,
                self.target_vocab.surface(best),
                &probs,
                &attention,
            );
            if best == EOS {
                return Ok(partial.finish(false));
            }
        }
        Ok(partial.finish(true))
    }

    /// Beam search without length normalization; up to `k` hypotheses sorted
    /// by log probability (descending).
    ///
    /// The `k` best non-EOS extensions stay live; EOS extensions ranked within
    /// the top `k` candidates are set aside as finished. Search stops once `k`
    /// finished hypotheses score at least as high as every live one (scores
    /// only decrease) or at the length limit, where live beams are returned
    /// as truncated. With `k = 1` this is exactly greedy decoding.
    pub fn beam_search<T: AsRef<str>>(
        &self,
        sources: &[T],
        k: usize,
    ) -> Result<Vec<Hypothesis<S>>, Seq2SeqError> {
        let k = k.max(1);
        let (runs, root) = self.start(sources)?;
        let mut live = vec![root];
        let mut finished: Vec<Hypothesis<S>> = Vec::new();
        for _ in 0..self.max_decode_len {
            if live.is_empty() {
                break;
            }
            if finished.len() >= k {
                let kth = finished[k - 1].log_prob;
                if live.iter().all(|p| p.log_prob <= kth) {
                    break;
                }
            }
            let expanded: Vec<_> = live.iter().map(|p| self.advance(&runs, p)).collect();
            let mut candidates: Vec<(S, usize, usize)> = Vec::new();
            for (bi, (p, (_, probs, _))) in live.iter().zip(&expanded).enumerate() {
                for sym in top_k(probs, k + 1) {
                    candidates.push((p.log_prob + probs[sym].ln(), bi, sym));
                }
            }
            candidates.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then((a.1, a.2).cmp(&(b.1, b.2)))
            });
            let mut next = Vec::new();
            for (rank, &(_, bi, sym)) in candidates.iter().enumerate() {
                if next.len() == k {
                    break;
                }
                let (state, probs, attention) = &expanded[bi];
                if sym == EOS {
                    if rank < k {
                        finished.push(
                            live[bi]
                                .extend(state.clone(), sym, "", probs, attention)
                                .finish(false),
                        );
                    }
                } else {
                    next.push(live[bi].extend(
                        state.clone(),
                        sym,
                        self.target_vocab.surface(sym),
                        probs,
                        attention,
                    ));
                }
            }
            finished.sort_by(|a, b| {
                b.log_prob
                    .partial_cmp(&a.log_prob)
                    .unwrap_or(Ordering::Equal)
            });
            live = next;
        }
        if finished.len() < k {
            finished.extend(live.into_iter().map(|p| p.finish(true)));
        }
        finished.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap_or(Ordering::Equal)
        });
        finished.truncate(k);
        Ok(finished)
    }
}

fn argmax<S: Scalar>(probs: &Array1<S>) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest entries, ties broken by lower index.
fn top_k<S: Scalar>(probs: &Array1<S>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}
