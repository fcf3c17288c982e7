//! Decoder entropy, least-certain token selection and clarification questions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mrl::{self, MrlToken};
use crate::scalar::Scalar;
use crate::seq2seq::Hypothesis;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UncertaintyError {
    #[error("not a probability distribution (sum {sum}, min {min})")]
    NotADistribution { sum: f64, min: f64 },
    #[error("hypothesis has no content tokens")]
    EmptyHypothesis,
    #[error("clarification token is empty")]
    EmptyToken,
}

const SUM_TOLERANCE: f64 = 1e-6;

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn step_entropy<S: Scalar>(dist: &[S]) -> Result<S, UncertaintyError> {
    let sum: f64 = dist.iter().map(|p| p.to_f64_lossy()).sum();
    let min = dist
        .iter()
        .map(|p| p.to_f64_lossy())
        .fold(f64::INFINITY, f64::min);
    if dist.is_empty() || (sum - 1.0).abs() > SUM_TOLERANCE || min < 0.0 || !sum.is_finite() {
        return Err(UncertaintyError::NotADistribution { sum, min });
    }
    Ok(entropy(dist))
}

fn entropy<S: Scalar>(dist: &[S]) -> S {
    let mut h = S::zero();
    for &p in dist {
        if p > S::zero() {
            h -= p * p.ln();
        }
    }
    h.max(S::zero())
}

/// Entropy of the step that emitted each character of the hypothesis text.
pub fn char_entropies<S: Scalar>(hyp: &Hypothesis<S>) -> Vec<S> {
    let per_step: Vec<S> = hyp.steps.iter().map(|s| entropy(&s.probs)).collect();
    hyp.char_steps().into_iter().map(|i| per_step[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenUncertainty<S> {
    pub token: MrlToken,
    pub mean_entropy: S,
    pub char_entropies: Vec<S>,
}

impl<S: Scalar> TokenUncertainty<S> {
    pub fn new(token: MrlToken, char_entropies: Vec<S>) -> Self {
        let n = S::from_usize_lossy(char_entropies.len().max(1));
        let mean_entropy = char_entropies.iter().copied().sum::<S>() / n;
        TokenUncertainty {
            token,
            mean_entropy,
            char_entropies,
        }
    }
}

/// One entry per content token of the hypothesis, in order.
pub fn token_entropies<S: Scalar>(hyp: &Hypothesis<S>) -> Vec<TokenUncertainty<S>> {
    let chars = char_entropies(hyp);
    mrl::content_tokens(&hyp.text)
        .into_iter()
        .map(|tok| {
            let h = chars[tok.span.0..tok.span.1].to_vec();
            TokenUncertainty::new(tok, h)
        })
        .collect()
}

/// Highest mean entropy; the earliest token wins ties.
pub fn least_certain_token<S: Scalar>(
    uncs: &[TokenUncertainty<S>],
) -> Result<&TokenUncertainty<S>, UncertaintyError> {
    let mut best: Option<&TokenUncertainty<S>> = None;
    for u in uncs {
        best = match best {
            Some(b) if u.mean_entropy > b.mean_entropy => Some(u),
            Some(b) if u.mean_entropy == b.mean_entropy && u.token.span.0 < b.token.span.0 => {
                Some(u)
            }
            None => Some(u),
            keep => keep,
        };
    }
    best.ok_or(UncertaintyError::EmptyHypothesis)
}

/// Largest mean token entropy in the hypothesis (0 for an empty one).
pub fn max_token_entropy<S: Scalar>(hyp: &Hypothesis<S>) -> S {
    token_entropies(hyp)
        .iter()
        .map(|u| u.mean_entropy)
        .fold(S::zero(), S::max)
}

/// The second beam's competitor for `target`.
///
/// Content tokens of both beams are aligned by index after their longest
/// common prefix. The beam-2 token at the target's index is proposed if it
/// differs; otherwise the first beam-2 content token that differs from its
/// beam-1 counterpart. Structural tokens are never compared or proposed.
pub fn propose_alternative(beam1: &str, beam2: &str, target: &MrlToken) -> Option<String> {
    let a = mrl::content_tokens(beam1);
    let b = mrl::content_tokens(beam2);
    let prefix = a
        .iter()
        .zip(&b)
        .take_while(|(x, y)| x.text == y.text)
        .count();
    let usable = |t: &MrlToken| t.text != target.text && !t.text.is_empty();
    if let Some(index) = a.iter().position(|t| t.span == target.span) {
        if index >= prefix {
            if let Some(t) = b.get(index).filter(|t| usable(t)) {
                return Some(t.text.clone());
            }
        }
    }
    b.iter()
        .enumerate()
        .skip(prefix)
        .find(|(i, t)| a.get(*i).is_none_or(|x| x.text != t.text) && usable(t))
        .map(|(_, t)| t.text.clone())
}

/// `Did you mean {token}?` or `Did you mean {token} or {alternative}?`.
pub fn render_question(token: &str, alternative: Option<&str>) -> Result<String, UncertaintyError> {
    if token.is_empty() {
        return Err(UncertaintyError::EmptyToken);
    }
    Ok(match alternative {
        Some(alt) => format!("Did you mean {token} or {alt}?"),
        None => format!("Did you mean {token}?"),
    })
}

/// Inverse of [`render_question`]; splits at the first " or ".
pub fn parse_question(question: &str) -> Option<(String, Option<String>)> {
    let body = question.strip_prefix("Did you mean ")?.strip_suffix('?')?;
    if body.is_empty() {
        return None;
    }
    Some(match body.split_once(" or ") {
        Some((t, a)) if !t.is_empty() && !a.is_empty() => (t.to_string(), Some(a.to_string())),
        _ => (body.to_string(), None),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clarification {
    pub question: String,
    pub token: String,
    pub alternative: Option<String>,
    /// Character span of the token in the top hypothesis.
    pub span: (usize, usize),
}

/// Clarification for the top beam, using the second beam (if any) for the
/// alternative.
pub fn clarify<S: Scalar>(beams: &[Hypothesis<S>]) -> Result<Clarification, UncertaintyError> {
    let top = beams.first().ok_or(UncertaintyError::EmptyHypothesis)?;
    let uncs = token_entropies(top);
    let least = least_certain_token(&uncs)?;
    let alternative = beams
        .get(1)
        .and_then(|b| propose_alternative(&top.text, &b.text, &least.token));
    let question = render_question(&least.token.text, alternative.as_deref())?;
    Ok(Clarification {
        question,
        token: least.token.text.clone(),
        alternative,
        span: least.token.span,
    })
}

/// `char,position,entropy` rows for every character of the hypothesis.
pub fn entropy_csv<S: Scalar>(hyp: &Hypothesis<S>) -> String {
    let mut out = String::from("char,position,entropy\n");
    for (i, (c, h)) in hyp.text.chars().zip(char_entropies(hyp)).enumerate() {
        let field = c.to_string().replace('"', "\"\"");
        let _ = writeln!(out, "\"{field}\",{i},{:.9}", h.to_f64_lossy());
    }
    out
}
