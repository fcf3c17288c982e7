//! Synthetic clarification dialogues, multi-source records, token markings
//! and annotation-task filtering.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Example, SplitSet};
use crate::mrl::{self, KeyvalRow, MrlAst};
use crate::scalar::Scalar;
use crate::seq2seq::{CharReward, Hypothesis, Model, Seq2SeqError};
use crate::uncertainty::{self, Clarification, UncertaintyError};

/// Joins the clarification question and the answer in the dialogue source.
pub const SEPARATOR: char = '\u{241E}';

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("span {start}..{end} is outside the hypothesis (length {len})")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("spans {first:?} and {second:?} overlap")]
    OverlappingSpans {
        first: (usize, usize),
        second: (usize, usize),
    },
    #[error(transparent)]
    Decode(#[from] Seq2SeqError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
}

/// Multi-source training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub id: String,
    pub question: String,
    /// Canonical baseline hypothesis.
    pub hypothesis: String,
    /// Clarification question, separator, answer.
    pub dialogue: String,
    pub logged_answer: Option<String>,
    pub target: String,
}

impl DialogueRecord {
    /// The first `arity` sources: question, hypothesis, dialogue, logged answer.
    pub fn sources(&self, arity: usize) -> Vec<String> {
        let all = [
            self.question.as_str(),
            self.hypothesis.as_str(),
            self.dialogue.as_str(),
            self.logged_answer.as_deref().unwrap_or(""),
        ];
        all.iter().take(arity).map(|s| s.to_string()).collect()
    }

    pub fn answer(&self) -> &str {
        self.dialogue.split_once(SEPARATOR).map_or("", |(_, a)| a)
    }

    /// Whether the dialogue carries a synthetic (or logged) answer.
    pub fn is_answered(&self) -> bool {
        !self.answer().is_empty()
    }
}

pub fn join_dialogue(question: &str, answer: &str) -> String {
    format!("{question}{SEPARATOR}{answer}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    Correct,
    Incorrect,
}

impl Mark {
    pub fn reward(self) -> f64 {
        match self {
            Mark::Correct => CharReward::CORRECT,
            Mark::Incorrect => CharReward::INCORRECT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMark {
    pub start: usize,
    pub end: usize,
    pub mark: Mark,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkingFeedback {
    pub hypothesis_id: String,
    pub marks: Vec<TokenMark>,
    pub answer: String,
    pub ts: u64,
}

/// `yes, {token}` if the token occurs in the gold, `no, I meant {alt}` if
/// the alternative does, otherwise `None`. Containment is checked against
/// content tokens, not substrings.
pub fn synth_answer(gold: &MrlAst, token: &str, alternative: Option<&str>) -> Option<String> {
    let tokens = mrl::content_tokens(&mrl::linearize(gold));
    let contains = |t: &str| tokens.iter().any(|x| x.text == t);
    if contains(token) {
        Some(format!("yes, {token}"))
    } else {
        alternative
            .filter(|a| contains(a))
            .map(|a| format!("no, I meant {a}"))
    }
}

/// The greedy hypothesis and the best beam-2 hypothesis that differs from it.
pub fn decode_with_alternative<S: Scalar, T: AsRef<str>>(
    model: &Model<S>,
    sources: &[T],
) -> Result<(Hypothesis<S>, Option<Hypothesis<S>>), Seq2SeqError> {
    let greedy = model.decode_greedy(sources)?;
    let alt = model
        .beam_search(sources, 2)?
        .into_iter()
        .find(|h| h.text != greedy.text);
    Ok((greedy, alt))
}

/// Greedy parse plus the clarification built from it and its beam-2 rival.
pub fn clarify_query<S: Scalar, T: AsRef<str>>(
    model: &Model<S>,
    sources: &[T],
) -> Result<(Hypothesis<S>, Clarification), DialogueError> {
    let (greedy, alt) = decode_with_alternative(model, sources)?;
    let mut beams = vec![greedy];
    beams.extend(alt);
    let clarification = uncertainty::clarify(&beams)?;
    Ok((beams.swap_remove(0), clarification))
}

fn dialogue_record<S: Scalar>(
    model: &Model<S>,
    ex: &Example,
) -> Result<DialogueRecord, DialogueError> {
    let (hyp, alt) = decode_with_alternative(model, &[ex.question.as_str()])?;
    let mut beams = vec![hyp];
    beams.extend(alt);
    let clar = uncertainty::clarify(&beams).ok();
    let hyp = beams.swap_remove(0);
    let hypothesis = mrl::parse_mrl(&hyp.text).map(|a| mrl::linearize(&a)).ok();
    let gold = mrl::parse_mrl(&ex.gold).expect("examples hold valid parses");
    let answer = match (&hypothesis, &clar) {
        (Some(_), Some(c)) => synth_answer(&gold, &c.token, c.alternative.as_deref()),
        _ => None,
    };
    let dialogue = match (&clar, answer) {
        (Some(c), Some(a)) => join_dialogue(&c.question, &a),
        (Some(c), None) => join_dialogue(&uncertainty::render_question(&c.token, None)?, ""),
        (None, _) => join_dialogue("", ""),
    };
    Ok(DialogueRecord {
        id: ex.id.clone(),
        question: ex.question.clone(),
        hypothesis: hypothesis.unwrap_or(hyp.text),
        dialogue,
        logged_answer: None,
        target: ex.gold.clone(),
    })
}

/// Decodes every example with the single-source `model` (greedy plus beam
/// 2), builds its clarification and synthesizes the answer from the gold.
///
/// Examples without a synthetic answer keep a record whose dialogue holds the
/// token-only question and an empty answer (see [`DialogueRecord::is_answered`]);
/// their hypothesis may be unparseable. Records stay in input order.
pub fn build_dialogue_corpus<S: Scalar>(
    model: &Model<S>,
    splits: &SplitSet,
) -> Result<SplitSet<DialogueRecord>, DialogueError> {
    let build = |xs: &[Example]| {
        xs.iter()
            .map(|ex| dialogue_record(model, ex))
            .collect::<Result<Vec<_>, _>>()
    };
    let out = SplitSet::new(
        build(&splits.train)?,
        build(&splits.dev)?,
        build(&splits.test)?,
    );
    let answered = |xs: &[DialogueRecord]| xs.iter().filter(|r| r.is_answered()).count();
    log::info!(
        "dialogue records: train {}/{} dev {}/{} test {}/{} answered",
        answered(&out.train),
        out.train.len(),
        answered(&out.dev),
        out.dev.len(),
        answered(&out.test),
        out.test.len()
    );
    Ok(out)
}

/// Spreads token marks onto characters: +0.5 inside correct tokens, -0.5
/// inside incorrect ones, 0 on structural and unmarked characters.
pub fn distribute_rewards(
    hypothesis: &str,
    fb: &MarkingFeedback,
) -> Result<CharReward, DialogueError> {
    let len = hypothesis.chars().count();
    let mut spans: Vec<&TokenMark> = fb.marks.iter().collect();
    for m in &spans {
        if m.start > m.end || m.end > len {
            return Err(DialogueError::SpanOutOfRange {
                start: m.start,
                end: m.end,
                len,
            });
        }
    }
    spans.sort_by_key(|m| (m.start, m.end));
    for w in spans.windows(2) {
        if w[1].start < w[0].end {
            return Err(DialogueError::OverlappingSpans {
                first: (w[0].start, w[0].end),
                second: (w[1].start, w[1].end),
            });
        }
    }
    let mut structural = vec![false; len];
    for tok in mrl::tokenize_mrl(hypothesis) {
        if tok.is_structural {
            structural[tok.span.0..tok.span.1]
                .iter_mut()
                .for_each(|s| *s = true);
        }
    }
    let mut reward = CharReward::zeros(len);
    for m in spans {
        for i in m.start..m.end {
            if !structural[i] {
                reward.0[i] = m.mark.reward();
            }
        }
    }
    Ok(reward)
}

/// A parse shown to an annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub id: String,
    pub question: String,
    pub hypothesis: String,
    /// Key-value rows with their spans in `hypothesis`; empty if it does not parse.
    pub keyvals: Vec<KeyvalRow>,
    pub clarification: Clarification,
    pub max_entropy: f64,
    pub mistake: bool,
}

/// Keeps the examples whose greedy parse is wrong or whose most uncertain
/// token has mean entropy above `tau`.
pub fn filter_annotation_tasks<S: Scalar>(
    model: &Model<S>,
    examples: &[Example],
    tau: f64,
) -> Result<Vec<AnnotationTask>, DialogueError> {
    let mut tasks = Vec::new();
    for ex in examples {
        let sources = [ex.question.as_str()];
        let (hyp, alt) = decode_with_alternative(model, &sources)?;
        let mistake = mrl::canonicalize(&hyp.text) != mrl::canonicalize(&ex.gold);
        let max_entropy = uncertainty::max_token_entropy(&hyp).to_f64_lossy();
        if !mistake && max_entropy <= tau {
            continue;
        }
        let mut beams = vec![hyp];
        beams.extend(alt);
        let clarification = uncertainty::clarify(&beams).unwrap_or_else(|_| Clarification {
            question: String::new(),
            token: String::new(),
            alternative: None,
            span: (0, 0),
        });
        let hypothesis = beams.swap_remove(0).text;
        let keyvals = mrl::keyval_rows(&hypothesis).unwrap_or_default();
        tasks.push(AnnotationTask {
            id: ex.id.clone(),
            question: ex.question.clone(),
            hypothesis,
            keyvals,
            clarification,
            max_entropy,
            mistake,
        });
    }
    Ok(tasks)
}

/// Nearest-rank `q`-quantile of the maximum token entropy over `examples`.
pub fn entropy_threshold<S: Scalar>(
    model: &Model<S>,
    examples: &[Example],
    q: f64,
) -> Result<f64, Seq2SeqError> {
    let mut values = examples
        .iter()
        .map(|ex| {
            model
                .decode_greedy(&[ex.question.as_str()])
                .map(|h| uncertainty::max_token_entropy(&h).to_f64_lossy())
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(quantile(&mut values, q))
}

pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    values.sort_by(f64::total_cmp);
    let rank = (q.clamp(0.0, 1.0) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DialogueError> {
    let path = path.as_ref();
    let io_err = |source| DialogueError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| DialogueError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), DialogueError> {
    let path = path.as_ref();
    let io_err = |source| DialogueError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for item in items {
        let line = serde_json::to_string(item).expect("records serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLD: &str =
        "query(area(keyval('name','Lyon')),nwr(keyval('shop','alcohol')),qtype(latlong))";

    #[test]
    fn synthesized_answers() {
        let pub_gold = mrl::parse_mrl("query(nwr(keyval('amenity','pub')),qtype(count))").unwrap();
        assert_eq!(
            synth_answer(&pub_gold, "pub", Some("bar")).as_deref(),
            Some("yes, pub")
        );
        let gold = mrl::parse_mrl(GOLD).unwrap();
        assert_eq!(
            synth_answer(&gold, "wine", Some("alcohol")).as_deref(),
            Some("no, I meant alcohol")
        );
        assert_eq!(synth_answer(&gold, "wine", Some("bar")), None);
        assert_eq!(synth_answer(&gold, "wine", None), None);
        let winery = mrl::parse_mrl("query(nwr(keyval('craft','winery')),qtype(count))").unwrap();
        assert_eq!(synth_answer(&winery, "wine", None), None);
    }

    fn fb(marks: &[(usize, usize, Mark)]) -> MarkingFeedback {
        MarkingFeedback {
            hypothesis_id: "h".into(),
            marks: marks
                .iter()
                .map(|&(start, end, mark)| TokenMark { start, end, mark })
                .collect(),
            answer: String::new(),
            ts: 0,
        }
    }

    #[test]
    fn rewards_follow_marks() {
        let hyp = "query(nwr(keyval('shop','wine')),qtype(count))";
        let wine = mrl::content_tokens(hyp)
            .into_iter()
            .find(|t| t.text == "wine")
            .unwrap();
        let r =
            distribute_rewards(hyp, &fb(&[(wine.span.0, wine.span.1, Mark::Incorrect)])).unwrap();
        assert_eq!(r.len(), hyp.chars().count());
        assert!(r.0[wine.span.0..wine.span.1].iter().all(|&x| x == -0.5));
        assert_eq!(r.0[wine.span.0 - 1], 0.0);
        assert_eq!(r.0[wine.span.1], 0.0);
        assert_eq!(r.0.iter().filter(|&&x| x != 0.0).count(), 4);

        assert!(distribute_rewards(hyp, &fb(&[]))
            .unwrap()
            .0
            .iter()
            .all(|&x| x == 0.0));

        let all: Vec<_> = mrl::content_tokens(hyp)
            .iter()
            .map(|t| (t.span.0, t.span.1, Mark::Correct))
            .collect();
        let r = distribute_rewards(hyp, &fb(&all)).unwrap();
        let structural: usize = mrl::tokenize_mrl(hyp)
            .iter()
            .filter(|t| t.is_structural)
            .map(|t| t.len())
            .sum();
        assert_eq!(r.0.iter().filter(|&&x| x == 0.0).count(), structural);
    }

    #[test]
    fn reward_errors() {
        let hyp = "query(qtype(count))";
        assert!(matches!(
            distribute_rewards(hyp, &fb(&[(0, 99, Mark::Correct)])),
            Err(DialogueError::SpanOutOfRange { .. })
        ));
        assert!(matches!(
            distribute_rewards(hyp, &fb(&[(0, 5, Mark::Correct), (3, 8, Mark::Incorrect)])),
            Err(DialogueError::OverlappingSpans { .. })
        ));
    }

    #[test]
    fn record_sources_by_arity() {
        let r = DialogueRecord {
            id: "1".into(),
            question: "q".into(),
            hypothesis: "h".into(),
            dialogue: join_dialogue("Did you mean x?", "yes, x"),
            logged_answer: None,
            target: "t".into(),
        };
        assert_eq!(r.sources(1), ["q"]);
        assert_eq!(
            r.sources(4),
            ["q", "h", "Did you mean x?\u{241E}yes, x", ""]
        );
        assert_eq!(r.answer(), "yes, x");
    }

    #[test]
    fn quantiles() {
        let mut v = vec![5.0, 1.0, 3.0, 2.0, 4.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(quantile(&mut v, 0.9), 9.0);
        assert_eq!(quantile(&mut v, 0.0), 1.0);
        assert_eq!(quantile(&mut [], 0.9), f64::INFINITY);
    }
}
