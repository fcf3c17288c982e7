//! Exact match, answer-level precision/recall/F1 and paired approximate
//! randomization.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mrl;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {pred} predictions vs {gold} references")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("approximate randomization needs at least {min} rounds, got {rounds}")]
    TooFewRounds { rounds: usize, min: usize },
}

pub const MIN_ROUNDS: usize = 1000;

fn check_len<A, B>(pred: &[A], gold: &[B]) -> Result<(), MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    Ok(())
}

/// Canonical-form equality, one 0/1 score per pair.
pub fn correctness<P: AsRef<str>, G: AsRef<str>>(
    pred: &[P],
    gold: &[G],
) -> Result<Vec<f64>, MetricsError> {
    check_len(pred, gold)?;
    Ok(pred
        .iter()
        .zip(gold)
        .map(|(p, g)| {
            f64::from(u8::from(
                mrl::canonicalize(p.as_ref()) == mrl::canonicalize(g.as_ref()),
            ))
        })
        .collect())
}

/// Fraction of predictions whose canonical form equals the reference's.
pub fn exact_match<P: AsRef<str>, G: AsRef<str>>(
    pred: &[P],
    gold: &[G],
) -> Result<f64, MetricsError> {
    let scores = correctness(pred, gold)?;
    Ok(if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction in [0, 1].
    pub exact_match: f64,
    /// Percentages in [0, 100].
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub total: usize,
    pub correct: usize,
    pub non_empty: usize,
}

/// Answer-level scores: empty or unparseable predictions count as no answer.
pub fn f1_report<P: AsRef<str>, G: AsRef<str>>(
    pred: &[P],
    gold: &[G],
) -> Result<EvalReport, MetricsError> {
    check_len(pred, gold)?;
    let total = pred.len();
    let mut correct = 0;
    let mut non_empty = 0;
    for (p, g) in pred.iter().zip(gold) {
        let p = p.as_ref();
        if p.trim().is_empty() || mrl::parse_mrl(p).is_err() {
            continue;
        }
        non_empty += 1;
        if mrl::canonicalize(p) == mrl::canonicalize(g.as_ref()) {
            correct += 1;
        }
    }
    let pct = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    let (precision, recall) = (pct(correct, non_empty), pct(correct, total));
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let exact_match = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };
    Ok(EvalReport {
        exact_match,
        precision,
        recall,
        f1,
        total,
        correct,
        non_empty,
    })
}

impl EvalReport {
    /// Aligned `System / Accuracy / F1` table.
    pub fn table(rows: &[(&str, &EvalReport)]) -> String {
        let width = rows
            .iter()
            .map(|(n, _)| n.len())
            .chain([6])
            .max()
            .unwrap_or(6);
        let mut out = format!("{:<width$}  {:>8}  {:>6}\n", "System", "Accuracy", "F1");
        for (name, r) in rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.2}  {:>6.2}",
                name,
                100.0 * r.exact_match,
                r.f1
            );
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "accuracy {:.2}  precision {:.2}  recall {:.2}  F1 {:.2}  ({} / {} correct, {} answered)",
            100.0 * self.exact_match,
            self.precision,
            self.recall,
            self.f1,
            self.correct,
            self.total,
            self.non_empty
        )
    }
}

/// Mean of a score vector; the usual statistic for 0/1 correctness.
pub fn mean(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Two-sided paired approximate randomization test.
///
/// Each round swaps every pair with probability 1/2 and recomputes
/// `metric(A') - metric(B')`; `p = (#{|Δ_perm| >= |Δ_obs|} + 1) / (R + 1)`.
/// Round `r` draws from its own ChaCha8 stream, so results do not depend on
/// evaluation order.
pub fn approx_randomization(
    a: &[f64],
    b: &[f64],
    metric: impl Fn(&[f64]) -> f64,
    rounds: usize,
    seed: u64,
) -> Result<f64, MetricsError> {
    check_len(a, b)?;
    if rounds < MIN_ROUNDS {
        return Err(MetricsError::TooFewRounds {
            rounds,
            min: MIN_ROUNDS,
        });
    }
    let observed = (metric(a) - metric(b)).abs();
    let tolerance = 1e-12 * observed.max(1.0);
    let mut pa = a.to_vec();
    let mut pb = b.to_vec();
    let mut hits = 0usize;
    for r in 0..rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        for i in 0..a.len() {
            let (x, y) = if rng.gen::<bool>() {
                (b[i], a[i])
            } else {
                (a[i], b[i])
            };
            pa[i] = x;
            pb[i] = y;
        }
        if (metric(&pa) - metric(&pb)).abs() >= observed - tolerance {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (rounds + 1) as f64)
}

/// One line of a system-output file used for significance testing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub prediction: String,
    pub gold: String,
}

impl RunRecord {
    pub fn is_correct(&self) -> bool {
        mrl::canonicalize(&self.prediction) == mrl::canonicalize(&self.gold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q: &str = "query(nwr(keyval('amenity','pub')),qtype(count))";
    const R: &str = "query(nwr(keyval('amenity','bar')),qtype(count))";

    #[test]
    fn exact_match_cases() {
        assert_eq!(exact_match(&[Q, R], &[Q, R]).unwrap(), 1.0);
        assert_eq!(exact_match(&[Q, R, R, R], &[Q, Q, Q, Q]).unwrap(), 0.25);
        assert_eq!(
            exact_match(
                &["query( nwr(keyval('amenity','pub')), qtype(count))"],
                &[Q]
            )
            .unwrap(),
            1.0
        );
        assert_eq!(
            exact_match(&[Q], &[Q, Q]),
            Err(MetricsError::LengthMismatch { pred: 1, gold: 2 })
        );
    }

    #[test]
    fn hand_computed_f1() {
        let pred = [Q, Q, Q, R, ""];
        let gold = [Q, Q, Q, Q, Q];
        let r = f1_report(&pred, &gold).unwrap();
        assert!((r.recall - 60.0).abs() < 0.01);
        assert!((r.precision - 75.0).abs() < 0.01);
        assert!((r.f1 - 66.67).abs() < 0.01);
        assert_eq!((r.total, r.correct, r.non_empty), (5, 3, 4));
    }

    #[test]
    fn degenerate_f1() {
        let all = f1_report(&[Q, R], &[Q, R]).unwrap();
        assert_eq!((all.precision, all.recall, all.f1), (100.0, 100.0, 100.0));
        let none = f1_report(&["", "query(("], &[Q, R]).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn table_has_columns() {
        let r = f1_report(&[Q], &[Q]).unwrap();
        let t = EvalReport::table(&[("baseline", &r), ("+hyps+dia", &r)]);
        assert!(t.starts_with("System"));
        assert!(t.contains("+hyps+dia    100.00  100.00"), "{t}");
    }

    #[test]
    fn randomization_identical_runs() {
        let a = [1.0, 0.0, 1.0, 1.0];
        assert_eq!(approx_randomization(&a, &a, mean, 10_000, 1).unwrap(), 1.0);
        assert!(matches!(
            approx_randomization(&a, &a, mean, 10, 1),
            Err(MetricsError::TooFewRounds { .. })
        ));
    }
}
