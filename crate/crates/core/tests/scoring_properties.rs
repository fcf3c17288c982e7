use nlmaps_core::dialogue::{self, Mark, MarkingFeedback, TokenMark};
use nlmaps_core::metrics;
use nlmaps_core::mrl;
use nlmaps_core::toy;
use nlmaps_core::uncertainty::{self, TokenUncertainty};
use proptest::prelude::*;

/// Exact two-sided p-value: the fraction of all 2^n swap patterns whose
/// statistic is at least as extreme as the observed one.
fn exhaustive_p(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let observed = (mean(a) - mean(b)).abs();
    let mut hits = 0u64;
    let total = 1u64 << n;
    for mask in 0..total {
        let mut d = 0.0;
        for i in 0..n {
            d += if mask >> i & 1 == 1 {
                b[i] - a[i]
            } else {
                a[i] - b[i]
            };
        }
        if (d / n as f64).abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..40).prop_filter_map("positive mass", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-9).then(|| w.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn entropy_is_bounded(p in distribution()) {
        let h = uncertainty::step_entropy(&p).unwrap();
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn token_mean_is_arithmetic(es in prop::collection::vec(0.0f64..5.0, 1..12)) {
        let tok = mrl::tokenize_mrl("x")[0].clone();
        let u = TokenUncertainty::new(tok, es.clone());
        let mean = es.iter().sum::<f64>() / es.len() as f64;
        prop_assert!((u.mean_entropy - mean).abs() <= 1e-12);
    }

    #[test]
    fn rewards_respect_structure(f in prop::sample::select(toy::mrl_fixtures(200, 5)), picks in prop::collection::vec(any::<bool>(), 1..12)) {
        let hyp = mrl::canonicalize(&f);
        let tokens = mrl::content_tokens(&hyp);
        let marks: Vec<TokenMark> = tokens
            .iter()
            .zip(picks.iter().cycle())
            .map(|(t, &ok)| TokenMark { start: t.span.0, end: t.span.1, mark: if ok { Mark::Correct } else { Mark::Incorrect } })
            .collect();
        let fb = MarkingFeedback { hypothesis_id: "h".into(), marks, answer: String::new(), ts: 0 };
        let r = dialogue::distribute_rewards(&hyp, &fb).unwrap();
        prop_assert_eq!(r.len(), hyp.chars().count());
        prop_assert!(r.0.iter().all(|&x| x == 0.5 || x == -0.5 || x == 0.0));
        for tok in mrl::tokenize_mrl(&hyp) {
            let zero = tok.is_structural;
            for i in tok.span.0..tok.span.1 {
                prop_assert_eq!(r.0[i] == 0.0, zero, "char {} of {}", i, hyp);
            }
        }
    }

    #[test]
    fn f1_is_bounded(outcomes in prop::collection::vec(0u8..3, 1..30)) {
        let gold = "query(nwr(keyval('amenity','pub')),qtype(count))";
        let wrong = "query(nwr(keyval('amenity','bar')),qtype(count))";
        let pred: Vec<&str> = outcomes.iter().map(|o| match o { 0 => gold, 1 => wrong, _ => "" }).collect();
        let golds = vec![gold; pred.len()];
        let r = metrics::f1_report(&pred, &golds).unwrap();
        for v in [r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        prop_assert!(r.recall <= r.precision + 1e-9);
        prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-9 && r.f1 + 1e-9 >= r.precision.min(r.recall));
    }

    #[test]
    fn synth_answer_is_exclusive(i in 0usize..200, token in prop::sample::select(vec!["wine", "alcohol", "pub", "bar", "cinema"]), alt in prop::option::of(prop::sample::select(vec!["wine", "alcohol", "pub", "bar"]))) {
        let ex = &toy::ambiguity_corpus(200, 0.6, 1)[i];
        let gold = mrl::parse_mrl(&ex.gold).unwrap();
        let has = |t: &str| mrl::content_tokens(&ex.gold).iter().any(|x| x.text == t);
        let expected = if has(token) {
            Some(format!("yes, {token}"))
        } else {
            alt.filter(|a| has(a)).map(|a| format!("no, I meant {a}"))
        };
        prop_assert_eq!(dialogue::synth_answer(&gold, token, alt), expected);
    }
}

#[test]
fn randomization_matches_exhaustive_enumeration() {
    let cases: [(&[f64], &[f64]); 4] = [
        (
            &[1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0],
        ),
        (
            &[1.0; 20],
            &[
                0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0,
                1.0, 1.0, 1.0, 1.0,
            ],
        ),
        (&[0.3, 0.9, 0.1, 0.5, 0.7], &[0.2, 0.4, 0.4, 0.1, 0.3]),
        (&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]),
    ];
    for (a, b) in cases {
        let exact = exhaustive_p(a, b);
        let approx = metrics::approx_randomization(a, b, metrics::mean, 100_000, 11).unwrap();
        assert!(
            (approx - exact).abs() <= 0.01,
            "exact {exact} vs approx {approx}"
        );
    }
}
