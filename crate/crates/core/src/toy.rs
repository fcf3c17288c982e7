//! Deterministic NLMaps-style toy corpora for tests and desk-scale runs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Example;
use crate::mrl;

/// A surface phrase and the OSM tags it may denote; more than one tag makes
/// the phrase ambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Poi {
    pub phrase: &'static str,
    pub tags: &'static [(&'static str, &'static str)],
}

impl Poi {
    pub fn is_ambiguous(&self) -> bool {
        self.tags.len() > 1
    }
}

pub const UNAMBIGUOUS: &[Poi] = &[
    Poi {
        phrase: "cinemas",
        tags: &[("amenity", "cinema")],
    },
    Poi {
        phrase: "restaurants",
        tags: &[("amenity", "restaurant")],
    },
    Poi {
        phrase: "museums",
        tags: &[("tourism", "museum")],
    },
    Poi {
        phrase: "bakeries",
        tags: &[("shop", "bakery")],
    },
    Poi {
        phrase: "hotels",
        tags: &[("tourism", "hotel")],
    },
    Poi {
        phrase: "pharmacies",
        tags: &[("amenity", "pharmacy")],
    },
    Poi {
        phrase: "parks",
        tags: &[("leisure", "park")],
    },
    Poi {
        phrase: "schools",
        tags: &[("amenity", "school")],
    },
    Poi {
        phrase: "supermarkets",
        tags: &[("shop", "supermarket")],
    },
    Poi {
        phrase: "libraries",
        tags: &[("amenity", "library")],
    },
];

pub const OFF_LICENSE: Poi = Poi {
    phrase: "Off License",
    tags: &[("shop", "wine"), ("shop", "alcohol")],
};
pub const BARS: Poi = Poi {
    phrase: "bars",
    tags: &[("amenity", "bar"), ("amenity", "pub")],
};
pub const RECREATION: Poi = Poi {
    phrase: "recreation grounds",
    tags: &[
        ("leisure", "recreation_ground"),
        ("landuse", "recreation_ground"),
    ],
};

pub const AMBIGUOUS: &[Poi] = &[OFF_LICENSE, BARS, RECREATION];

pub const CITIES: &[&str] = &[
    "Lyon",
    "Paris",
    "Nantes",
    "Bradford",
    "Leeds",
    "Heidelberg",
    "Edinburgh",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Template {
    /// "How many {poi} in {city}"
    Count,
    /// "Where {poi} in {city}"
    Where,
}

pub const TEMPLATES: [Template; 2] = [Template::Count, Template::Where];

impl Template {
    pub fn question(self, poi: &str, city: &str) -> String {
        match self {
            Template::Count => format!("How many {poi} in {city}"),
            Template::Where => format!("Where {poi} in {city}"),
        }
    }

    fn qtype(self) -> &'static str {
        match self {
            Template::Count => "count",
            Template::Where => "latlong",
        }
    }
}

/// The canonical parse for a city, a tag and a question template.
pub fn gold_parse(template: Template, city: &str, tag: (&str, &str)) -> String {
    format!(
        "query(area(keyval('name','{city}')),nwr(keyval('{}','{}')),qtype({}))",
        tag.0,
        tag.1,
        template.qtype()
    )
}

pub fn make_example(
    id: impl Into<String>,
    template: Template,
    poi: &Poi,
    city: &str,
    tag: (&str, &str),
) -> Example {
    let gold = gold_parse(template, city, tag);
    Example::new(id, template.question(poi.phrase, city), &gold)
        .expect("toy parses are well formed")
}

/// `n` distinct unambiguous examples (at most the number of combinations).
pub fn distinct_corpus(n: usize, seed: u64) -> Vec<Example> {
    let mut combos: Vec<(Template, &Poi, &str)> = Vec::new();
    for &t in &TEMPLATES {
        for p in UNAMBIGUOUS {
            for &c in CITIES {
                combos.push((t, p, c));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    combos.shuffle(&mut rng);
    combos
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, (t, p, c))| make_example(format!("toy-{i}"), t, p, c, p.tags[0]))
        .collect()
}

/// `n` examples where a fraction `ambiguous_rate` use an ambiguous phrase
/// whose gold tag is drawn uniformly from its readings.
pub fn ambiguity_corpus(n: usize, ambiguous_rate: f64, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let poi = if rng.gen_bool(ambiguous_rate) {
                AMBIGUOUS.choose(&mut rng)
            } else {
                UNAMBIGUOUS.choose(&mut rng)
            };
            let poi = poi.expect("non-empty");
            let tag = *poi.tags.choose(&mut rng).expect("non-empty");
            let city = CITIES.choose(&mut rng).expect("non-empty");
            let template = *TEMPLATES.choose(&mut rng).expect("non-empty");
            make_example(format!("amb-{i}"), template, poi, city, tag)
        })
        .collect()
}

/// `n` examples over the unambiguous phrases plus `poi` (always read as
/// its first tag); `poi` is used with probability `rate`.
pub fn corpus_with(poi: &Poi, n: usize, rate: f64, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let p = if rng.gen_bool(rate) {
                poi
            } else {
                UNAMBIGUOUS.choose(&mut rng).expect("non-empty")
            };
            let city = CITIES.choose(&mut rng).expect("non-empty");
            let template = *TEMPLATES.choose(&mut rng).expect("non-empty");
            make_example(format!("ex-{i}"), template, p, city, p.tags[0])
        })
        .collect()
}

/// Replaces the tag value `from` by `to` in a fraction `rate` of the golds
/// containing `from`, simulating a systematic annotation error.
pub fn plant_errors(
    examples: &[Example],
    from: &str,
    to: &str,
    rate: f64,
    seed: u64,
) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let needle = format!(",'{from}')");
    examples
        .iter()
        .map(|ex| {
            if ex.gold.contains(&needle) && rng.gen_bool(rate) {
                let gold = ex.gold.replace(&needle, &format!(",'{to}')"));
                Example::new(ex.id.clone(), ex.question.clone(), &gold).expect("valid replacement")
            } else {
                ex.clone()
            }
        })
        .collect()
}

/// Train/dev/test fixture used for the de-duplication walk-through.
pub fn cinema_fixture() -> crate::corpus::SplitSet {
    let gold = |city: &str| gold_parse(Template::Where, city, ("amenity", "cinema"));
    let ex = |id: &str, q: &str, city: &str| Example::new(id, q, &gold(city)).expect("valid");
    crate::corpus::SplitSet::new(
        vec![ex("train-1", "cinema in Nantes", "Nantes")],
        vec![ex("dev-1", "cinema in Paris", "Paris")],
        vec![ex("test-1", "cinemas in Paris", "Paris")],
    )
}

/// At least `n` distinct, varied MRL strings: nested `around` queries,
/// `findkey`, `least`, quoted values with escapes and non-canonical spacing.
pub fn mrl_fixtures(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "Lyon",
        "Paris",
        "Saint-Étienne",
        "King's Lynn",
        "Bad Homburg",
        "Nantes",
        "a\\b",
        "Edinburgh",
    ];
    let pois: Vec<(&str, &str)> = UNAMBIGUOUS
        .iter()
        .chain(AMBIGUOUS)
        .flat_map(|p| p.tags.iter().copied())
        .collect();
    let mut out = BTreeSet::new();
    let mut attempts = 0;
    while out.len() < n && attempts < n * 100 {
        attempts += 1;
        let name = names.choose(&mut rng).expect("non-empty");
        let (k, v) = *pois.choose(&mut rng).expect("non-empty");
        let area = format!(
            "area(keyval('name','{}'))",
            name.replace('\\', "\\\\").replace('\'', "\\'")
        );
        let qtype = match rng.gen_range(0..5) {
            0 => "qtype(count)".to_string(),
            1 => "qtype(latlong)".to_string(),
            2 => "qtype(least(topx(1)))".to_string(),
            3 => format!(
                "qtype(findkey('{}'))",
                ["name", "website", "opening_hours"]
                    .choose(&mut rng)
                    .expect("non-empty")
            ),
            _ => "qtype(latlong,findkey('name'))".to_string(),
        };
        let body = match rng.gen_range(0..3) {
            0 => format!("{area},nwr(keyval('{k}','{v}'))"),
            1 => format!("nwr(keyval('{k}','{v}'))"),
            _ => format!(
                "around(center({area},nwr(keyval('name','{}'))),search(nwr(keyval('{k}','{v}'))),maxdist({}),topx({}))",
                name.replace('\\', "\\\\").replace('\'', "\\'"),
                ["DIST_INTOWN", "DIST_OUTTOWN", "DIST_DAYTRIP", "WALKING_DIST"].choose(&mut rng).expect("non-empty"),
                rng.gen_range(1..4)
            ),
        };
        let canonical = format!("query({body},{qtype})");
        out.insert(respace(&canonical, &mut rng));
    }
    let mut out: Vec<String> = out.into_iter().collect();
    out.shuffle(&mut rng);
    out
}

// Inserts random whitespace around structural characters outside quotes.
fn respace(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    for tok in mrl::tokenize_mrl(text) {
        let structural = tok.is_structural && matches!(tok.text.as_str(), "(" | ")" | ",");
        if structural && rng.gen_bool(0.15) {
            out.push_str([" ", "  ", "\t", "\n "].choose(rng).expect("non-empty"));
        }
        out.push_str(&tok.text);
        if structural && rng.gen_bool(0.15) {
            out.push(' ');
        }
    }
    out
}
