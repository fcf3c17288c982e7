use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::mrl;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Granularity of input and output symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[default]
    Char,
    Token,
}

impl Unit {
    /// Splits a natural-language (or auxiliary) source string.
    pub fn split_source(self, text: &str) -> Vec<String> {
        match self {
            Unit::Char => text.chars().map(String::from).collect(),
            Unit::Token => text.split_whitespace().map(str::to_string).collect(),
        }
    }

    /// Splits an MRL target string; concatenating the pieces gives `text` back.
    pub fn split_target(self, text: &str) -> Vec<String> {
        match self {
            Unit::Char => text.chars().map(String::from).collect(),
            Unit::Token => mrl::tokenize_mrl(text)
                .into_iter()
                .map(|t| t.text)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(symbols: Vec<String>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab { symbols, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}

impl Vocab {
    /// Specials followed by the sorted set of observed pieces.
    pub fn build<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = pieces
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| !SPECIALS.contains(&s.as_str()))
            .collect();
        let symbols = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(set)
            .collect::<Vec<_>>();
        Vocab::from(symbols)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, piece: &str) -> usize {
        self.index.get(piece).copied().unwrap_or(UNK)
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    /// Text for an emitted symbol; specials render as empty strings.
    pub fn surface(&self, id: usize) -> &str {
        if id < SPECIALS.len() {
            ""
        } else {
            &self.symbols[id]
        }
    }

    pub fn has_specials(&self) -> bool {
        SPECIALS
            .iter()
            .enumerate()
            .all(|(i, s)| self.symbols.get(i).map(String::as_str) == Some(*s))
    }

    /// Source ids; an empty source becomes a single PAD.
    pub fn encode_source(&self, unit: Unit, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = unit.split_source(text).iter().map(|p| self.id(p)).collect();
        if ids.is_empty() {
            vec![PAD]
        } else {
            ids
        }
    }

    /// Target ids followed by EOS.
    pub fn encode_target(&self, unit: Unit, text: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = unit.split_target(text).iter().map(|p| self.id(p)).collect();
        ids.push(EOS);
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_first() {
        let v = Vocab::build(["b", "a", "a"]);
        assert!(v.has_specials());
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("zz"), UNK);
        assert_eq!(v.encode_source(Unit::Char, ""), vec![PAD]);
        assert_eq!(v.encode_target(Unit::Char, "ab"), vec![4, 5, EOS]);
    }

    #[test]
    fn token_targets_concatenate() {
        let s = "query(area(keyval('name','Frankfurt am Main')),qtype(latlong))";
        assert_eq!(Unit::Token.split_target(s).concat(), s);
    }
}
