//! Question/parse corpora: TSV IO, de-duplication against train, split counts.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mrl::{self, MrlError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: expected 2 tab-separated columns, found {columns}")]
    MalformedLine { line: usize, columns: usize },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: MrlError },
}

/// An aligned natural-language question and its gold parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub question: String,
    /// Canonical linearized MRL.
    pub gold: String,
}

impl Example {
    /// Builds an example, canonicalizing and validating the parse.
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        gold: &str,
    ) -> Result<Self, MrlError> {
        let ast = mrl::parse_mrl(gold)?;
        Ok(Example {
            id: id.into(),
            question: question.into(),
            gold: mrl::linearize(&ast),
        })
    }

    /// Masked (question, parse) pair used for duplicate detection.
    pub fn signature(&self) -> (String, String) {
        match mrl::parse_mrl(&self.gold) {
            Ok(ast) => {
                let (q, a) = mrl::mask_pair(&self.question, &ast);
                (q, mrl::linearize(&a))
            }
            Err(_) => (self.question.to_lowercase(), self.gold.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet<T = Example> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Default for SplitSet<T> {
    fn default() -> Self {
        SplitSet {
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        }
    }
}

impl<T> SplitSet<T> {
    pub fn new(train: Vec<T>, dev: Vec<T>, test: Vec<T>) -> Self {
        SplitSet { train, dev, test }
    }

    pub fn stats(&self) -> SplitStats {
        SplitStats {
            train: self.train.len(),
            dev: self.dev.len(),
            test: self.test.len(),
        }
    }
}

pub fn load_tsv(path: impl AsRef<Path>) -> Result<Vec<Example>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ex");
    parse_tsv(&text, stem)
}

/// Parses TSV content; ids are `{prefix}-{line}` with 1-based line numbers.
pub fn parse_tsv(text: &str, prefix: &str) -> Result<Vec<Example>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(CorpusError::MalformedLine {
                line: i + 1,
                columns: cols.len(),
            });
        }
        let ex =
            Example::new(format!("{prefix}-{}", i + 1), cols[0], cols[1]).map_err(|source| {
                CorpusError::Parse {
                    line: i + 1,
                    source,
                }
            })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_tsv(path: impl AsRef<Path>, examples: &[Example]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for ex in examples {
        writeln!(file, "{}\t{}", ex.question, ex.gold).map_err(io_err)?;
    }
    file.flush().map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DedupReport {
    pub removed_dev: usize,
    pub removed_test: usize,
}

/// Drops dev/test examples whose masked signature occurs in train.
pub fn dedup(splits: &SplitSet) -> (SplitSet, DedupReport) {
    let seen: HashSet<(String, String)> = splits.train.iter().map(Example::signature).collect();
    let keep = |xs: &[Example]| -> Vec<Example> {
        xs.iter()
            .filter(|e| !seen.contains(&e.signature()))
            .cloned()
            .collect()
    };
    let dev = keep(&splits.dev);
    let test = keep(&splits.test);
    let report = DedupReport {
        removed_dev: splits.dev.len() - dev.len(),
        removed_test: splits.test.len() - test.len(),
    };
    (
        SplitSet {
            train: splits.train.clone(),
            dev,
            test,
        },
        report,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

pub fn split_stats<T>(splits: &SplitSet<T>) -> SplitStats {
    splits.stats()
}

impl SplitStats {
    pub fn rows(&self) -> [(&'static str, usize); 3] {
        [
            ("Train", self.train),
            ("Dev", self.dev),
            ("Test", self.test),
        ]
    }

    /// One JSON object per split.
    pub fn to_json_lines(&self) -> String {
        self.rows()
            .iter()
            .map(|(split, count)| {
                serde_json::json!({ "split": split, "count": count }).to_string() + "\n"
            })
            .collect()
    }
}

impl fmt::Display for SplitStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:>8}", "Split", "Count")?;
        for (split, count) in self.rows() {
            writeln!(f, "{split:<6} {count:>8}")?;
        }
        Ok(())
    }
}
