//! The NLMaps machine-readable language (MRL).
//!
//! MRL is a bracketed functional notation, for example
//! `query(area(keyval('name','Bradford')),nwr(keyval('amenity','pub')),qtype(latlong))`.
//! This module parses it into an [`MrlAst`], writes the canonical linearized
//! form back out, splits strings into [`MrlToken`]s (the unit used for
//! uncertainty and markings), and masks location/POI values for
//! de-duplication.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder for masked location names.
pub const LOC_PLACEHOLDER: &str = "<LOC>";
/// Placeholder for masked POI tag values.
pub const POI_PLACEHOLDER: &str = "<POI>";

const STRUCTURAL: [char; 4] = ['(', ')', ',', '\''];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MrlError {
    #[error("empty MRL input")]
    EmptyInput,
    #[error("unbalanced parentheses")]
    UnbalancedParentheses,
    #[error("unknown node kind `{0}`")]
    UnknownNodeKind(String),
    #[error("keyval must have exactly two literal arguments, found {0}")]
    MalformedKeyval(usize),
    #[error("syntax error at char {position}: {message}")]
    Syntax { position: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Query,
    Area,
    Nwr,
    Keyval,
    Qtype,
    Around,
    Center,
    Search,
    Maxdist,
    Topx,
    Least,
    Findkey,
    Count,
    Latlong,
    /// A keyword declared through [`Grammar::with_keywords`].
    Other(String),
}

impl NodeKind {
    pub const BUILTIN: [NodeKind; 14] = [
        NodeKind::Query,
        NodeKind::Area,
        NodeKind::Nwr,
        NodeKind::Keyval,
        NodeKind::Qtype,
        NodeKind::Around,
        NodeKind::Center,
        NodeKind::Search,
        NodeKind::Maxdist,
        NodeKind::Topx,
        NodeKind::Least,
        NodeKind::Findkey,
        NodeKind::Count,
        NodeKind::Latlong,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            NodeKind::Query => "query",
            NodeKind::Area => "area",
            NodeKind::Nwr => "nwr",
            NodeKind::Keyval => "keyval",
            NodeKind::Qtype => "qtype",
            NodeKind::Around => "around",
            NodeKind::Center => "center",
            NodeKind::Search => "search",
            NodeKind::Maxdist => "maxdist",
            NodeKind::Topx => "topx",
            NodeKind::Least => "least",
            NodeKind::Findkey => "findkey",
            NodeKind::Count => "count",
            NodeKind::Latlong => "latlong",
            NodeKind::Other(s) => s,
        }
    }

    fn builtin(name: &str) -> Option<NodeKind> {
        NodeKind::BUILTIN
            .iter()
            .find(|k| k.as_str() == name)
            .cloned()
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A literal argument: quoted (`'Paris'`) or bare (`DIST_INTOWN`, `1`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub text: String,
    pub quoted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MrlAst {
    Node {
        kind: NodeKind,
        children: Vec<MrlAst>,
    },
    Literal(Literal),
}

impl MrlAst {
    pub fn node(kind: NodeKind, children: Vec<MrlAst>) -> Self {
        MrlAst::Node { kind, children }
    }

    pub fn leaf(kind: NodeKind) -> Self {
        MrlAst::Node {
            kind,
            children: Vec::new(),
        }
    }

    pub fn quoted(text: impl Into<String>) -> Self {
        MrlAst::Literal(Literal {
            text: text.into(),
            quoted: true,
        })
    }

    pub fn bare(text: impl Into<String>) -> Self {
        MrlAst::Literal(Literal {
            text: text.into(),
            quoted: false,
        })
    }

    pub fn keyval(key: impl Into<String>, value: impl Into<String>) -> Self {
        MrlAst::node(
            NodeKind::Keyval,
            vec![MrlAst::quoted(key), MrlAst::quoted(value)],
        )
    }

    pub fn kind(&self) -> Option<&NodeKind> {
        match self {
            MrlAst::Node { kind, .. } => Some(kind),
            MrlAst::Literal(_) => None,
        }
    }

    pub fn children(&self) -> &[MrlAst] {
        match self {
            MrlAst::Node { children, .. } => children,
            MrlAst::Literal(_) => &[],
        }
    }

    /// Number of `keyval` nodes anywhere in the tree.
    pub fn keyval_count(&self) -> usize {
        let own = usize::from(self.kind() == Some(&NodeKind::Keyval));
        own + self
            .children()
            .iter()
            .map(MrlAst::keyval_count)
            .sum::<usize>()
    }
}

impl fmt::Display for MrlAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&linearize(self))
    }
}

/// The set of node keywords the parser accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
#[derive(Default)]
pub struct Grammar {
    extra: BTreeSet<String>,
}


impl Grammar {
    /// Builtin keywords plus `keywords`; duplicates of builtins are ignored.
    pub fn with_keywords<I, S>(keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let extra = keywords
            .into_iter()
            .map(Into::into)
            .filter(|k: &String| !k.is_empty() && NodeKind::builtin(k).is_none())
            .collect();
        Grammar { extra }
    }

    fn lookup(&self, name: &str) -> Option<NodeKind> {
        NodeKind::builtin(name).or_else(|| self.extra.get(name).map(|s| NodeKind::Other(s.clone())))
    }

    pub fn parse(&self, text: &str) -> Result<MrlAst, MrlError> {
        if text.trim().is_empty() {
            return Err(MrlError::EmptyInput);
        }
        check_balance(text)?;
        let chars: Vec<char> = text.chars().collect();
        let mut parser = Parser {
            chars: &chars,
            pos: 0,
            grammar: self,
        };
        let root = parser.parse_arg()?;
        parser.skip_ws();
        if parser.pos != chars.len() {
            return Err(parser.error("trailing input after query"));
        }
        if root.kind() != Some(&NodeKind::Query) {
            return Err(MrlError::Syntax {
                position: 0,
                message: "root node must be `query`".into(),
            });
        }
        Ok(root)
    }
}

/// Parses with the builtin grammar.
pub fn parse_mrl(text: &str) -> Result<MrlAst, MrlError> {
    Grammar::default().parse(text)
}

fn check_balance(text: &str) -> Result<(), MrlError> {
    let mut depth: i64 = 0;
    let mut in_quote = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_quote {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '\'' => in_quote = false,
                _ => {}
            }
            continue;
        }
        match c {
            '\'' => in_quote = true,
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(MrlError::UnbalancedParentheses);
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(MrlError::UnbalancedParentheses);
    }
    if in_quote {
        return Err(MrlError::Syntax {
            position: text.chars().count(),
            message: "unterminated quote".into(),
        });
    }
    Ok(())
}

struct Parser<'a> {
    chars: &'a [char],
    pos: usize,
    grammar: &'a Grammar,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> MrlError {
        MrlError::Syntax {
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn parse_arg(&mut self) -> Result<MrlAst, MrlError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some('\'') => self.parse_quoted(),
            Some(c) if STRUCTURAL.contains(&c) => Err(self.error(&format!("unexpected `{c}`"))),
            Some(_) => self.parse_word(),
        }
    }

    fn parse_quoted(&mut self) -> Result<MrlAst, MrlError> {
        self.pos += 1;
        let mut text = String::new();
        loop {
            match self.peek() {
                None => return Err(self.error("unterminated quote")),
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some(c) => text.push(c),
                        None => return Err(self.error("unterminated quote")),
                    }
                    self.pos += 1;
                }
                Some('\'') => {
                    self.pos += 1;
                    return Ok(MrlAst::quoted(text));
                }
                Some(c) => {
                    text.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    fn parse_word(&mut self) -> Result<MrlAst, MrlError> {
        // Bare words may be split by whitespace in wrapped input (`DIST_\nINTOWN`).
        let mut word = String::new();
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    let save = self.pos;
                    self.skip_ws();
                    match self.peek() {
                        Some(n) if !STRUCTURAL.contains(&n) => {}
                        _ => {
                            self.pos = save;
                            break;
                        }
                    }
                }
                Some(c) if !STRUCTURAL.contains(&c) => {
                    word.push(c);
                    self.pos += 1;
                }
                _ => break,
            }
        }
        let mut lookahead = self.pos;
        while self.chars.get(lookahead).is_some_and(|c| c.is_whitespace()) {
            lookahead += 1;
        }
        if self.chars.get(lookahead) == Some(&'(') {
            let kind = self
                .grammar
                .lookup(&word)
                .ok_or_else(|| MrlError::UnknownNodeKind(word.clone()))?;
            self.pos = lookahead + 1;
            let mut children = vec![self.parse_arg()?];
            loop {
                self.skip_ws();
                match self.peek() {
                    Some(',') => {
                        self.pos += 1;
                        children.push(self.parse_arg()?);
                    }
                    Some(')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.error("expected `,` or `)`")),
                }
            }
            if kind == NodeKind::Keyval {
                let literals = children
                    .iter()
                    .filter(|c| matches!(c, MrlAst::Literal(_)))
                    .count();
                if children.len() != 2 || literals != 2 {
                    return Err(MrlError::MalformedKeyval(children.len()));
                }
            }
            return Ok(MrlAst::node(kind, children));
        }
        match self.grammar.lookup(&word) {
            Some(NodeKind::Keyval) => Err(MrlError::MalformedKeyval(0)),
            Some(kind) => Ok(MrlAst::leaf(kind)),
            None => Ok(MrlAst::bare(word)),
        }
    }
}

/// Canonical string form of a tree.
pub fn linearize(ast: &MrlAst) -> String {
    let mut out = String::new();
    write_ast(ast, &mut out);
    out
}

fn write_ast(ast: &MrlAst, out: &mut String) {
    match ast {
        MrlAst::Literal(Literal { text, quoted: true }) => {
            out.push('\'');
            for c in text.chars() {
                if c == '\'' || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('\'');
        }
        MrlAst::Literal(Literal {
            text,
            quoted: false,
        }) => out.push_str(text),
        MrlAst::Node { kind, children } => {
            out.push_str(kind.as_str());
            if !children.is_empty() {
                out.push('(');
                for (i, child) in children.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write_ast(child, out);
                }
                out.push(')');
            }
        }
    }
}

/// Removes all whitespace outside quoted literals.
pub fn canonicalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_quote = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_quote {
            out.push(c);
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '\'' => in_quote = false,
                _ => {}
            }
        } else if !c.is_whitespace() {
            if c == '\'' {
                in_quote = true;
            }
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MrlToken {
    pub text: String,
    /// Half-open character (not byte) offsets.
    pub span: (usize, usize),
    /// Parentheses, commas, quotes and whitespace runs.
    pub is_structural: bool,
}

impl MrlToken {
    pub fn is_content(&self) -> bool {
        !self.is_structural
    }

    pub fn len(&self) -> usize {
        self.span.1 - self.span.0
    }

    pub fn is_empty(&self) -> bool {
        self.span.0 == self.span.1
    }
}

/// Splits any string (well-formed or not) into tokens covering it exactly.
pub fn tokenize_mrl(text: &str) -> Vec<MrlToken> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let push = |tokens: &mut Vec<MrlToken>, start: usize, end: usize, structural: bool| {
        tokens.push(MrlToken {
            text: chars[start..end].iter().collect(),
            span: (start, end),
            is_structural: structural,
        });
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '\'' {
            push(&mut tokens, i, i + 1, true);
            i += 1;
            let start = i;
            let mut escaped = false;
            while i < chars.len() {
                match chars[i] {
                    _ if escaped => escaped = false,
                    '\\' => escaped = true,
                    '\'' => break,
                    _ => {}
                }
                i += 1;
            }
            if i > start {
                push(&mut tokens, start, i, false);
            }
            if i < chars.len() {
                push(&mut tokens, i, i + 1, true);
                i += 1;
            }
        } else if STRUCTURAL.contains(&c) {
            push(&mut tokens, i, i + 1, true);
            i += 1;
        } else {
            let ws = c.is_whitespace();
            let start = i;
            while i < chars.len()
                && !STRUCTURAL.contains(&chars[i])
                && chars[i].is_whitespace() == ws
            {
                i += 1;
            }
            push(&mut tokens, start, i, ws);
        }
    }
    tokens
}

/// Content tokens only, in order.
pub fn content_tokens(text: &str) -> Vec<MrlToken> {
    tokenize_mrl(text)
        .into_iter()
        .filter(MrlToken::is_content)
        .collect()
}

/// In-order `(key, value)` pairs of every `keyval` node.
pub fn extract_keyvals(ast: &MrlAst) -> Vec<(String, String)> {
    let mut out = Vec::new();
    collect_keyvals(ast, &mut out);
    out
}

fn collect_keyvals(ast: &MrlAst, out: &mut Vec<(String, String)>) {
    if let MrlAst::Node { kind, children } = ast {
        if *kind == NodeKind::Keyval {
            if let [MrlAst::Literal(k), MrlAst::Literal(v)] = children.as_slice() {
                out.push((k.text.clone(), v.text.clone()));
            }
            return;
        }
        for child in children {
            collect_keyvals(child, out);
        }
    }
}

/// A key-value pair (unescaped, as in the tree) together with the character
/// spans of its key and value tokens inside a linearized parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyvalRow {
    pub key: String,
    pub value: String,
    pub key_span: (usize, usize),
    pub value_span: (usize, usize),
}

/// Key-value rows of `text`, with spans into `text` itself.
pub fn keyval_rows(text: &str) -> Result<Vec<KeyvalRow>, MrlError> {
    let ast = parse_mrl(text)?;
    let mut items = Vec::new();
    content_items(&ast, &mut items);
    let tokens = content_tokens(text);
    if tokens.len() != items.len() {
        return Err(MrlError::Syntax {
            position: 0,
            message: "token stream does not match parse".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, item) in items.iter().enumerate() {
        if let ContentItem::KeyvalStart(key, value) = item {
            let (k, v) = (&tokens[i + 1], &tokens[i + 2]);
            rows.push(KeyvalRow {
                key: key.clone(),
                value: value.clone(),
                key_span: k.span,
                value_span: v.span,
            });
        }
    }
    Ok(rows)
}

enum ContentItem {
    KeyvalStart(String, String),
    Other,
}

// Mirrors the content tokens of the linearized tree: one per node keyword and
// per non-empty literal.
fn content_items(ast: &MrlAst, out: &mut Vec<ContentItem>) {
    match ast {
        MrlAst::Literal(l) => {
            if !l.text.is_empty() {
                out.push(ContentItem::Other);
            }
        }
        MrlAst::Node { kind, children } => {
            let item = match children.as_slice() {
                [MrlAst::Literal(k), MrlAst::Literal(v)]
                    if *kind == NodeKind::Keyval && !k.text.is_empty() && !v.text.is_empty() =>
                {
                    ContentItem::KeyvalStart(k.text.clone(), v.text.clone())
                }
                _ => ContentItem::Other,
            };
            out.push(item);
            for child in children {
                content_items(child, out);
            }
        }
    }
}

/// Masks location names and POI values in both the question and the parse.
///
/// Name values under `area`/`center` become [`LOC_PLACEHOLDER`]; every
/// other non-name tag value becomes [`POI_PLACEHOLDER`]. The question is
/// lowercased and the surface span matching each masked value is replaced by
/// the same placeholder (exact match first, then a word span sharing a prefix
/// within edit distance 2). Values without a surface match are masked in the
/// tree only.
pub fn mask_pair(question: &str, ast: &MrlAst) -> (String, MrlAst) {
    let mut masked_values = Vec::new();
    let masked_ast = mask_tree(ast, false, &mut masked_values);

    let mut words: Vec<String> = question
        .split_whitespace()
        .map(|w| {
            if is_placeholder(w) {
                w.to_string()
            } else {
                w.to_lowercase()
            }
        })
        .collect();
    for (value, placeholder) in masked_values {
        mask_question_words(&mut words, &value, placeholder);
    }
    (words.join(" "), masked_ast)
}

fn is_placeholder(s: &str) -> bool {
    s.starts_with(LOC_PLACEHOLDER) || s.starts_with(POI_PLACEHOLDER)
}

fn mask_tree(ast: &MrlAst, in_location: bool, values: &mut Vec<(String, &'static str)>) -> MrlAst {
    match ast {
        MrlAst::Literal(_) => ast.clone(),
        MrlAst::Node { kind, children } => {
            if *kind == NodeKind::Keyval {
                if let [MrlAst::Literal(k), MrlAst::Literal(v)] = children.as_slice() {
                    let placeholder = if k.text == "name" {
                        in_location.then_some(LOC_PLACEHOLDER)
                    } else {
                        Some(POI_PLACEHOLDER)
                    };
                    if let Some(p) = placeholder {
                        if v.text != LOC_PLACEHOLDER && v.text != POI_PLACEHOLDER {
                            values.push((v.text.clone(), p));
                        }
                        let value = MrlAst::Literal(Literal {
                            text: p.to_string(),
                            quoted: v.quoted,
                        });
                        return MrlAst::node(kind.clone(), vec![children[0].clone(), value]);
                    }
                }
                return ast.clone();
            }
            let nested = in_location || matches!(kind, NodeKind::Area | NodeKind::Center);
            MrlAst::node(
                kind.clone(),
                children
                    .iter()
                    .map(|c| mask_tree(c, nested, values))
                    .collect(),
            )
        }
    }
}

const TRAILING_PUNCT: &[char] = &['?', '.', '!', ',', ';', ':'];

fn mask_question_words(words: &mut Vec<String>, value: &str, placeholder: &str) {
    let target: Vec<String> = value
        .to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let n = target.len();
    if n == 0 || words.len() < n {
        return;
    }
    let target_str = target.join(" ");
    let window = |words: &[String], i: usize| -> Option<(String, String)> {
        let span = &words[i..i + n];
        if span.iter().any(|w| is_placeholder(w)) {
            return None;
        }
        let joined = span.join(" ");
        let trimmed = joined.trim_end_matches(TRAILING_PUNCT);
        let punct = joined[trimmed.len()..].to_string();
        Some((trimmed.to_string(), punct))
    };
    let starts = 0..=words.len() - n;
    let exact = starts.clone().find_map(|i| {
        window(words, i)
            .filter(|(w, _)| *w == target_str)
            .map(|(_, p)| (i, p))
    });
    let found = exact.or_else(|| {
        starts.into_iter().find_map(|i| {
            window(words, i)
                .filter(|(w, _)| fuzzy_match(w, &target_str))
                .map(|(_, p)| (i, p))
        })
    });
    if let Some((i, punct)) = found {
        words.splice(i..i + n, std::iter::once(format!("{placeholder}{punct}")));
    }
}

fn fuzzy_match(candidate: &str, value: &str) -> bool {
    let need = value.chars().count().min(3);
    let shared = candidate
        .chars()
        .zip(value.chars())
        .take_while(|(a, b)| a == b)
        .count();
    shared >= need && strsim::levenshtein(candidate, value) <= 2
}
