//! Report sentence splitting, lexicon-based word-category tagging, phrase
//! filtering, and word-embedding lookup for phrases and label texts.
//!
//! The tagger buckets words into anatomy (A), anatomy-modifier (AM),
//! observation (O) and observation-modifier (OM); only A and AM contribute
//! to embeddings. A pre-tagged input path accepts the output of an external
//! NER model instead of the lexicon.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabelNode;

#[derive(Debug, Error)]
pub enum LanguageError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed embedding header: {0}")]
    MalformedHeader(String),
    #[error("embedding row for {token:?} does not hold {dim} decimals")]
    DimensionMismatch { token: String, dim: usize },
    #[error("duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("header declares {declared} tokens but file holds {actual}")]
    CountMismatch { declared: usize, actual: usize },
    #[error("malformed lexicon line {line}: {detail}")]
    MalformedLexicon { line: usize, detail: String },
    #[error("malformed JSON in {path}: {detail}")]
    MalformedJson { path: PathBuf, detail: String },
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

impl LanguageError {
    pub fn code(&self) -> &'static str {
        match self {
            LanguageError::MissingFile(_) => "language.MissingFile",
            LanguageError::MalformedHeader(_) => "language.MalformedHeader",
            LanguageError::DimensionMismatch { .. } => "language.DimensionMismatch",
            LanguageError::DuplicateToken(_) => "language.DuplicateToken",
            LanguageError::CountMismatch { .. } => "language.CountMismatch",
            LanguageError::MalformedLexicon { .. } => "language.MalformedLexicon",
            LanguageError::MalformedJson { .. } => "language.MalformedJson",
            LanguageError::IoFailure(_) => "language.IoFailure",
        }
    }
}

/// Word category of the tagging scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    A,
    AM,
    O,
    OM,
}

/// A report with its findings section.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub findings: String,
}

/// One phrase with its tokens bucketed by category. Untagged tokens appear
/// in `tokens` but in no group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedPhrase {
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub w_a: Vec<String>,
    pub w_am: Vec<String>,
    pub w_o: Vec<String>,
    pub w_om: Vec<String>,
    pub is_anomaly: bool,
    /// External classifier verdict (problem/treatment); `None` when the
    /// phrase was tagged by the lexicon.
    pub problem_verdict: Option<bool>,
}

impl TaggedPhrase {
    pub fn group(&self, cat: Category) -> &[String] {
        match cat {
            Category::A => &self.w_a,
            Category::AM => &self.w_am,
            Category::O => &self.w_o,
            Category::OM => &self.w_om,
        }
    }
}

/// Surface-form lookup table; forms span one to three lowercase tokens.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, Category>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, cat: Category) {
        self.entries.insert(surface.to_lowercase(), cat);
    }

    pub fn lookup(&self, surface: &str) -> Option<Category> {
        self.entries.get(surface).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by surface form.
    pub fn iter_sorted(&self) -> Vec<(&str, Category)> {
        let mut v: Vec<_> = self.entries.iter().map(|(s, &c)| (s.as_str(), c)).collect();
        v.sort();
        v
    }
}

/// Load a TSV lexicon: `<surface form>\t<A|AM|O|OM>` per line.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon, LanguageError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(LanguageError::MissingFile(path.to_path_buf()));
    }
    let text = String::from_utf8(fs::read(path)?).map_err(|_| LanguageError::MalformedLexicon {
        line: 0,
        detail: "not valid UTF-8".into(),
    })?;
    let mut lex = Lexicon::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (surface, cat) =
            line.split_once('\t')
                .ok_or_else(|| LanguageError::MalformedLexicon {
                    line: i + 1,
                    detail: "missing tab separator".into(),
                })?;
        let words = surface.split_whitespace().count();
        if !(1..=3).contains(&words) {
            return Err(LanguageError::MalformedLexicon {
                line: i + 1,
                detail: format!("surface form must span 1..3 tokens, got {words}"),
            });
        }
        let cat = match cat.trim() {
            "A" => Category::A,
            "AM" => Category::AM,
            "O" => Category::O,
            "OM" => Category::OM,
            other => {
                return Err(LanguageError::MalformedLexicon {
                    line: i + 1,
                    detail: format!("unknown category {other:?}"),
                })
            }
        };
        let surface = surface.trim().to_lowercase();
        if lex.lookup(&surface).is_some() {
            return Err(LanguageError::MalformedLexicon {
                line: i + 1,
                detail: format!("duplicate surface form {surface:?}"),
            });
        }
        lex.insert(&surface, cat);
    }
    Ok(lex)
}

pub fn save_lexicon(lex: &Lexicon, path: impl AsRef<Path>) -> Result<(), LanguageError> {
    let mut out = String::new();
    for (surface, cat) in lex.iter_sorted() {
        let cat = match cat {
            Category::A => "A",
            Category::AM => "AM",
            Category::O => "O",
            Category::OM => "OM",
        };
        out.push_str(surface);
        out.push('\t');
        out.push_str(cat);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Split a findings text into phrase fragments on `.`, `?`, `!`, `;`, and on
/// newlines followed by whitespace or end of text. Fragments are trimmed and
/// empties dropped.
pub fn split_sentences(report: &Report) -> Vec<String> {
    let chars: Vec<char> = report.findings.chars().collect();
    let mut out = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let boundary = matches!(c, '.' | '?' | '!' | ';')
            || (c == '\n' && chars.get(i + 1).is_none_or(|n| n.is_whitespace()));
        if boundary {
            let fragment = current.trim();
            if !fragment.is_empty() {
                out.push(fragment.to_string());
            }
            current.clear();
        } else {
            current.push(c);
        }
    }
    let fragment = current.trim();
    if !fragment.is_empty() {
        out.push(fragment.to_string());
    }
    out
}

/// Lowercase alphanumeric tokens of a text.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn push_unique(group: &mut Vec<String>, token: &str) {
    if !group.iter().any(|t| t == token) {
        group.push(token.to_string());
    }
}

fn in_any_group(phrase: &TaggedPhrase, token: &str) -> bool {
    [&phrase.w_a, &phrase.w_am, &phrase.w_o, &phrase.w_om]
        .iter()
        .any(|g| g.iter().any(|t| t == token))
}

/// Tag a phrase with greedy longest-match lexicon lookup (three-token forms
/// first). Matched tokens enter their category group; unmatched tokens stay
/// out of all groups.
pub fn tag_phrase(text: &str, lex: &Lexicon) -> TaggedPhrase {
    let tokens = tokenize(text);
    let mut phrase = TaggedPhrase {
        raw_text: text.to_string(),
        tokens: tokens.clone(),
        w_a: Vec::new(),
        w_am: Vec::new(),
        w_o: Vec::new(),
        w_om: Vec::new(),
        is_anomaly: false,
        problem_verdict: None,
    };
    let mut i = 0;
    while i < tokens.len() {
        let mut matched = false;
        for span in (1..=3usize.min(tokens.len() - i)).rev() {
            let surface = tokens[i..i + span].join(" ");
            if let Some(cat) = lex.lookup(&surface) {
                // a token type belongs to at most one group; the first
                // assignment wins
                let matched_tokens: Vec<String> = tokens[i..i + span]
                    .iter()
                    .filter(|t| !in_any_group(&phrase, t))
                    .cloned()
                    .collect();
                let group = match cat {
                    Category::A => &mut phrase.w_a,
                    Category::AM => &mut phrase.w_am,
                    Category::O => &mut phrase.w_o,
                    Category::OM => &mut phrase.w_om,
                };
                for t in &matched_tokens {
                    push_unique(group, t);
                }
                i += span;
                matched = true;
                break;
            }
        }
        if !matched {
            i += 1;
        }
    }
    phrase.is_anomaly = !phrase.w_o.is_empty();
    phrase
}

/// Keep medically relevant phrases: the external problem/treatment verdict
/// when present, otherwise a non-empty observation group; an anomaly flag
/// keeps the phrase either way.
pub fn filter_phrases(phrases: Vec<TaggedPhrase>) -> Vec<TaggedPhrase> {
    phrases
        .into_iter()
        .filter(|p| p.problem_verdict.unwrap_or(!p.w_o.is_empty()) || p.is_anomaly)
        .collect()
}

/// Token to d-dimensional vector store.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dim);
        self.entries.insert(token.into(), vector);
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(t, v)| (t.as_str(), v.as_slice()))
    }
}

/// Load the text embedding format: a `<count> <dim>` header line, then one
/// `token v1 .. vd` line per token.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, LanguageError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(LanguageError::MissingFile(path.to_path_buf()));
    }
    let text = String::from_utf8(fs::read(path)?)
        .map_err(|_| LanguageError::MalformedHeader("not valid UTF-8".into()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| LanguageError::MalformedHeader("empty file".into()))?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| LanguageError::MalformedHeader(header.to_string()))?;
    let dim: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| LanguageError::MalformedHeader(header.to_string()))?;
    if parts.next().is_some() || dim == 0 {
        return Err(LanguageError::MalformedHeader(header.to_string()));
    }
    let mut table = EmbeddingTable::new(dim);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line");
        let values: Option<Vec<f64>> = parts
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let values =
            values
                .filter(|v| v.len() == dim)
                .ok_or_else(|| LanguageError::DimensionMismatch {
                    token: token.to_string(),
                    dim,
                })?;
        if table.get(token).is_some() {
            return Err(LanguageError::DuplicateToken(token.to_string()));
        }
        table.insert(token, values);
    }
    if table.len() != count {
        return Err(LanguageError::CountMismatch {
            declared: count,
            actual: table.len(),
        });
    }
    Ok(table)
}

/// Write the text embedding format with round-trippable decimals, tokens
/// sorted.
pub fn save_embeddings(
    table: &EmbeddingTable,
    path: impl AsRef<Path>,
) -> Result<(), LanguageError> {
    let mut out = format!("{} {}\n", table.len(), table.dim());
    for (token, vector) in table.iter() {
        out.push_str(token);
        for v in vector {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn group_mean(tokens: &[String], table: &EmbeddingTable) -> Vec<f64> {
    let mut sum = vec![0.0; table.dim()];
    let mut n = 0usize;
    for token in tokens {
        if let Some(vector) = table.get(token) {
            for (s, v) in sum.iter_mut().zip(vector) {
                *s += v;
            }
            n += 1;
        }
    }
    if n > 0 {
        sum.iter_mut().for_each(|s| *s /= n as f64);
    }
    sum
}

/// Phrase embedding: mean of in-vocabulary anatomy embeddings plus mean of
/// in-vocabulary anatomy-modifier embeddings. A group with no usable token
/// contributes the zero vector; observation groups never contribute.
pub fn embed_phrase(phrase: &TaggedPhrase, table: &EmbeddingTable) -> Vec<f64> {
    let a = group_mean(&phrase.w_a, table);
    let am = group_mean(&phrase.w_am, table);
    a.iter().zip(&am).map(|(x, y)| x + y).collect()
}

/// Embed a label text by tagging its display name and combining the groups
/// exactly as for phrases.
pub fn embed_label_text(node: &LabelNode, lex: &Lexicon, table: &EmbeddingTable) -> Vec<f64> {
    embed_phrase(&tag_phrase(&node.display_name, lex), table)
}

/// True when a phrase embedding carries no anatomy signal.
pub fn is_zero_vector(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Pre-tagged report input: externally tagged tokens plus classifier flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretaggedReport {
    pub id: String,
    pub phrases: Vec<PretaggedPhrase>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretaggedPhrase {
    pub text: String,
    pub tokens: Vec<PretaggedToken>,
    pub is_problem: bool,
    pub is_anomaly: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretaggedToken {
    pub word: String,
    pub cat: Option<Category>,
}

impl PretaggedPhrase {
    pub fn into_tagged(self) -> TaggedPhrase {
        let mut phrase = TaggedPhrase {
            raw_text: self.text,
            tokens: Vec::new(),
            w_a: Vec::new(),
            w_am: Vec::new(),
            w_o: Vec::new(),
            w_om: Vec::new(),
            is_anomaly: self.is_anomaly,
            problem_verdict: Some(self.is_problem),
        };
        for t in self.tokens {
            let word = t.word.to_lowercase();
            if let Some(cat) = t.cat {
                let group = match cat {
                    Category::A => &mut phrase.w_a,
                    Category::AM => &mut phrase.w_am,
                    Category::O => &mut phrase.w_o,
                    Category::OM => &mut phrase.w_om,
                };
                push_unique(group, &word);
            }
            phrase.tokens.push(word);
        }
        phrase
    }
}

/// Load raw reports: a JSON array of `{"id", "findings"}`.
pub fn load_reports(path: impl AsRef<Path>) -> Result<Vec<Report>, LanguageError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(LanguageError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| LanguageError::MalformedJson {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Load pre-tagged reports: a JSON array of [`PretaggedReport`].
pub fn load_pretagged_reports(
    path: impl AsRef<Path>,
) -> Result<Vec<PretaggedReport>, LanguageError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(LanguageError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| LanguageError::MalformedJson {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
