//! CSV ingestion, vocabulary and tokenization.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::CliError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub text: String,
    pub label: usize,
    /// 1-based line in the source file.
    pub line: u64,
}

#[derive(Deserialize)]
struct RawRow {
    text: String,
    label: String,
}

/// Reads a `text,label` CSV. Labels must be integers below `num_classes`.
pub fn load_rows(path: &Path, num_classes: usize) -> Result<Vec<Row>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["text", "label"] {
        return Err(CliError::Data(format!(
            "{}: expected header `text,label`, found `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize::<RawRow>() {
        let raw = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Data(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = rows.len() as u64 + 2;
        let label: usize = raw
            .label
            .trim()
            .parse()
            .map_err(|_| CliError::Data(format!("{}: line {line}: label `{}` is not an integer", path.display(), raw.label)))?;
        if label >= num_classes {
            return Err(CliError::Data(format!(
                "{}: line {line}: label {label} outside 0..{num_classes}",
                path.display()
            )));
        }
        rows.push(Row {
            text: raw.text,
            label,
            line,
        });
    }
    Ok(rows)
}

pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Token to id map; ids 0 and 1 are reserved for padding and unknown words.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps words seen at least `min_count` times, most frequent first, ties alphabetical.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = ["<pad>", "<unk>"]
            .into_iter()
            .map(String::from)
            .chain(kept.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, in id order.
    pub fn to_text(&self) -> String {
        self.tokens.join("\n")
    }

    pub fn from_text(text: &str) -> Self {
        Self::from_tokens(text.split('\n').map(String::from).collect())
    }
}

/// Lowercases, splits on whitespace and maps to ids with unknown-word fallback.
/// Long inputs are cut to `max_len` when `truncate` is set and rejected otherwise.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize, truncate: bool) -> Result<Vec<usize>, CliError> {
    let mut ids: Vec<usize> = words(text).map(|w| vocab.get(&w).unwrap_or(UNK)).collect();
    if ids.len() > max_len {
        if !truncate {
            return Err(CliError::Data(format!(
                "text has {} tokens, more than max_seq_len {max_len}",
                ids.len()
            )));
        }
        ids.truncate(max_len);
    }
    Ok(ids)
}
