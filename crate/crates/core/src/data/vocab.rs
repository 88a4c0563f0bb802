use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Word-level vocabulary shared by source and target sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved tokens, in id order.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.iter().map(|t| t.as_ref().to_string()));
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// Whitespace tokenisation; unknown words map to [`UNK`].
    pub fn encode(&self, line: &str) -> Vec<usize> {
        line.split_whitespace()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// Joins tokens with single spaces, skipping PAD/BOS/EOS.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Keeps the `max_size − 4` most frequent whitespace tokens (ties broken
/// lexicographically) after the four reserved ids.
pub fn build_vocab<S: AsRef<str>>(streams: &[&[S]], max_size: usize) -> Result<Vocabulary> {
    if max_size < RESERVED.len() {
        return Err(Error::Config(format!(
            "vocabulary size {max_size} leaves no room for reserved tokens"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (i, stream) in streams.iter().enumerate() {
        let mut seen = 0usize;
        for line in stream.iter() {
            for w in line.as_ref().split_whitespace() {
                if RESERVED.contains(&w) {
                    continue;
                }
                *counts.entry(w).or_default() += 1;
                seen += 1;
            }
        }
        if seen == 0 {
            return Err(Error::EmptyInput(format!("text stream {i} has no tokens")));
        }
    }
    if streams.is_empty() {
        return Err(Error::EmptyInput("no text streams".into()));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED.len());
    let words: Vec<&str> = ranked.into_iter().map(|(w, _)| w).collect();
    Vocabulary::from_tokens(&words)
}
