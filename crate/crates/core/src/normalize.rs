//! Rule-based topic normalization.
//!
//! Pipeline, in order: NFC, lowercase, hyphens to spaces, punctuation to
//! spaces (internal apostrophes kept), whitespace collapse, per-token
//! lemmatization (possessive `'s`, override table, then the first matching
//! suffix rule), and finally a whole-topic synonym lookup.
//!
//! Every configuration is checked so the pipeline is a fixed point on its own
//! output: running it twice gives the same string as running it once.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::extract::TopicMention;

const HYPHENS: &[char] = &['-', '\u{2010}', '\u{2011}', '\u{2012}', '\u{2013}', '\u{2014}', '\u{2212}'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuffixRule {
    pub suffix: String,
    pub replacement: String,
    /// Minimum token length in characters for the rule to fire.
    #[serde(default)]
    pub min_len: usize,
    /// Token endings that block the rule (e.g. `ss` for the plural rule).
    #[serde(default)]
    pub unless_endings: Vec<String>,
}

impl SuffixRule {
    fn new(suffix: &str, replacement: &str, min_len: usize, unless: &[&str]) -> Self {
        SuffixRule {
            suffix: suffix.into(),
            replacement: replacement.into(),
            min_len,
            unless_endings: unless.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn apply(&self, token: &str) -> Option<String> {
        if token.chars().count() < self.min_len
            || !token.ends_with(&self.suffix)
            || self.unless_endings.iter().any(|e| token.ends_with(e.as_str()))
        {
            return None;
        }
        let stem = &token[..token.len() - self.suffix.len()];
        Some(format!("{stem}{}", self.replacement))
    }
}

/// Lemmatization and synonym tables. Fields missing from a config file
/// keep their defaults; fields present replace them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationConfig {
    pub lemma_overrides: BTreeMap<String, String>,
    pub suffix_rules: Vec<SuffixRule>,
    /// Tokens never touched by suffix rules.
    pub keep_list: BTreeSet<String>,
    pub synonyms: BTreeMap<String, String>,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        let overrides = [
            ("effectiveness", "effective"),
            ("doubts", "doubt"),
            ("concerns", "concern"),
        ];
        let keep = [
            "virus", "news", "analysis", "this", "series", "species", "always", "perhaps",
            "measles", "diabetes", "covid",
        ];
        NormalizationConfig {
            lemma_overrides: overrides
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            suffix_rules: vec![
                SuffixRule::new("ies", "y", 5, &[]),
                SuffixRule::new("s", "", 4, &["ss", "us", "is"]),
            ],
            keep_list: keep.iter().map(|s| s.to_string()).collect(),
            synonyms: BTreeMap::new(),
        }
    }
}

impl NormalizationConfig {
    /// Only the surface steps: no overrides, suffix rules or synonyms.
    pub fn surface_only() -> Self {
        NormalizationConfig {
            lemma_overrides: BTreeMap::new(),
            suffix_rules: Vec::new(),
            keep_list: BTreeSet::new(),
            synonyms: BTreeMap::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: NormalizationConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("normalization config: {e}")))?;
        raw.validated()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Canonicalizes table keys and rejects rule sets that are not a fixed
    /// point on their own output.
    pub fn validated(self) -> Result<Self> {
        let mut cfg = NormalizationConfig {
            lemma_overrides: BTreeMap::new(),
            synonyms: BTreeMap::new(),
            ..self.clone()
        };
        cfg.keep_list = self.keep_list.iter().map(|k| surface(k)).collect();

        for (k, v) in &self.lemma_overrides {
            let key = surface(k);
            let value = surface(v);
            if key.contains(' ') || key.is_empty() || value.contains(' ') || value.is_empty() {
                return Err(Error::Config(format!(
                    "lemma override {k:?} -> {v:?} must map one word to one word"
                )));
            }
            cfg.lemma_overrides.insert(key, value);
        }
        for v in cfg.lemma_overrides.values() {
            let again = cfg.lemmatize_token(v);
            if &again != v {
                return Err(Error::Config(format!(
                    "lemma rules are cyclic: {v:?} lemmatizes further to {again:?}"
                )));
            }
        }

        for (k, v) in &self.synonyms {
            let key = cfg.normalize_without_synonyms(k);
            let value = cfg.normalize_without_synonyms(v);
            if key.is_empty() || value.is_empty() {
                return Err(Error::Config(format!("synonym {k:?} -> {v:?} is empty after normalization")));
            }
            cfg.synonyms.insert(key, value);
        }
        for (k, v) in &cfg.synonyms {
            if let Some(next) = cfg.synonyms.get(v) {
                if next != v {
                    return Err(Error::Config(format!(
                        "synonym chain {k:?} -> {v:?} -> {next:?}; map directly to the final form"
                    )));
                }
            }
        }
        Ok(cfg)
    }

    fn lemmatize_token(&self, token: &str) -> String {
        let mut t = token;
        while t.len() > 2 && t.ends_with("'s") {
            t = &t[..t.len() - 2];
        }
        if let Some(v) = self.lemma_overrides.get(t) {
            return v.clone();
        }
        if self.keep_list.contains(t) {
            return t.to_string();
        }
        self.suffix_rules
            .iter()
            .find_map(|r| r.apply(t))
            .unwrap_or_else(|| t.to_string())
    }

    fn normalize_without_synonyms(&self, raw: &str) -> String {
        surface(raw)
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(|t| self.lemmatize_token(t))
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Steps up to and including whitespace collapse.
fn surface(raw: &str) -> String {
    let lowered: String = raw.nfc().collect::<String>().to_lowercase();
    let chars: Vec<char> = lowered
        .chars()
        .map(|c| match c {
            '\u{2019}' | '\u{2018}' => '\'',
            c if HYPHENS.contains(&c) => ' ',
            c => c,
        })
        .collect();
    let mut out = String::with_capacity(chars.len());
    let mut prev_alnum = false;
    for (i, &c) in chars.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || c.is_whitespace()
            || (c == '\'' && prev_alnum && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        let c = if keep { c } else { ' ' };
        out.push(c);
        prev_alnum = c.is_alphanumeric();
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalizes one raw topic string.
pub fn normalize_topic(raw: &str, cfg: &NormalizationConfig) -> Result<String> {
    let base = cfg.normalize_without_synonyms(raw);
    if base.is_empty() {
        return Err(Error::EmptyAfterNormalization(raw.to_string()));
    }
    Ok(cfg.synonyms.get(&base).cloned().unwrap_or(base))
}

/// A normalized topic attributed to a document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub topic: String,
    pub doc_id: String,
}

impl Assignment {
    pub fn new(topic: impl Into<String>, doc_id: impl Into<String>) -> Self {
        Assignment {
            topic: topic.into(),
            doc_id: doc_id.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizedMentions {
    pub assignments: Vec<Assignment>,
    /// Mentions that normalized to the empty string.
    pub dropped: usize,
}

/// Order-preserving [`normalize_topic`] over mentions.
pub fn normalize_mentions(mentions: &[TopicMention], cfg: &NormalizationConfig) -> NormalizedMentions {
    let mut out = NormalizedMentions::default();
    for m in mentions {
        match normalize_topic(&m.raw, cfg) {
            Ok(topic) => out.assignments.push(Assignment::new(topic, m.doc_id.clone())),
            Err(_) => out.dropped += 1,
        }
    }
    out
}
