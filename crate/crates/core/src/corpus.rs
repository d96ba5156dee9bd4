//! Document collections: loading, cleaning, stratified splitting and
//! temporal binning.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\B@\S+").unwrap());
static LINK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:https?://\S+|\bwww\.\S+|\bt\.co/\S*)").unwrap()
});

/// One corpus item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            label: None,
            timestamp: None,
            meta: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_timestamp(mut self, ts: DateTime<Utc>) -> Self {
        self.timestamp = Some(ts);
        self
    }
}

/// An ordered collection of documents with unique, non-empty ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Corpus {
    pub name: String,
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if doc.id.is_empty() {
                return Err(Error::InvalidInput("document with empty id".into()));
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate document id {:?}", doc.id)));
            }
        }
        Ok(Corpus {
            name: name.into(),
            documents,
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Corpus {
            name: name.into(),
            documents: Vec::new(),
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Applies [`clean_text`] to every document and drops those left empty.
    /// Returns the cleaned corpus and the number of dropped documents.
    pub fn cleaned(&self) -> (Corpus, usize) {
        let mut skipped = 0;
        let documents = self
            .documents
            .iter()
            .filter_map(|d| {
                let text = clean_text(&d.text);
                if text.is_empty() {
                    skipped += 1;
                    None
                } else {
                    Some(Document { text, ..d.clone() })
                }
            })
            .collect();
        (
            Corpus {
                name: self.name.clone(),
                documents,
            },
            skipped,
        )
    }

    // ids are already known unique
    fn from_parts(name: String, documents: Vec<Document>) -> Self {
        Corpus { name, documents }
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

/// Removes `@user` mentions and hyperlinks, then collapses whitespace.
pub fn clean_text(text: &str) -> String {
    let without_links = LINK.replace_all(text, " ");
    let without_mentions = MENTION.replace_all(&without_links, " ");
    without_mentions.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Samples `round(fraction * count)` documents of every label into the test
/// split. Labels are visited in sorted order with one seeded RNG so the
/// result is a pure function of `(corpus, fraction, rng_seed)`. Both halves
/// keep corpus order.
pub fn stratified_split(corpus: &Corpus, fraction: f64, rng_seed: u64) -> Result<(Corpus, Corpus)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, doc) in corpus.iter().enumerate() {
        let label = doc
            .label
            .as_deref()
            .ok_or_else(|| Error::MissingLabel(doc.id.clone()))?;
        by_label.entry(label).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut in_test = vec![false; corpus.len()];
    for indices in by_label.values() {
        let take = round_half_up(fraction * indices.len() as f64).min(indices.len());
        for pick in rand::seq::index::sample(&mut rng, indices.len(), take) {
            in_test[indices[pick]] = true;
        }
    }

    let (test, rest): (Vec<_>, Vec<_>) = corpus
        .iter()
        .cloned()
        .zip(in_test)
        .partition(|(_, t)| *t);
    Ok((
        Corpus::from_parts(
            format!("{}-test", corpus.name),
            test.into_iter().map(|(d, _)| d).collect(),
        ),
        Corpus::from_parts(
            format!("{}-rest", corpus.name),
            rest.into_iter().map(|(d, _)| d).collect(),
        ),
    ))
}

/// Time windows: `k` strictly increasing boundaries define `k + 1` half-open
/// bins `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSpec {
    boundaries: Vec<DateTime<Utc>>,
    bin_names: Vec<String>,
}

impl PeriodSpec {
    pub fn new(boundaries: Vec<DateTime<Utc>>, bin_names: Vec<String>) -> Result<Self> {
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "period boundaries must be strictly increasing".into(),
            ));
        }
        if bin_names.len() != boundaries.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} boundaries need {} bin names, got {}",
                boundaries.len(),
                boundaries.len() + 1,
                bin_names.len()
            )));
        }
        Ok(PeriodSpec {
            boundaries,
            bin_names,
        })
    }

    /// Bins named `period_0`, `period_1`, ...
    pub fn unnamed(boundaries: Vec<DateTime<Utc>>) -> Result<Self> {
        let names = (0..=boundaries.len()).map(|i| format!("period_{i}")).collect();
        Self::new(boundaries, names)
    }

    pub fn boundaries(&self) -> &[DateTime<Utc>] {
        &self.boundaries
    }

    pub fn bin_names(&self) -> &[String] {
        &self.bin_names
    }

    pub fn bin_of(&self, t: DateTime<Utc>) -> usize {
        self.boundaries.partition_point(|b| *b <= t)
    }
}

/// Splits a timestamped corpus into one sub-corpus per period bin.
pub fn temporal_bins(corpus: &Corpus, spec: &PeriodSpec) -> Result<Vec<Corpus>> {
    let mut bins: Vec<Vec<Document>> = vec![Vec::new(); spec.bin_names.len()];
    for doc in corpus {
        let ts = doc
            .timestamp
            .ok_or_else(|| Error::MissingTimestamp(doc.id.clone()))?;
        bins[spec.bin_of(ts)].push(doc.clone());
    }
    Ok(bins
        .into_iter()
        .zip(&spec.bin_names)
        .map(|(docs, name)| Corpus::from_parts(format!("{}-{}", corpus.name, name), docs))
        .collect())
}

/// Result of reading a corpus file.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub corpus: Corpus,
    /// `(line number, reason)` for every rejected record; 1-based.
    pub invalid: Vec<(usize, String)>,
}

#[derive(Deserialize)]
struct JsonRecord {
    id: serde_json::Value,
    text: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    timestamp: Option<String>,
    #[serde(default)]
    meta: Option<BTreeMap<String, serde_json::Value>>,
}

fn id_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp {s:?}: {e}"))
}

fn meta_string(v: serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

fn record_to_document(rec: JsonRecord) -> std::result::Result<Document, String> {
    let id = id_string(&rec.id).ok_or("id must be a string or number")?;
    if id.is_empty() {
        return Err("empty id".into());
    }
    let timestamp = rec.timestamp.as_deref().map(parse_timestamp).transpose()?;
    Ok(Document {
        id,
        text: rec.text,
        label: rec.label.filter(|l| !l.trim().is_empty()),
        timestamp,
        meta: rec
            .meta
            .map(|m| m.into_iter().map(|(k, v)| (k, meta_string(v))).collect()),
    })
}

struct Collector {
    name: String,
    strict: bool,
    seen: HashSet<String>,
    documents: Vec<Document>,
    invalid: Vec<(usize, String)>,
}

impl Collector {
    fn new(name: String, strict: bool) -> Self {
        Collector {
            name,
            strict,
            seen: HashSet::new(),
            documents: Vec::new(),
            invalid: Vec::new(),
        }
    }

    fn push(&mut self, line: usize, parsed: std::result::Result<Document, String>) -> Result<()> {
        let parsed = parsed.and_then(|doc| {
            if self.seen.insert(doc.id.clone()) {
                Ok(doc)
            } else {
                Err(format!("duplicate id {:?}", doc.id))
            }
        });
        match parsed {
            Ok(doc) => self.documents.push(doc),
            Err(reason) if self.strict => {
                return Err(Error::InvalidInput(format!("line {line}: {reason}")))
            }
            Err(reason) => {
                tracing::warn!(line, %reason, "skipping invalid corpus record");
                self.invalid.push((line, reason));
            }
        }
        Ok(())
    }

    fn finish(self) -> LoadReport {
        LoadReport {
            corpus: Corpus::from_parts(self.name, self.documents),
            invalid: self.invalid,
        }
    }
}

/// Reads JSON Lines: one `{id, text, label?, timestamp?, meta?}` object per
/// line. Blank lines are ignored. In strict mode the first bad line aborts.
pub fn read_jsonl(reader: impl Read, name: &str, strict: bool) -> Result<LoadReport> {
    let mut out = Collector::new(name.to_string(), strict);
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<JsonRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(record_to_document);
        out.push(i + 1, parsed)?;
    }
    Ok(out.finish())
}

/// Reads CSV with a header row naming `id`, `text` and optionally `label`
/// and `timestamp`. Any other column is kept in `meta`.
pub fn read_csv(reader: impl Read, name: &str, strict: bool) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::InvalidInput(format!("{name}: bad CSV header: {e}")))?
        .clone();
    let col = |n: &str| headers.iter().position(|h| h.trim() == n);
    let (Some(id_col), Some(text_col)) = (col("id"), col("text")) else {
        return Err(Error::InvalidInput(format!(
            "{name}: CSV header must contain id and text columns"
        )));
    };
    let label_col = col("label");
    let ts_col = col("timestamp");

    let mut out = Collector::new(name.to_string(), strict);
    for (i, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let parsed = rec.map_err(|e| e.to_string()).and_then(|rec| {
            let field = |c: usize| rec.get(c).unwrap_or("").to_string();
            let id = field(id_col);
            if id.is_empty() {
                return Err("empty id".to_string());
            }
            let timestamp = match ts_col.map(field).filter(|s| !s.trim().is_empty()) {
                Some(s) => Some(parse_timestamp(&s)?),
                None => None,
            };
            let meta: BTreeMap<String, String> = headers
                .iter()
                .enumerate()
                .filter(|(c, _)| ![Some(id_col), Some(text_col), label_col, ts_col].contains(&Some(*c)))
                .map(|(c, h)| (h.to_string(), field(c)))
                .collect();
            Ok(Document {
                id,
                text: field(text_col),
                label: label_col.map(field).filter(|l| !l.trim().is_empty()),
                timestamp,
                meta: (!meta.is_empty()).then_some(meta),
            })
        });
        out.push(line, parsed)?;
    }
    Ok(out.finish())
}

/// Loads a corpus file, choosing the reader by extension (`.csv` is CSV,
/// anything else JSON Lines).
pub fn load_corpus(path: &Path, strict: bool) -> Result<LoadReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        read_csv(file, &name, strict)
    } else {
        read_jsonl(file, &name, strict)
    }
}
