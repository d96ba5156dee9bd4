//! Batch dispatch and per-document topic attribution.
//!
//! Models must answer with one line per document:
//!
//! ```text
//! <index>: <topic>[; <topic>]*
//! ```
//!
//! where `index` is the 1-based position of the document in the batch.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::prompts::{make_batches, render_extraction_prompt, Batch, BatchStrategy, PromptConfig, RenderedPrompt, TemplateSet};
use crate::providers::{chat_complete, dispatch_ordered, ChatProvider, ChatResponse, GenerationSettings};

static TOPIC_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:[-*•]\s*)?(?:doc(?:ument)?\s*#?\s*)?(\d+)\s*:\s*(.*?)\s*$").unwrap()
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicMention {
    pub raw: String,
    pub doc_id: String,
    pub batch_index: usize,
}

/// Outcome of parsing one response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub mentions: Vec<TopicMention>,
    /// Number of expected documents that got a valid line.
    pub parsed_lines: usize,
    pub expected_lines: usize,
    /// Lines that did not parse or were rejected, with the reason.
    pub rejected: Vec<(String, String)>,
}

impl ParsedResponse {
    /// Some expected documents are missing a valid line.
    pub fn is_partial(&self) -> bool {
        self.parsed_lines < self.expected_lines
    }
}

/// Parses a numbered topic list, mapping line `i` to `expected_docs[i-1]`.
/// Out-of-range indices, repeated indices and lines with no topics are
/// rejected. Fails with `MalformedResponse` when fewer than half of the
/// expected lines parse.
pub fn parse_topic_response(text: &str, expected_docs: &[String], batch_index: usize) -> Result<ParsedResponse> {
    if expected_docs.is_empty() {
        return Err(Error::InvalidInput("no expected documents".into()));
    }
    let mut seen = HashSet::new();
    let mut mentions = Vec::new();
    let mut rejected = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let Some(caps) = TOPIC_LINE.captures(line) else {
            rejected.push((line.to_string(), "not an <index>: <topics> line".into()));
            continue;
        };
        let index: usize = match caps[1].parse() {
            Ok(i) if (1..=expected_docs.len()).contains(&i) => i,
            _ => {
                rejected.push((line.to_string(), format!("index {} out of range", &caps[1])));
                continue;
            }
        };
        let topics: Vec<&str> = caps[2].split(';').map(str::trim).filter(|t| !t.is_empty()).collect();
        if topics.is_empty() {
            rejected.push((line.to_string(), "no topics".into()));
            continue;
        }
        if !seen.insert(index) {
            rejected.push((line.to_string(), format!("duplicate index {index}")));
            continue;
        }
        let doc_id = &expected_docs[index - 1];
        mentions.extend(topics.into_iter().map(|t| TopicMention {
            raw: t.to_string(),
            doc_id: doc_id.clone(),
            batch_index,
        }));
    }
    let parsed_lines = seen.len();
    if parsed_lines * 2 < expected_docs.len() {
        return Err(Error::MalformedResponse(format!(
            "batch {batch_index}: {parsed_lines} of {} lines parsed",
            expected_docs.len()
        )));
    }
    Ok(ParsedResponse {
        mentions,
        parsed_lines,
        expected_lines: expected_docs.len(),
        rejected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batching {
    pub strategy: BatchStrategy,
    pub size: usize,
}

impl Default for Batching {
    fn default() -> Self {
        Batching {
            strategy: BatchStrategy::Batched,
            size: crate::prompts::DEFAULT_BATCH_SIZE,
        }
    }
}

/// One request/response pair as sent and received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub batch_index: usize,
    /// 1 for the first request of a batch, 2 for the malformed-output retry.
    pub attempt: u32,
    pub prompt: RenderedPrompt,
    pub response: ChatResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Provider,
    Malformed,
    /// Not dispatched because an earlier batch hit a fatal provider error.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub batch_index: usize,
    pub kind: FailureKind,
    pub reason: String,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractionResult {
    pub mentions: Vec<TopicMention>,
    pub failures: Vec<BatchFailure>,
    pub raw_log: Vec<Exchange>,
    /// Partial parses and rejected lines.
    pub warnings: Vec<String>,
    /// Set when a fatal provider error stopped the run early.
    pub aborted: Option<String>,
    pub batches: usize,
}

impl ExtractionResult {
    pub fn failed_batches(&self, kind: FailureKind) -> usize {
        self.failures.iter().filter(|f| f.kind == kind).count()
    }
}

struct BatchOutcome {
    exchanges: Vec<Exchange>,
    mentions: Vec<TopicMention>,
    warnings: Vec<String>,
    failure: Option<BatchFailure>,
    fatal: Option<String>,
}

fn run_batch(
    batch: &Batch,
    cfg: &PromptConfig,
    templates: &TemplateSet,
    provider: &dyn ChatProvider,
    settings: &GenerationSettings,
    abort: &AtomicBool,
) -> BatchOutcome {
    let doc_ids: Vec<String> = batch.documents.iter().map(|d| d.id.clone()).collect();
    let mut out = BatchOutcome {
        exchanges: Vec::new(),
        mentions: Vec::new(),
        warnings: Vec::new(),
        failure: None,
        fatal: None,
    };
    let fail = |kind, reason: String| BatchFailure {
        batch_index: batch.index,
        kind,
        reason,
        doc_ids: doc_ids.clone(),
    };
    let prompt = match render_extraction_prompt(batch, cfg, templates) {
        Ok(p) => p,
        Err(e) => {
            out.failure = Some(fail(FailureKind::Malformed, e.to_string()));
            return out;
        }
    };
    let request = settings.request(&prompt);

    for attempt in 1..=2u32 {
        if abort.load(Ordering::SeqCst) {
            out.failure = Some(fail(FailureKind::Aborted, "run aborted".into()));
            return out;
        }
        let response = match chat_complete(provider, &request) {
            Ok(r) => r,
            Err(e) => {
                if e.is_fatal() {
                    abort.store(true, Ordering::SeqCst);
                    out.fatal = Some(e.to_string());
                }
                tracing::warn!(batch = batch.index, error = %e, "batch failed at provider");
                out.failure = Some(fail(FailureKind::Provider, e.to_string()));
                return out;
            }
        };
        let parsed = parse_topic_response(&response.text, &prompt.doc_ids, batch.index);
        out.exchanges.push(Exchange {
            batch_index: batch.index,
            attempt,
            prompt: prompt.clone(),
            response,
        });
        match parsed {
            Ok(p) => {
                if p.is_partial() {
                    out.warnings.push(format!(
                        "batch {}: partial parse, {} of {} lines",
                        batch.index, p.parsed_lines, p.expected_lines
                    ));
                }
                out.warnings.extend(
                    p.rejected
                        .iter()
                        .map(|(line, why)| format!("batch {}: rejected {line:?}: {why}", batch.index)),
                );
                out.mentions = p.mentions;
                return out;
            }
            Err(e) if attempt == 1 => {
                tracing::warn!(batch = batch.index, error = %e, "malformed response, retrying once");
            }
            Err(e) => {
                out.failure = Some(fail(FailureKind::Malformed, e.to_string()));
            }
        }
    }
    out
}

/// Renders, dispatches and parses every batch. Batches run concurrently up
/// to the provider's in-flight limit; results are merged in batch order.
/// Non-fatal failures are recorded per batch; a fatal one (authentication)
/// stops dispatch and sets `aborted`, keeping everything gathered so far.
pub fn run_extraction(
    corpus: &Corpus,
    cfg: &PromptConfig,
    batching: Batching,
    provider: &dyn ChatProvider,
    templates: &TemplateSet,
    settings: &GenerationSettings,
) -> Result<ExtractionResult> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("cannot extract from an empty corpus".into()));
    }
    cfg.validate()?;
    let batches = make_batches(corpus, batching.size, batching.strategy)?;
    let abort = AtomicBool::new(false);
    let outcomes = dispatch_ordered(&batches, provider.max_in_flight(), |_, b| {
        run_batch(b, cfg, templates, provider, settings, &abort)
    });

    let mut result = ExtractionResult {
        batches: batches.len(),
        ..Default::default()
    };
    for o in outcomes {
        result.raw_log.extend(o.exchanges);
        result.mentions.extend(o.mentions);
        result.warnings.extend(o.warnings);
        result.failures.extend(o.failure);
        if result.aborted.is_none() {
            result.aborted = o.fatal;
        }
    }
    Ok(result)
}
