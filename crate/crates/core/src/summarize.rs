//! Merging a raw topic list into N general topics, and naming token-list
//! topics from classical topic models.
//!
//! Summaries use a block grammar, one block per general topic:
//!
//! ```text
//! TOPIC: <name>
//! SUBTOPICS: <sub-topic>; <sub-topic>; ...
//! EXPLANATION: <sentence>
//! ```
//!
//! Blocks are separated by blank lines.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{parse_topic_response, Exchange};
use crate::normalize::{normalize_topic, NormalizationConfig};
use crate::prompts::{render_labeling_prompt, render_summarization_prompt, RenderedPrompt, TemplateSet};
use crate::providers::{chat_complete, dispatch_ordered, ChatProvider, GenerationSettings, ProviderError};

static FIELD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:[-*#>•]+\s*|\d+[.)]\s*)*\**\s*(topic|sub-?topics|explanation)\s*\**\s*:\s*\**\s*(.*?)\s*\**\s*$")
        .unwrap()
});

/// Token lists sent per labeling request.
pub const LABEL_BATCH: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralTopic {
    pub name: String,
    pub subtopics: Vec<String>,
    pub explanation: String,
}

/// What the frequency-truncation fallback kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub kept: usize,
    pub distinct: usize,
    pub context_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryResult {
    pub topics: Vec<GeneralTopic>,
    /// Normalized raw topics that no general topic covers.
    pub unassigned: Vec<String>,
    /// Sub-topics that are not among the normalized raw topics.
    pub model_introduced: Vec<String>,
    /// Names of topics whose block had no EXPLANATION line.
    pub missing_explanation: Vec<String>,
    pub warnings: Vec<String>,
    pub truncation: Option<Truncation>,
    /// Text of the last response, verbatim.
    pub raw_response: String,
    #[serde(skip)]
    pub exchanges: Vec<Exchange>,
}

#[derive(Default)]
struct Block {
    name: Option<String>,
    subtopics: Option<Vec<String>>,
    explanation: Option<String>,
}

fn split_subtopics(s: &str) -> Vec<String> {
    let sep = if s.contains(';') { ';' } else { ',' };
    s.split(sep)
        .map(|t| t.trim().trim_matches('"').trim())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn flush(block: Block, out: &mut SummaryResult) {
    let Some(name) = block.name.filter(|n| !n.is_empty()) else {
        if block.subtopics.is_some() || block.explanation.is_some() {
            out.warnings.push("skipped block without a TOPIC line".into());
        }
        return;
    };
    let subtopics = block.subtopics.unwrap_or_default();
    if subtopics.is_empty() {
        out.warnings.push(format!("skipped topic {name:?}: no sub-topics"));
        return;
    }
    let explanation = match block.explanation {
        Some(e) => e,
        None => {
            out.missing_explanation.push(name.clone());
            String::new()
        }
    };
    out.topics.push(GeneralTopic {
        name,
        subtopics,
        explanation,
    });
}

/// Parses the block grammar. Leading list markers, numbering and markdown
/// emphasis around field names are tolerated, as are commas in place of
/// semicolons when a SUBTOPICS line has no semicolon. Sub-topics are kept
/// verbatim (trimmed). Fails when no block parses.
pub fn parse_summary_response(text: &str) -> Result<SummaryResult> {
    let mut out = SummaryResult {
        raw_response: text.to_string(),
        ..Default::default()
    };
    let mut block = Block::default();
    let mut in_explanation = false;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(std::mem::take(&mut block), &mut out);
            in_explanation = false;
            continue;
        }
        match FIELD.captures(trimmed) {
            Some(caps) => {
                let value = caps[2].to_string();
                in_explanation = false;
                match caps[1].to_ascii_lowercase().as_str() {
                    "topic" => {
                        if block.name.is_some() {
                            flush(std::mem::take(&mut block), &mut out);
                        }
                        block.name = Some(value);
                    }
                    "explanation" => {
                        block.explanation = Some(value);
                        in_explanation = true;
                    }
                    _ => block.subtopics = Some(split_subtopics(&value)),
                }
            }
            None if in_explanation => {
                let e = block.explanation.get_or_insert_with(String::new);
                e.push(' ');
                e.push_str(trimmed);
            }
            None => {}
        }
    }
    flush(block, &mut out);
    if out.topics.is_empty() {
        return Err(Error::MalformedResponse("no TOPIC/SUBTOPICS blocks found".into()));
    }
    Ok(out)
}

/// Writes topics in the grammar read by [`parse_summary_response`].
pub fn to_block_text(topics: &[GeneralTopic]) -> String {
    topics
        .iter()
        .map(|t| {
            format!(
                "TOPIC: {}\nSUBTOPICS: {}\nEXPLANATION: {}",
                t.name,
                t.subtopics.join("; "),
                t.explanation
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, Default)]
pub struct SummarizeOptions {
    /// Send each distinct topic once instead of the full list.
    pub dedup: bool,
    pub normalization: NormalizationConfig,
    pub templates: TemplateSet,
    pub settings: GenerationSettings,
}

fn dedup_in_order(topics: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    topics.iter().filter(|t| seen.insert(t.as_str())).cloned().collect()
}

/// Distinct topics, most frequent first, ties alphabetical.
fn by_frequency(topics: &[String]) -> Vec<String> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for t in topics {
        *freq.entry(t.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().map(|(t, _)| t.to_string()).collect()
}

fn fit_prompt(
    topics: &[String],
    n: usize,
    few_shot: &str,
    provider: &dyn ChatProvider,
    opts: &SummarizeOptions,
) -> Result<(RenderedPrompt, Option<Truncation>)> {
    let listed = if opts.dedup { dedup_in_order(topics) } else { topics.to_vec() };
    let prompt = render_summarization_prompt(&listed, n, few_shot, &opts.templates)?;
    let limit = match provider.context_tokens() {
        Some(limit) if !prompt.fits(Some(limit)) => limit,
        _ => return Ok((prompt, None)),
    };
    let ranked = by_frequency(topics);
    let render = |k: usize| render_summarization_prompt(&ranked[..k], n, few_shot, &opts.templates);
    // prompt size grows with the prefix length, so the largest fitting prefix
    // is found by bisection
    let (mut lo, mut hi) = (0usize, ranked.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if render(mid)?.fits(Some(limit)) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    if lo == 0 {
        return Err(ProviderError::ContextOverflow {
            estimated: render(1)?.estimated_tokens(),
            limit,
        }
        .into());
    }
    Ok((
        render(lo)?,
        Some(Truncation {
            kept: lo,
            distinct: ranked.len(),
            context_tokens: limit,
        }),
    ))
}

/// Renormalizes sub-topics, dropping empties and repeats within a topic.
fn renormalize(mut out: SummaryResult, cfg: &NormalizationConfig) -> SummaryResult {
    let topics = std::mem::take(&mut out.topics);
    for t in topics {
        let mut seen = HashSet::new();
        let mut subs = Vec::new();
        for s in &t.subtopics {
            match normalize_topic(s, cfg) {
                Ok(norm) => {
                    if seen.insert(norm.clone()) {
                        subs.push(norm);
                    }
                }
                Err(_) => out
                    .warnings
                    .push(format!("topic {:?}: dropped empty sub-topic {s:?}", t.name)),
            }
        }
        if subs.is_empty() {
            out.warnings.push(format!("skipped topic {:?}: no sub-topics after normalization", t.name));
            continue;
        }
        out.topics.push(GeneralTopic { subtopics: subs, ..t });
    }
    out
}

/// One summarization round: render, dispatch (one retry on malformed
/// output), parse and renormalize, then account for coverage against the
/// normalized raw list. If the prompt exceeds the provider's context, the
/// distinct topics are ranked by frequency and the longest fitting prefix
/// is sent instead.
pub fn summarize_topics(
    raw_topics: &[String],
    n: usize,
    provider: &dyn ChatProvider,
    few_shot: &str,
    opts: &SummarizeOptions,
) -> Result<SummaryResult> {
    let raw: Vec<String> = raw_topics
        .iter()
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect();
    if raw.is_empty() {
        return Err(Error::InvalidInput("no topics to summarize".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("number of general topics must be at least 1".into()));
    }
    let (prompt, truncation) = fit_prompt(&raw, n, few_shot, provider, opts)?;
    let request = opts.settings.request(&prompt);

    let mut exchanges = Vec::new();
    let mut parsed = None;
    for attempt in 1..=2u32 {
        let response = chat_complete(provider, &request)?;
        let result = parse_summary_response(&response.text);
        exchanges.push(Exchange {
            batch_index: 0,
            attempt,
            prompt: prompt.clone(),
            response,
        });
        match result {
            Ok(p) => {
                parsed = Some(p);
                break;
            }
            Err(e) if attempt == 1 => tracing::warn!(error = %e, "malformed summary, retrying once"),
            Err(e) => return Err(e),
        }
    }
    let mut out = renormalize(parsed.expect("loop returns or parses"), &opts.normalization);
    out.exchanges = exchanges;

    if let Some(t) = &truncation {
        out.warnings.push(format!(
            "topic list truncated to the {} most frequent of {} distinct topics to fit a {}-token context",
            t.kept, t.distinct, t.context_tokens
        ));
    }
    out.truncation = truncation;
    if out.topics.is_empty() {
        return Err(Error::MalformedResponse("no topic kept sub-topics after normalization".into()));
    }
    if out.topics.len() > n {
        out.warnings
            .push(format!("model returned {} topics, kept the first {n}", out.topics.len()));
        out.topics.truncate(n);
    } else if out.topics.len() < n {
        out.warnings
            .push(format!("shortfall: requested {n} topics, model returned {}", out.topics.len()));
    }

    let known: BTreeSet<String> = raw
        .iter()
        .filter_map(|t| normalize_topic(t, &opts.normalization).ok())
        .collect();
    let covered: BTreeSet<&String> = out.topics.iter().flat_map(|t| &t.subtopics).collect();
    out.model_introduced = covered.iter().filter(|s| !known.contains(**s)).map(|s| s.to_string()).collect();
    out.unassigned = known.iter().filter(|k| !covered.contains(k)).cloned().collect();
    if !out.model_introduced.is_empty() {
        out.warnings.push(format!(
            "{} sub-topics are not in the input list",
            out.model_introduced.len()
        ));
    }
    Ok(out)
}

/// The fallback name for a token list: its first three tokens.
pub fn fallback_label(tokens: &[String]) -> String {
    tokens.iter().take(3).map(|t| t.trim()).collect::<Vec<_>>().join(", ")
}

fn label_chunk(
    lists: &[Vec<String>],
    provider: &dyn ChatProvider,
    templates: &TemplateSet,
    settings: &GenerationSettings,
) -> Result<Vec<String>> {
    let mut names: Vec<Option<String>> = vec![None; lists.len()];
    let mut pending: Vec<usize> = (0..lists.len()).collect();
    for attempt in 1..=2 {
        if pending.is_empty() {
            break;
        }
        let subset: Vec<Vec<String>> = pending.iter().map(|&i| lists[i].clone()).collect();
        let prompt = render_labeling_prompt(&subset, templates)?;
        let response = chat_complete(provider, &settings.request(&prompt))?;
        match parse_topic_response(&response.text, &prompt.doc_ids, 0) {
            Ok(parsed) => {
                for m in parsed.mentions {
                    let slot = pending[m.doc_id.parse::<usize>().expect("labeling ids are indices")];
                    // a name containing ';' comes back as several mentions
                    match &mut names[slot] {
                        Some(name) => {
                            name.push_str("; ");
                            name.push_str(&m.raw);
                        }
                        None => names[slot] = Some(m.raw),
                    }
                }
            }
            Err(e) => tracing::warn!(attempt, error = %e, "malformed labeling response"),
        }
        pending.retain(|&i| names[i].is_none());
    }
    Ok(names
        .into_iter()
        .zip(lists)
        .map(|(name, tokens)| name.unwrap_or_else(|| fallback_label(tokens)))
        .collect())
}

/// One short name per token list, order-aligned. Lists go out in chunks of
/// [`LABEL_BATCH`], dispatched concurrently under the provider's limit.
/// Lists still unnamed after one retry get [`fallback_label`].
pub fn label_token_topics(
    token_lists: &[Vec<String>],
    provider: &dyn ChatProvider,
    templates: &TemplateSet,
    settings: &GenerationSettings,
) -> Result<Vec<String>> {
    if token_lists.iter().any(|l| l.iter().all(|t| t.trim().is_empty())) {
        return Err(Error::InvalidInput("token lists must be non-empty".into()));
    }
    let chunks: Vec<&[Vec<String>]> = token_lists.chunks(LABEL_BATCH).collect();
    let results = dispatch_ordered(&chunks, provider.max_in_flight(), |_, c| {
        label_chunk(c, provider, templates, settings)
    });
    let mut names = Vec::with_capacity(token_lists.len());
    for r in results {
        names.extend(r?);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{ChatRequest, ChatResponse, MockChatProvider, MockFixture, MockStyle};
    use proptest::prelude::*;
    use std::sync::Mutex;

    /// Replies from a queue, repeating the last reply when exhausted.
    struct Scripted {
        replies: Mutex<Vec<String>>,
        seen: Mutex<Vec<ChatRequest>>,
        context: Option<usize>,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Self {
            Scripted {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                seen: Mutex::new(Vec::new()),
                context: None,
            }
        }
        fn calls(&self) -> usize {
            self.seen.lock().unwrap().len()
        }
    }

    impl ChatProvider for Scripted {
        fn id(&self) -> &str {
            "scripted"
        }
        fn context_tokens(&self) -> Option<usize> {
            self.context
        }
        fn complete(&self, req: &ChatRequest) -> std::result::Result<ChatResponse, ProviderError> {
            self.seen.lock().unwrap().push(req.clone());
            let mut q = self.replies.lock().unwrap();
            let text = if q.len() > 1 { q.pop().unwrap() } else { q[0].clone() };
            Ok(ChatResponse {
                text,
                prompt_tokens: 0,
                completion_tokens: 0,
                provider_id: "scripted".into(),
                attempts: 1,
            })
        }
    }

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn vaccine_raw() -> Vec<String> {
        let mut raw = Vec::new();
        for (t, k) in [
            ("side effect", 9),
            ("safety concern", 4),
            ("ineffective", 6),
            ("lack of trust", 5),
            ("mandatory", 4),
            ("rushed development", 3),
            ("pharma profit", 3),
            ("conspiracy theory", 2),
            ("religious belief", 2),
            ("political motive", 2),
            ("vaccine ingredients", 1),
            ("unnecessary", 1),
        ] {
            raw.extend(std::iter::repeat_n(t.to_string(), k));
        }
        raw
    }

    fn summarizer() -> MockChatProvider {
        MockChatProvider::new(MockFixture::vaccine(), MockStyle::Summarization)
    }

    #[test]
    fn parses_one_block() {
        let r = parse_summary_response("TOPIC: Safety\nSUBTOPICS: side effect; fever\nEXPLANATION: Harm.").unwrap();
        assert_eq!(
            r.topics,
            vec![GeneralTopic {
                name: "Safety".into(),
                subtopics: strings(&["side effect", "fever"]),
                explanation: "Harm.".into()
            }]
        );
        assert!(r.missing_explanation.is_empty());
    }

    #[test]
    fn missing_explanation_is_flagged() {
        let r = parse_summary_response("TOPIC: Safety\nSUBTOPICS: side effect").unwrap();
        assert_eq!(r.topics[0].explanation, "");
        assert_eq!(r.missing_explanation, strings(&["Safety"]));
    }

    #[test]
    fn no_blocks_is_malformed() {
        assert!(matches!(
            parse_summary_response("no topics here"),
            Err(Error::MalformedResponse(_))
        ));
    }

    #[test]
    fn tolerates_markdown_and_numbering() {
        let text = "Here you go:\n\n1. **TOPIC:** Trust\n**SUBTOPICS:** lack of trust, mistrust\n**EXPLANATION:** Doubt\nabout institutions.\n\n- Topic: Mandates\n  Sub-topics: mandatory\n  Explanation: Rules.\nThanks!";
        let r = parse_summary_response(text).unwrap();
        assert_eq!(r.topics.len(), 2);
        assert_eq!(r.topics[0].name, "Trust");
        assert_eq!(r.topics[0].subtopics, strings(&["lack of trust", "mistrust"]));
        assert_eq!(r.topics[0].explanation, "Doubt about institutions.");
        assert_eq!(r.topics[1].subtopics, strings(&["mandatory"]));
        assert_eq!(r.raw_response, text);
    }

    #[test]
    fn block_without_subtopics_is_skipped() {
        let r = parse_summary_response("TOPIC: A\nEXPLANATION: x\n\nTOPIC: B\nSUBTOPICS: b").unwrap();
        assert_eq!(r.topics.len(), 1);
        assert_eq!(r.topics[0].name, "B");
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn adjacent_blocks_without_blank_line() {
        let r = parse_summary_response("TOPIC: A\nSUBTOPICS: a\nTOPIC: B\nSUBTOPICS: b").unwrap();
        assert_eq!(r.topics.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(), ["A", "B"]);
    }

    #[test]
    fn mock_vaccine_ten_topics_with_safety() {
        let r = summarize_topics(&vaccine_raw(), 10, &summarizer(), crate::prompts::DEFAULT_FEW_SHOT, &Default::default())
            .unwrap();
        assert_eq!(r.topics.len(), 10);
        let safety = r.topics.iter().find(|t| t.name.contains("Safety")).unwrap();
        assert!(safety.subtopics.contains(&"side effect".to_string()));
        assert!(safety.subtopics.contains(&"safety concern".to_string()));
        assert!(r.model_introduced.is_empty());
        assert!(r.truncation.is_none());
    }

    #[test]
    fn single_topic_single_group() {
        let r = summarize_topics(&strings(&["side effect"]), 1, &summarizer(), "x", &Default::default()).unwrap();
        assert_eq!(r.topics.len(), 1);
        assert_eq!(r.topics[0].subtopics, strings(&["side effect"]));
        assert!(r.unassigned.is_empty());
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn shortfall_is_warned_not_padded() {
        let blocks: Vec<GeneralTopic> = (0..9)
            .map(|i| GeneralTopic {
                name: format!("G{i}"),
                subtopics: vec![format!("t{i}")],
                explanation: "e".into(),
            })
            .collect();
        let text = to_block_text(&blocks);
        let p = Scripted::new(&[&text]);
        let raw: Vec<String> = (0..9).map(|i| format!("t{i}")).collect();
        let r = summarize_topics(&raw, 10, &p, "x", &Default::default()).unwrap();
        assert_eq!(r.topics.len(), 9);
        assert!(r.warnings.iter().any(|w| w.starts_with("shortfall")));
    }

    #[test]
    fn surplus_is_truncated_to_n() {
        let p = Scripted::new(&["TOPIC: A\nSUBTOPICS: a\n\nTOPIC: B\nSUBTOPICS: b\n\nTOPIC: C\nSUBTOPICS: c"]);
        let r = summarize_topics(&strings(&["a", "b", "c"]), 2, &p, "x", &Default::default()).unwrap();
        assert_eq!(r.topics.len(), 2);
        assert_eq!(r.unassigned, strings(&["c"]));
    }

    #[test]
    fn malformed_retried_once_then_error() {
        let p = Scripted::new(&["nothing", "TOPIC: A\nSUBTOPICS: a"]);
        let r = summarize_topics(&strings(&["a"]), 1, &p, "x", &Default::default()).unwrap();
        assert_eq!(p.calls(), 2);
        assert_eq!(r.exchanges.len(), 2);

        let p = Scripted::new(&["nothing"]);
        let err = summarize_topics(&strings(&["a"]), 1, &p, "x", &Default::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedResponse(_)));
        assert_eq!(p.calls(), 2);
    }

    #[test]
    fn subtopics_renormalized_and_coverage_tracked() {
        let p = Scripted::new(&["TOPIC: Safety\nSUBTOPICS: Side-Effects; Side Effect; Blood Clots\nEXPLANATION: e"]);
        let raw = strings(&["side effect", "SIDE EFFECTS", "mandatory"]);
        let r = summarize_topics(&raw, 1, &p, "x", &Default::default()).unwrap();
        assert_eq!(r.topics[0].subtopics, strings(&["side effect", "blood clot"]));
        assert_eq!(r.model_introduced, strings(&["blood clot"]));
        assert_eq!(r.unassigned, strings(&["mandatory"]));
    }

    #[test]
    fn overflow_truncates_to_most_frequent() {
        let mut raw = Vec::new();
        for i in 0..200 {
            for _ in 0..(200 - i) / 20 + 1 {
                raw.push(format!("topic number {i:03}"));
            }
        }
        let mut p = Scripted::new(&["TOPIC: A\nSUBTOPICS: topic number 000\nEXPLANATION: e"]);
        // even the distinct list is twice the limit
        let distinct = render_summarization_prompt(&by_frequency(&raw), 1, "x", &TemplateSet::default()).unwrap();
        p.context = Some(distinct.estimated_tokens() / 2);
        let r = summarize_topics(&raw, 1, &p, "x", &Default::default()).unwrap();
        let t = r.truncation.clone().unwrap();
        assert_eq!(t.distinct, 200);
        assert!(t.kept > 0 && t.kept < 200);
        assert!(r.warnings.iter().any(|w| w.contains("truncated")));

        let sent = &p.seen.lock().unwrap()[0];
        let lines: Vec<&str> = sent.user.lines().collect();
        assert_eq!(lines.len(), t.kept);
        assert_eq!(lines[0], "topic number 000");
        assert!(sent.system.len().div_ceil(4) + sent.user.chars().count().div_ceil(4) <= p.context.unwrap());
        // one more topic would not have fit
        let ranked = by_frequency(&raw);
        let bigger = render_summarization_prompt(&ranked[..t.kept + 1], 1, "x", &TemplateSet::default()).unwrap();
        assert!(!bigger.fits(p.context));
    }

    #[test]
    fn overflow_with_nothing_fitting_errors() {
        let mut p = Scripted::new(&["TOPIC: A\nSUBTOPICS: a"]);
        p.context = Some(5);
        let err = summarize_topics(&strings(&["a"]), 1, &p, "x", &Default::default()).unwrap_err();
        assert!(matches!(err, Error::Provider(ProviderError::ContextOverflow { .. })));
        assert_eq!(p.calls(), 0);
    }

    #[test]
    fn dedup_flag_sends_each_topic_once() {
        let p = Scripted::new(&["TOPIC: A\nSUBTOPICS: a"]);
        let opts = SummarizeOptions {
            dedup: true,
            ..Default::default()
        };
        summarize_topics(&strings(&["a", "b", "a"]), 1, &p, "x", &opts).unwrap();
        assert_eq!(p.seen.lock().unwrap()[0].user, "a\nb");

        let p = Scripted::new(&["TOPIC: A\nSUBTOPICS: a"]);
        summarize_topics(&strings(&["a", "b", "a"]), 1, &p, "x", &Default::default()).unwrap();
        assert_eq!(p.seen.lock().unwrap()[0].user, "a\nb\na");
    }

    #[test]
    fn empty_input_rejected() {
        let p = Scripted::new(&["x"]);
        assert!(summarize_topics(&[], 3, &p, "x", &Default::default()).is_err());
        assert!(summarize_topics(&strings(&["a"]), 0, &p, "x", &Default::default()).is_err());
        assert_eq!(p.calls(), 0);
    }

    #[test]
    fn labels_align_with_lists() {
        let lists: Vec<Vec<String>> = (0..8).map(|i| strings(&[&format!("w{i}"), "x", "y", "z"])).collect();
        let reply: String = (1..=8).map(|i| format!("{i}: Name {i}\n")).collect();
        let p = Scripted::new(&[&reply]);
        let names = label_token_topics(&lists, &p, &TemplateSet::default(), &Default::default()).unwrap();
        assert_eq!(names, (1..=8).map(|i| format!("Name {i}")).collect::<Vec<_>>());
    }

    #[test]
    fn single_list_gets_one_name() {
        let p = Scripted::new(&["1: Religion and Science"]);
        let names = label_token_topics(
            &[strings(&["game", "god", "magnetism"])],
            &p,
            &TemplateSet::default(),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(names, strings(&["Religion and Science"]));
        assert!(label_token_topics(&[], &p, &TemplateSet::default(), &Default::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn missing_labels_retried_then_fall_back() {
        let lists = vec![
            strings(&["game", "god", "magnetism", "extra"]),
            strings(&["vaccine", "dose"]),
        ];
        // second request only carries the unnamed list, as line 1
        let p = Scripted::new(&["1: Faith", "garbage"]);
        let names = label_token_topics(&lists, &p, &TemplateSet::default(), &Default::default()).unwrap();
        assert_eq!(names, strings(&["Faith", "vaccine, dose"]));
        assert_eq!(p.calls(), 2);

        let p = Scripted::new(&["garbage"]);
        let names = label_token_topics(&lists, &p, &TemplateSet::default(), &Default::default()).unwrap();
        assert_eq!(names, strings(&["game, god, magnetism", "vaccine, dose"]));
    }

    #[test]
    fn labels_batch_in_chunks() {
        let lists: Vec<Vec<String>> = (0..45).map(|i| vec![format!("w{i}")]).collect();
        let p = Scripted::new(&["garbage"]);
        let names = label_token_topics(&lists, &p, &TemplateSet::default(), &Default::default()).unwrap();
        assert_eq!(names.len(), 45);
        assert_eq!(names[44], "w44");
        // three chunks, each tried twice
        assert_eq!(p.calls(), 6);
    }

    fn phrase() -> impl Strategy<Value = String> {
        "[a-z]{1,8}( [a-z]{1,8}){0,2}"
    }

    fn topic() -> impl Strategy<Value = GeneralTopic> {
        (
            "[A-Z][a-z]{0,8}( & [A-Z][a-z]{1,8})?",
            proptest::collection::vec(phrase(), 1..6),
            "[A-Za-z ,.]{0,40}",
        )
            .prop_map(|(name, subtopics, explanation)| GeneralTopic {
                name,
                subtopics,
                explanation: explanation.trim().to_string(),
            })
    }

    proptest! {
        #[test]
        fn block_text_round_trips(topics in proptest::collection::vec(topic(), 1..6)) {
            let parsed = parse_summary_response(&to_block_text(&topics)).unwrap();
            prop_assert_eq!(parsed.topics, topics);
        }

        #[test]
        fn coverage_accounts_for_everything(
            raw in proptest::collection::vec(phrase(), 1..30),
            picks in proptest::collection::vec((0usize..30, 0usize..4), 0..30),
            extra in proptest::collection::vec(phrase(), 0..3),
        ) {
            // the model places a random subset of raw topics into 4 groups
            // and invents a few of its own
            let mut groups: Vec<Vec<String>> = vec![Vec::new(); 4];
            for (i, g) in picks {
                groups[g].push(raw[i % raw.len()].clone());
            }
            groups[0].extend(extra.iter().cloned());
            groups[0].push(raw[0].clone());
            let topics: Vec<GeneralTopic> = groups
                .into_iter()
                .enumerate()
                .filter(|(_, g)| !g.is_empty())
                .map(|(i, g)| GeneralTopic { name: format!("G{i}"), subtopics: g, explanation: String::new() })
                .collect();
            let p = Scripted::new(&[&to_block_text(&topics)]);
            let opts = SummarizeOptions::default();
            let r = summarize_topics(&raw, 4, &p, "x", &opts).unwrap();

            let known: BTreeSet<String> = raw.iter().filter_map(|t| normalize_topic(t, &opts.normalization).ok()).collect();
            let introduced: BTreeSet<&String> = r.model_introduced.iter().collect();
            let mut union: BTreeSet<String> = r.unassigned.iter().cloned().collect();
            for t in &r.topics {
                for s in &t.subtopics {
                    prop_assert!(known.contains(s) || introduced.contains(s));
                    union.insert(s.clone());
                }
            }
            prop_assert!(union.is_superset(&known));
        }
    }
}
