//! Deterministic offline chat backend driven by a keyword table.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{estimate_tokens, ChatProvider, ChatRequest, ChatResponse, ProviderError};

static NUMBERED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(\d+)\s*:\s?(.*)$").unwrap());
static REQUESTED_N: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)exactly\s+(\d+)\s+general\s+topics?").unwrap());

/// Topic emitted for a document that matches no keyword.
pub const UNKNOWN_TOPIC: &str = "unknown";
/// Group receiving topics that match no summarization rule.
pub const OTHER_GROUP: &str = "Other";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRule {
    /// Case-insensitive substring to look for.
    pub keyword: String,
    pub topics: Vec<String>,
}

impl FixtureRule {
    pub fn new(keyword: &str, topics: &[&str]) -> Self {
        FixtureRule {
            keyword: keyword.to_string(),
            topics: topics.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn matches(&self, lowered: &str) -> bool {
        lowered.contains(&self.keyword.to_lowercase())
    }
}

/// Keyword tables for both mock styles. In `extraction` a keyword found in
/// a document yields its topics; in `summarization` a keyword found in an
/// input topic places it under the general topic named by `topics[0]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub extraction: Vec<FixtureRule>,
    #[serde(default)]
    pub summarization: Vec<FixtureRule>,
}

impl MockFixture {
    /// Vaccine-hesitancy tables used by the demo config and tests.
    pub fn vaccine() -> Self {
        let r = FixtureRule::new;
        MockFixture {
            extraction: vec![
                r("hurt", &["Side-Effect"]),
                r("sore arm", &["side effects"]),
                r("fever", &["Side Effect"]),
                r("side effect", &["side effect"]),
                r("dangerous", &["Safety Concern"]),
                r("unsafe", &["safety concerns"]),
                r("doesn't work", &["Ineffective"]),
                r("useless", &["ineffective"]),
                r("ineffective", &["ineffective"]),
                r("don't trust", &["Lack of Trust"]),
                r("lies", &["lack of trust"]),
                r("mandate", &["Mandatory"]),
                r("forced", &["mandatory"]),
                r("rushed", &["Rushed Development"]),
                r("big pharma", &["pharma profit"]),
                r("microchip", &["Conspiracy Theory"]),
                r("god", &["religious belief"]),
                r("politician", &["political motive"]),
                r("mrna", &["vaccine ingredients"]),
                r("natural immunity", &["unnecessary"]),
            ],
            summarization: vec![
                r("side effect", &["Safety & Side Effects"]),
                r("safety", &["Safety & Side Effects"]),
                r("ineffective", &["Vaccine Effectiveness"]),
                r("effective", &["Vaccine Effectiveness"]),
                r("trust", &["Trust & Mistrust"]),
                r("mandatory", &["Mandates & Personal Freedom"]),
                r("rushed", &["Development Speed"]),
                r("pharma", &["Pharmaceutical Industry"]),
                r("conspiracy", &["Conspiracy Theories"]),
                r("religious", &["Religion"]),
                r("political", &["Politics"]),
                r("ingredient", &["Vaccine Ingredients"]),
                r("unnecessary", &["Necessity"]),
            ],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.extraction.is_empty() && self.summarization.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockStyle {
    Extraction,
    Summarization,
}

#[derive(Debug, Clone)]
pub struct MockChatProvider {
    fixture: MockFixture,
    style: MockStyle,
    context_tokens: Option<usize>,
    id: String,
}

impl MockChatProvider {
    pub fn new(fixture: MockFixture, style: MockStyle) -> Self {
        let id = match style {
            MockStyle::Extraction => "mock:extraction",
            MockStyle::Summarization => "mock:summarization",
        };
        MockChatProvider {
            fixture,
            style,
            context_tokens: None,
            id: id.into(),
        }
    }

    pub fn with_context_tokens(mut self, limit: usize) -> Self {
        self.context_tokens = Some(limit);
        self
    }

    fn extraction_topics(&self, text: &str) -> Vec<String> {
        let lowered = text.to_lowercase();
        let mut out: Vec<String> = Vec::new();
        for rule in self.fixture.extraction.iter().filter(|r| r.matches(&lowered)) {
            for t in &rule.topics {
                if !out.contains(t) {
                    out.push(t.clone());
                }
            }
        }
        if out.is_empty() {
            out.push(UNKNOWN_TOPIC.to_string());
        }
        out
    }

    fn extract(&self, user: &str) -> String {
        let mut lines = Vec::new();
        let mut next_index = 1;
        for line in user.lines().filter(|l| !l.trim().is_empty()) {
            let (index, text) = match NUMBERED.captures(line) {
                Some(c) => (c[1].parse::<usize>().unwrap_or(next_index), c.get(2).map_or("", |m| m.as_str())),
                None => (next_index, line),
            };
            next_index = index + 1;
            lines.push(format!("{index}: {}", self.extraction_topics(text).join("; ")));
        }
        lines.join("\n")
    }

    fn summarize(&self, system: &str, user: &str) -> String {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for line in user.lines().map(str::trim).filter(|l| !l.is_empty()) {
            *freq.entry(line).or_default() += 1;
        }
        let mut groups: BTreeMap<String, Vec<(&str, usize)>> = BTreeMap::new();
        for (topic, count) in &freq {
            let lowered = topic.to_lowercase();
            let group = self
                .fixture
                .summarization
                .iter()
                .find(|r| r.matches(&lowered))
                .and_then(|r| r.topics.first().cloned())
                .unwrap_or_else(|| OTHER_GROUP.to_string());
            groups.entry(group).or_default().push((topic, *count));
        }
        let mut ranked: Vec<_> = groups
            .into_iter()
            .map(|(name, mut members)| {
                members.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                let weight: usize = members.iter().map(|m| m.1).sum();
                (name, weight, members)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        if let Some(n) = REQUESTED_N
            .captures(system)
            .and_then(|c| c[1].parse::<usize>().ok())
        {
            ranked.truncate(n);
        }
        ranked
            .iter()
            .map(|(name, _, members)| {
                let subs: Vec<&str> = members.iter().map(|m| m.0).collect();
                format!(
                    "TOPIC: {name}\nSUBTOPICS: {}\nEXPLANATION: Documents discussing {}.",
                    subs.join("; "),
                    name.to_lowercase()
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

impl ChatProvider for MockChatProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn context_tokens(&self) -> Option<usize> {
        self.context_tokens
    }

    fn max_in_flight(&self) -> usize {
        4
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let text = match self.style {
            MockStyle::Extraction => self.extract(&req.user),
            MockStyle::Summarization => self.summarize(&req.system, &req.user),
        };
        Ok(ChatResponse {
            prompt_tokens: req.estimated_input_tokens() as u64,
            completion_tokens: estimate_tokens(&text) as u64,
            text,
            provider_id: self.id.clone(),
            attempts: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extractor(rules: Vec<FixtureRule>) -> MockChatProvider {
        MockChatProvider::new(
            MockFixture {
                extraction: rules,
                summarization: vec![],
            },
            MockStyle::Extraction,
        )
    }

    #[test]
    fn keyword_maps_to_topic() {
        let p = extractor(vec![FixtureRule::new("hurt", &["side effect"])]);
        let out = p.complete(&ChatRequest::new("sys", "1: vaccines hurt my arm")).unwrap();
        assert_eq!(out.text, "1: side effect");
        let out = p.complete(&ChatRequest::new("sys", "doc: vaccines hurt my arm")).unwrap();
        assert_eq!(out.text, "1: side effect");
    }

    #[test]
    fn unmatched_doc_gets_unknown() {
        let p = extractor(vec![FixtureRule::new("hurt", &["side effect"])]);
        let out = p.complete(&ChatRequest::new("sys", "1: lovely weather")).unwrap();
        assert_eq!(out.text, "1: unknown");
    }

    #[test]
    fn one_line_per_document() {
        let p = MockChatProvider::new(MockFixture::vaccine(), MockStyle::Extraction);
        let user: String = (1..=20).map(|i| format!("{i}: doc {i} fever\n")).collect();
        let out = p.complete(&ChatRequest::new("sys", user)).unwrap();
        let lines: Vec<&str> = out.text.lines().collect();
        assert_eq!(lines.len(), 20);
        assert_eq!(lines[19], "20: Side Effect");
    }

    #[test]
    fn multiple_keywords_join_with_semicolons() {
        let p = MockChatProvider::new(MockFixture::vaccine(), MockStyle::Extraction);
        let out = p
            .complete(&ChatRequest::new("s", "1: it was rushed and I don't trust them"))
            .unwrap();
        assert_eq!(out.text, "1: Lack of Trust; Rushed Development");
    }

    #[test]
    fn summarizer_groups_and_respects_n() {
        let p = MockChatProvider::new(MockFixture::vaccine(), MockStyle::Summarization);
        let user = "side effect\nside effect\nsafety concern\nineffective\nmandatory\n";
        let out = p
            .complete(&ChatRequest::new("Merge into exactly 2 general topics.", user))
            .unwrap();
        assert_eq!(
            out.text,
            "TOPIC: Safety & Side Effects\nSUBTOPICS: side effect; safety concern\n\
             EXPLANATION: Documents discussing safety & side effects.\n\n\
             TOPIC: Mandates & Personal Freedom\nSUBTOPICS: mandatory\n\
             EXPLANATION: Documents discussing mandates & personal freedom."
        );
    }

    #[test]
    fn summarizer_puts_unmatched_into_other() {
        let p = MockChatProvider::new(MockFixture::vaccine(), MockStyle::Summarization);
        let out = p
            .complete(&ChatRequest::new("exactly 1 general topic", "weather"))
            .unwrap();
        assert!(out.text.starts_with("TOPIC: Other\nSUBTOPICS: weather\n"));
    }

    #[test]
    fn fixture_round_trips_through_toml() {
        let f = MockFixture::vaccine();
        let text = toml::to_string(&f).unwrap();
        assert_eq!(toml::from_str::<MockFixture>(&text).unwrap(), f);
    }
}
