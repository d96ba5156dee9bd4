//! Prompt configurations, document batching and template rendering.
//!
//! Templates are plain text with `{PLACEHOLDER}` substitution. A template
//! file holds the system part, optionally followed by a line reading exactly
//! `--- user ---` and the user part. Recognized placeholders:
//!
//! | placeholder     | filled with                                          |
//! |-----------------|------------------------------------------------------|
//! | `{DOCS}`        | numbered documents, one `i: text` line each          |
//! | `{CONSTRAINTS}` | task framing sentences and the forbidden-topic list  |
//! | `{SEEDS}`       | the seed-topic sentence                              |
//! | `{N}`           | number of general topics requested                   |
//! | `{EXAMPLE}`     | the few-shot example block                           |
//! | `{TOPICS}`      | newline-joined topic list                            |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::providers::{estimate_tokens, ChatRequest};

pub const DEFAULT_BATCH_SIZE: usize = 20;
pub const DEFAULT_SEED_COUNT: usize = 2;
const USER_SEPARATOR: &str = "--- user ---";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Basic,
    Constrained,
    Seeded,
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(PromptMode::Basic),
            "constrained" => Ok(PromptMode::Constrained),
            "seeded" => Ok(PromptMode::Seeded),
            other => Err(Error::Config(format!("unknown prompt mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub mode: PromptMode,
    /// Topics the model must not return, e.g. overly broad themes.
    pub forbidden: Vec<String>,
    /// Sentences describing the task domain.
    pub framing: Vec<String>,
    pub seed_topics: Vec<String>,
    pub granularity_hint: Option<String>,
}

impl PromptConfig {
    pub fn basic() -> Self {
        PromptConfig {
            mode: PromptMode::Basic,
            ..Default::default()
        }
    }

    pub fn constrained(forbidden: &[&str], framing: &[&str]) -> Self {
        PromptConfig {
            mode: PromptMode::Constrained,
            forbidden: forbidden.iter().map(|s| s.to_string()).collect(),
            framing: framing.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn seeded(seeds: &[&str]) -> Self {
        PromptConfig {
            mode: PromptMode::Seeded,
            seed_topics: seeds.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            PromptMode::Seeded if self.seed_topics.iter().all(|s| s.trim().is_empty()) => {
                Err(Error::Config("seeded prompt mode requires at least one seed topic".into()))
            }
            PromptMode::Basic
                if !self.forbidden.is_empty() || !self.framing.is_empty() || !self.seed_topics.is_empty() =>
            {
                Err(Error::Config(
                    "basic prompt mode takes no constraints or seed topics".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStrategy {
    Individual,
    #[default]
    Batched,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub index: usize,
    pub documents: Vec<Document>,
}

/// Splits the corpus into batches in corpus order: one document each for
/// `Individual`, consecutive chunks of at most `batch_size` for `Batched`.
pub fn make_batches(corpus: &Corpus, batch_size: usize, strategy: BatchStrategy) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    let size = match strategy {
        BatchStrategy::Individual => 1,
        BatchStrategy::Batched => batch_size,
    };
    Ok(corpus
        .documents()
        .chunks(size)
        .enumerate()
        .map(|(index, docs)| Batch {
            index,
            documents: docs.to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    pub doc_ids: Vec<String>,
}

impl RenderedPrompt {
    pub fn to_request(&self) -> ChatRequest {
        ChatRequest::new(self.system.clone(), self.user.clone())
    }

    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.system) + estimate_tokens(&self.user)
    }

    pub fn fits(&self, context_tokens: Option<usize>) -> bool {
        context_tokens.is_none_or(|limit| self.estimated_tokens() <= limit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub system: String,
    pub user: String,
}

impl Template {
    /// Parses the template file format described in the module docs.
    pub fn parse(text: &str, default_user: &str) -> Self {
        let mut system = Vec::new();
        let mut user: Option<Vec<&str>> = None;
        for line in text.lines() {
            match &mut user {
                Some(u) => u.push(line),
                None if line.trim() == USER_SEPARATOR => user = Some(Vec::new()),
                None => system.push(line),
            }
        }
        Template {
            system: system.join("\n").trim_end().to_string(),
            user: user
                .map(|u| u.join("\n").trim().to_string())
                .unwrap_or_else(|| default_user.to_string()),
        }
    }

    pub fn load(path: &Path, default_user: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text, default_user))
    }
}

const OUTPUT_FORMAT: &str = "\
Output format: write exactly one line per document, in the order given, as
<index>: <topic>; <topic>
where <index> is the document number. Separate several topics for the same document with \";\". Write nothing else.";

const EXTRACTION_INTRO: &str = "\
You are an assistant that identifies the topics discussed in documents. You will be given numbered documents. For each document, return short topic phrases describing what it is about.";

pub const DEFAULT_FEW_SHOT: &str = "\
TOPIC: Trust & Mistrust
SUBTOPICS: lack of trust; distrust of government; mistrust of pharmaceutical companies; conspiracy theory
EXPLANATION: Doubts about whether the people and institutions behind the vaccine can be trusted.";

/// System/user templates for every prompt kind. Defaults are embedded and
/// each can be replaced from a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub basic: Template,
    pub constrained: Template,
    pub seeded: Template,
    pub summarization: Template,
    pub labeling: Template,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let extraction = |extra: &str| Template {
            system: format!("{EXTRACTION_INTRO}\n{extra}\n{OUTPUT_FORMAT}"),
            user: "{DOCS}".into(),
        };
        TemplateSet {
            basic: extraction(""),
            constrained: extraction("{CONSTRAINTS}"),
            seeded: extraction("{CONSTRAINTS}\n{SEEDS}"),
            summarization: Template {
                system: "\
You will be given a list of topics extracted from a collection of documents, one per line. Topics may repeat; repeated topics are more common in the documents.
Merge and summarise the list into exactly {N} general topics. For each general topic give a short name, the sub-topics from the list that it covers, and a one-sentence explanation.

Use exactly this format, with a blank line between general topics:
TOPIC: <name>
SUBTOPICS: <sub-topic>; <sub-topic>; ...
EXPLANATION: <one sentence>

Example:
{EXAMPLE}"
                    .into(),
                user: "{TOPICS}".into(),
            },
            labeling: Template {
                system: "\
Each numbered line is a list of keywords describing one topic found by a topic model. Give each topic a short, human-readable name.
Output format: write exactly one line per input line, as
<index>: <name>
Write nothing else."
                    .into(),
                user: "{DOCS}".into(),
            },
        }
    }
}

impl TemplateSet {
    pub fn for_mode(&self, mode: PromptMode) -> &Template {
        match mode {
            PromptMode::Basic => &self.basic,
            PromptMode::Constrained => &self.constrained,
            PromptMode::Seeded => &self.seeded,
        }
    }
}

fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    tidy(&out)
}

// empty placeholders leave blank-line runs behind
fn tidy(text: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() && out.last().is_none_or(|l| l.is_empty()) {
            continue;
        }
        out.push(line);
    }
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    out.join("\n")
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn quoted_list(items: &[String]) -> String {
    items
        .iter()
        .map(|s| format!("\"{}\"", s.trim()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn constraints_text(cfg: &PromptConfig) -> String {
    let mut lines: Vec<String> = cfg.framing.iter().map(|s| s.trim().to_string()).collect();
    if !cfg.forbidden.is_empty() {
        lines.push(format!(
            "Do not return broad topics that apply to the whole collection, such as: {}.",
            quoted_list(&cfg.forbidden)
        ));
    }
    if let Some(hint) = &cfg.granularity_hint {
        lines.push(hint.trim().to_string());
    }
    lines.join("\n")
}

fn seeds_text(cfg: &PromptConfig) -> String {
    let seeds: Vec<String> = cfg
        .seed_topics
        .iter()
        .filter(|s| !s.trim().is_empty())
        .cloned()
        .collect();
    if seeds.is_empty() {
        return String::new();
    }
    format!(
        "Examples of topics at the desired level of detail: {}. Return topics with a similar granularity.",
        quoted_list(&seeds)
    )
}

/// Numbered `i: text` lines. Newlines inside a document are flattened so
/// each document stays on its own line.
pub fn enumerate_lines<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| format!("{}: {}", i + 1, one_line(t)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_extraction_prompt(batch: &Batch, cfg: &PromptConfig, templates: &TemplateSet) -> Result<RenderedPrompt> {
    if batch.documents.is_empty() {
        return Err(Error::InvalidInput(format!("batch {} is empty", batch.index)));
    }
    let docs = enumerate_lines(batch.documents.iter().map(|d| d.text.as_str()));
    let (constraints, seeds) = match cfg.mode {
        PromptMode::Basic => (String::new(), String::new()),
        PromptMode::Constrained => (constraints_text(cfg), String::new()),
        PromptMode::Seeded => (constraints_text(cfg), seeds_text(cfg)),
    };
    let vars = [
        ("CONSTRAINTS", constraints.as_str()),
        ("SEEDS", seeds.as_str()),
        ("DOCS", docs.as_str()),
    ];
    let t = templates.for_mode(cfg.mode);
    Ok(RenderedPrompt {
        system: substitute(&t.system, &vars),
        user: substitute(&t.user, &vars),
        doc_ids: batch.documents.iter().map(|d| d.id.clone()).collect(),
    })
}

pub fn render_summarization_prompt(
    topics: &[String],
    n: usize,
    few_shot_example: &str,
    templates: &TemplateSet,
) -> Result<RenderedPrompt> {
    if topics.is_empty() {
        return Err(Error::InvalidInput("no topics to summarize".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("number of general topics must be at least 1".into()));
    }
    let listed = topics.iter().map(|t| one_line(t)).collect::<Vec<_>>().join("\n");
    let n = n.to_string();
    let t = &templates.summarization;
    // EXAMPLE goes last so its text is never scanned for other placeholders
    let vars = [("N", n.as_str()), ("TOPICS", listed.as_str())];
    let system = substitute(&t.system, &vars).replace("{EXAMPLE}", few_shot_example.trim());
    Ok(RenderedPrompt {
        system,
        user: t.user.replace("{TOPICS}", &listed),
        doc_ids: Vec::new(),
    })
}

pub fn render_labeling_prompt(token_lists: &[Vec<String>], templates: &TemplateSet) -> Result<RenderedPrompt> {
    if token_lists.is_empty() || token_lists.iter().any(|l| l.is_empty()) {
        return Err(Error::InvalidInput("token lists must be non-empty".into()));
    }
    let joined: Vec<String> = token_lists.iter().map(|l| l.join(", ")).collect();
    let docs = enumerate_lines(joined.iter().map(String::as_str));
    let t = &templates.labeling;
    Ok(RenderedPrompt {
        system: substitute(&t.system, &[]),
        user: t.user.replace("{DOCS}", &docs),
        doc_ids: (0..token_lists.len()).map(|i| i.to_string()).collect(),
    })
}
