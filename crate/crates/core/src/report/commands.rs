use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{EmbeddingKind, ProviderKind, RunConfig, SplitPart};
use super::{read_json, read_jsonl, replay_provider, write_json, write_jsonl, write_raw_log, write_text, Header};
use crate::aggregate::{aggregate, stats, AggregateStats, TopicCount};
use crate::corpus::{load_corpus, stratified_split, temporal_bins, Corpus};
use crate::error::{Error, Result};
use crate::evaluate::{
    granularity, jaccard_matrix, seed_eval, GranularityReport, JaccardMatrix, SeedEvalReport, SeedMatcher,
    REFERENCE_GRANULARITY,
};
use crate::extract::{run_extraction, BatchFailure, FailureKind};
use crate::normalize::{normalize_topic, Assignment};
use crate::providers::{
    ChatProvider, EmbeddingProvider, HashEmbedder, HttpChatProvider, HttpEmbedder, MockChatProvider, MockStyle,
    ThrottleConfig, Throttled,
};
use crate::summarize::{summarize_topics, GeneralTopic, SummarizeOptions, Truncation};

/// Exit code when the provider failed the run.
pub const EXIT_PROVIDER: i32 = 3;
/// Exit code when more than half of the batches returned unparseable output.
pub const EXIT_PARSE: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub doc_id: String,
    pub batch_index: usize,
    pub raw: String,
    /// `None` when the raw topic normalized to nothing.
    pub normalized: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicEntry {
    pub topic: String,
    pub count: usize,
}

impl From<&TopicCount> for TopicEntry {
    fn from(c: &TopicCount) -> Self {
        TopicEntry {
            topic: c.topic.clone(),
            count: c.count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicsFile {
    pub header: Header,
    /// Counts are distinct supporting documents per topic.
    pub counting: String,
    pub documents: usize,
    pub topics: Vec<TopicCount>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub provider: usize,
    pub malformed: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub header: Header,
    #[serde(flatten)]
    pub stats: AggregateStats,
    pub dropped_mentions: usize,
    pub batches: usize,
    pub failed_batches: FailureCounts,
    pub top_k: Vec<TopicEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FailuresFile {
    header: Header,
    aborted: Option<String>,
    failures: Vec<BatchFailure>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOutcome {
    pub exit_code: i32,
    pub config_hash: String,
    pub topics: Vec<TopicCount>,
    pub stats: AggregateStats,
    pub batches: usize,
    pub failed_batches: FailureCounts,
    pub warnings: Vec<String>,
}

/// Loads the configured corpus, cleans it and selects the configured part of
/// the stratified split.
pub fn load_run_corpus(cfg: &RunConfig) -> Result<(Corpus, Vec<String>)> {
    if cfg.corpus.as_os_str().is_empty() {
        return Err(Error::Config("no corpus path configured".into()));
    }
    let report = load_corpus(&cfg.resolve(&cfg.corpus), cfg.strict)?;
    let mut warnings: Vec<String> = report
        .invalid
        .iter()
        .map(|(line, why)| format!("corpus line {line} skipped: {why}"))
        .collect();
    let mut corpus = report.corpus;
    if cfg.clean {
        let (cleaned, dropped) = corpus.cleaned();
        if dropped > 0 {
            warnings.push(format!("{dropped} documents empty after cleaning"));
        }
        corpus = cleaned;
    }
    let corpus = match cfg.split.part {
        SplitPart::All => corpus,
        part => {
            let (test, rest) = stratified_split(&corpus, cfg.split.fraction, cfg.rng_seed)?;
            if part == SplitPart::Test {
                test
            } else {
                rest
            }
        }
    };
    Ok((corpus, warnings))
}

/// The configured chat backend, or a replay of the responses recorded under
/// `replay_dir`.
pub fn build_chat_provider(
    cfg: &RunConfig,
    style: MockStyle,
    replay_dir: Option<&Path>,
) -> Result<Box<dyn ChatProvider>> {
    if let Some(dir) = replay_dir {
        return Ok(Box::new(replay_provider(dir)?));
    }
    Ok(match cfg.provider.kind {
        ProviderKind::Mock => {
            let mut mock = MockChatProvider::new(cfg.mock_fixture()?, style);
            if let Some(limit) = cfg.provider.mock_context_tokens {
                mock = mock.with_context_tokens(limit);
            }
            Box::new(mock)
        }
        ProviderKind::Http => {
            let http = &cfg.provider.http;
            if std::env::var(&http.api_key_env).map_or(true, |k| k.is_empty()) {
                tracing::warn!(var = %http.api_key_env, "API key variable not set; sending unauthenticated requests");
            }
            let throttle = ThrottleConfig::per_minute(http.max_in_flight, http.requests_per_minute);
            Box::new(Throttled::new(HttpChatProvider::with_ureq(http.clone()), throttle))
        }
    })
}

pub fn build_embedder(cfg: &RunConfig) -> Box<dyn EmbeddingProvider> {
    match cfg.embedding.kind {
        EmbeddingKind::Hashed => Box::new(HashEmbedder::new(cfg.embedding.dim)),
        EmbeddingKind::Http => Box::new(HttpEmbedder::with_ureq(cfg.embedding.http.clone(), cfg.embedding.dim)),
    }
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.resolve(&cfg.out_dir)
}

/// Extraction through aggregation for one corpus, writing every artifact
/// under `out`.
fn run_pipeline(
    corpus: &Corpus,
    cfg: &RunConfig,
    provider: &dyn ChatProvider,
    out: &Path,
    mut warnings: Vec<String>,
) -> Result<ExtractOutcome> {
    let norm = cfg.normalization_config()?;
    let templates = cfg.templates()?;
    let config_hash = cfg.config_hash();
    let header = Header::new(&config_hash, &config_hash);

    let result = run_extraction(
        corpus,
        &cfg.prompt.prompt,
        cfg.batching,
        provider,
        &templates,
        &cfg.provider.generation,
    )?;
    write_raw_log(out, &result.raw_log)?;

    let mut records = Vec::with_capacity(result.mentions.len());
    let mut assignments = Vec::new();
    let mut dropped = 0;
    for m in &result.mentions {
        let normalized = normalize_topic(&m.raw, &norm).ok();
        match &normalized {
            Some(t) => assignments.push(Assignment::new(t.clone(), m.doc_id.clone())),
            None => dropped += 1,
        }
        records.push(MentionRecord {
            doc_id: m.doc_id.clone(),
            batch_index: m.batch_index,
            raw: m.raw.clone(),
            normalized,
        });
    }
    write_jsonl(&out.join("mentions.jsonl"), &header, &records)?;

    let counts = aggregate(&assignments);
    let st = stats(&assignments);
    let failed = FailureCounts {
        provider: result.failed_batches(FailureKind::Provider),
        malformed: result.failed_batches(FailureKind::Malformed),
        aborted: result.failed_batches(FailureKind::Aborted),
    };
    write_json(
        &out.join("topics.json"),
        &TopicsFile {
            header: header.clone(),
            counting: "document".into(),
            documents: corpus.len(),
            topics: counts.clone(),
        },
    )?;
    write_json(
        &out.join("stats.json"),
        &StatsFile {
            header: header.clone(),
            stats: st,
            dropped_mentions: dropped,
            batches: result.batches,
            failed_batches: failed,
            top_k: counts.iter().take(cfg.top_k).map(TopicEntry::from).collect(),
        },
    )?;
    warnings.extend(result.warnings.iter().cloned());
    write_json(
        &out.join("failures.json"),
        &FailuresFile {
            header,
            aborted: result.aborted.clone(),
            failures: result.failures.clone(),
            warnings: warnings.clone(),
        },
    )?;

    let exit_code = if result.aborted.is_some() || (result.batches > 0 && failed.provider + failed.aborted == result.batches) {
        EXIT_PROVIDER
    } else if failed.malformed * 2 > result.batches {
        EXIT_PARSE
    } else {
        0
    };
    Ok(ExtractOutcome {
        exit_code,
        config_hash,
        topics: counts,
        stats: st,
        batches: result.batches,
        failed_batches: failed,
        warnings,
    })
}

/// Extracts, normalizes and aggregates the configured corpus into the
/// output directory. With `replay`, responses come from that directory's
/// `responses/` instead of the provider.
pub fn cmd_extract(cfg: &RunConfig, replay: bool) -> Result<ExtractOutcome> {
    cfg.validate()?;
    let (corpus, warnings) = load_run_corpus(cfg)?;
    let out = out_dir(cfg);
    let provider = build_chat_provider(cfg, MockStyle::Extraction, replay.then_some(out.as_path()))?;
    run_pipeline(&corpus, cfg, provider.as_ref(), &out, warnings)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalTopicsFile {
    pub header: Header,
    pub n: usize,
    pub topics: Vec<GeneralTopic>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryWarningsFile {
    pub header: Header,
    pub warnings: Vec<String>,
    pub unassigned: Vec<String>,
    pub model_introduced: Vec<String>,
    pub missing_explanation: Vec<String>,
    pub truncation: Option<Truncation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummarizeOutcome {
    pub topics: Vec<GeneralTopic>,
    pub warnings: Vec<String>,
    pub final_path: PathBuf,
}

/// Summarizes `topics.json` into `final_topics.json` (also kept as
/// `final_topics_<N>.json`) and `summary_warnings.json`. Each topic enters
/// the list once per supporting document.
pub fn cmd_summarize(cfg: &RunConfig, topics_path: &Path, replay: bool) -> Result<SummarizeOutcome> {
    cfg.validate()?;
    let topics: TopicsFile = read_json(topics_path)?;
    let raw: Vec<String> = topics
        .topics
        .iter()
        .flat_map(|t| std::iter::repeat_n(t.topic.clone(), t.count))
        .collect();
    if raw.is_empty() {
        return Err(Error::InvalidInput(format!("{} lists no topics", topics_path.display())));
    }
    let out = out_dir(cfg);
    let n = cfg.final_n;
    let log_dir = out.join("summary").join(format!("n{n}"));
    let provider = build_chat_provider(cfg, MockStyle::Summarization, replay.then_some(log_dir.as_path()))?;
    let opts = SummarizeOptions {
        dedup: cfg.dedup_summary,
        normalization: cfg.normalization_config()?,
        templates: cfg.templates()?,
        settings: cfg.provider.generation.clone(),
    };
    let result = summarize_topics(&raw, n, provider.as_ref(), &cfg.few_shot()?, &opts)?;
    write_raw_log(&log_dir, &result.exchanges)?;

    let header = Header::new(&cfg.config_hash(), &topics.header.lineage);
    let file = FinalTopicsFile {
        header: header.clone(),
        n,
        topics: result.topics.clone(),
    };
    let final_path = out.join("final_topics.json");
    write_json(&final_path, &file)?;
    write_json(&out.join(format!("final_topics_{n}.json")), &file)?;
    write_json(
        &out.join("summary_warnings.json"),
        &SummaryWarningsFile {
            header,
            warnings: result.warnings.clone(),
            unassigned: result.unassigned.clone(),
            model_introduced: result.model_introduced.clone(),
            missing_explanation: result.missing_explanation.clone(),
            truncation: result.truncation.clone(),
        },
    )?;
    Ok(SummarizeOutcome {
        topics: result.topics,
        warnings: result.warnings,
        final_path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardSection {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub distance: Vec<Vec<f64>>,
    pub variant: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularitySection {
    #[serde(flatten)]
    pub report: GranularityReport,
    /// Configured topic counts with no matching final topic file.
    pub missing_ns: Vec<usize>,
    pub reference: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub header: Header,
    pub jaccard: JaccardSection,
    pub granularity: GranularitySection,
    pub seed_eval: Option<SeedEvalReport>,
    pub seed_eval_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub eval: EvalFile,
    pub matrix: JaccardMatrix,
}

fn check_lineage(expected: &str, header: &Header, path: &Path) -> Result<()> {
    if header.lineage != expected {
        return Err(Error::Config(format!(
            "{} derives from run {}, expected {expected}",
            path.display(),
            header.lineage
        )));
    }
    Ok(())
}

/// Computes every metric. `granularity_files` lists final topic files of
/// different sizes; when empty, `final_topics_<N>.json` in the output
/// directory is used for each configured N that exists.
pub fn cmd_eval(
    cfg: &RunConfig,
    final_path: &Path,
    granularity_files: &[PathBuf],
    mentions_path: &Path,
) -> Result<EvalOutcome> {
    cfg.validate()?;
    let out = out_dir(cfg);
    let final_topics: FinalTopicsFile = read_json(final_path)?;
    let (mentions_header, mentions) = read_jsonl::<MentionRecord>(mentions_path)?;
    let lineage = mentions_header.lineage.clone();
    check_lineage(&lineage, &final_topics.header, final_path)?;

    let matrix = jaccard_matrix(&final_topics.topics, cfg.eval.max_subtopics)?;

    let files: Vec<PathBuf> = if granularity_files.is_empty() {
        cfg.eval
            .granularity_ns
            .iter()
            .map(|n| out.join(format!("final_topics_{n}.json")))
            .filter(|p| p.exists())
            .collect()
    } else {
        granularity_files.to_vec()
    };
    let mut lists = Vec::new();
    for p in &files {
        let f: FinalTopicsFile = read_json(p)?;
        check_lineage(&lineage, &f.header, p)?;
        lists.push(f.topics.into_iter().map(|t| t.name).collect::<Vec<_>>());
    }
    if lists.is_empty() && final_topics.topics.len() >= 2 {
        lists.push(final_topics.topics.iter().map(|t| t.name.clone()).collect());
    }
    let embedder = build_embedder(cfg);
    let workers = cfg.embedding.http.max_in_flight.max(1);
    let report = granularity(&lists, embedder.as_ref(), workers)?;
    let missing_ns = cfg
        .eval
        .granularity_ns
        .iter()
        .copied()
        .filter(|n| !report.per_n.contains_key(n))
        .collect();

    let (seed_eval, seed_eval_reason) = run_seed_eval(cfg, &mentions, embedder.as_ref())?;

    let header = Header::new(&cfg.config_hash(), &lineage);
    let eval = EvalFile {
        header: header.clone(),
        jaccard: JaccardSection {
            labels: matrix.labels.clone(),
            values: matrix.values.clone(),
            distance: matrix.distance(),
            variant: "index".into(),
            note: "values are |A∩B|/|A∪B| (1 = identical sub-topic sets); distance is 1 - value".into(),
        },
        granularity: GranularitySection {
            report,
            missing_ns,
            reference: REFERENCE_GRANULARITY.into_iter().collect(),
        },
        seed_eval,
        seed_eval_reason,
    };
    write_json(&out.join("eval.json"), &eval)?;
    let mut csv = Vec::new();
    matrix.write_csv(&mut csv)?;
    let csv = String::from_utf8(csv).expect("csv output is UTF-8");
    write_text(
        &out.join("jaccard.csv"),
        &format!("# config_hash={} lineage={}\n{csv}", header.config_hash, header.lineage),
    )?;
    Ok(EvalOutcome { eval, matrix })
}

fn run_seed_eval(
    cfg: &RunConfig,
    mentions: &[MentionRecord],
    embedder: &dyn EmbeddingProvider,
) -> Result<(Option<SeedEvalReport>, Option<String>)> {
    let seeds = cfg.eval_seeds();
    if seeds.is_empty() {
        return Ok((None, Some("no seed topics configured".into())));
    }
    let (corpus, _) = load_run_corpus(cfg)?;
    let gold: BTreeMap<String, String> = corpus
        .iter()
        .filter_map(|d| d.label.clone().map(|l| (d.id.clone(), l)))
        .collect();
    if gold.is_empty() {
        return Ok((None, Some("corpus has no gold labels".into())));
    }
    let mut assignments: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for m in mentions {
        if corpus.get(&m.doc_id).is_none() {
            return Err(Error::InvalidInput(format!(
                "mention for document {} not in the corpus",
                m.doc_id
            )));
        }
        if let Some(t) = &m.normalized {
            assignments.entry(m.doc_id.clone()).or_default().insert(t.clone());
        }
    }
    let norm = cfg.normalization_config()?;
    let embedder = cfg.eval.matching.embedding_threshold.map(|_| embedder);
    let matcher = SeedMatcher::new(&seeds, &cfg.eval.matching, &norm, embedder)?;
    Ok((Some(seed_eval(&assignments, &gold, &matcher)?), None))
}

/// Recomputes statistics and Top-K from `mentions.jsonl`.
pub fn cmd_stats(cfg: &RunConfig, mentions_path: &Path) -> Result<StatsFile> {
    let (header, mentions) = read_jsonl::<MentionRecord>(mentions_path)?;
    let assignments: Vec<Assignment> = mentions
        .iter()
        .filter_map(|m| m.normalized.as_ref().map(|t| Assignment::new(t.clone(), m.doc_id.clone())))
        .collect();
    let counts = aggregate(&assignments);
    let batches: BTreeSet<usize> = mentions.iter().map(|m| m.batch_index).collect();
    Ok(StatsFile {
        header: Header::new(&cfg.config_hash(), &header.lineage),
        stats: stats(&assignments),
        dropped_mentions: mentions.len() - assignments.len(),
        batches: batches.len(),
        failed_batches: FailureCounts::default(),
        top_k: counts.iter().take(cfg.top_k).map(TopicEntry::from).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendFile {
    pub header: Header,
    pub periods: Vec<String>,
    pub documents: Vec<usize>,
    /// Per period, sorted by count descending.
    pub frequencies: Vec<Vec<TopicEntry>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct WordCloudFile {
    header: Header,
    period: String,
    frequencies: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendOutcome {
    pub exit_code: i32,
    pub trend: TrendFile,
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Runs extraction independently per time bin and writes `trend.json` plus
/// one `wordcloud_<i>_<name>.json` frequency map per period. Each bin's run
/// artifacts go under `periods/<i>_<name>/`.
pub fn cmd_trend(cfg: &RunConfig, replay: bool) -> Result<TrendOutcome> {
    cfg.validate()?;
    let spec = cfg.period_spec()?;
    let (corpus, warnings) = load_run_corpus(cfg)?;
    let bins = temporal_bins(&corpus, &spec)?;
    let out = out_dir(cfg);
    let config_hash = cfg.config_hash();
    let header = Header::new(&config_hash, &config_hash);

    let mut trend = TrendFile {
        header: header.clone(),
        periods: spec.bin_names().to_vec(),
        documents: bins.iter().map(Corpus::len).collect(),
        frequencies: Vec::new(),
    };
    let mut exit_code = 0;
    for (i, (bin, name)) in bins.iter().zip(spec.bin_names()).enumerate() {
        let tag = format!("{i}_{}", slug(name));
        let counts = if bin.is_empty() {
            Vec::new()
        } else {
            let dir = out.join("periods").join(&tag);
            let provider = build_chat_provider(cfg, MockStyle::Extraction, replay.then_some(dir.as_path()))?;
            let outcome = run_pipeline(bin, cfg, provider.as_ref(), &dir, warnings.clone())?;
            if exit_code == 0 {
                exit_code = outcome.exit_code;
            }
            outcome.topics
        };
        write_json(
            &out.join(format!("wordcloud_{tag}.json")),
            &WordCloudFile {
                header: header.clone(),
                period: name.clone(),
                frequencies: counts.iter().map(|c| (c.topic.clone(), c.count)).collect(),
            },
        )?;
        trend.frequencies.push(counts.iter().map(TopicEntry::from).collect());
    }
    write_json(&out.join("trend.json"), &trend)?;
    Ok(TrendOutcome { exit_code, trend })
}
