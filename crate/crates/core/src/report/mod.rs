//! Run configuration, artifact files and the command implementations behind
//! the CLI.
//!
//! Every JSON artifact starts with a [`Header`] carrying the hash of the
//! config that wrote it and the `lineage` (the hash of the extraction run its
//! data derives from). `eval` refuses inputs whose lineages disagree.

mod commands;
mod config;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::Exchange;
use crate::providers::{prompt_digest, ChatResponse, ReplayProvider};

pub use commands::{
    build_chat_provider, build_embedder, cmd_eval, cmd_extract, cmd_stats, cmd_summarize, cmd_trend, load_run_corpus,
    EvalOutcome, ExtractOutcome, FinalTopicsFile, MentionRecord, StatsFile, SummarizeOutcome, SummaryWarningsFile,
    TopicsFile, TrendFile, TrendOutcome,
};
pub use config::{
    EmbeddingConfig, EmbeddingKind, EvalConfig, PeriodConfig, PromptSection, ProviderConfig, ProviderKind, RunConfig,
    SplitConfig, SplitPart, TemplatePaths, DEFAULT_FINAL_N, DEFAULT_TEST_FRACTION, DEFAULT_TOP_K,
};

pub const TOOL: &str = "topicllm";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub lineage: String,
}

impl Header {
    pub fn new(config_hash: &str, lineage: &str) -> Self {
        Header {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.into(),
            lineage: lineage.into(),
        }
    }
}

/// Writes pretty JSON with a trailing newline, creating parent directories.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

/// One exchange as stored under `prompts/` and `responses/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub seq: usize,
    pub batch_index: usize,
    pub attempt: u32,
    pub prompt_sha256: String,
    pub system: String,
    pub user: String,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub seq: usize,
    pub batch_index: usize,
    pub attempt: u32,
    pub prompt_sha256: String,
    pub response: ChatResponse,
}

/// Writes `prompts/NNNN.json` and `responses/NNNN.json` under `dir`,
/// numbered from 1 in exchange order. Stale files from earlier runs are
/// removed first.
pub fn write_raw_log(dir: &Path, exchanges: &[Exchange]) -> Result<()> {
    for sub in ["prompts", "responses"] {
        let d = dir.join(sub);
        if d.exists() {
            fs::remove_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    for (i, x) in exchanges.iter().enumerate() {
        let seq = i + 1;
        let digest = prompt_digest(&x.prompt.system, &x.prompt.user);
        write_json(
            &dir.join("prompts").join(format!("{seq:04}.json")),
            &PromptRecord {
                seq,
                batch_index: x.batch_index,
                attempt: x.attempt,
                prompt_sha256: digest.clone(),
                system: x.prompt.system.clone(),
                user: x.prompt.user.clone(),
                doc_ids: x.prompt.doc_ids.clone(),
            },
        )?;
        write_json(
            &dir.join("responses").join(format!("{seq:04}.json")),
            &ResponseRecord {
                seq,
                batch_index: x.batch_index,
                attempt: x.attempt,
                prompt_sha256: digest,
                response: x.response.clone(),
            },
        )?;
    }
    Ok(())
}

/// Loads `responses/*.json` under `dir` in sequence order.
pub fn read_responses(dir: &Path) -> Result<Vec<ResponseRecord>> {
    let rdir = dir.join("responses");
    let entries = fs::read_dir(&rdir).map_err(|e| Error::io(&rdir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut records: Vec<ResponseRecord> = paths.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    records.sort_by_key(|r| r.seq);
    Ok(records)
}

/// A provider answering from the responses recorded under `dir`.
pub fn replay_provider(dir: &Path) -> Result<ReplayProvider> {
    let records = read_responses(dir)?;
    Ok(ReplayProvider::new(
        records.into_iter().map(|r| (r.prompt_sha256, r.response)),
    ))
}

/// Writes JSON Lines: the header object first, then one record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, header: &Header, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", serde_json::to_string(&serde_json::json!({ "header": header }))?).map_err(io)?;
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Header, Vec<T>)> {
    #[derive(Deserialize)]
    struct HeaderLine {
        header: Header,
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |what: String| Error::InvalidInput(format!("{}: {what}", path.display()));
    let first = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header = serde_json::from_str::<HeaderLine>(&first)
        .map_err(|e| bad(format!("line 1 is not a header: {e}")))?
        .header;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 2)))?);
    }
    Ok((header, records))
}

/// Machine-readable error report written to stderr and `error.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub error: String,
    pub kind: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        ErrorReport {
            error: e.to_string(),
            kind: e.kind().into(),
            exit_code: e.exit_code(),
        }
    }
}
