use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use topicllm::prompts::PromptMode;
use topicllm::report::{
    cmd_eval, cmd_extract, cmd_stats, cmd_summarize, cmd_trend, write_json, ErrorReport, RunConfig,
};
use topicllm::Error;

#[derive(Parser)]
#[command(name = "topicllm", version, about = "Topic extraction, summarization and evaluation with language models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for every artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Answer from the responses recorded in the output directory.
    #[arg(long, global = true)]
    replay: bool,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    final_n: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// basic, constrained or seeded. Switching to a simpler mode drops the
    /// constraints and seeds it does not use.
    #[arg(long, global = true)]
    mode: Option<PromptMode>,
    /// Seed topics, comma separated; replaces the configured ones.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<String>>,
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract, normalize and count topics over the corpus.
    Extract,
    /// Merge extracted topics into the final N general topics.
    Summarize {
        /// Defaults to topics.json in the output directory.
        #[arg(long)]
        topics: Option<PathBuf>,
    },
    /// Jaccard matrix, granularity and seed recall/precision.
    Eval {
        /// Defaults to final_topics.json in the output directory.
        #[arg(long = "final")]
        final_topics: Option<PathBuf>,
        /// Final topic files of different sizes for granularity.
        #[arg(long)]
        granularity: Vec<PathBuf>,
        /// Defaults to mentions.jsonl in the output directory.
        #[arg(long)]
        mentions: Option<PathBuf>,
    },
    /// Per-period extraction and word-cloud frequencies.
    Trend,
    /// Statistics and Top-K recomputed from mentions.jsonl.
    Stats {
        #[arg(long)]
        mentions: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let cwd = std::env::current_dir().map_err(|e| Error::Config(format!("working directory: {e}")))?;
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(&cwd.join(p))?,
        None => RunConfig {
            base_dir: cwd.clone(),
            ..Default::default()
        },
    };
    if let Some(out) = &common.out {
        cfg.out_dir = cwd.join(out);
    }
    if let Some(corpus) = &common.corpus {
        cfg.corpus = cwd.join(corpus);
    }
    if let Some(k) = common.top_k {
        cfg.top_k = k;
    }
    if let Some(n) = common.final_n {
        cfg.final_n = n;
    }
    if let Some(size) = common.batch_size {
        cfg.batching.size = size;
    }
    if let Some(seed) = common.rng_seed {
        cfg.rng_seed = seed;
    }
    if let Some(seeds) = &common.seeds {
        cfg.prompt.prompt.seed_topics = seeds.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    if let Some(mode) = common.mode {
        let p = &mut cfg.prompt.prompt;
        p.mode = mode;
        if mode != PromptMode::Seeded {
            p.seed_topics.clear();
        }
        if mode == PromptMode::Basic {
            p.forbidden.clear();
            p.framing.clear();
            p.granularity_hint = None;
        }
    }
    Ok(cfg)
}

fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print(value: &serde_json::Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(value).expect("JSON value serializes")));
}

fn run(cli: &Cli) -> Result<i32, Error> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.resolve(&cfg.out_dir);
    let or_out = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| out.join(name));
    let replay = cli.common.replay;
    match &cli.command {
        Command::Extract => {
            let o = cmd_extract(&cfg, replay)?;
            print(&serde_json::json!({
                "config_hash": o.config_hash,
                "batches": o.batches,
                "failed_batches": o.failed_batches,
                "stats": o.stats,
                "top_k": o.topics.iter().take(cfg.top_k).map(|t| (t.topic.clone(), t.count)).collect::<Vec<_>>(),
            }));
            Ok(o.exit_code)
        }
        Command::Summarize { topics } => {
            let o = cmd_summarize(&cfg, &or_out(topics, "topics.json"), replay)?;
            print(&serde_json::json!({
                "final_topics": o.final_path,
                "topics": o.topics.iter().map(|t| t.name.clone()).collect::<Vec<_>>(),
                "warnings": o.warnings,
            }));
            Ok(0)
        }
        Command::Eval {
            final_topics,
            granularity,
            mentions,
        } => {
            let o = cmd_eval(
                &cfg,
                &or_out(final_topics, "final_topics.json"),
                granularity,
                &or_out(mentions, "mentions.jsonl"),
            )?;
            print(&serde_json::json!({
                "granularity": o.eval.granularity.report.per_n,
                "seed_eval": o.eval.seed_eval,
                "seed_eval_reason": o.eval.seed_eval_reason,
            }));
            Ok(0)
        }
        Command::Trend => {
            let o = cmd_trend(&cfg, replay)?;
            print(&serde_json::to_value(&o.trend)?);
            Ok(o.exit_code)
        }
        Command::Stats { mentions } => {
            let s = cmd_stats(&cfg, &or_out(mentions, "mentions.jsonl"))?;
            print(&serde_json::to_value(&s)?);
            Ok(0)
        }
        Command::Config => {
            emit(&cfg.to_toml()?);
            Ok(0)
        }
    }
}

fn report_error(e: &Error, out: Option<&Path>) {
    let report = ErrorReport::from(e);
    eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
    if let Some(dir) = out {
        if dir.is_dir() {
            let _ = write_json(&dir.join("error.json"), &report);
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let out = load_config(&cli.common).ok().map(|c| c.resolve(&c.out_dir));
            report_error(&e, out.as_deref());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
