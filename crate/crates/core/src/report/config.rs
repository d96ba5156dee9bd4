use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::PeriodSpec;
use crate::error::{Error, Result};
use crate::evaluate::{MatchRule, DEFAULT_GRANULARITY_NS, DEFAULT_MAX_SUBTOPICS};
use crate::extract::Batching;
use crate::normalize::NormalizationConfig;
use crate::prompts::{PromptConfig, Template, TemplateSet, DEFAULT_FEW_SHOT};
use crate::providers::{GenerationSettings, HttpConfig, MockFixture, DEFAULT_EMBEDDING_DIM};

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_FINAL_N: usize = 10;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// Which part of a stratified split to process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    #[default]
    All,
    Test,
    Rest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub part: SplitPart,
    pub fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            part: SplitPart::All,
            fraction: DEFAULT_TEST_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// TOML keyword tables for the mock; the built-in vaccine tables if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_fixture: Option<PathBuf>,
    /// Context limit advertised by the mock.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_context_tokens: Option<usize>,
    pub http: HttpConfig,
    pub generation: GenerationSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    Hashed,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub http: HttpConfig,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            kind: EmbeddingKind::Hashed,
            dim: DEFAULT_EMBEDDING_DIM,
            http: HttpConfig {
                model: "text-embedding-3-small".into(),
                context_tokens: 0,
                ..HttpConfig::default()
            },
        }
    }
}

/// Template files replacing the built-in ones.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplatePaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basic: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constrained: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeded: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summarization: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeling: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSection {
    #[serde(flatten)]
    pub prompt: PromptConfig,
    pub templates: TemplatePaths,
    /// File holding the summarization example block.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub few_shot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PeriodConfig {
    pub boundaries: Vec<DateTime<Utc>>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub granularity_ns: Vec<usize>,
    pub max_subtopics: usize,
    /// Seed topics to score; the prompt's seeds if empty.
    pub seeds: Vec<String>,
    #[serde(flatten)]
    pub matching: MatchRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            granularity_ns: DEFAULT_GRANULARITY_NS.to_vec(),
            max_subtopics: DEFAULT_MAX_SUBTOPICS,
            seeds: Vec::new(),
            matching: MatchRule::default(),
        }
    }
}

/// Everything a run needs. Relative paths resolve against the directory of
/// the file the config was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// Abort on the first invalid corpus record instead of skipping it.
    pub strict: bool,
    /// Strip links and @-mentions before prompting.
    pub clean: bool,
    pub out_dir: PathBuf,
    /// At most `i64::MAX`, the largest TOML integer.
    pub rng_seed: u64,
    pub top_k: usize,
    pub final_n: usize,
    /// Send each distinct topic once to the summarizer.
    pub dedup_summary: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<PathBuf>,
    pub split: SplitConfig,
    pub batching: Batching,
    pub prompt: PromptSection,
    pub provider: ProviderConfig,
    pub embedding: EmbeddingConfig,
    pub periods: PeriodConfig,
    pub eval: EvalConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::new(),
            strict: false,
            clean: true,
            out_dir: PathBuf::from("out"),
            rng_seed: 0,
            top_k: DEFAULT_TOP_K,
            final_n: DEFAULT_FINAL_N,
            dedup_summary: false,
            normalization: None,
            split: SplitConfig::default(),
            batching: Batching::default(),
            prompt: PromptSection::default(),
            provider: ProviderConfig::default(),
            embedding: EmbeddingConfig::default(),
            periods: PeriodConfig::default(),
            eval: EvalConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.final_n == 0 {
            return Err(Error::Config("final_n must be at least 1".into()));
        }
        if self.batching.size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.split.fraction) {
            return Err(Error::Config(format!("split fraction {} outside [0, 1]", self.split.fraction)));
        }
        if self.embedding.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        self.prompt.prompt.validate()
    }

    /// SHA-256 over the canonical JSON of every setting that affects results.
    /// Input and output locations are excluded so a relocated run hashes the
    /// same.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out_dir");
            map.remove("corpus");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn normalization_config(&self) -> Result<NormalizationConfig> {
        match &self.normalization {
            Some(p) => NormalizationConfig::load(&self.resolve(p)),
            None => NormalizationConfig::default().validated(),
        }
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        let mut set = TemplateSet::default();
        let paths = &self.prompt.templates;
        for (path, slot) in [
            (&paths.basic, &mut set.basic),
            (&paths.constrained, &mut set.constrained),
            (&paths.seeded, &mut set.seeded),
            (&paths.summarization, &mut set.summarization),
            (&paths.labeling, &mut set.labeling),
        ] {
            if let Some(p) = path {
                let default_user = slot.user.clone();
                *slot = Template::load(&self.resolve(p), &default_user)?;
            }
        }
        Ok(set)
    }

    pub fn few_shot(&self) -> Result<String> {
        match &self.prompt.few_shot {
            Some(p) => {
                let path = self.resolve(p);
                std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
            }
            None => Ok(DEFAULT_FEW_SHOT.to_string()),
        }
    }

    pub fn mock_fixture(&self) -> Result<MockFixture> {
        match &self.provider.mock_fixture {
            Some(p) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            }
            None => Ok(MockFixture::vaccine()),
        }
    }

    pub fn period_spec(&self) -> Result<PeriodSpec> {
        if self.periods.boundaries.is_empty() {
            return Err(Error::Config("no period boundaries configured".into()));
        }
        if self.periods.names.is_empty() {
            PeriodSpec::unnamed(self.periods.boundaries.clone())
        } else {
            PeriodSpec::new(self.periods.boundaries.clone(), self.periods.names.clone())
        }
    }

    /// Seeds scored by `eval`.
    pub fn eval_seeds(&self) -> Vec<String> {
        if self.eval.seeds.is_empty() {
            self.prompt.prompt.seed_topics.clone()
        } else {
            self.eval.seeds.clone()
        }
    }

    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.eval.matching.aliases
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{BatchStrategy, PromptMode};
    use proptest::prelude::*;

    fn sample() -> RunConfig {
        let mut c = RunConfig {
            corpus: "data/vaxx.jsonl".into(),
            normalization: Some("norm.toml".into()),
            rng_seed: 7,
            ..Default::default()
        };
        c.prompt.prompt = PromptConfig::seeded(&["side effect", "mandatory"]);
        c.prompt.prompt.forbidden = vec!["COVID-19".into()];
        c.prompt.few_shot = Some("few_shot.txt".into());
        c.periods.boundaries = vec![
            "2021-01-01T00:00:00Z".parse().unwrap(),
            "2021-07-01T00:00:00Z".parse().unwrap(),
        ];
        c.periods.names = vec!["early".into(), "mid".into(), "late".into()];
        c.eval.matching.aliases.insert("jab".into(), "vaccine".into());
        c.eval.matching.embedding_threshold = Some(0.8);
        c.provider.kind = ProviderKind::Http;
        c.provider.generation.temperature = 0.3;
        c
    }

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c.top_k, 10);
        assert_eq!(c.final_n, 10);
        assert_eq!(c.batching.size, 20);
        assert_eq!(c.batching.strategy, BatchStrategy::Batched);
        assert_eq!(c.split.fraction, 0.2);
        assert_eq!(c.eval.granularity_ns, vec![10, 20, 30]);
        assert_eq!(c.prompt.prompt.mode, PromptMode::Basic);
        assert_eq!(c.provider.generation.temperature, 0.0);
        assert_eq!(c.embedding.dim, 768);
    }

    #[test]
    fn toml_round_trip() {
        let c = sample();
        let back = RunConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn hash_ignores_locations_only() {
        let a = sample();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        b.corpus = "/abs/copy.jsonl".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.top_k = 11;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn unknown_mode_rejected() {
        assert!(RunConfig::from_toml_str("[prompt]\nmode = \"fancy\"").is_err());
    }

    #[test]
    fn seeded_without_seeds_invalid() {
        let c = RunConfig::from_toml_str("[prompt]\nmode = \"seeded\"").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary_knobs(
            top_k in 1usize..100,
            final_n in 1usize..50,
            seed in 0..i64::MAX as u64,
            fraction in 0.0f64..1.0,
            size in 1usize..64,
            seeds in proptest::collection::vec("[a-z ]{1,12}", 1..4),
            temperature in 0.0f64..2.0,
        ) {
            let mut c = RunConfig { top_k, final_n, rng_seed: seed, ..Default::default() };
            c.split.fraction = fraction;
            c.batching.size = size;
            c.prompt.prompt.seed_topics = seeds;
            c.provider.generation.temperature = temperature;
            let back = RunConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
