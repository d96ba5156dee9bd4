//! Evaluation metrics: sub-topic overlap between general topics, average
//! pairwise name similarity (granularity), and recall/precision of seed
//! topics against gold labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::{normalize_topic, NormalizationConfig};
use crate::providers::{cosine, embed, dispatch_ordered, EmbeddingProvider, EmbeddingVector};
use crate::summarize::GeneralTopic;

/// Sub-topics per general topic entering the overlap matrix by default.
pub const DEFAULT_MAX_SUBTOPICS: usize = 10;

/// Topic counts for which granularity is reported by default.
pub const DEFAULT_GRANULARITY_NS: [usize; 3] = [10, 20, 30];

/// Published average similarities for 10, 20 and 30 final topics. They
/// depend on the original model outputs and encoder and are not expected
/// to be reproduced offline.
pub const REFERENCE_GRANULARITY: [(usize, f64); 3] = [(10, 0.155), (20, 0.197), (30, 0.203)];

/// Published recall and precision (percent) for seeded extraction. Not
/// reproducible without the original model runs.
pub const REFERENCE_SEED_RECALL: f64 = 70.0;
pub const REFERENCE_SEED_PRECISION: f64 = 49.6;

/// `|A ∩ B| / |A ∪ B|` over sub-topic sets, with 1.0 meaning identical.
/// Despite often being called a distance, this is the Jaccard index;
/// [`JaccardMatrix::distance`] gives `1 − index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl JaccardMatrix {
    pub fn distance(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|row| row.iter().map(|v| 1.0 - v).collect())
            .collect()
    }

    /// Labeled square matrix, header row first.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        out.write_record(&header).map_err(csv_err)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()
            .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        Ok(())
    }
}

pub fn jaccard_index(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pairwise index over the first `max_subtopics` sub-topics of each topic.
pub fn jaccard_matrix(topics: &[GeneralTopic], max_subtopics: usize) -> Result<JaccardMatrix> {
    let sets: Vec<BTreeSet<&str>> = topics
        .iter()
        .map(|t| {
            let set: BTreeSet<&str> = t.subtopics.iter().take(max_subtopics).map(String::as_str).collect();
            if set.is_empty() {
                Err(Error::EmptySubtopics(t.name.clone()))
            } else {
                Ok(set)
            }
        })
        .collect::<Result<_>>()?;
    let n = sets.len();
    let mut values = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = jaccard_index(&sets[i], &sets[j]);
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(JaccardMatrix {
        labels: topics.iter().map(|t| t.name.clone()).collect(),
        values,
    })
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Mean cosine similarity over all unordered pairs.
pub fn avg_pairwise_similarity_vectors(vectors: &[EmbeddingVector]) -> Result<f64> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 topics, got {n}")));
    }
    if let Some(v) = vectors.iter().find(|v| v.norm() == 0.0) {
        return Err(Error::ZeroVector(v.source_text.clone()));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += cosine(&vectors[i].values, &vectors[j].values)
                .ok_or_else(|| Error::InvalidInput("embedding dimensions differ".into()))?;
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// Embeds each name (concurrently, up to `workers`) and averages pairwise
/// cosine similarity.
pub fn avg_pairwise_similarity(
    topic_names: &[String],
    embedder: &dyn EmbeddingProvider,
    workers: usize,
) -> Result<f64> {
    if topic_names.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 topics, got {}",
            topic_names.len()
        )));
    }
    let vectors = dispatch_ordered(topic_names, workers, |_, name| embed(embedder, name))
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    avg_pairwise_similarity_vectors(&vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityReport {
    pub per_n: BTreeMap<usize, f64>,
    pub pairs: BTreeMap<usize, usize>,
}

/// Granularity for several final topic lists, keyed by list length.
pub fn granularity(
    lists: &[Vec<String>],
    embedder: &dyn EmbeddingProvider,
    workers: usize,
) -> Result<GranularityReport> {
    let mut report = GranularityReport {
        per_n: BTreeMap::new(),
        pairs: BTreeMap::new(),
    };
    for names in lists {
        let n = names.len();
        report.per_n.insert(n, avg_pairwise_similarity(names, embedder, workers)?);
        report.pairs.insert(n, pair_count(n));
    }
    Ok(report)
}

/// How an extracted topic is matched to a seed topic. Both sides are
/// normalized first; an alias maps a normalized extracted topic to a seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchRule {
    pub aliases: BTreeMap<String, String>,
    /// When set, an extracted topic also matches the seed it is most similar
    /// to if that cosine similarity reaches this threshold.
    pub embedding_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedCounts {
    pub gold_st_samples: usize,
    pub extracted_st_samples: usize,
    pub correct_st_samples: usize,
}

/// Recall and precision as ratios in [0, 1]. An undefined ratio (0/0) is
/// `None` with a reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEvalReport {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub counts: SeedCounts,
    pub recall_undefined_reason: Option<String>,
    pub precision_undefined_reason: Option<String>,
    /// Documents in the assignments without a gold label.
    pub skipped_unlabeled: usize,
}

/// Maps extracted topics to seeds.
pub struct SeedMatcher<'a> {
    seeds: BTreeSet<String>,
    rule: &'a MatchRule,
    norm: &'a NormalizationConfig,
    embedder: Option<(&'a dyn EmbeddingProvider, Vec<EmbeddingVector>)>,
}

impl<'a> SeedMatcher<'a> {
    pub fn new(
        seeds: &[String],
        rule: &'a MatchRule,
        norm: &'a NormalizationConfig,
        embedder: Option<&'a dyn EmbeddingProvider>,
    ) -> Result<Self> {
        let seeds: BTreeSet<String> = seeds
            .iter()
            .map(|s| normalize_topic(s, norm))
            .collect::<Result<_>>()?;
        let embedder = match (rule.embedding_threshold, embedder) {
            (Some(_), Some(e)) => {
                let vecs = seeds
                    .iter()
                    .map(|s| embed(e, s))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Some((e, vecs))
            }
            (Some(_), None) => {
                return Err(Error::Config("embedding threshold set but no embedder given".into()))
            }
            _ => None,
        };
        Ok(SeedMatcher {
            seeds,
            rule,
            norm,
            embedder,
        })
    }

    pub fn seeds(&self) -> &BTreeSet<String> {
        &self.seeds
    }

    /// The seed `topic` maps to, if any.
    pub fn map(&self, topic: &str) -> Result<Option<String>> {
        let Ok(t) = normalize_topic(topic, self.norm) else {
            return Ok(None);
        };
        if self.seeds.contains(&t) {
            return Ok(Some(t));
        }
        if let Some(target) = self.rule.aliases.get(&t) {
            if let Ok(target) = normalize_topic(target, self.norm) {
                if self.seeds.contains(&target) {
                    return Ok(Some(target));
                }
            }
        }
        if let (Some(threshold), Some((e, seed_vecs))) = (self.rule.embedding_threshold, &self.embedder) {
            let v = embed(*e, &t)?;
            let best = self
                .seeds
                .iter()
                .zip(seed_vecs)
                .filter_map(|(s, sv)| cosine(&v.values, &sv.values).map(|c| (s, c)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((s, c)) = best {
                if c >= threshold {
                    return Ok(Some(s.clone()));
                }
            }
        }
        Ok(None)
    }
}

/// A sample is correct when its gold label is a seed `s` and some extracted
/// topic maps to `s`; it is an extracted sample when any extracted topic
/// maps to any seed. Gold labels are normalized like topics. Documents
/// without a gold label are skipped.
pub fn seed_eval(
    assignments: &BTreeMap<String, BTreeSet<String>>,
    gold: &BTreeMap<String, String>,
    matcher: &SeedMatcher,
) -> Result<SeedEvalReport> {
    let norm_gold: BTreeMap<&str, String> = gold
        .iter()
        .filter_map(|(id, label)| normalize_topic(label, matcher.norm).ok().map(|l| (id.as_str(), l)))
        .collect();
    let vocabulary: HashSet<&String> = norm_gold.values().collect();
    if let Some(missing) = matcher.seeds.iter().find(|s| !vocabulary.contains(s)) {
        return Err(Error::UnknownSeed(missing.clone()));
    }

    let mut counts = SeedCounts::default();
    let mut skipped_unlabeled = 0;
    let empty = BTreeSet::new();
    let doc_ids: BTreeSet<&str> = assignments
        .keys()
        .map(String::as_str)
        .chain(norm_gold.keys().copied())
        .collect();
    for id in doc_ids {
        let Some(label) = norm_gold.get(id) else {
            skipped_unlabeled += 1;
            continue;
        };
        let topics = assignments.get(id).unwrap_or(&empty);
        let mut mapped = BTreeSet::new();
        for t in topics {
            if let Some(s) = matcher.map(t)? {
                mapped.insert(s);
            }
        }
        let gold_is_seed = matcher.seeds.contains(label);
        counts.gold_st_samples += gold_is_seed as usize;
        counts.extracted_st_samples += !mapped.is_empty() as usize;
        counts.correct_st_samples += (gold_is_seed && mapped.contains(label)) as usize;
    }

    let ratio = |num: usize, den: usize, what: &str| -> (Option<f64>, Option<String>) {
        if den == 0 {
            (None, Some(format!("no {what}")))
        } else {
            (Some(num as f64 / den as f64), None)
        }
    };
    let (recall, recall_undefined_reason) = ratio(
        counts.correct_st_samples,
        counts.gold_st_samples,
        "documents have a seed topic as gold label",
    );
    let (precision, precision_undefined_reason) = ratio(
        counts.correct_st_samples,
        counts.extracted_st_samples,
        "documents had an extracted topic matching a seed",
    );
    Ok(SeedEvalReport {
        recall,
        precision,
        counts,
        recall_undefined_reason,
        precision_undefined_reason,
        skipped_unlabeled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{HashEmbedder, ProviderError};
    use proptest::prelude::*;

    fn topic(name: &str, subs: &[&str]) -> GeneralTopic {
        GeneralTopic {
            name: name.into(),
            subtopics: subs.iter().map(|s| s.to_string()).collect(),
            explanation: String::new(),
        }
    }

    fn vector(values: Vec<f64>, text: &str) -> EmbeddingVector {
        EmbeddingVector {
            values,
            source_text: text.into(),
        }
    }

    #[test]
    fn jaccard_examples() {
        let m = jaccard_matrix(
            &[topic("A", &["a", "b", "c"]), topic("B", &["b", "c", "d"]), topic("C", &["x"]), topic("D", &["c", "b", "a", "a"])],
            10,
        )
        .unwrap();
        assert_eq!(m.values[0][1], 0.5);
        assert_eq!(m.values[0][2], 0.0);
        assert_eq!(m.values[0][3], 1.0);
        assert_eq!(m.distance()[0][1], 0.5);
        assert_eq!(m.distance()[0][3], 0.0);
        assert!((0..4).all(|i| m.values[i][i] == 1.0));
    }

    #[test]
    fn jaccard_caps_subtopics() {
        let m = jaccard_matrix(&[topic("A", &["a", "b", "z"]), topic("B", &["a", "b", "y"])], 2).unwrap();
        assert_eq!(m.values[0][1], 1.0);
    }

    #[test]
    fn jaccard_rejects_empty() {
        assert!(matches!(
            jaccard_matrix(&[topic("A", &["a"]), topic("E", &[])], 10),
            Err(Error::EmptySubtopics(n)) if n == "E"
        ));
    }

    #[test]
    fn jaccard_csv_shape() {
        let topics: Vec<GeneralTopic> = (0..10).map(|i| topic(&format!("T{i}"), &["a"])).collect();
        let mut buf = Vec::new();
        jaccard_matrix(&topics, 10).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 11);
        assert!(rows.iter().all(|r| r.split(',').count() == 11));
    }

    #[test]
    fn pair_counts() {
        assert_eq!(pair_count(10), 45);
        assert_eq!(pair_count(2), 1);
        assert_eq!(pair_count(30), 435);
        assert_eq!(pair_count(0), 0);
        assert_eq!(pair_count(1), 0);
    }

    #[test]
    fn similarity_examples() {
        let e = vector(vec![1.0, 0.0], "a");
        assert_eq!(avg_pairwise_similarity_vectors(&[e.clone(), e]).unwrap(), 1.0);

        // unit vectors with e1·e2 = 0.5, e1·e3 = 0, e2·e3 = 0.25
        let e1 = vec![1.0, 0.0, 0.0];
        let e2 = vec![0.5, 0.75f64.sqrt(), 0.0];
        let y = 0.25 / 0.75f64.sqrt();
        let e3 = vec![0.0, y, (1.0 - y * y).sqrt()];
        let avg = avg_pairwise_similarity_vectors(&[vector(e1, "1"), vector(e2, "2"), vector(e3, "3")]).unwrap();
        assert!((avg - 0.25).abs() < 1e-12);
    }

    #[test]
    fn similarity_errors() {
        assert!(avg_pairwise_similarity_vectors(&[vector(vec![1.0], "a")]).is_err());
        assert!(matches!(
            avg_pairwise_similarity_vectors(&[vector(vec![1.0, 0.0], "a"), vector(vec![0.0, 0.0], "z")]),
            Err(Error::ZeroVector(t)) if t == "z"
        ));
    }

    #[test]
    fn similarity_via_embedder() {
        let e = HashEmbedder::default();
        let names: Vec<String> = ["Safety", "Safety", "Safety"].iter().map(|s| s.to_string()).collect();
        let v = avg_pairwise_similarity(&names, &e, 2).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let g = granularity(&[names.clone(), names[..2].to_vec()], &e, 1).unwrap();
        assert_eq!(g.pairs[&3], 3);
        assert_eq!(g.pairs[&2], 1);
    }

    struct Failing;
    impl EmbeddingProvider for Failing {
        fn id(&self) -> &str {
            "failing"
        }
        fn dimension(&self) -> usize {
            2
        }
        fn embed_raw(&self, _: &str) -> std::result::Result<Vec<f64>, ProviderError> {
            Err(ProviderError::Transient("down".into()))
        }
    }

    #[test]
    fn embedder_errors_propagate() {
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(
            avg_pairwise_similarity(&names, &Failing, 1),
            Err(Error::Provider(ProviderError::Transient(_)))
        ));
    }

    fn table(rows: &[(&str, &str, &[&str])]) -> (BTreeMap<String, BTreeSet<String>>, BTreeMap<String, String>) {
        let mut a = BTreeMap::new();
        let mut g = BTreeMap::new();
        for (id, label, topics) in rows {
            if !label.is_empty() {
                g.insert(id.to_string(), label.to_string());
            }
            a.insert(id.to_string(), topics.iter().map(|t| t.to_string()).collect());
        }
        (a, g)
    }

    fn seeds(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_extractor() {
        let (a, g) = table(&[
            ("1", "side effect", &["Side Effects"]),
            ("2", "mandatory", &["mandatory"]),
            ("3", "other", &["politics"]),
            ("4", "side effect", &["side-effect", "fever"]),
        ]);
        let rule = MatchRule::default();
        let norm = NormalizationConfig::default();
        let m = SeedMatcher::new(&seeds(&["side effect", "mandatory"]), &rule, &norm, None).unwrap();
        let r = seed_eval(&a, &g, &m).unwrap();
        assert_eq!((r.recall, r.precision), (Some(1.0), Some(1.0)));
        assert_eq!(
            r.counts,
            SeedCounts {
                gold_st_samples: 3,
                extracted_st_samples: 3,
                correct_st_samples: 3
            }
        );
    }

    #[test]
    fn wrong_seed_is_extracted_but_not_correct() {
        let (a, g) = table(&[("1", "side effect", &["mandatory"]), ("2", "", &["mandatory"])]);
        let rule = MatchRule::default();
        let norm = NormalizationConfig::default();
        let m = SeedMatcher::new(&seeds(&["side effect", "mandatory"]), &rule, &norm, None);
        // "mandatory" is not a gold label
        assert!(matches!(m.and_then(|m| seed_eval(&a, &g, &m)), Err(Error::UnknownSeed(s)) if s == "mandatory"));

        let m = SeedMatcher::new(&seeds(&["side effect"]), &rule, &norm, None).unwrap();
        let aliased = MatchRule {
            aliases: [("mandatory".to_string(), "side effect".to_string())].into(),
            ..Default::default()
        };
        let r = seed_eval(&a, &g, &m).unwrap();
        assert_eq!(r.counts.correct_st_samples, 0);
        assert_eq!(r.skipped_unlabeled, 1);
        let m = SeedMatcher::new(&seeds(&["side effect"]), &aliased, &norm, None).unwrap();
        assert_eq!(seed_eval(&a, &g, &m).unwrap().recall, Some(1.0));
    }

    #[test]
    fn undefined_ratios_are_none() {
        let (a, g) = table(&[("1", "side effect", &["politics"])]);
        let rule = MatchRule::default();
        let norm = NormalizationConfig::default();
        let m = SeedMatcher::new(&seeds(&["side effect"]), &rule, &norm, None).unwrap();
        let r = seed_eval(&a, &g, &m).unwrap();
        assert_eq!(r.recall, Some(0.0));
        assert_eq!(r.precision, None);
        assert!(r.precision_undefined_reason.is_some());
    }

    #[test]
    fn embedding_threshold_matches_near_forms() {
        let (a, g) = table(&[("1", "side effect", &["side effects reported"])]);
        let e = HashEmbedder::default();
        let norm = NormalizationConfig::default();
        let exact = MatchRule::default();
        let m = SeedMatcher::new(&seeds(&["side effect"]), &exact, &norm, None).unwrap();
        assert_eq!(seed_eval(&a, &g, &m).unwrap().recall, Some(0.0));
        let near = MatchRule {
            embedding_threshold: Some(0.5),
            ..Default::default()
        };
        assert!(SeedMatcher::new(&seeds(&["side effect"]), &near, &norm, None).is_err());
        let m = SeedMatcher::new(&seeds(&["side effect"]), &near, &norm, Some(&e)).unwrap();
        assert_eq!(seed_eval(&a, &g, &m).unwrap().recall, Some(1.0));
    }

    fn unit_vectors() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..12, 2usize..6).prop_flat_map(|(n, d)| {
            proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, d), n).prop_filter_map(
                "zero vector",
                |vs| {
                    vs.into_iter()
                        .map(|v| {
                            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                            (norm > 1e-6).then(|| v.iter().map(|x| x / norm).collect())
                        })
                        .collect()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn matrix_symmetric_unit_diagonal(
            lists in proptest::collection::vec(proptest::collection::vec("[a-h]", 1..8), 1..8)
        ) {
            let topics: Vec<GeneralTopic> = lists
                .iter()
                .enumerate()
                .map(|(i, l)| GeneralTopic { name: i.to_string(), subtopics: l.clone(), explanation: String::new() })
                .collect();
            let m = jaccard_matrix(&topics, 10).unwrap();
            for i in 0..topics.len() {
                prop_assert_eq!(m.values[i][i], 1.0);
                for j in 0..topics.len() {
                    prop_assert_eq!(m.values[i][j], m.values[j][i]);
                    prop_assert!((0.0..=1.0).contains(&m.values[i][j]));
                }
            }
        }

        #[test]
        fn similarity_permutation_invariant(vs in unit_vectors(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let vecs: Vec<EmbeddingVector> = vs.iter().enumerate().map(|(i, v)| vector(v.clone(), &i.to_string())).collect();
            let mut shuffled = vecs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = avg_pairwise_similarity_vectors(&vecs).unwrap();
            let b = avg_pairwise_similarity_vectors(&shuffled).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&a));
        }
    }
}
