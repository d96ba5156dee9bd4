//! Document-level topic counts, uniqueness statistics and Top-K.
//!
//! A topic mentioned several times for the same document counts once, so
//! `count` is the number of distinct supporting documents.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::normalize::Assignment;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCount {
    pub topic: String,
    pub count: usize,
    pub doc_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub total_mentions: usize,
    pub unique_topics: usize,
    /// `unique_topics / total_mentions`, 0.0 for an empty list.
    pub unique_ratio: f64,
}

/// Partial counts that merge associatively and commutatively, so shards can
/// be counted in parallel.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopicCounter {
    docs: BTreeMap<String, BTreeSet<String>>,
}

impl TopicCounter {
    pub fn add(&mut self, a: &Assignment) {
        self.docs
            .entry(a.topic.clone())
            .or_default()
            .insert(a.doc_id.clone());
    }

    pub fn merge(mut self, other: TopicCounter) -> TopicCounter {
        for (topic, ids) in other.docs {
            self.docs.entry(topic).or_default().extend(ids);
        }
        self
    }

    /// Sorted by count descending, then topic ascending.
    pub fn into_counts(self) -> Vec<TopicCount> {
        let mut counts: Vec<TopicCount> = self
            .docs
            .into_iter()
            .map(|(topic, doc_ids)| TopicCount {
                topic,
                count: doc_ids.len(),
                doc_ids,
            })
            .collect();
        counts.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.topic.cmp(&b.topic)));
        counts
    }
}

impl<'a> FromIterator<&'a Assignment> for TopicCounter {
    fn from_iter<I: IntoIterator<Item = &'a Assignment>>(iter: I) -> Self {
        let mut c = TopicCounter::default();
        iter.into_iter().for_each(|a| c.add(a));
        c
    }
}

pub fn aggregate(assignments: &[Assignment]) -> Vec<TopicCount> {
    assignments.iter().collect::<TopicCounter>().into_counts()
}

/// Same result as [`aggregate`], counted over rayon shards.
pub fn aggregate_parallel(assignments: &[Assignment]) -> Vec<TopicCount> {
    assignments
        .par_iter()
        .fold(TopicCounter::default, |mut c, a| {
            c.add(a);
            c
        })
        .reduce(TopicCounter::default, TopicCounter::merge)
        .into_counts()
}

/// The first `k` entries of an [`aggregate`] result.
pub fn top_k(counts: &[TopicCount], k: usize) -> Vec<TopicCount> {
    counts.iter().take(k).cloned().collect()
}

pub fn stats(assignments: &[Assignment]) -> AggregateStats {
    let total_mentions = assignments.len();
    let unique_topics = assignments
        .iter()
        .map(|a| a.topic.as_str())
        .collect::<HashSet<_>>()
        .len();
    AggregateStats {
        total_mentions,
        unique_topics,
        unique_ratio: if total_mentions == 0 {
            0.0
        } else {
            unique_topics as f64 / total_mentions as f64
        },
    }
}
