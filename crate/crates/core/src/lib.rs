//! Topic extraction with prompted language models.
//!
//! The pipeline runs in stages that each have their own module:
//!
//! * [`corpus`]: load, clean, split and time-bin documents
//! * [`prompts`]: batch documents and render extraction/summarization prompts
//! * [`extract`]: dispatch batches and parse per-document topic lines
//! * [`normalize`]: collapse surface variants of the same topic
//! * [`aggregate`]: document-level counts, uniqueness and Top-K
//! * [`summarize`]: merge raw topics into N general topics with sub-topics
//! * [`evaluate`]: Jaccard matrix, embedding granularity, seed recall/precision
//! * [`report`]: run configuration, artifacts and the command implementations
//!
//! Backends live in [`providers`], including a deterministic mock so the whole
//! pipeline runs offline.

pub mod aggregate;
pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod extract;
pub mod normalize;
pub mod prompts;
pub mod providers;
pub mod report;
pub mod summarize;

pub use error::{Error, Result};
