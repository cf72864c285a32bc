//! Argument groups shared by several subcommands, and the numeric defaults.

use std::path::PathBuf;

use anyhow::{Context, Result};
use apdf_rank::apdf::{DecayConfig, LogBase, DEFAULT_HALF_LIFE_DAYS};
use apdf_rank::corpus::QARecord;
use apdf_rank::objective::{ComparisonMode, DEFAULT_ALPHA};
use apdf_rank::PrepareConfig;
use chrono::{DateTime, Utc};
use clap::Args;
use serde::Serialize;

pub mod defaults {
    pub const EMBED_DIM: usize = 256;
    pub const EMBED_NGRAM: usize = 3;
    pub const HALF_LIFE_DAYS: f64 = super::DEFAULT_HALF_LIFE_DAYS;
    pub const ALPHA: f64 = super::DEFAULT_ALPHA;
    pub const EPOCHS: usize = 3;
    pub const LEARNING_RATE: f64 = 2.0;
    pub const SEED: u64 = 7;
    pub const INIT_SCALE: f64 = 0.01;
    pub const SYNTHETIC_SEED: u64 = 17;
    pub const POOL_SIZE: usize = 5;
    pub const BLEU_MAX_N: usize = 4;
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedArgs {
    /// TSV of precomputed vectors keyed `<qid>` and `<qid>/<cid>`; replaces the hashed embedder.
    #[arg(long, env = "APDF_EMBEDDINGS")]
    pub embeddings: Option<PathBuf>,
    /// Hashed embedder dimension.
    #[arg(long, env = "APDF_EMBED_DIM", default_value_t = defaults::EMBED_DIM)]
    pub dim: usize,
    /// Hashed embedder character n-gram length.
    #[arg(long, env = "APDF_EMBED_NGRAM", default_value_t = defaults::EMBED_NGRAM)]
    pub ngram: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ApdfArgs {
    /// Rank discount logarithm: e or 2.
    #[arg(long, env = "APDF_LOG_BASE", default_value = "e")]
    pub log_base: LogBase,
    /// Vote decay half-life in days.
    #[arg(long, env = "APDF_HALF_LIFE_DAYS", default_value_t = defaults::HALF_LIFE_DAYS)]
    pub half_life_days: f64,
    /// Decay reference time (RFC 3339). Defaults to the latest timestamp in the input.
    #[arg(long, env = "APDF_REFERENCE_TIME")]
    pub reference_time: Option<String>,
    /// Use raw vote counts.
    #[arg(long)]
    pub no_decay: bool,
}

impl ApdfArgs {
    pub fn decay(&self, records: &[QARecord]) -> Result<DecayConfig> {
        if self.no_decay {
            return Ok(DecayConfig::disabled());
        }
        let reference = match &self.reference_time {
            Some(t) => parse_time(t)?,
            None => latest_timestamp(records).unwrap_or(DateTime::<Utc>::UNIX_EPOCH),
        };
        Ok(DecayConfig::new(reference, self.half_life_days)?)
    }

    pub fn prepare_config(&self, records: &[QARecord]) -> Result<PrepareConfig> {
        Ok(PrepareConfig {
            log_base: self.log_base,
            decay: self.decay(records)?,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LossArgs {
    /// Weight of the alignment term.
    #[arg(long, env = "APDF_ALPHA", default_value_t = defaults::ALPHA)]
    pub alpha: f64,
    /// Comparison positives: literal or top_anchored.
    #[arg(long, env = "APDF_MODE", default_value = "literal")]
    pub mode: ComparisonMode,
}

pub fn parse_time(s: &str) -> Result<DateTime<Utc>> {
    Ok(DateTime::parse_from_rfc3339(s)
        .with_context(|| format!("bad timestamp `{s}`"))
        .map_err(invalid)?
        .with_timezone(&Utc))
}

pub fn latest_timestamp(records: &[QARecord]) -> Option<DateTime<Utc>> {
    records
        .iter()
        .flat_map(|r| {
            std::iter::once(r.question_created_at).chain(r.candidates.iter().map(|c| c.created_at))
        })
        .max()
}

/// Marks an error as a validation failure.
pub fn invalid(e: anyhow::Error) -> anyhow::Error {
    apdf_rank::Error::invalid(format!("{e:#}")).into()
}

pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| apdf_rank::Error::invalid(format!("bad integer `{t}` in list")).into())
        })
        .collect()
}
