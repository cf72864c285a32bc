//! Turns a [`QARecord`] into everything the objective needs: attribute gains,
//! APDF matrices, the semantic rank and the dynamic ranking.

use serde::{Deserialize, Serialize};

use crate::apdf::{
    decayed_popularity, popularity_gain, semantic_gain, ApdfBundle, DecayConfig, GainVector,
    LogBase,
};
use crate::corpus::QARecord;
use crate::embed::{cosine, Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::ranking::{dynamic_rank, DynamicRanking, SemanticRank};

pub const SEMANTIC: &str = "semantic";
pub const POPULARITY: &str = "popularity";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub log_base: LogBase,
    pub decay: DecayConfig,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            log_base: LogBase::Natural,
            decay: DecayConfig::disabled(),
        }
    }
}

/// A pool with its APDF matrices and dynamic ranking attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedRecord {
    pub record_id: String,
    pub question: String,
    pub candidates: Vec<String>,
    /// Question/candidate cosine per candidate.
    pub phi: Vec<f64>,
    pub arank: SemanticRank,
    pub bundle: ApdfBundle,
    pub ranking: DynamicRanking,
}

/// Semantic and popularity gains of a pool, given precomputed cosines.
pub fn attribute_gains(record: &QARecord, phi: &[f64], decay: &DecayConfig) -> Result<Vec<GainVector>> {
    let semantic = phi
        .iter()
        .map(|&p| semantic_gain(p))
        .collect::<Result<Vec<f64>>>()?;
    let popularity = record
        .candidates
        .iter()
        .map(|c| popularity_gain(decayed_popularity(c.votes, c.created_at, decay)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(vec![
        GainVector::new(SEMANTIC, semantic)?,
        GainVector::new(POPULARITY, popularity)?,
    ])
}

/// Builds a [`PreparedRecord`] from explicit embeddings.
pub fn prepare_with_embeddings(
    record: &QARecord,
    question: &EmbeddingVector,
    candidates: &[EmbeddingVector],
    cfg: &PrepareConfig,
) -> Result<PreparedRecord> {
    record.validate()?;
    if candidates.len() != record.pool_size() {
        return Err(Error::DimensionMismatch {
            expected: record.pool_size(),
            actual: candidates.len(),
        });
    }
    cfg.decay.validate()?;
    let phi = candidates
        .iter()
        .map(|c| cosine(question, c))
        .collect::<Result<Vec<f64>>>()?;
    let gains = attribute_gains(record, &phi, &cfg.decay)?;
    let bundle = ApdfBundle::from_gains(&gains, cfg.log_base)?;
    let arank = SemanticRank::from_scores(&phi);
    let ranking = dynamic_rank(&bundle.multi, &arank)?;
    Ok(PreparedRecord {
        record_id: record.question_id.clone(),
        question: record.question_text.clone(),
        candidates: record.candidates.iter().map(|c| c.content.clone()).collect(),
        phi,
        arank,
        bundle,
        ranking,
    })
}

/// Builds a [`PreparedRecord`] embedding the texts with `embedder`.
pub fn prepare_record(
    record: &QARecord,
    embedder: &dyn Embedder,
    cfg: &PrepareConfig,
) -> Result<PreparedRecord> {
    let q = embedder.embed(&record.question_text);
    let cands: Vec<EmbeddingVector> = record
        .candidates
        .iter()
        .map(|c| embedder.embed(&c.content))
        .collect();
    prepare_with_embeddings(record, &q, &cands, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ResponseCandidate;
    use crate::embed::HashedNgramEmbedder;
    use chrono::{TimeZone, Utc};

    fn record() -> QARecord {
        let t = Utc.with_ymd_and_hms(2022, 3, 1, 0, 0, 0).unwrap();
        let cand = |id: &str, text: &str, votes| ResponseCandidate {
            id: id.into(),
            content: text.into(),
            votes,
            created_at: t,
            accepted: false,
        };
        QARecord {
            question_id: "q1".into(),
            question_text: "how do I reverse a vector in rust".into(),
            question_created_at: t,
            candidates: vec![
                cand("a", "call reverse on the vector in rust", 30),
                cand("b", "bake the bread at two hundred degrees", 1),
                cand("c", "iterate backwards over the vector", 8),
            ],
            gold_ranking: None,
        }
    }

    #[test]
    fn prepared_record_is_consistent() {
        let p = prepare_record(&record(), &HashedNgramEmbedder::default(), &PrepareConfig::default())
            .unwrap();
        assert_eq!(p.bundle.singles.len(), 2);
        assert_eq!(p.bundle.size(), 3);
        assert_eq!(p.ranking.len(), 3);
        // the on-topic, most voted answer leads
        assert_eq!(p.ranking.best(), 0);
        assert_eq!(p.arank.rank_of(0), 0);
        for i in 0..3 {
            for j in 0..3 {
                let prod = p.bundle.singles[0].get(i, j) * p.bundle.singles[1].get(i, j);
                assert_eq!(p.bundle.multi.get(i, j), prod);
            }
        }
    }

    #[test]
    fn embedding_count_must_match_pool() {
        let e = HashedNgramEmbedder::default();
        let r = record();
        let q = e.embed(&r.question_text);
        assert!(prepare_with_embeddings(&r, &q, std::slice::from_ref(&q), &PrepareConfig::default()).is_err());
    }
}
