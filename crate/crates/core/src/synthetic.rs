//! Seeded synthetic pools whose dynamic-ranking winner is known by
//! construction.
//!
//! Questions are made of words over the letters `a..=m`. The intended best
//! answer repeats several question words, adds more `a..=m` words and has
//! the most votes, so it leads both attributes. Every other answer shares
//! fewer question words, mixes in words over `n..=z` and has fewer votes.
//! A pool is kept only if its dynamic ranking really puts the intended best
//! candidate first; its gold ranking is that dynamic ranking.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{QARecord, ResponseCandidate};
use crate::embed::Embedder;
use crate::error::{Error, Result};
use crate::prepare::{prepare_record, PrepareConfig, PreparedRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub records: usize,
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            records: 200,
            pool_size: 5,
            seed: 17,
        }
    }
}

const MAX_ATTEMPTS: usize = 100;

fn word(rng: &mut ChaCha8Rng, letters: std::ops::RangeInclusive<u8>) -> String {
    let len = rng.gen_range(3..=6);
    (0..len).map(|_| rng.gen_range(letters.clone()) as char).collect()
}

fn good(rng: &mut ChaCha8Rng) -> String {
    word(rng, b'a'..=b'm')
}

fn bad(rng: &mut ChaCha8Rng) -> String {
    word(rng, b'n'..=b'z')
}

fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
}

fn build_pool(rng: &mut ChaCha8Rng, id: &str, m: usize) -> (QARecord, usize) {
    let question: Vec<String> = (0..6).map(|_| good(rng)).collect();
    let t0 = base_time() + Duration::hours(rng.gen_range(0..10_000));
    let mut texts = Vec::with_capacity(m);

    let mut best: Vec<String> = question.choose_multiple(rng, 4).cloned().collect();
    best.extend((0..4).map(|_| good(rng)));
    best.shuffle(rng);
    texts.push(best.join(" "));

    for level in 1..m {
        let shared = 2usize.saturating_sub(level / 2);
        let n_bad = (2 + level).min(6);
        let mut words: Vec<String> = question.choose_multiple(rng, shared).cloned().collect();
        words.extend((0..n_bad).map(|_| bad(rng)));
        while words.len() < 8 {
            words.push(good(rng));
        }
        words.shuffle(rng);
        texts.push(words.join(" "));
    }

    // strictly decreasing votes by quality level
    let mut votes = Vec::with_capacity(m);
    let mut v = rng.gen_range(40..80u64);
    for _ in 0..m {
        votes.push(v);
        v = v.saturating_sub(rng.gen_range(3..10));
    }

    let mut slots: Vec<usize> = (0..m).collect();
    slots.shuffle(rng);
    let mut candidates: Vec<Option<ResponseCandidate>> = vec![None; m];
    for (level, &slot) in slots.iter().enumerate() {
        candidates[slot] = Some(ResponseCandidate {
            id: format!("{id}-a{slot}"),
            content: texts[level].clone(),
            votes: votes[level],
            created_at: t0 + Duration::minutes(rng.gen_range(1..5_000)),
            accepted: level == 0,
        });
    }
    let record = QARecord {
        question_id: id.to_string(),
        question_text: question.join(" "),
        question_created_at: t0,
        candidates: candidates.into_iter().map(Option::unwrap).collect(),
        gold_ranking: None,
    };
    (record, slots[0])
}

/// Generates `cfg.records` pools and their prepared form. Gold rankings are
/// the dynamic rankings under `prep`.
pub fn generate(
    cfg: &SyntheticConfig,
    embedder: &dyn Embedder,
    prep: &PrepareConfig,
) -> Result<Vec<(QARecord, PreparedRecord)>> {
    if cfg.pool_size < 2 || cfg.pool_size > 8 {
        return Err(Error::invalid("synthetic pool size must be in 2..=8"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.records);
    for r in 0..cfg.records {
        let id = format!("syn-{r:05}");
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let (mut record, best) = build_pool(&mut rng, &id, cfg.pool_size);
            let prepared = match prepare_record(&record, embedder, prep) {
                Ok(p) => p,
                Err(Error::ZeroReward { .. }) => continue,
                Err(e) => return Err(e),
            };
            if prepared.ranking.best() == best {
                record.gold_ranking = Some(prepared.ranking.order.clone());
                accepted = Some((record, prepared));
                break;
            }
        }
        out.push(accepted.ok_or_else(|| {
            Error::invalid(format!("could not build synthetic pool {id}"))
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashedNgramEmbedder;

    #[test]
    fn suite_is_seeded_and_consistent() {
        let cfg = SyntheticConfig {
            records: 20,
            pool_size: 5,
            seed: 3,
        };
        let e = HashedNgramEmbedder::default();
        let a = generate(&cfg, &e, &PrepareConfig::default()).unwrap();
        let b = generate(&cfg, &e, &PrepareConfig::default()).unwrap();
        assert_eq!(a.len(), 20);
        for ((ra, pa), (rb, _)) in a.iter().zip(&b) {
            assert_eq!(ra, rb);
            ra.validate().unwrap();
            assert_eq!(ra.pool_size(), 5);
            let gold = ra.gold_ranking.as_ref().unwrap();
            assert_eq!(gold, &pa.ranking.order);
            assert!(ra.candidates[gold[0]].accepted);
            assert!(ra.candidates[gold[0]].content.bytes().all(|c| c == b' ' || c <= b'm'));
        }
        let best: std::collections::HashSet<usize> =
            a.iter().map(|(_, p)| p.ranking.best()).collect();
        assert!(best.len() > 1);
    }
}
