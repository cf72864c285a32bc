//! Browser demo: APDF heatmaps and dynamic ranking for a hand-edited pool,
//! the comparison loss under adjustable policy scores, and the rank discount.
//!
//! Every export takes and returns JSON strings; the `*_json` functions hold
//! the logic so they can be tested natively.

use apdf_rank::apdf::{rank_discount, DecayConfig, LogBase};
use apdf_rank::corpus::{QARecord, ResponseCandidate};
use apdf_rank::objective::{comparison_loss_from_weights, comparison_rounds, total_loss};
use apdf_rank::prepare::{POPULARITY, SEMANTIC};
use apdf_rank::{prepare_record, ComparisonMode, HashedNgramEmbedder, PrepareConfig, PreparedRecord};
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub votes: u64,
    #[serde(default)]
    pub age_days: f64,
}

#[derive(Debug, Deserialize)]
pub struct Pool {
    pub question: String,
    pub candidates: Vec<Candidate>,
    #[serde(default)]
    pub log_base: Option<String>,
    /// `None` disables vote decay.
    #[serde(default)]
    pub half_life_days: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Analysis {
    pub phi: Vec<f64>,
    pub semantic_order: Vec<usize>,
    pub order: Vec<usize>,
    pub semantic: Vec<Vec<f64>>,
    pub popularity: Vec<Vec<f64>>,
    pub multi: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
pub struct LossRequest {
    #[serde(flatten)]
    pub pool: Pool,
    /// Policy score (mean token log-probability) per candidate.
    pub pi_s: Vec<f64>,
    pub alpha: f64,
    #[serde(default)]
    pub mode: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Round {
    pub positive: usize,
    pub reward: f64,
    pub penalties: Vec<(usize, f64)>,
    pub term: f64,
}

#[derive(Debug, Serialize)]
pub struct LossReport {
    pub order: Vec<usize>,
    pub rounds: Vec<Round>,
    pub l_pc: f64,
    pub l_pa: f64,
    pub total: f64,
}

fn reference_time() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH + Duration::days(20_000)
}

fn prepare(pool: &Pool) -> Result<PreparedRecord, String> {
    let now = reference_time();
    let at = |days: f64| now - Duration::seconds((days.max(0.0) * 86_400.0) as i64);
    let record = QARecord {
        question_id: "demo".into(),
        question_text: pool.question.clone(),
        question_created_at: at(0.0),
        candidates: pool
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| ResponseCandidate {
                id: i.to_string(),
                content: c.text.clone(),
                votes: c.votes,
                created_at: at(c.age_days),
                accepted: false,
            })
            .collect(),
        gold_ranking: None,
    };
    let decay = match pool.half_life_days {
        Some(h) => DecayConfig::new(now, h).map_err(|e| e.to_string())?,
        None => DecayConfig::disabled(),
    };
    let log_base: LogBase = pool
        .log_base
        .as_deref()
        .unwrap_or("e")
        .parse()
        .map_err(|e: apdf_rank::Error| e.to_string())?;
    let cfg = PrepareConfig { log_base, decay };
    prepare_record(&record, &HashedNgramEmbedder::default(), &cfg).map_err(|e| e.to_string())
}

fn rows(p: &PreparedRecord, attribute: &str) -> Vec<Vec<f64>> {
    p.bundle.single(attribute).map(|m| m.rows()).unwrap_or_default()
}

pub fn analyze_pool_json(input: &str) -> Result<String, String> {
    let pool: Pool = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let p = prepare(&pool)?;
    let out = Analysis {
        phi: p.phi.clone(),
        semantic_order: p.arank.order(),
        order: p.ranking.order.clone(),
        semantic: rows(&p, SEMANTIC),
        popularity: rows(&p, POPULARITY),
        multi: p.bundle.multi.rows(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

pub fn comparison_loss_json(input: &str) -> Result<String, String> {
    let req: LossRequest = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let p = prepare(&req.pool)?;
    if req.pi_s.len() != p.candidates.len() {
        return Err(format!(
            "expected {} policy scores, got {}",
            p.candidates.len(),
            req.pi_s.len()
        ));
    }
    let mode: ComparisonMode = req
        .mode
        .as_deref()
        .unwrap_or("literal")
        .parse()
        .map_err(|e: apdf_rank::Error| e.to_string())?;
    let weights = comparison_rounds(&p.bundle, &p.ranking, mode).map_err(|e| e.to_string())?;
    let mut rounds = Vec::with_capacity(weights.len());
    for w in &weights {
        let term = comparison_loss_from_weights(&req.pi_s, std::slice::from_ref(w))
            .map_err(|e| e.to_string())?;
        rounds.push(Round {
            positive: w.positive,
            reward: w.reward,
            penalties: w.penalties.iter().map(|(&k, &v)| (k, v)).collect(),
            term,
        });
    }
    let l_pc = rounds.iter().map(|r| r.term).sum();
    let l_pa = -req.pi_s[p.ranking.best()];
    let b = total_loss(l_pc, l_pa, req.alpha).map_err(|e| e.to_string())?;
    let out = LossReport {
        order: p.ranking.order.clone(),
        rounds,
        l_pc: b.l_pc,
        l_pa: b.l_pa,
        total: b.total,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

pub fn discount_curve_json(max_rank: usize, log_base: &str) -> Result<String, String> {
    let base: LogBase = log_base.parse().map_err(|e: apdf_rank::Error| e.to_string())?;
    let values = (1..=max_rank)
        .map(|l| rank_discount(l, base))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&values).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn analyze_pool(input: &str) -> Result<String, JsValue> {
    analyze_pool_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn comparison_loss(input: &str) -> Result<String, JsValue> {
    comparison_loss_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn discount_curve(max_rank: usize, log_base: &str) -> Result<String, JsValue> {
    discount_curve_json(max_rank, log_base).map_err(|e| JsValue::from_str(&e))
}
