//! Log-probability providers.
//!
//! [`LogProbTable`] carries token log-probabilities computed elsewhere (any
//! external LM). [`ToyPolicy`] is a byte-level bigram softmax model small
//! enough to train with the full objective and check against finite
//! differences:
//!
//! ```text
//! logits(k) = W[byte_{k-1}] + Σ_h f_h(question) · U[h]
//! ```
//!
//! where `W` has one row per previous byte plus a start-of-response row and
//! `f(question)` is a normalized histogram of hashed byte trigrams. The
//! question term is a crude, non-linguistic conditioning signal.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QARecord;
use crate::error::{Error, Result};
use crate::objective::{
    comparison_loss_with_grad, comparison_rounds, perceptual_alignment_loss, policy_score,
    record_loss, total_loss, ComparisonMode, LossBreakdown,
};
use crate::prepare::PreparedRecord;

pub const VOCAB: usize = 256;
pub const START: usize = 256;
pub const CONTEXTS: usize = VOCAB + 1;
pub const DEFAULT_QUESTION_BUCKETS: usize = 32;

const MAGIC: &[u8; 8] = b"APDFTOY\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    buckets: usize,
    transition: Vec<f64>,
    question_bias: Vec<f64>,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Gradient with the same layout as the policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub transition: Vec<f64>,
    pub question_bias: Vec<f64>,
}

impl PolicyGradient {
    fn zeros(buckets: usize) -> Self {
        PolicyGradient {
            transition: vec![0.0; CONTEXTS * VOCAB],
            question_bias: vec![0.0; buckets * VOCAB],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.transition.iter().chain(&self.question_bias).all(|v| v.is_finite())
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.transition.iter().chain(&self.question_bias).copied()
    }
}

impl ToyPolicy {
    /// All-zero weights: every next byte has probability 1/256.
    pub fn uniform(learning_rate: f64, seed: u64) -> Self {
        ToyPolicy {
            buckets: DEFAULT_QUESTION_BUCKETS,
            transition: vec![0.0; CONTEXTS * VOCAB],
            question_bias: vec![0.0; DEFAULT_QUESTION_BUCKETS * VOCAB],
            learning_rate,
            seed,
        }
    }

    /// Weights drawn uniformly from `[-init_scale, init_scale]` with `seed`.
    pub fn random(learning_rate: f64, seed: u64, init_scale: f64) -> Self {
        let mut p = Self::uniform(learning_rate, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in p.transition.iter_mut().chain(p.question_bias.iter_mut()) {
            *w = rng.gen_range(-init_scale..=init_scale);
        }
        p
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn num_parameters(&self) -> usize {
        self.transition.len() + self.question_bias.len()
    }

    pub fn parameter(&self, i: usize) -> f64 {
        if i < self.transition.len() {
            self.transition[i]
        } else {
            self.question_bias[i - self.transition.len()]
        }
    }

    pub fn parameter_mut(&mut self, i: usize) -> &mut f64 {
        if i < self.transition.len() {
            &mut self.transition[i]
        } else {
            let n = self.transition.len();
            &mut self.question_bias[i - n]
        }
    }

    /// Normalized histogram of hashed byte trigrams of the question.
    pub fn question_features(&self, question: &str) -> Vec<f64> {
        let mut f = vec![0.0; self.buckets];
        let bytes = question.as_bytes();
        if bytes.is_empty() {
            return f;
        }
        let n = 3.min(bytes.len());
        let mut count = 0.0;
        for gram in bytes.windows(n) {
            let mut h: u32 = 0x811c_9dc5;
            for &b in gram {
                h ^= u32::from(b);
                h = h.wrapping_mul(0x0100_0193);
            }
            f[(h as usize) % self.buckets] += 1.0;
            count += 1.0;
        }
        for v in &mut f {
            *v /= count;
        }
        f
    }

    fn question_offset(&self, features: &[f64]) -> Vec<f64> {
        let mut off = vec![0.0; VOCAB];
        for (h, &fh) in features.iter().enumerate() {
            if fh == 0.0 {
                continue;
            }
            let row = &self.question_bias[h * VOCAB..(h + 1) * VOCAB];
            for (o, w) in off.iter_mut().zip(row) {
                *o += fh * w;
            }
        }
        off
    }

    /// Softmax over next bytes for one context, written into `probs`;
    /// returns the log-normalizer.
    fn next_distribution(&self, ctx: usize, offset: &[f64], probs: &mut [f64]) -> f64 {
        let row = &self.transition[ctx * VOCAB..(ctx + 1) * VOCAB];
        let mut mx = f64::NEG_INFINITY;
        for ((p, w), o) in probs.iter_mut().zip(row).zip(offset) {
            *p = w + o;
            mx = mx.max(*p);
        }
        let mut z = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - mx).exp();
            z += *p;
        }
        for p in probs.iter_mut() {
            *p /= z;
        }
        mx + z.ln()
    }

    /// Per-token log-probabilities of `response` (bytes) given `question`.
    pub fn score(&self, question: &str, response: &str) -> Result<Vec<f64>> {
        if response.is_empty() {
            return Err(Error::invalid("cannot score an empty response"));
        }
        let offset = self.question_offset(&self.question_features(question));
        let mut probs = vec![0.0; VOCAB];
        let mut ctx = START;
        let mut out = Vec::with_capacity(response.len());
        for &b in response.as_bytes() {
            let tok = b as usize;
            let log_z = self.next_distribution(ctx, &offset, &mut probs);
            let row = &self.transition[ctx * VOCAB..(ctx + 1) * VOCAB];
            out.push((row[tok] + offset[tok] - log_z).min(0.0));
            ctx = tok;
        }
        Ok(out)
    }

    /// Mean token log-probability of each candidate.
    pub fn policy_scores(&self, question: &str, candidates: &[String]) -> Result<Vec<f64>> {
        candidates
            .iter()
            .map(|c| policy_score(&self.score(question, c)?))
            .collect()
    }

    /// Best-of-pool decoding: the candidate with the highest mean token
    /// log-probability, ties to the lower index.
    pub fn select(&self, question: &str, candidates: &[String]) -> Result<usize> {
        let scores = self.policy_scores(question, candidates)?;
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Adds `grad` scaled by `-learning_rate`.
    pub fn apply(&mut self, grad: &PolicyGradient) {
        let lr = self.learning_rate;
        for (w, g) in self.transition.iter_mut().zip(&grad.transition) {
            *w -= lr * g;
        }
        for (w, g) in self.question_bias.iter_mut().zip(&grad.question_bias) {
            *w -= lr * g;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * self.num_parameters());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(CONTEXTS as u32).to_le_bytes());
        out.extend_from_slice(&(VOCAB as u32).to_le_bytes());
        out.extend_from_slice(&(self.buckets as u32).to_le_bytes());
        out.extend_from_slice(&self.learning_rate.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for w in self.transition.iter().chain(&self.question_bias) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("policy checkpoint: {m}"));
        if bytes.len() < 40 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let version = u32_at(8);
        if version != CHECKPOINT_VERSION as usize {
            return Err(bad(&format!("unsupported version {version}")));
        }
        if u32_at(12) != CONTEXTS || u32_at(16) != VOCAB {
            return Err(bad("unexpected vocabulary dimensions"));
        }
        let buckets = u32_at(20);
        if buckets == 0 {
            return Err(bad("zero question buckets"));
        }
        let learning_rate = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let seed = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
        let n_t = CONTEXTS * VOCAB;
        let n_q = buckets * VOCAB;
        let body = &bytes[40..];
        if body.len() != 8 * (n_t + n_q) {
            return Err(bad("truncated weights"));
        }
        let mut weights = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let transition: Vec<f64> = weights.by_ref().take(n_t).collect();
        let question_bias: Vec<f64> = weights.collect();
        Ok(ToyPolicy {
            buckets,
            transition,
            question_bias,
            learning_rate,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Objective value for one prepared pool under `policy`, computed through
/// the plain loss functions.
pub fn record_objective(
    policy: &ToyPolicy,
    record: &PreparedRecord,
    alpha: f64,
    mode: ComparisonMode,
) -> Result<LossBreakdown> {
    let logprobs = record
        .candidates
        .iter()
        .map(|c| policy.score(&record.question, c))
        .collect::<Result<Vec<_>>>()?;
    record_loss(&logprobs, &record.ranking, &record.bundle, alpha, mode)
}

/// Objective value and its analytic gradient with respect to every policy
/// weight.
pub fn loss_gradient(
    policy: &ToyPolicy,
    record: &PreparedRecord,
    alpha: f64,
    mode: ComparisonMode,
) -> Result<(LossBreakdown, PolicyGradient)> {
    let m = record.candidates.len();
    if m < 2 {
        return Err(Error::invalid("training needs at least two candidates"));
    }
    let features = policy.question_features(&record.question);
    let offset = policy.question_offset(&features);

    let logprobs = record
        .candidates
        .iter()
        .map(|c| policy.score(&record.question, c))
        .collect::<Result<Vec<_>>>()?;
    let pi_s = logprobs
        .iter()
        .map(|t| policy_score(t))
        .collect::<Result<Vec<f64>>>()?;

    let rounds = comparison_rounds(&record.bundle, &record.ranking, mode)?;
    let (l_pc, mut d_pi) = comparison_loss_with_grad(&pi_s, &rounds)?;
    let best = record.ranking.best();
    let l_pa = perceptual_alignment_loss(&logprobs[best])?;
    d_pi[best] -= alpha;
    let breakdown = total_loss(l_pc, l_pa, alpha)?;

    // π_s(i) = mean_k log softmax(z_k)[r_k], so dπ_s/dz_k = (e_{r_k} − p_k) / t.
    let mut grad = PolicyGradient::zeros(policy.buckets);
    let mut offset_grad = vec![0.0; VOCAB];
    let mut probs = vec![0.0; VOCAB];
    for (text, &d) in record.candidates.iter().zip(&d_pi) {
        if d == 0.0 {
            continue;
        }
        let bytes = text.as_bytes();
        let scale = d / bytes.len() as f64;
        let mut ctx = START;
        for &b in bytes {
            let tok = b as usize;
            policy.next_distribution(ctx, &offset, &mut probs);
            let row = &mut grad.transition[ctx * VOCAB..(ctx + 1) * VOCAB];
            for ((g, og), p) in row.iter_mut().zip(offset_grad.iter_mut()).zip(&probs) {
                let dz = -scale * p;
                *g += dz;
                *og += dz;
            }
            row[tok] += scale;
            offset_grad[tok] += scale;
            ctx = tok;
        }
    }
    for (h, &fh) in features.iter().enumerate() {
        if fh == 0.0 {
            continue;
        }
        let row = &mut grad.question_bias[h * VOCAB..(h + 1) * VOCAB];
        for (g, og) in row.iter_mut().zip(&offset_grad) {
            *g += fh * og;
        }
    }
    Ok((breakdown, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub alpha: f64,
    pub mode: ComparisonMode,
    /// Snapshot the policy every this many steps (and at step 0).
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub record_id: String,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    pub trace: Vec<StepLoss>,
    /// `(step, policy)` pairs; step counts updates applied so far.
    pub checkpoints: Vec<(usize, ToyPolicy)>,
}

impl TrainOutcome {
    /// Mean total loss per epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for s in &self.trace {
            let e = sums.entry(s.epoch).or_insert((0.0, 0));
            e.0 += s.loss.total;
            e.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }
}

/// Plain per-record gradient descent, records visited in id order.
pub fn train(
    mut policy: ToyPolicy,
    records: &[PreparedRecord],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if records.is_empty() {
        return Err(Error::invalid("training needs at least one record"));
    }
    let mut order: Vec<&PreparedRecord> = records.iter().collect();
    order.sort_by(|a, b| a.record_id.cmp(&b.record_id));

    let mut trace = Vec::new();
    let mut checkpoints = Vec::new();
    let mut step = 0;
    if cfg.checkpoint_every.is_some() {
        checkpoints.push((0, policy.clone()));
    }
    for epoch in 0..cfg.epochs {
        for rec in &order {
            let (loss, grad) = loss_gradient(&policy, rec, cfg.alpha, cfg.mode)?;
            if !loss.total.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged { step });
            }
            trace.push(StepLoss {
                step,
                epoch,
                record_id: rec.record_id.clone(),
                loss,
            });
            policy.apply(&grad);
            step += 1;
            if cfg.checkpoint_every.is_some_and(|n| n > 0 && step % n == 0) {
                checkpoints.push((step, policy.clone()));
            }
        }
    }
    Ok(TrainOutcome {
        policy,
        trace,
        checkpoints,
    })
}

/// Token log-probabilities keyed by `(record_id, candidate_id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogProbTable {
    entries: BTreeMap<(String, String), Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct LogProbLine {
    record_id: String,
    candidate_id: String,
    logprobs: Vec<f64>,
}

impl LogProbTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record_id: &str, candidate_id: &str, logprobs: Vec<f64>) -> Result<()> {
        validate_logprobs(&logprobs)?;
        let key = (record_id.to_string(), candidate_id.to_string());
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateId(format!("{record_id}/{candidate_id}")));
        }
        self.entries.insert(key, logprobs);
        Ok(())
    }

    pub fn get(&self, record_id: &str, candidate_id: &str) -> Option<&[f64]> {
        self.entries
            .get(&(record_id.to_string(), candidate_id.to_string()))
            .map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Token log-probabilities for every candidate of `record`, in pool order.
    pub fn for_record(&self, record: &QARecord) -> Result<Vec<Vec<f64>>> {
        record
            .candidates
            .iter()
            .map(|c| {
                self.get(&record.question_id, &c.id)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| {
                        Error::invalid(format!(
                            "no log-probabilities for candidate {} of record {}",
                            c.id, record.question_id
                        ))
                    })
            })
            .collect()
    }

    /// Checks that every candidate of every record has an entry.
    pub fn check_covers(&self, records: &[QARecord]) -> Result<()> {
        let ids: HashSet<(&str, &str)> = self
            .entries
            .keys()
            .map(|(r, c)| (r.as_str(), c.as_str()))
            .collect();
        for r in records {
            for c in &r.candidates {
                if !ids.contains(&(r.question_id.as_str(), c.id.as_str())) {
                    return Err(Error::invalid(format!(
                        "no log-probabilities for candidate {} of record {}",
                        c.id, r.question_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ((record_id, candidate_id), logprobs) in &self.entries {
            let line = LogProbLine {
                record_id: record_id.clone(),
                candidate_id: candidate_id.clone(),
                logprobs: logprobs.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut table = LogProbTable::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let schema = |message: String| Error::Schema { line: i + 1, message };
            let parsed: LogProbLine =
                serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
            table
                .insert(&parsed.record_id, &parsed.candidate_id, parsed.logprobs)
                .map_err(|e| schema(e.to_string()))?;
        }
        Ok(table)
    }
}

fn validate_logprobs(logprobs: &[f64]) -> Result<()> {
    if logprobs.is_empty() {
        return Err(Error::invalid("empty log-probability vector"));
    }
    if let Some(v) = logprobs.iter().find(|v| !v.is_finite() || **v > 0.0) {
        return Err(Error::invalid(format!("log-probability {v} must be finite and <= 0")));
    }
    Ok(())
}

pub fn load_logprob_file(path: &Path) -> Result<LogProbTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LogProbTable::from_jsonl(&text)
}
