//! Alignment objectives.
//!
//! The main objective has two parts:
//!
//! - an SFT-style alignment term `L_pa`: mean negative log-likelihood of the
//!   top dynamically ranked response;
//! - a list-wise comparison term `L_pc`: a softmax cross-entropy over the
//!   whole pool, repeated once per round, where the round's positive is
//!   weighted by its largest APDF entries (the reward) and every negative by
//!   a sorted slice of the positive's multi-APDF row (the penalty).
//!
//! `total = L_pc + α · L_pa`. Pairwise DPO and Plackett-Luce list MLE are
//! provided as baselines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::apdf::{ApdfBundle, ApdfMatrix};
use crate::error::{Error, Result};
use crate::ranking::DynamicRanking;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_BETA: f64 = 0.1;

/// Which ranking positions act as positives in the comparison rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonMode {
    /// Positions `1..M`: the alignment target itself is never a positive.
    #[default]
    Literal,
    /// Positions `0..M-1`: each round anchors on the current best remaining.
    TopAnchored,
}

impl ComparisonMode {
    pub fn positions(self, m: usize) -> std::ops::Range<usize> {
        match self {
            ComparisonMode::Literal => 1..m,
            ComparisonMode::TopAnchored => 0..m.saturating_sub(1),
        }
    }
}

impl std::str::FromStr for ComparisonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ComparisonMode::Literal),
            "top_anchored" | "top-anchored" => Ok(ComparisonMode::TopAnchored),
            other => Err(Error::invalid(format!("unknown comparison mode `{other}`"))),
        }
    }
}

/// Mean token log-probability of a response.
pub fn policy_score(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::invalid("response has no tokens"));
    }
    if token_logprobs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("token log-probabilities"));
    }
    Ok(token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64)
}

/// Negative mean log-likelihood of the alignment target's tokens.
pub fn perceptual_alignment_loss(token_logprobs: &[f64]) -> Result<f64> {
    Ok(-policy_score(token_logprobs)?)
}

/// Product over attributes of the largest entry in row `b`.
pub fn reward_weight(singles: &[ApdfMatrix], b: usize) -> Result<f64> {
    let Some(first) = singles.first() else {
        return Err(Error::invalid("reward weight needs at least one matrix"));
    };
    let mut w = 1.0;
    for m in singles {
        if m.size() != first.size() {
            return Err(Error::DimensionMismatch {
                expected: first.size(),
                actual: m.size(),
            });
        }
        if b >= m.size() {
            return Err(Error::invalid(format!("candidate {b} out of range")));
        }
        w *= m.max_in_row(b);
    }
    Ok(w)
}

/// Penalties for the negatives of positive `b`.
///
/// Row `b` of the multi-APDF matrix, minus column `b`, sorted ascending; the
/// j-th smallest value goes to the negative that comes j-th in the dynamic
/// ranking, so better-ranked negatives are penalized less.
pub fn penalty_weights(
    multi: &ApdfMatrix,
    ranking: &DynamicRanking,
    b: usize,
) -> Result<BTreeMap<usize, f64>> {
    let n = multi.size();
    if b >= n {
        return Err(Error::invalid(format!("candidate {b} out of range")));
    }
    if ranking.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: ranking.len(),
        });
    }
    let mut values: Vec<f64> = multi
        .row(b)
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != b)
        .map(|(_, v)| *v)
        .collect();
    values.sort_by(f64::total_cmp);
    Ok(ranking
        .order
        .iter()
        .copied()
        .filter(|&c| c != b)
        .zip(values)
        .collect())
}

/// Weights for a single comparison round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonWeights {
    pub positive: usize,
    pub reward: f64,
    pub penalties: BTreeMap<usize, f64>,
}

impl ComparisonWeights {
    fn validate(&self, m: usize) -> Result<()> {
        if self.positive >= m {
            return Err(Error::invalid(format!("positive {} out of range", self.positive)));
        }
        if self.penalties.len() != m - 1
            || self.penalties.contains_key(&self.positive)
            || self.penalties.keys().any(|&k| k >= m)
        {
            return Err(Error::invalid(
                "penalties must cover exactly the non-positive candidates",
            ));
        }
        let all = std::iter::once(self.reward).chain(self.penalties.values().copied());
        for w in all {
            if !w.is_finite() {
                return Err(Error::NonFinite("comparison weights"));
            }
            if w < 0.0 {
                return Err(Error::invalid("comparison weights must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Reward and penalty weights for every round under `mode`.
pub fn comparison_rounds(
    bundle: &ApdfBundle,
    ranking: &DynamicRanking,
    mode: ComparisonMode,
) -> Result<Vec<ComparisonWeights>> {
    let n = bundle.size();
    if ranking.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: ranking.len(),
        });
    }
    mode.positions(n)
        .map(|m| {
            let b = ranking.order[m];
            Ok(ComparisonWeights {
                positive: b,
                reward: reward_weight(&bundle.singles, b)?,
                penalties: penalty_weights(&bundle.multi, ranking, b)?,
            })
        })
        .collect()
}

/// One round's term `−log(τ_r / (Σ τ_p + τ_r))` and its derivative with
/// respect to each candidate's policy score.
pub(crate) fn round_term(pi_s: &[f64], w: &ComparisonWeights) -> Option<(f64, Vec<f64>)> {
    let b = w.positive;
    if !(w.reward > 0.0) {
        return None;
    }
    // Work with log τ = π_s + ln w; zero weights give −∞ and drop out.
    let mut log_tau = vec![f64::NEG_INFINITY; pi_s.len()];
    log_tau[b] = pi_s[b] + w.reward.ln();
    for (&i, &p) in &w.penalties {
        log_tau[i] = pi_s[i] + p.ln();
    }
    let shift = log_tau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = log_tau.iter().map(|l| (l - shift).exp()).sum();
    let log_z = shift + z.ln();
    let term = (log_z - log_tau[b]).max(0.0);
    let grad = log_tau
        .iter()
        .enumerate()
        .map(|(i, l)| (l - log_z).exp() - if i == b { 1.0 } else { 0.0 })
        .collect();
    Some((term, grad))
}

/// Comparison loss from explicit per-round weights.
pub fn comparison_loss_from_weights(pi_s: &[f64], rounds: &[ComparisonWeights]) -> Result<f64> {
    Ok(comparison_loss_with_grad(pi_s, rounds)?.0)
}

/// Comparison loss and its gradient with respect to `pi_s`.
pub fn comparison_loss_with_grad(
    pi_s: &[f64],
    rounds: &[ComparisonWeights],
) -> Result<(f64, Vec<f64>)> {
    if pi_s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy scores"));
    }
    let m = pi_s.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; m];
    for (round, w) in rounds.iter().enumerate() {
        w.validate(m)?;
        let (term, g) = round_term(pi_s, w).ok_or(Error::ZeroReward {
            round,
            candidate: w.positive,
        })?;
        loss += term;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// The list-wise comparison loss over all rounds of `mode`.
pub fn perceptual_comparison_loss(
    pi_s: &[f64],
    ranking: &DynamicRanking,
    bundle: &ApdfBundle,
    mode: ComparisonMode,
) -> Result<f64> {
    if pi_s.len() < 2 {
        return Err(Error::invalid("comparison loss needs at least two candidates"));
    }
    if pi_s.len() != bundle.size() {
        return Err(Error::DimensionMismatch {
            expected: bundle.size(),
            actual: pi_s.len(),
        });
    }
    let rounds = comparison_rounds(bundle, ranking, mode)?;
    comparison_loss_from_weights(pi_s, &rounds)
}

/// Both loss parts and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_pa: f64,
    pub l_pc: f64,
    pub alpha: f64,
    pub total: f64,
}

pub fn total_loss(l_pc: f64, l_pa: f64, alpha: f64) -> Result<LossBreakdown> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha {alpha} must be finite and >= 0")));
    }
    Ok(LossBreakdown {
        l_pa,
        l_pc,
        alpha,
        total: l_pc + alpha * l_pa,
    })
}

/// Full objective for one pool, given per-candidate token log-probabilities.
pub fn record_loss(
    token_logprobs: &[Vec<f64>],
    ranking: &DynamicRanking,
    bundle: &ApdfBundle,
    alpha: f64,
    mode: ComparisonMode,
) -> Result<LossBreakdown> {
    let pi_s = token_logprobs
        .iter()
        .map(|t| policy_score(t))
        .collect::<Result<Vec<f64>>>()?;
    let l_pc = perceptual_comparison_loss(&pi_s, ranking, bundle, mode)?;
    let l_pa = perceptual_alignment_loss(&token_logprobs[ranking.best()])?;
    total_loss(l_pc, l_pa, alpha)
}

/// `−log σ(x)` without overflow.
pub(crate) fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Bradley-Terry DPO loss for one preference pair, from sequence
/// log-probabilities under the trained and reference policies.
pub fn dpo_pair_loss(
    theta_chosen: f64,
    theta_rejected: f64,
    ref_chosen: f64,
    ref_rejected: f64,
    beta: f64,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be > 0"));
    }
    let margin = beta * ((theta_chosen - ref_chosen) - (theta_rejected - ref_rejected));
    if !margin.is_finite() {
        return Err(Error::NonFinite("dpo margin"));
    }
    Ok(neg_log_sigmoid(margin))
}

/// Negative Plackett-Luce log-likelihood of `ranking` (best first) with
/// implicit rewards `β · (log πθ − log πref)`.
pub fn plackett_luce_loss(
    theta: &[f64],
    reference: &[f64],
    ranking: &[usize],
    beta: f64,
) -> Result<f64> {
    let m = theta.len();
    if reference.len() != m || ranking.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: if reference.len() != m { reference.len() } else { ranking.len() },
        });
    }
    if m < 2 {
        return Err(Error::invalid("Plackett-Luce loss needs at least two candidates"));
    }
    if !crate::ranking::is_permutation(ranking) {
        return Err(Error::invalid("ranking is not a permutation"));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be > 0"));
    }
    let rewards: Vec<f64> = ranking
        .iter()
        .map(|&c| beta * (theta[c] - reference[c]))
        .collect();
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("plackett-luce rewards"));
    }
    let mut loss = 0.0;
    for k in 0..m - 1 {
        let tail = &rewards[k..];
        let mx = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + tail.iter().map(|r| (r - mx).exp()).sum::<f64>().ln();
        loss += lse - rewards[k];
    }
    Ok(loss)
}
