//! Self-supervised dynamic ranking.
//!
//! Repeatedly take the largest surviving multi-APDF entry, place whichever of
//! its two endpoints is semantically closer to the question, and erase that
//! candidate's row and column. Once no positive entry survives, the
//! remaining candidates follow in semantic order.

use serde::{Deserialize, Serialize};

use crate::apdf::ApdfMatrix;
use crate::embed::{cosine, EmbeddingVector};
use crate::error::{Error, Result};

/// `rank_of[c]` is the 0-indexed semantic rank of candidate `c`
/// (0 = most similar to the question).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticRank {
    rank_of: Vec<usize>,
}

impl SemanticRank {
    pub fn from_rank_of(rank_of: Vec<usize>) -> Result<Self> {
        if !is_permutation(&rank_of) {
            return Err(Error::invalid("semantic rank is not a permutation"));
        }
        Ok(SemanticRank { rank_of })
    }

    /// Ranks by descending score, ties to the lower index.
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut rank_of = vec![0; scores.len()];
        for (pos, &c) in order.iter().enumerate() {
            rank_of[c] = pos;
        }
        SemanticRank { rank_of }
    }

    pub fn rank_of(&self, candidate: usize) -> usize {
        self.rank_of[candidate]
    }

    pub fn len(&self) -> usize {
        self.rank_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank_of.is_empty()
    }

    /// Candidates listed best-first.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.rank_of.len()];
        for (c, &r) in self.rank_of.iter().enumerate() {
            order[r] = c;
        }
        order
    }
}

/// Candidate indices, best first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicRanking {
    pub order: Vec<usize>,
}

impl DynamicRanking {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        if !is_permutation(&order) {
            return Err(Error::invalid("ranking is not a permutation"));
        }
        Ok(DynamicRanking { order })
    }

    pub fn best(&self) -> usize {
        self.order[0]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Position of each candidate in the ranking.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &c) in self.order.iter().enumerate() {
            pos[c] = p;
        }
        pos
    }
}

pub(crate) fn is_permutation(xs: &[usize]) -> bool {
    let mut seen = vec![false; xs.len()];
    for &x in xs {
        if x >= xs.len() || seen[x] {
            return false;
        }
        seen[x] = true;
    }
    true
}

/// Semantic rank of each candidate by cosine to the question.
pub fn semantic_rank(question: &EmbeddingVector, candidates: &[EmbeddingVector]) -> Result<SemanticRank> {
    let scores = candidates
        .iter()
        .map(|c| cosine(question, c))
        .collect::<Result<Vec<f64>>>()?;
    Ok(SemanticRank::from_scores(&scores))
}

fn validate(multi: &ApdfMatrix, arank: &SemanticRank) -> Result<()> {
    if multi.size() != arank.len() {
        return Err(Error::DimensionMismatch {
            expected: multi.size(),
            actual: arank.len(),
        });
    }
    if multi.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("multi-APDF matrix"));
    }
    Ok(())
}

/// Dynamic ranking over a multi-APDF matrix.
///
/// Argmax ties resolve to the lexicographically smallest `(row, col)` with
/// `row < col`.
pub fn dynamic_rank(multi: &ApdfMatrix, arank: &SemanticRank) -> Result<DynamicRanking> {
    validate(multi, arank)?;
    let n = multi.size();
    let mut work = multi.as_slice().to_vec();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        let mut best: Option<(usize, usize, f64)> = None;
        for row in 0..n {
            for col in (row + 1)..n {
                let v = work[row * n + col];
                if v > 0.0 && best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((row, col, v));
                }
            }
        }
        let Some((row, col, _)) = best else { break };
        let winner = if arank.rank_of(row) < arank.rank_of(col) { row } else { col };
        order.push(winner);
        placed[winner] = true;
        for k in 0..n {
            work[winner * n + k] = 0.0;
            work[k * n + winner] = 0.0;
        }
    }

    for c in arank.order() {
        if !placed[c] {
            order.push(c);
        }
    }
    Ok(DynamicRanking { order })
}

/// Reference implementation of [`dynamic_rank`]: at every step it rescans
/// the untouched input over all unplaced pairs, collects every pair that
/// attains the maximum and picks the smallest.
pub fn brute_force_rank(multi: &ApdfMatrix, arank: &SemanticRank) -> Result<DynamicRanking> {
    validate(multi, arank)?;
    let n = multi.size();
    let mut order: Vec<usize> = Vec::new();

    loop {
        let alive = |c: usize| !order.contains(&c);
        let pairs: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .filter(|&(r, c)| r < c && alive(r) && alive(c))
            .map(|(r, c)| (r, c, multi.get(r, c)))
            .filter(|&(_, _, v)| v > 0.0)
            .collect();
        let Some(max) = pairs.iter().map(|p| p.2).reduce(f64::max) else {
            break;
        };
        let &(row, col, _) = pairs
            .iter()
            .filter(|p| p.2 == max)
            .min_by_key(|p| (p.0, p.1))
            .expect("max is attained");
        order.push(if arank.rank_of(row) < arank.rank_of(col) { row } else { col });
    }

    let mut rest: Vec<usize> = (0..n).filter(|c| !order.contains(c)).collect();
    rest.sort_by_key(|&c| arank.rank_of(c));
    order.extend(rest);
    Ok(DynamicRanking { order })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> (ApdfMatrix, SemanticRank) {
        let m = ApdfMatrix::from_rows(
            "m",
            vec![
                vec![0.0, 0.5, 0.9],
                vec![0.5, 0.0, 0.2],
                vec![0.9, 0.2, 0.0],
            ],
        )
        .unwrap();
        (m, SemanticRank::from_rank_of(vec![1, 2, 0]).unwrap())
    }

    #[test]
    fn semantic_rank_from_cosines() {
        assert_eq!(SemanticRank::from_scores(&[0.2, 0.9, 0.5]).rank_of, vec![2, 0, 1]);
        assert_eq!(SemanticRank::from_scores(&[0.3; 4]).rank_of, vec![0, 1, 2, 3]);
        assert_eq!(SemanticRank::from_scores(&[0.3]).rank_of, vec![0]);
    }

    #[test]
    fn semantic_rank_from_embeddings() {
        let q = EmbeddingVector::normalized(vec![1.0, 0.0]);
        let cands = [
            EmbeddingVector::normalized(vec![0.2, 0.98]),
            EmbeddingVector::normalized(vec![0.9, 0.43]),
            EmbeddingVector::normalized(vec![0.5, 0.86]),
        ];
        assert_eq!(semantic_rank(&q, &cands).unwrap().rank_of, vec![2, 0, 1]);
        let bad = [EmbeddingVector::normalized(vec![1.0, 0.0, 0.0])];
        assert!(semantic_rank(&q, &bad).is_err());
    }

    #[test]
    fn worked_three_candidate_example() {
        let (m, a) = three();
        assert_eq!(dynamic_rank(&m, &a).unwrap().order, vec![2, 0, 1]);
        assert_eq!(brute_force_rank(&m, &a).unwrap().order, vec![2, 0, 1]);
    }

    #[test]
    fn single_candidate() {
        let m = ApdfMatrix::zeros("m", 1);
        let a = SemanticRank::from_rank_of(vec![0]).unwrap();
        assert_eq!(dynamic_rank(&m, &a).unwrap().order, vec![0]);
    }

    #[test]
    fn zero_matrix_falls_back_to_semantic_order() {
        let m = ApdfMatrix::zeros("m", 4);
        let a = SemanticRank::from_rank_of(vec![2, 0, 3, 1]).unwrap();
        assert_eq!(dynamic_rank(&m, &a).unwrap().order, vec![1, 3, 0, 2]);
        assert_eq!(brute_force_rank(&m, &a).unwrap().order, vec![1, 3, 0, 2]);
    }

    #[test]
    fn argmax_ties_take_smallest_pair() {
        // (0,1) and (2,3) tie; (0,1) wins, so the better of 0/1 goes first.
        let m = ApdfMatrix::from_rows(
            "m",
            vec![
                vec![0.0, 1.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ],
        )
        .unwrap();
        let a = SemanticRank::from_rank_of(vec![3, 2, 1, 0]).unwrap();
        let expect = vec![1, 3, 2, 0];
        assert_eq!(dynamic_rank(&m, &a).unwrap().order, expect);
        assert_eq!(brute_force_rank(&m, &a).unwrap().order, expect);
    }

    #[test]
    fn shape_mismatch() {
        let (m, _) = three();
        let a = SemanticRank::from_rank_of(vec![0, 1]).unwrap();
        assert!(dynamic_rank(&m, &a).is_err());
        assert!(brute_force_rank(&m, &a).is_err());
    }

    #[test]
    fn rejects_non_permutations() {
        assert!(SemanticRank::from_rank_of(vec![0, 0]).is_err());
        assert!(DynamicRanking::new(vec![1, 2]).is_err());
        assert_eq!(DynamicRanking::new(vec![2, 0, 1]).unwrap().positions(), vec![1, 2, 0]);
    }
}
