//! Attribute-perceptual distance factors (APDF).
//!
//! For one attribute with gain `G` and rank discount `T`, the distance between
//! candidates `i` and `j` is
//!
//! ```text
//! δ(i, j) = (G(i) − G(j)) · (T(l_i) − T(l_j)),    T(l) = 1 / log(l + 1)
//! ```
//!
//! where `l_i` is the 1-indexed rank of `i` when the pool is sorted by that
//! same gain, descending. Because a larger gain always gets a smaller rank
//! (and therefore a larger discount) both factors share a sign and every
//! entry is nonnegative. Matrices for several attributes are fused by an
//! element-wise product.

use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HALF_LIFE_DAYS: f64 = 365.0;
const SECS_PER_DAY: f64 = 86_400.0;

/// Logarithm base of the rank discount.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e" | "ln" | "natural" => Ok(LogBase::Natural),
            "2" | "log2" | "two" => Ok(LogBase::Two),
            other => Err(Error::invalid(format!("unknown log base `{other}`"))),
        }
    }
}

/// `1 / log(l + 1)` for a 1-indexed rank `l`.
pub fn rank_discount(rank: usize, base: LogBase) -> Result<f64> {
    if rank < 1 {
        return Err(Error::invalid("rank must be >= 1"));
    }
    Ok(1.0 / base.log(rank as f64 + 1.0))
}

/// Semantic gain `2^(φ − 1)` for a question/response cosine `φ ∈ [−1, 1]`.
pub fn semantic_gain(phi: f64) -> Result<f64> {
    if !phi.is_finite() || phi.abs() > 1.0 + 1e-12 {
        return Err(Error::invalid(format!("cosine {phi} outside [-1, 1]")));
    }
    Ok((phi.clamp(-1.0, 1.0) - 1.0).exp2())
}

/// Popularity gain `log10(P̃ + 1)`.
pub fn popularity_gain(decayed_votes: f64) -> Result<f64> {
    if !(decayed_votes >= 0.0) || !decayed_votes.is_finite() {
        return Err(Error::invalid(format!(
            "decayed popularity {decayed_votes} must be finite and >= 0"
        )));
    }
    Ok((decayed_votes + 1.0).log10())
}

/// Exponential time decay applied to vote counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayConfig {
    pub reference_time: DateTime<Utc>,
    pub half_life_secs: f64,
    pub enabled: bool,
}

impl DecayConfig {
    pub fn new(reference_time: DateTime<Utc>, half_life_days: f64) -> Result<Self> {
        if !(half_life_days > 0.0) || !half_life_days.is_finite() {
            return Err(Error::invalid("half-life must be positive"));
        }
        Ok(DecayConfig {
            reference_time,
            half_life_secs: half_life_days * SECS_PER_DAY,
            enabled: true,
        })
    }

    pub fn disabled() -> Self {
        DecayConfig {
            reference_time: DateTime::<Utc>::UNIX_EPOCH,
            half_life_secs: DEFAULT_HALF_LIFE_DAYS * SECS_PER_DAY,
            enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.half_life_secs > 0.0 && self.half_life_secs.is_finite()) {
            return Err(Error::invalid("half-life must be positive when decay is enabled"));
        }
        Ok(())
    }
}

/// `P̃ = P · 2^(−age / half_life)`; ages before the reference time clamp to 0.
pub fn decayed_popularity(votes: u64, created_at: DateTime<Utc>, cfg: &DecayConfig) -> f64 {
    let p = votes as f64;
    if !cfg.enabled {
        return p;
    }
    let age = (cfg.reference_time - created_at).num_milliseconds().max(0) as f64 / 1000.0;
    p * (-age / cfg.half_life_secs).exp2()
}

/// Per-candidate gains for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainVector {
    pub attribute: String,
    pub gains: Vec<f64>,
}

impl GainVector {
    pub fn new(attribute: impl Into<String>, gains: Vec<f64>) -> Result<Self> {
        if let Some(g) = gains.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return Err(Error::invalid(format!("gain {g} must be finite and >= 0")));
        }
        Ok(GainVector {
            attribute: attribute.into(),
            gains,
        })
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

/// 1-indexed ranks by descending gain; ties go to the lower index.
pub fn induced_ranks(gains: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gains.len()).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; gains.len()];
    for (pos, &c) in order.iter().enumerate() {
        ranks[c] = pos + 1;
    }
    ranks
}

/// Square, symmetric, zero-diagonal, nonnegative matrix of pairwise
/// perceptual distances over a candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApdfMatrix {
    attribute: String,
    size: usize,
    values: Vec<f64>,
}

impl ApdfMatrix {
    /// Builds a matrix from explicit rows, checking every invariant.
    pub fn from_rows(attribute: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        let mut values = Vec::with_capacity(size * size);
        for row in &rows {
            if row.len() != size {
                return Err(Error::DimensionMismatch {
                    expected: size,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        let m = ApdfMatrix {
            attribute: attribute.into(),
            size,
            values,
        };
        m.check()?;
        Ok(m)
    }

    pub fn zeros(attribute: impl Into<String>, size: usize) -> Self {
        ApdfMatrix {
            attribute: attribute.into(),
            size,
            values: vec![0.0; size * size],
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.size;
        for i in 0..n {
            if self.get(i, i) != 0.0 {
                return Err(Error::invalid(format!("diagonal entry ({i},{i}) is nonzero")));
            }
            for j in 0..n {
                let v = self.get(i, j);
                if !v.is_finite() {
                    return Err(Error::NonFinite("apdf matrix"));
                }
                if v < 0.0 {
                    return Err(Error::invalid(format!("entry ({i},{j}) is negative")));
                }
                if (v - self.get(j, i)).abs() > 1e-12 {
                    return Err(Error::invalid(format!("entry ({i},{j}) breaks symmetry")));
                }
            }
        }
        Ok(())
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn max_in_row(&self, i: usize) -> f64 {
        self.row(i).iter().copied().fold(0.0, f64::max)
    }

    /// Headerless row-major CSV, one matrix row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.size {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Single-attribute APDF matrix, with ranks induced from the gains themselves.
pub fn single_apdf(gains: &GainVector, base: LogBase) -> ApdfMatrix {
    let g = &gains.gains;
    let n = g.len();
    let ranks = induced_ranks(g);
    let discount: Vec<f64> = ranks
        .iter()
        .map(|&l| rank_discount(l, base).expect("induced ranks start at 1"))
        .collect();
    let mut m = ApdfMatrix::zeros(gains.attribute.clone(), n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (g[i] - g[j]) * (discount[i] - discount[j]);
            m.values[i * n + j] = d;
            m.values[j * n + i] = d;
        }
    }
    m
}

/// Element-wise product of one or more same-shape APDF matrices.
pub fn multi_apdf(matrices: &[ApdfMatrix]) -> Result<ApdfMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::invalid("multi-APDF needs at least one matrix"))?;
    let mut out = first.clone();
    out.attribute = matrices
        .iter()
        .map(|m| m.attribute.as_str())
        .collect::<Vec<_>>()
        .join("*");
    for m in &matrices[1..] {
        if m.size != out.size {
            return Err(Error::DimensionMismatch {
                expected: out.size,
                actual: m.size,
            });
        }
        for (o, v) in out.values.iter_mut().zip(&m.values) {
            *o *= v;
        }
    }
    Ok(out)
}

/// The single-attribute matrices of a pool together with their fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApdfBundle {
    pub singles: Vec<ApdfMatrix>,
    pub multi: ApdfMatrix,
}

impl ApdfBundle {
    pub fn from_gains(gains: &[GainVector], base: LogBase) -> Result<Self> {
        let singles: Vec<ApdfMatrix> = gains.iter().map(|g| single_apdf(g, base)).collect();
        let multi = multi_apdf(&singles)?;
        Ok(ApdfBundle { singles, multi })
    }

    pub fn from_matrices(singles: Vec<ApdfMatrix>) -> Result<Self> {
        let multi = multi_apdf(&singles)?;
        Ok(ApdfBundle { singles, multi })
    }

    pub fn size(&self) -> usize {
        self.multi.size()
    }

    pub fn single(&self, attribute: &str) -> Option<&ApdfMatrix> {
        self.singles.iter().find(|m| m.attribute == attribute)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    const LN2_INV: f64 = std::f64::consts::LOG2_E;
    const LN3_INV: f64 = 0.910_239_226_626_837_4;

    fn gv(g: &[f64]) -> GainVector {
        GainVector::new("test", g.to_vec()).unwrap()
    }

    #[test]
    fn discount_values() {
        assert!((rank_discount(1, LogBase::Natural).unwrap() - LN2_INV).abs() < 1e-12);
        assert!((rank_discount(2, LogBase::Natural).unwrap() - LN3_INV).abs() < 1e-12);
        assert!((rank_discount(1, LogBase::Two).unwrap() - 1.0).abs() < 1e-15);
        assert!(rank_discount(0, LogBase::Natural).is_err());
    }

    #[test]
    fn discount_strictly_decreasing() {
        for base in [LogBase::Natural, LogBase::Two] {
            let mut prev = f64::INFINITY;
            for l in 1..200 {
                let t = rank_discount(l, base).unwrap();
                assert!(t > 0.0 && t < prev);
                prev = t;
            }
        }
    }

    #[test]
    fn semantic_gain_values() {
        assert_eq!(semantic_gain(1.0).unwrap(), 1.0);
        assert_eq!(semantic_gain(0.0).unwrap(), 0.5);
        assert!((semantic_gain(0.5).unwrap() - 0.707_106_781_186_547_5).abs() < 1e-12);
        assert_eq!(semantic_gain(-1.0).unwrap(), 0.25);
        assert!(semantic_gain(1.5).is_err());
        assert!(semantic_gain(f64::NAN).is_err());
    }

    #[test]
    fn popularity_gain_values() {
        assert_eq!(popularity_gain(0.0).unwrap(), 0.0);
        assert!((popularity_gain(9.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((popularity_gain(99.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(popularity_gain(-1.0).is_err());
    }

    #[test]
    fn decay_halves_at_half_life() {
        let now = Utc.with_ymd_and_hms(2024, 5, 1, 0, 0, 0).unwrap();
        let cfg = DecayConfig::new(now, 10.0).unwrap();
        assert_eq!(decayed_popularity(40, now, &cfg), 40.0);
        let then = now - chrono::Duration::days(10);
        assert!((decayed_popularity(40, then, &cfg) - 20.0).abs() < 1e-12);
        assert_eq!(decayed_popularity(0, then, &cfg), 0.0);
        // future timestamps clamp to zero age
        let later = now + chrono::Duration::days(3);
        assert_eq!(decayed_popularity(7, later, &cfg), 7.0);
        assert_eq!(decayed_popularity(7, then, &DecayConfig::disabled()), 7.0);
        assert!(DecayConfig::new(now, 0.0).is_err());
    }

    #[test]
    fn ranks_by_descending_gain() {
        assert_eq!(induced_ranks(&[0.9, 0.1, 0.5]), vec![1, 3, 2]);
        assert_eq!(induced_ranks(&[0.3; 4]), vec![1, 2, 3, 4]);
        assert_eq!(induced_ranks(&[2.0]), vec![1]);
    }

    #[test]
    fn single_apdf_cases() {
        assert_eq!(single_apdf(&gv(&[0.7]), LogBase::Natural).rows(), vec![vec![0.0]]);
        let eq = single_apdf(&gv(&[0.4, 0.4, 0.4]), LogBase::Natural);
        assert!(eq.as_slice().iter().all(|v| *v == 0.0));
        let m = single_apdf(&gv(&[1.0, 0.5]), LogBase::Natural);
        let expected = 0.5 * (LN2_INV - LN3_INV);
        assert!((m.get(0, 1) - 0.266_228).abs() < 1e-6);
        assert!((m.get(0, 1) - expected).abs() < 1e-15);
        assert_eq!(m.get(0, 1), m.get(1, 0));
    }

    #[test]
    fn multi_apdf_cases() {
        let a = single_apdf(&gv(&[1.0, 0.5]), LogBase::Natural);
        assert_eq!(multi_apdf(std::slice::from_ref(&a)).unwrap().as_slice(), a.as_slice());

        let b = ApdfMatrix::from_rows("b", vec![vec![0.0, 0.3], vec![0.3, 0.0]]).unwrap();
        let m = multi_apdf(&[a.clone(), b]).unwrap();
        assert!((m.get(0, 1) - 0.079_868).abs() < 1e-6);

        let z = ApdfMatrix::zeros("z", 2);
        assert!(multi_apdf(&[a, z]).unwrap().as_slice().iter().all(|v| *v == 0.0));

        let c = ApdfMatrix::zeros("c", 3);
        assert!(multi_apdf(&[ApdfMatrix::zeros("d", 2), c]).is_err());
        assert!(multi_apdf(&[]).is_err());
    }

    #[test]
    fn from_rows_validates() {
        assert!(ApdfMatrix::from_rows("x", vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(ApdfMatrix::from_rows("x", vec![vec![1.0, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(ApdfMatrix::from_rows("x", vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
        assert!(ApdfMatrix::from_rows("x", vec![vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = ApdfMatrix::from_rows("x", vec![vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        assert_eq!(m.to_csv(), "0,0.5\n0.5,0\n");
    }
}
