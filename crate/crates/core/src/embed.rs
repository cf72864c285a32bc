//! Text embeddings and cosine similarity.
//!
//! Everything downstream (semantic gain, semantic rank, metric similarity)
//! talks to the [`Embedder`] trait. The default [`HashedNgramEmbedder`] is a
//! deterministic, dependency-free stand-in; real encoder output can be loaded
//! from a TSV file with [`load_external_embeddings`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_NGRAM: usize = 3;

/// A pooled, L2-normalized text embedding. The all-zero vector stands for
/// empty text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    /// Wraps raw values, normalizing to unit length unless all zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = l2(&values);
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
            EmbeddingVector { values, norm: 1.0 }
        } else {
            EmbeddingVector { values, norm: 0.0 }
        }
    }

    /// Wraps raw values without normalization.
    pub fn raw(values: Vec<f64>) -> Self {
        let norm = l2(&values);
        EmbeddingVector { values, norm }
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
            norm: 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Maps text to a fixed-dimension vector. Implementations must be
/// deterministic: the same text always yields a bit-identical vector.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> EmbeddingVector;
}

/// Character n-grams hashed into `dim` signed buckets, summed, then
/// L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedNgramEmbedder {
    dim: usize,
    ngram: usize,
}

impl HashedNgramEmbedder {
    pub fn new(dim: usize, ngram: usize) -> Result<Self> {
        if dim < 8 {
            return Err(Error::invalid(format!("embedding dimension {dim} < 8")));
        }
        if ngram == 0 {
            return Err(Error::invalid("n-gram length must be >= 1"));
        }
        Ok(HashedNgramEmbedder { dim, ngram })
    }

    pub fn ngram(&self) -> usize {
        self.ngram
    }
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        HashedNgramEmbedder {
            dim: DEFAULT_DIM,
            ngram: DEFAULT_NGRAM,
        }
    }
}

// FNV-1a, 64-bit. Stable across platforms and releases, unlike std's hasher.
fn fnv1a(chars: &[char]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for c in chars {
        let mut buf = [0u8; 4];
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl Embedder for HashedNgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
        if chars.is_empty() {
            return EmbeddingVector::zeros(self.dim);
        }
        let mut acc = vec![0.0; self.dim];
        let n = self.ngram.min(chars.len());
        for gram in chars.windows(n) {
            let h = fnv1a(gram);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        // A text made only of colliding grams with opposite signs can cancel
        // to zero; fall back to a single unit bucket so non-empty text never
        // embeds as the empty-text vector.
        if acc.iter().all(|v| *v == 0.0) {
            let h = fnv1a(&chars);
            acc[(h % self.dim as u64) as usize] = 1.0;
        }
        EmbeddingVector::normalized(acc)
    }
}

/// Cosine similarity. Zero vectors have similarity 0 with everything.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.is_zero() || b.is_zero() {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// Reads `id<TAB>v1 v2 ... vd` lines (values may be tab- or space-separated).
/// Vectors are L2-normalized on load; blank lines are skipped.
pub fn load_external_embeddings(path: &Path) -> Result<HashMap<String, EmbeddingVector>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_external_embeddings(&text)
}

pub fn parse_external_embeddings(text: &str) -> Result<HashMap<String, EmbeddingVector>> {
    let mut out = HashMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line.split_once('\t').ok_or_else(|| Error::Schema {
            line: lineno + 1,
            message: "expected `id<TAB>values`".into(),
        })?;
        let values = rest
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Schema {
                    line: lineno + 1,
                    message: format!("bad float `{tok}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema {
                line: lineno + 1,
                message: "non-finite embedding value".into(),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: values.len(),
                })
            }
            _ => {}
        }
        if out.contains_key(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        out.insert(id.to_string(), EmbeddingVector::normalized(values));
    }
    Ok(out)
}

/// Writes vectors in the same TSV layout [`load_external_embeddings`] reads.
pub fn format_embeddings<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a EmbeddingVector)>,
{
    let mut out = String::new();
    for (id, v) in rows {
        out.push_str(id);
        out.push('\t');
        let parts: Vec<String> = v.values().iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&parts.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_embeds_to_zero() {
        let e = HashedNgramEmbedder::default();
        let v = e.embed("");
        assert!(v.is_zero());
        assert_eq!(v.dim(), DEFAULT_DIM);
    }

    #[test]
    fn embedding_is_deterministic_and_unit() {
        let e = HashedNgramEmbedder::default();
        let a = e.embed("fn main() { println!(\"hi\"); }");
        let b = e.embed("fn main() { println!(\"hi\"); }");
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!((l2(a.values()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_similarity_is_one() {
        let e = HashedNgramEmbedder::default();
        let v = e.embed("fn main()");
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_text_still_embeds() {
        let e = HashedNgramEmbedder::default();
        assert!(!e.embed("a").is_zero());
    }

    #[test]
    fn cosine_basic_cases() {
        let v = EmbeddingVector::normalized(vec![0.6, 0.8]);
        let neg = EmbeddingVector::normalized(vec![-0.6, -0.8]);
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        let x = EmbeddingVector::raw(vec![1.0, 0.0]);
        let y = EmbeddingVector::raw(vec![0.0, 1.0]);
        assert_eq!(cosine(&x, &y).unwrap(), 0.0);
        assert_eq!(cosine(&x, &EmbeddingVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let x = EmbeddingVector::raw(vec![1.0, 0.0]);
        let y = EmbeddingVector::raw(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            cosine(&x, &y),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn rejects_tiny_dimension() {
        assert!(HashedNgramEmbedder::new(4, 3).is_err());
        assert!(HashedNgramEmbedder::new(8, 0).is_err());
    }

    #[test]
    fn external_embeddings_parse() {
        let text = "a\t1 0 0 0\nb\t0 2 0 0\nc\t1 1 1 1\n";
        let map = parse_external_embeddings(text).unwrap();
        assert_eq!(map.len(), 3);
        for v in map.values() {
            assert!((l2(v.values()) - 1.0).abs() < 1e-12);
        }
        assert_eq!(map["c"].values(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn external_embeddings_duplicate_id() {
        let text = "a\t1 0 0 0\nb\t0 1 0 0\na\t0 0 1 0\n";
        match parse_external_embeddings(text) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn external_embeddings_dimension_mismatch() {
        let text = "a\t1 0 0 0\nb\t0 1 0\n";
        assert!(matches!(
            parse_external_embeddings(text),
            Err(Error::DimensionMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn external_embeddings_empty() {
        assert!(parse_external_embeddings("").unwrap().is_empty());
    }

    #[test]
    fn format_then_parse() {
        let e = HashedNgramEmbedder::new(16, 2).unwrap();
        let v = e.embed("hello world");
        let text = format_embeddings([("x", &v)]);
        let back = parse_external_embeddings(&text).unwrap();
        for (a, b) in back["x"].values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn vec_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..16).prop_flat_map(|d| {
            (
                prop::collection::vec(-100.0f64..100.0, d),
                prop::collection::vec(-100.0f64..100.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn cosine_bounded_and_symmetric((a, b) in vec_strategy()) {
            let a = EmbeddingVector::raw(a);
            let b = EmbeddingVector::raw(b);
            let ab = cosine(&a, &b).unwrap();
            let ba = cosine(&b, &a).unwrap();
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            prop_assert!((ab - ba).abs() <= 1e-12);
        }

        #[test]
        fn cosine_scale_invariant((a, b) in vec_strategy(), lambda in 0.01f64..100.0) {
            let scaled = EmbeddingVector::raw(a.iter().map(|x| x * lambda).collect());
            let a = EmbeddingVector::raw(a);
            let b = EmbeddingVector::raw(b);
            prop_assume!(!a.is_zero() && !b.is_zero());
            let c1 = cosine(&a, &b).unwrap();
            let c2 = cosine(&scaled, &b).unwrap();
            prop_assert!((c1 - c2).abs() <= 1e-12);
        }

        #[test]
        fn hashed_embedding_unit_norm(text in "\\PC{1,40}") {
            let v = HashedNgramEmbedder::default().embed(&text);
            prop_assert!((l2(v.values()) - 1.0).abs() < 1e-12);
        }
    }
}
