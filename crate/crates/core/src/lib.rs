//! Multi-attribute preference ranking for community question answering.
//!
//! * [`corpus`]: StackExchange dump ingestion, filtering and gold labels.
//! * [`embed`]: pluggable text embeddings and cosine similarity.
//! * [`apdf`]: attribute-perceptual distance factor matrices.
//! * [`ranking`]: self-supervised dynamic ranking over those matrices.
//! * [`objective`]: alignment and comparison losses plus DPO and
//!   Plackett-Luce baselines.
//! * [`policy`]: log-probability tables and a trainable byte-level toy
//!   policy.
//! * [`eval`]: PrefHit, PrefRecall, SaferHit, BLEU, Rouge-L, correlations.
//!
//! ```
//! use apdf_rank::apdf::{single_apdf, GainVector, LogBase};
//!
//! let g = GainVector::new("semantic", vec![1.0, 0.5]).unwrap();
//! let m = single_apdf(&g, LogBase::Natural);
//! assert!((m.get(0, 1) - 0.266228).abs() < 1e-6);
//! ```

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apdf;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod objective;
pub mod policy;
pub mod prepare;
pub mod ranking;
pub mod synthetic;

pub use apdf::{ApdfBundle, ApdfMatrix, DecayConfig, GainVector, LogBase};
pub use corpus::{FilterConfig, QARecord, ResponseCandidate};
pub use embed::{cosine, Embedder, EmbeddingVector, HashedNgramEmbedder};
pub use error::{Error, ErrorCategory, Result};
pub use eval::{EvalConfig, EvalReport, RecallNormalizer};
pub use objective::{ComparisonMode, LossBreakdown};
pub use policy::{LogProbTable, ToyPolicy, TrainConfig};
pub use prepare::{prepare_record, PrepareConfig, PreparedRecord};
pub use ranking::{brute_force_rank, dynamic_rank, DynamicRanking, SemanticRank};
