//! Vector lookup for records: hashed embedder or an external TSV.

use std::collections::HashMap;

use anyhow::Result;
use apdf_rank::corpus::QARecord;
use apdf_rank::embed::load_external_embeddings;
use apdf_rank::{Embedder, EmbeddingVector, Error, HashedNgramEmbedder};

use crate::args::EmbedArgs;

pub enum EmbedSource {
    Hashed(HashedNgramEmbedder),
    External(HashMap<String, EmbeddingVector>),
}

pub fn question_key(record: &QARecord) -> String {
    record.question_id.clone()
}

pub fn candidate_key(record: &QARecord, candidate: usize) -> String {
    format!("{}/{}", record.question_id, record.candidates[candidate].id)
}

pub fn generation_key(record_id: &str) -> String {
    format!("{record_id}/@generation")
}

impl EmbedSource {
    pub fn from_args(args: &EmbedArgs) -> Result<Self> {
        Ok(match &args.embeddings {
            Some(path) => EmbedSource::External(load_external_embeddings(path)?),
            None => EmbedSource::Hashed(HashedNgramEmbedder::new(args.dim, args.ngram)?),
        })
    }

    fn lookup(&self, key: &str, text: &str) -> Result<EmbeddingVector> {
        match self {
            EmbedSource::Hashed(e) => Ok(e.embed(text)),
            EmbedSource::External(map) => map
                .get(key)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("no embedding for `{key}`")).into()),
        }
    }

    pub fn question(&self, record: &QARecord) -> Result<EmbeddingVector> {
        self.lookup(&question_key(record), &record.question_text)
    }

    pub fn candidates(&self, record: &QARecord) -> Result<Vec<EmbeddingVector>> {
        (0..record.pool_size())
            .map(|i| self.lookup(&candidate_key(record, i), &record.candidates[i].content))
            .collect()
    }

    pub fn generation(&self, record_id: &str, text: &str) -> Result<EmbeddingVector> {
        self.lookup(&generation_key(record_id), text)
    }
}
