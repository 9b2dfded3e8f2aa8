//! Instruction embedders for demonstration retrieval.

use crate::vecmath::{normalize, stable_hash};

pub const DEFAULT_EMBED_DIM: usize = 64;

pub trait TextEmbedder: Send + Sync {
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing of word unigrams and bigrams, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedNgramEmbedder {
    pub dim: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        HashedNgramEmbedder { dim: DEFAULT_EMBED_DIM }
    }
}

pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl TextEmbedder for HashedNgramEmbedder {
    fn id(&self) -> String {
        format!("hashed-ngram-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let toks = tokens(text);
        let mut v = vec![0.0; self.dim];
        let mut add = |gram: &str| {
            let h = stable_hash(gram.as_bytes());
            let slot = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        };
        for t in &toks {
            add(t);
        }
        for pair in toks.windows(2) {
            add(&format!("{} {}", pair[0], pair[1]));
        }
        normalize(v)
    }
}
