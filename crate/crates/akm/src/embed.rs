//! Embedding provider contract and the deterministic providers shipped with
//! the toolkit.
//!
//! Providers map text to a fixed-dimension real vector. Everything here is a
//! pure function of its input so that retrieval, STS scoring and the harness
//! stay reproducible without network access.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::retrieval::EmbeddingVector;
use crate::vectorize::tokenize;

/// (text) → fixed-dim real vector. Implementations must be deterministic.
pub trait Embedder: Send + Sync {
    fn provider_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;

    /// Embed into a tagged [`EmbeddingVector`].
    fn embedding(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(EmbeddingVector::new(self.provider_id(), self.embed(text)?))
    }
}

/// FNV-1a 64-bit hash; stable across platforms and releases.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hashed bag-of-tokens embedder.
///
/// Each token is hashed onto one of `dim` signed axes and the counts are
/// summed, so texts sharing tokens get correlated vectors. Token-free text
/// embeds to the zero vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    provider_id: String,
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            provider_id: format!("hash:{dim}"),
            dim,
        }
    }
}

impl Embedder for HashEmbedder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut values = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = fnv1a64(token.as_bytes());
            let axis = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            values[axis] += sign;
        }
        Ok(values)
    }
}

/// Fixed-table embedder for tests and demos.
///
/// Unknown texts are a transport error unless a `fallback` vector is set, so
/// tests can exercise both lookup failures and orthogonal-axis scenarios.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    provider_id: String,
    dim: usize,
    table: HashMap<String, Vec<f64>>,
    fallback: Option<Vec<f64>>,
}

impl TableEmbedder {
    pub fn new(provider_id: &str, dim: usize) -> Self {
        Self {
            provider_id: provider_id.to_string(),
            dim,
            table: HashMap::new(),
            fallback: None,
        }
    }

    pub fn with(mut self, text: &str, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.dim, "table entry dimension");
        self.table.insert(text.to_string(), values);
        self
    }

    pub fn with_fallback(mut self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.dim, "fallback dimension");
        self.fallback = Some(values);
        self
    }

    /// Map each of `texts` to its own orthogonal axis.
    pub fn orthogonal(provider_id: &str, texts: &[&str]) -> Self {
        let dim = texts.len();
        let mut table = HashMap::new();
        for (i, text) in texts.iter().enumerate() {
            let mut axis = vec![0.0; dim];
            axis[i] = 1.0;
            table.insert(text.to_string(), axis);
        }
        Self {
            provider_id: provider_id.to_string(),
            dim,
            table,
            fallback: None,
        }
    }
}

impl Embedder for TableEmbedder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if let Some(values) = self.table.get(text) {
            return Ok(values.clone());
        }
        match &self.fallback {
            Some(values) => Ok(values.clone()),
            None => Err(Error::Transport {
                endpoint: self.provider_id.clone(),
                message: format!("no embedding for text {text:?}"),
            }),
        }
    }
}

/// Resolve an embedder id such as `hash:64`.
pub fn parse_embedder(id: &str) -> Result<Box<dyn Embedder>> {
    if let Some(dim) = id.strip_prefix("hash:") {
        let dim: usize = dim
            .parse()
            .map_err(|_| Error::Config(format!("bad embedder dimension in {id:?}")))?;
        if dim == 0 {
            return Err(Error::Config("embedder dimension must be positive".into()));
        }
        return Ok(Box::new(HashEmbedder::new(dim)));
    }
    Err(Error::Config(format!("unknown embedder id {id:?}")))
}

/// Cosine similarity of dense vectors; 0.0 when either is all-zero. The
/// result is clamped to [−1, 1] against floating-point overshoot.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Euclidean distance of dense vectors.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
