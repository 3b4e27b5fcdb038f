//! Embedding-backed vector index with exact top-k retrieval.
//!
//! The index is a brute-force scan: at desk scale (thousands of chunks)
//! exactness beats approximate structures and keeps behaviour easy to verify.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::embed::{cosine, Embedder};
use crate::error::{Error, Result};

/// A provider-tagged embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub provider_id: String,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(provider_id: &str, values: Vec<f64>) -> Self {
        Self {
            provider_id: provider_id.to_string(),
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// One indexed chunk: its ref, text, and embedding.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub chunk_ref: String,
    pub text: String,
    pub embedding: EmbeddingVector,
}

/// In-memory vector store over chunks of one embedding provider.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    provider_id: String,
    dim: usize,
    entries: Vec<IndexEntry>,
    by_ref: HashMap<String, usize>,
}

/// Top-k retrieval outcome: (chunk_ref, cosine score) pairs in non-increasing
/// score order, plus the concatenated context built from the chunk texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub chunks: Vec<(String, f64)>,
    pub augmented_context: String,
}

/// On-disk index record, one JSON object per line.
#[derive(Serialize, Deserialize)]
struct IndexRecord {
    chunk_ref: String,
    provider_id: String,
    dim: usize,
    values: Vec<f64>,
}

/// On-disk chunk-text record accompanying the index file.
#[derive(Serialize, Deserialize)]
struct TextRecord {
    chunk_ref: String,
    text: String,
}

impl VectorIndex {
    pub fn new(provider_id: &str, dim: usize) -> Self {
        Self {
            provider_id: provider_id.to_string(),
            dim,
            entries: Vec::new(),
            by_ref: HashMap::new(),
        }
    }

    /// An empty index matching an embedder's provider id and dimension.
    pub fn for_embedder(embedder: &dyn Embedder) -> Self {
        Self::new(embedder.provider_id(), embedder.dim())
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    fn check_embedding(&self, embedding: &EmbeddingVector) -> Result<()> {
        if embedding.provider_id != self.provider_id {
            return Err(Error::Config(format!(
                "embedding provider {:?} does not match index provider {:?}",
                embedding.provider_id, self.provider_id
            )));
        }
        if embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: embedding.dim(),
            });
        }
        if embedding.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("embedding contains non-finite values".into()));
        }
        Ok(())
    }

    /// Insert a pre-computed entry. Re-adding a chunk_ref replaces the stored
    /// vector in place, keeping the original insertion position.
    pub fn add_entry(
        &mut self,
        chunk_ref: &str,
        text: &str,
        embedding: EmbeddingVector,
    ) -> Result<()> {
        self.check_embedding(&embedding)?;
        match self.by_ref.get(chunk_ref) {
            Some(&i) => {
                self.entries[i].text = text.to_string();
                self.entries[i].embedding = embedding;
            }
            None => {
                self.by_ref.insert(chunk_ref.to_string(), self.entries.len());
                self.entries.push(IndexEntry {
                    chunk_ref: chunk_ref.to_string(),
                    text: text.to_string(),
                    embedding,
                });
            }
        }
        Ok(())
    }

    /// Embed a chunk and insert it.
    pub fn add(&mut self, chunk: &Chunk, embedder: &dyn Embedder) -> Result<()> {
        if embedder.provider_id() != self.provider_id || embedder.dim() != self.dim {
            return Err(Error::Config(format!(
                "embedder {:?} (dim {}) does not match index {:?} (dim {})",
                embedder.provider_id(),
                embedder.dim(),
                self.provider_id,
                self.dim
            )));
        }
        let embedding = embedder.embedding(&chunk.text)?;
        self.add_entry(&chunk.chunk_ref(), &chunk.text, embedding)
    }

    /// The k entries most cosine-similar to `query`, ties broken by insertion
    /// order. `augmented_context` joins the texts in score order with a blank
    /// line between chunks.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<RetrievalResult> {
        if self.entries.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::Argument("k must be positive".into()));
        }
        self.check_embedding(query)?;
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, cosine(&query.values, &e.embedding.values)))
            .collect();
        // Stable sort keeps insertion order among equal scores.
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores"));
        scored.truncate(k);
        let chunks: Vec<(String, f64)> = scored
            .iter()
            .map(|&(i, s)| (self.entries[i].chunk_ref.clone(), s))
            .collect();
        let augmented_context = scored
            .iter()
            .map(|&(i, _)| self.entries[i].text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n");
        Ok(RetrievalResult {
            chunks,
            augmented_context,
        })
    }

    /// Write the embeddings file: JSON lines of
    /// `{chunk_ref, provider_id, dim, values}`.
    pub fn write_embeddings(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for entry in &self.entries {
            let record = IndexRecord {
                chunk_ref: entry.chunk_ref.clone(),
                provider_id: self.provider_id.clone(),
                dim: self.dim,
                values: entry.embedding.values.clone(),
            };
            let line = serde_json::to_string(&record).map_err(|e| Error::Json {
                context: format!("index entry {}", entry.chunk_ref),
                source: e,
            })?;
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Write the chunk-text sidecar: JSON lines of `{chunk_ref, text}`.
    pub fn write_texts(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for entry in &self.entries {
            let record = TextRecord {
                chunk_ref: entry.chunk_ref.clone(),
                text: entry.text.clone(),
            };
            let line = serde_json::to_string(&record).map_err(|e| Error::Json {
                context: format!("chunk text {}", entry.chunk_ref),
                source: e,
            })?;
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Load an index from the embeddings file plus its chunk-text sidecar,
    /// validating provider/dimension uniformity and ref uniqueness.
    pub fn load(embeddings_path: &Path, texts_path: &Path) -> Result<VectorIndex> {
        let mut texts: HashMap<String, String> = HashMap::new();
        let file = std::fs::File::open(texts_path).map_err(|e| Error::io(texts_path, e))?;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(texts_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TextRecord = serde_json::from_str(&line).map_err(|e| Error::Json {
                context: format!("{}:{}", texts_path.display(), lineno + 1),
                source: e,
            })?;
            texts.insert(record.chunk_ref, record.text);
        }

        let file = std::fs::File::open(embeddings_path).map_err(|e| Error::io(embeddings_path, e))?;
        let mut index: Option<VectorIndex> = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(embeddings_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: IndexRecord = serde_json::from_str(&line).map_err(|e| Error::Json {
                context: format!("{}:{}", embeddings_path.display(), lineno + 1),
                source: e,
            })?;
            if record.values.len() != record.dim {
                return Err(Error::DimensionMismatch {
                    expected: record.dim,
                    got: record.values.len(),
                });
            }
            let index = index.get_or_insert_with(|| VectorIndex::new(&record.provider_id, record.dim));
            if index.by_ref.contains_key(&record.chunk_ref) {
                return Err(Error::Parse {
                    message: format!("duplicate chunk_ref {:?}", record.chunk_ref),
                    raw: line.clone(),
                });
            }
            let text = texts.get(&record.chunk_ref).cloned().ok_or_else(|| Error::Parse {
                message: format!("no chunk text for {:?}", record.chunk_ref),
                raw: line.clone(),
            })?;
            index.add_entry(
                &record.chunk_ref,
                &text,
                EmbeddingVector::new(&record.provider_id, record.values),
            )?;
        }
        index.ok_or(Error::EmptyIndex)
    }
}

/// Embed a question and retrieve its top-k chunks.
pub fn retrieve_context(
    question: &str,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<RetrievalResult> {
    let query = embedder.embedding(question)?;
    index.top_k(&query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{HashEmbedder, TableEmbedder};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn chunk(doc: &str, index: usize, text: &str) -> Chunk {
        Chunk {
            doc_id: doc.to_string(),
            index,
            text: text.to_string(),
            char_span: (0, text.chars().count()),
        }
    }

    fn vector(provider: &str, values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(provider, values.to_vec())
    }

    #[test]
    fn add_counts_and_replaces_idempotently() {
        let embedder = HashEmbedder::new(8);
        let mut index = VectorIndex::for_embedder(&embedder);
        for (i, text) in ["one", "two", "three"].iter().enumerate() {
            index.add(&chunk("d", i, text), &embedder).unwrap();
        }
        assert_eq!(index.len(), 3);

        index.add(&chunk("d", 1, "two updated"), &embedder).unwrap();
        assert_eq!(index.len(), 3);
        assert_eq!(index.entries()[1].text, "two updated");
    }

    #[test]
    fn add_rejects_mismatched_provider() {
        let mut index = VectorIndex::new("hash:8", 8);
        let other = HashEmbedder::new(4);
        assert!(matches!(
            index.add(&chunk("d", 0, "x"), &other),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            index.add_entry("d#0", "x", vector("elsewhere", &[0.0; 8])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn top_k_hand_oracle() {
        let mut index = VectorIndex::new("mock", 2);
        index.add_entry("e1", "t1", vector("mock", &[1.0, 0.0])).unwrap();
        index.add_entry("e2", "t2", vector("mock", &[0.0, 1.0])).unwrap();
        index.add_entry("e3", "t3", vector("mock", &[0.9, 0.1])).unwrap();
        let result = index.top_k(&vector("mock", &[1.0, 0.0]), 2).unwrap();
        assert_eq!(result.chunks[0].0, "e1");
        assert!((result.chunks[0].1 - 1.0).abs() < 1e-9);
        assert_eq!(result.chunks[1].0, "e3");
        // cos = 0.9 / sqrt(0.82)
        assert!((result.chunks[1].1 - 0.9 / 0.82f64.sqrt()).abs() < 1e-9);
        assert!((result.chunks[1].1 - 0.9939).abs() < 1e-4);
        assert_eq!(result.augmented_context, "t1\n\nt3");
    }

    #[test]
    fn top_k_truncation_and_errors() {
        let mut index = VectorIndex::new("mock", 2);
        index.add_entry("e1", "t1", vector("mock", &[1.0, 0.0])).unwrap();
        index.add_entry("e2", "t2", vector("mock", &[0.5, 0.5])).unwrap();
        let all = index.top_k(&vector("mock", &[1.0, 0.0]), 10).unwrap();
        assert_eq!(all.chunks.len(), 2);
        assert!(all.chunks[0].1 >= all.chunks[1].1);

        let empty = VectorIndex::new("mock", 2);
        assert!(matches!(
            empty.top_k(&vector("mock", &[1.0, 0.0]), 1),
            Err(Error::EmptyIndex)
        ));
        assert!(matches!(
            index.top_k(&vector("mock", &[1.0]), 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn retrieve_context_with_orthogonal_mock() {
        let texts = ["chunk one", "chunk two", "chunk three"];
        let embedder = TableEmbedder::orthogonal("orth", &texts);
        let mut index = VectorIndex::for_embedder(&embedder);
        for (i, t) in texts.iter().enumerate() {
            index.add(&chunk("d", i, t), &embedder).unwrap();
        }

        let hit = retrieve_context("chunk two", &index, &embedder, 1).unwrap();
        assert_eq!(hit.chunks, vec![("d#1".to_string(), 1.0)]);
        assert_eq!(hit.augmented_context, "chunk two");

        // k=2 over orthogonal chunks: the filler has score 0.
        let two = retrieve_context("chunk two", &index, &embedder, 2).unwrap();
        assert_eq!(two.chunks.len(), 2);
        assert_eq!(two.chunks[1].1, 0.0);

        // Determinism.
        assert_eq!(
            retrieve_context("chunk two", &index, &embedder, 2).unwrap(),
            two
        );
    }

    #[test]
    fn scores_stay_in_range_and_self_similarity_is_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let mut index = VectorIndex::new("mock", 4);
        let mut vectors = Vec::new();
        for i in 0..20 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            index
                .add_entry(&format!("c#{i}"), &format!("text {i}"), vector("mock", &v))
                .unwrap();
            vectors.push(v);
        }
        let probe = vector("mock", &vectors[7]);
        let result = index.top_k(&probe, 20).unwrap();
        assert_eq!(result.chunks[0].0, "c#7");
        assert!((result.chunks[0].1 - 1.0).abs() < 1e-9);
        for (_, score) in &result.chunks {
            assert!((-1.0..=1.0).contains(score));
        }
    }

    #[test]
    fn augmented_context_matches_returned_refs() {
        let texts = ["alpha text", "beta text", "gamma text"];
        let embedder = TableEmbedder::orthogonal("orth", &texts)
            .with_fallback(vec![1.0, 1.0, 1.0]);
        let mut index = VectorIndex::for_embedder(&embedder);
        for (i, t) in texts.iter().enumerate() {
            index.add(&chunk("d", i, t), &embedder).unwrap();
        }
        let result = retrieve_context("anything", &index, &embedder, 2).unwrap();
        let expected: Vec<&str> = result
            .chunks
            .iter()
            .map(|(r, _)| {
                let i: usize = r.split('#').nth(1).unwrap().parse().unwrap();
                texts[i]
            })
            .collect();
        assert_eq!(result.augmented_context, expected.join("\n\n"));
    }

    #[test]
    fn index_round_trip_is_bit_identical() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let embedder = HashEmbedder::new(6);
        let mut index = VectorIndex::for_embedder(&embedder);
        let words = ["ssh", "login", "disk", "quota", "gpu"];
        for i in 0..12 {
            let text: String = (0..rng.random_range(1..6))
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ");
            index.add(&chunk("doc", i, &text), &embedder).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let emb_path = dir.path().join("index.jsonl");
        let txt_path = dir.path().join("chunks.jsonl");
        index.write_embeddings(&emb_path).unwrap();
        index.write_texts(&txt_path).unwrap();

        let loaded = VectorIndex::load(&emb_path, &txt_path).unwrap();
        assert_eq!(loaded.len(), index.len());
        for _ in 0..20 {
            let query: String = (0..rng.random_range(1..4))
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ");
            let k = rng.random_range(1..=12);
            let a = retrieve_context(&query, &index, &embedder, k).unwrap();
            let b = retrieve_context(&query, &loaded, &embedder, k).unwrap();
            assert_eq!(a.chunks.len(), b.chunks.len());
            for (x, y) in a.chunks.iter().zip(&b.chunks) {
                assert_eq!(x.0, y.0);
                assert_eq!(x.1.to_bits(), y.1.to_bits(), "scores must be bit-identical");
            }
            assert_eq!(a.augmented_context, b.augmented_context);
        }

        // The embeddings file carries exactly the documented fields.
        let first = std::fs::read_to_string(&emb_path)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        let value: serde_json::Value = serde_json::from_str(&first).unwrap();
        let obj = value.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, vec!["chunk_ref", "dim", "provider_id", "values"]);
    }

    #[test]
    fn load_rejects_missing_text_and_duplicate_refs() {
        let dir = tempfile::tempdir().unwrap();
        let emb = dir.path().join("index.jsonl");
        let txt = dir.path().join("chunks.jsonl");
        std::fs::write(
            &emb,
            r#"{"chunk_ref":"a#0","provider_id":"mock","dim":1,"values":[1.0]}"#,
        )
        .unwrap();
        std::fs::write(&txt, "").unwrap();
        assert!(matches!(
            VectorIndex::load(&emb, &txt),
            Err(Error::Parse { .. })
        ));

        std::fs::write(&txt, r#"{"chunk_ref":"a#0","text":"t"}"#).unwrap();
        assert!(VectorIndex::load(&emb, &txt).is_ok());

        let dup = format!(
            "{0}\n{0}\n",
            r#"{"chunk_ref":"a#0","provider_id":"mock","dim":1,"values":[1.0]}"#
        );
        std::fs::write(&emb, dup).unwrap();
        assert!(matches!(
            VectorIndex::load(&emb, &txt),
            Err(Error::Parse { .. })
        ));
    }
}
