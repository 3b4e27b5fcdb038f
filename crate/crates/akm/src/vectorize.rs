//! Tokenization, vocabulary fitting, and TF-IDF vectors.
//!
//! The same tokenizer is shared by the metrics module so that n-gram
//! statistics and TF-IDF weights agree on token identity.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Lowercased maximal runs of alphanumeric characters, in input order.
///
/// Hyphens, punctuation and whitespace all act as separators:
/// `"GPU-node v2"` → `["gpu", "node", "v2"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|run| !run.is_empty())
        .map(|run| run.to_lowercase())
        .collect()
}

/// Corpus statistics behind TF-IDF weighting: a dense term → column mapping
/// plus per-term document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: BTreeMap<String, usize>,
    doc_freq: Vec<usize>,
    n_docs: usize,
}

impl Vocabulary {
    /// Number of distinct terms.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Column index of a term, if in vocabulary.
    pub fn column(&self, term: &str) -> Option<usize> {
        self.terms.get(term).copied()
    }

    /// Terms with their column indices, in term-sorted order.
    pub fn terms(&self) -> impl Iterator<Item = (&str, usize)> {
        self.terms.iter().map(|(t, &c)| (t.as_str(), c))
    }

    /// Document frequency of the term at `column`.
    pub fn doc_freq(&self, column: usize) -> usize {
        self.doc_freq[column]
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Smoothed inverse document frequency: `ln((1 + N) / (1 + df)) + 1`.
    ///
    /// Always finite and ≥ 1 for df in [1, N].
    pub fn idf(&self, column: usize) -> f64 {
        ((1 + self.n_docs) as f64 / (1 + self.doc_freq[column]) as f64).ln() + 1.0
    }
}

/// Fit a vocabulary over tokenized documents.
///
/// `doc_freq[t]` counts documents containing `t` at least once (not
/// occurrences). Columns are assigned densely in sorted term order, so the
/// mapping is deterministic for a given corpus.
pub fn fit_vocabulary(docs: &[Vec<String>]) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(Error::Argument(
            "cannot fit a vocabulary on an empty corpus".into(),
        ));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let distinct: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
        for term in distinct {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let mut terms = BTreeMap::new();
    let mut doc_freq = Vec::with_capacity(df.len());
    for (column, (term, freq)) in df.into_iter().enumerate() {
        terms.insert(term.to_string(), column);
        doc_freq.push(freq);
    }
    Ok(Vocabulary {
        terms,
        doc_freq,
        n_docs: docs.len(),
    })
}

/// Sparse TF-IDF vector over a fitted vocabulary.
///
/// `norm` is the Euclidean norm of the raw (pre-normalization) weights; the
/// stored entries may themselves be unit-scaled depending on how the vector
/// was built. Zero weights are never stored explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfVector {
    entries: BTreeMap<usize, f64>,
    norm: f64,
}

impl TfIdfVector {
    /// (column, weight) pairs in column order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(&c, &w)| (c, w))
    }

    /// Weight at `column` (0.0 when absent).
    pub fn get(&self, column: usize) -> f64 {
        self.entries.get(&column).copied().unwrap_or(0.0)
    }

    /// Euclidean norm of the raw TF-IDF weights.
    pub fn raw_norm(&self) -> f64 {
        self.norm
    }

    /// Euclidean norm of the stored entries.
    pub fn l2_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, other: &TfIdfVector) -> f64 {
        // Iterate the smaller side.
        let (a, b) = if self.entries.len() <= other.entries.len() {
            (self, other)
        } else {
            (other, self)
        };
        a.entries()
            .map(|(c, w)| w * b.get(c))
            .sum()
    }

    /// Cosine similarity; 0.0 when either vector is all-zero.
    pub fn cosine(&self, other: &TfIdfVector) -> f64 {
        let na = self.l2_norm();
        let nb = other.l2_norm();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        self.dot(other) / (na * nb)
    }

    /// Euclidean distance between the stored entries.
    pub fn euclidean_distance(&self, other: &TfIdfVector) -> f64 {
        let mut sum = 0.0;
        for (c, w) in self.entries() {
            let d = w - other.get(c);
            sum += d * d;
        }
        for (c, w) in other.entries() {
            if !self.entries.contains_key(&c) {
                sum += w * w;
            }
        }
        sum.sqrt()
    }

    /// Dense view with `dim` columns.
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut dense = vec![0.0; dim];
        for (c, w) in self.entries() {
            dense[c] = w;
        }
        dense
    }
}

/// Build the TF-IDF vector of a tokenized document.
///
/// `weight(t) = tf(t) × idf(t)` with tf the raw term count in `doc` and the
/// smoothed idf from [`Vocabulary::idf`]. Out-of-vocabulary tokens are
/// ignored. With `normalize` the entries are scaled to unit Euclidean norm
/// (all-zero vectors are left untouched).
pub fn tfidf_vector(doc: &[String], vocab: &Vocabulary, normalize: bool) -> TfIdfVector {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for token in doc {
        if let Some(column) = vocab.column(token) {
            *counts.entry(column).or_insert(0) += 1;
        }
    }
    let mut entries: BTreeMap<usize, f64> = BTreeMap::new();
    let mut sq_sum = 0.0;
    for (column, tf) in counts {
        let weight = tf as f64 * vocab.idf(column);
        if weight != 0.0 {
            sq_sum += weight * weight;
            entries.insert(column, weight);
        }
    }
    let norm = sq_sum.sqrt();
    if normalize && norm > 0.0 {
        for weight in entries.values_mut() {
            *weight /= norm;
        }
    }
    TfIdfVector { entries, norm }
}
