//! Sentence-level BLEU-1..4, ROUGE-1/2/L and embedding-cosine STS.
//!
//! All scores live in [0, 1]. Token identity is shared with the TF-IDF
//! vectorizer via [`tokenize`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Embedder};
use crate::error::Result;
use crate::vectorize::tokenize;

/// Precision floor substituted when a modified n-gram precision has a zero
/// numerator, keeping the geometric mean finite.
const BLEU_EPSILON: f64 = 1e-9;

/// Report row names, in table order.
pub const METRIC_NAMES: [&str; 14] = [
    "BLEU-1",
    "BLEU-2",
    "BLEU-3",
    "BLEU-4",
    "ROUGE-1 (Precision)",
    "ROUGE-1 (Recall)",
    "ROUGE-1 (F1)",
    "ROUGE-2 (Precision)",
    "ROUGE-2 (Recall)",
    "ROUGE-2 (F1)",
    "ROUGE-L (Precision)",
    "ROUGE-L (Recall)",
    "ROUGE-L (F1)",
    "STS",
];

/// Precision/recall/F1 triple for one ROUGE variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

/// All per-sample metric values, serialized under the report header names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    #[serde(rename = "BLEU-1")]
    pub bleu1: f64,
    #[serde(rename = "BLEU-2")]
    pub bleu2: f64,
    #[serde(rename = "BLEU-3")]
    pub bleu3: f64,
    #[serde(rename = "BLEU-4")]
    pub bleu4: f64,
    #[serde(rename = "ROUGE-1 (Precision)")]
    pub rouge1_precision: f64,
    #[serde(rename = "ROUGE-1 (Recall)")]
    pub rouge1_recall: f64,
    #[serde(rename = "ROUGE-1 (F1)")]
    pub rouge1_f1: f64,
    #[serde(rename = "ROUGE-2 (Precision)")]
    pub rouge2_precision: f64,
    #[serde(rename = "ROUGE-2 (Recall)")]
    pub rouge2_recall: f64,
    #[serde(rename = "ROUGE-2 (F1)")]
    pub rouge2_f1: f64,
    #[serde(rename = "ROUGE-L (Precision)")]
    pub rouge_l_precision: f64,
    #[serde(rename = "ROUGE-L (Recall)")]
    pub rouge_l_recall: f64,
    #[serde(rename = "ROUGE-L (F1)")]
    pub rouge_l_f1: f64,
    #[serde(rename = "STS")]
    pub sts: f64,
}

impl MetricVector {
    pub fn zeros() -> Self {
        Self {
            bleu1: 0.0,
            bleu2: 0.0,
            bleu3: 0.0,
            bleu4: 0.0,
            rouge1_precision: 0.0,
            rouge1_recall: 0.0,
            rouge1_f1: 0.0,
            rouge2_precision: 0.0,
            rouge2_recall: 0.0,
            rouge2_f1: 0.0,
            rouge_l_precision: 0.0,
            rouge_l_recall: 0.0,
            rouge_l_f1: 0.0,
            sts: 0.0,
        }
    }

    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 14] {
        [
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.rouge1_precision,
            self.rouge1_recall,
            self.rouge1_f1,
            self.rouge2_precision,
            self.rouge2_recall,
            self.rouge2_f1,
            self.rouge_l_precision,
            self.rouge_l_recall,
            self.rouge_l_f1,
            self.sts,
        ]
    }

    /// Mean of the 14 metric values.
    pub fn average(&self) -> f64 {
        self.values().iter().sum::<f64>() / 14.0
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n && n > 0 {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap: Σ_g min(count_cand(g), count_ref(g)).
fn clipped_overlap(candidate: &[String], reference: &[String], n: usize) -> usize {
    let cand = ngram_counts(candidate, n);
    let refr = ngram_counts(reference, n);
    cand.iter()
        .map(|(gram, &c)| c.min(refr.get(gram).copied().unwrap_or(0)))
        .sum()
}

/// Modified m-gram precision with the ε floor on zero numerators.
fn modified_precision(candidate: &[String], reference: &[String], m: usize) -> f64 {
    let total = candidate.len().saturating_sub(m - 1);
    let overlap = clipped_overlap(candidate, reference, m);
    if overlap == 0 || total == 0 {
        BLEU_EPSILON
    } else {
        overlap as f64 / total as f64
    }
}

/// Sentence-level cumulative BLEU-n.
///
/// Geometric mean of the modified m-gram precisions for m = 1..n, times the
/// brevity penalty `BP = 1 if c > r else exp(1 − r/c)`. An empty candidate
/// scores 0.
pub fn bleu_n(candidate: &str, reference: &str, n: usize) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order must be in 1..=4");
    let cand = tokenize(candidate);
    if cand.is_empty() {
        return 0.0;
    }
    let refr = tokenize(reference);
    let log_sum: f64 = (1..=n)
        .map(|m| modified_precision(&cand, &refr, m).ln())
        .sum();
    let geo_mean = (log_sum / n as f64).exp();
    let c = cand.len() as f64;
    let r = refr.len() as f64;
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    brevity * geo_mean
}

/// ROUGE-n precision/recall/F1 over clipped n-gram overlap (n in {1, 2}).
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> RougeScore {
    assert!((1..=2).contains(&n), "ROUGE-n order must be 1 or 2");
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    let overlap = clipped_overlap(&cand, &refr, n) as f64;
    let cand_total = cand.len().saturating_sub(n - 1) as f64;
    let ref_total = refr.len().saturating_sub(n - 1) as f64;
    let precision = if cand_total > 0.0 { overlap / cand_total } else { 0.0 };
    let recall = if ref_total > 0.0 { overlap / ref_total } else { 0.0 };
    RougeScore::from_pr(precision, recall)
}

/// Length of the longest common subsequence of two token sequences.
fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // One-row DP over b.
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y {
                diag + 1
            } else {
                up.max(row[j])
            };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L precision/recall/F1 from the LCS of the token sequences.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    let lcs = lcs_length(&cand, &refr) as f64;
    let precision = if cand.is_empty() { 0.0 } else { lcs / cand.len() as f64 };
    let recall = if refr.is_empty() { 0.0 } else { lcs / refr.len() as f64 };
    RougeScore::from_pr(precision, recall)
}

/// Semantic textual similarity: embedding cosine clamped to [0, 1].
///
/// Returns 0 when either embedding is the zero vector; bit-identical
/// embeddings score exactly 1.
pub fn sts(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<f64> {
    let a = embedder.embed(candidate)?;
    let b = embedder.embed(reference)?;
    let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
    if zero(&a) || zero(&b) {
        return Ok(0.0);
    }
    if a == b {
        return Ok(1.0);
    }
    Ok(cosine(&a, &b).clamp(0.0, 1.0))
}

/// Score a candidate against a reference on all 14 metrics.
pub fn score_all(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<MetricVector> {
    let r1 = rouge_n(candidate, reference, 1);
    let r2 = rouge_n(candidate, reference, 2);
    let rl = rouge_l(candidate, reference);
    Ok(MetricVector {
        bleu1: bleu_n(candidate, reference, 1),
        bleu2: bleu_n(candidate, reference, 2),
        bleu3: bleu_n(candidate, reference, 3),
        bleu4: bleu_n(candidate, reference, 4),
        rouge1_precision: r1.precision,
        rouge1_recall: r1.recall,
        rouge1_f1: r1.f1,
        rouge2_precision: r2.precision,
        rouge2_recall: r2.recall,
        rouge2_f1: r2.f1,
        rouge_l_precision: rl.precision,
        rouge_l_recall: rl.recall,
        rouge_l_f1: rl.f1,
        sts: sts(candidate, reference, embedder)?,
    })
}
