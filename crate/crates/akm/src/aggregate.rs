//! Aggregated-answer selection: pick one representative answer out of the
//! candidates produced by a model roster.
//!
//! The primary selector vectorizes the candidate answers with TF-IDF, takes
//! the k=1 K-means centroid (the arithmetic mean), and returns the answer
//! with the smallest Euclidean distance to it. Two alternative selectors are
//! provided for comparison: a cosine-similarity medoid and a mean-embedding
//! nearest neighbour.

use serde::{Deserialize, Serialize};

use crate::embed::{euclidean_distance, Embedder};
use crate::error::{Error, Result};
use crate::vectorize::{fit_vocabulary, tfidf_vector, tokenize, TfIdfVector};

/// One backend's answer to a question, plus bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub model_id: String,
    pub text: String,
    pub ok: bool,
    pub latency_ms: f64,
}

impl AnswerCandidate {
    pub fn new(model_id: &str, text: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            text: text.to_string(),
            ok: true,
            latency_ms: 0.0,
        }
    }

    /// A failed candidate; its text is empty by invariant.
    pub fn failed(model_id: &str) -> Self {
        Self {
            model_id: model_id.to_string(),
            text: String::new(),
            ok: false,
            latency_ms: 0.0,
        }
    }

    /// Failed and empty answers never take part in selection.
    pub fn eligible(&self) -> bool {
        self.ok && !self.text.is_empty()
    }
}

/// The candidates produced for one question, in fixed roster order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerSet {
    pub question_id: String,
    pub candidates: Vec<AnswerCandidate>,
}

impl AnswerSet {
    /// Build an answer set, enforcing unique model ids.
    pub fn new(question_id: &str, candidates: Vec<AnswerCandidate>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &candidates {
            if !seen.insert(c.model_id.as_str()) {
                return Err(Error::Argument(format!(
                    "duplicate model id {:?} in answer set",
                    c.model_id
                )));
            }
        }
        Ok(Self {
            question_id: question_id.to_string(),
            candidates,
        })
    }

    fn eligible_indices(&self) -> Vec<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.eligible())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Which selection rule produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Centroid,
    CosineMedoid,
    MeanEmbedding,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Centroid => write!(f, "centroid"),
            Strategy::CosineMedoid => write!(f, "cosine_medoid"),
            Strategy::MeanEmbedding => write!(f, "mean_embedding"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centroid" => Ok(Strategy::Centroid),
            "cosine_medoid" => Ok(Strategy::CosineMedoid),
            "mean_embedding" => Ok(Strategy::MeanEmbedding),
            other => Err(Error::Config(format!("unknown selector strategy {other:?}"))),
        }
    }
}

/// Outcome of a selection, serializable for audit logs.
///
/// `distances` is aligned with the input candidates; excluded candidates get
/// `null`. For the centroid strategy the entries are distances (lower is
/// better); for the medoid strategy they are mean-similarity scores (higher
/// is better).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub question_id: String,
    pub strategy: Strategy,
    pub chosen_index: usize,
    pub chosen_model_id: String,
    pub distances: Vec<Option<f64>>,
    /// Set when every eligible candidate vectorized to zero, making the
    /// choice fall back to the lowest eligible index.
    pub degenerate: bool,
}

impl SelectionResult {
    /// The chosen answer text out of `answers`.
    pub fn chosen_text<'a>(&self, answers: &'a AnswerSet) -> &'a str {
        &answers.candidates[self.chosen_index].text
    }
}

/// Component-wise arithmetic mean of equal-dimension vectors.
///
/// This is exactly the k=1 K-means centroid: a single Lloyd update from any
/// initialization assigns every point to the one cluster and moves its
/// center to this mean.
pub fn centroid(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Argument("centroid of zero vectors".into()))?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

fn sparse_mean(vectors: &[TfIdfVector]) -> std::collections::BTreeMap<usize, f64> {
    let mut mean = std::collections::BTreeMap::new();
    for v in vectors {
        for (column, weight) in v.entries() {
            *mean.entry(column).or_insert(0.0) += weight;
        }
    }
    let n = vectors.len() as f64;
    for w in mean.values_mut() {
        *w /= n;
    }
    mean
}

fn distance_to_sparse(v: &TfIdfVector, mean: &std::collections::BTreeMap<usize, f64>) -> f64 {
    let mut sum = 0.0;
    for (column, weight) in v.entries() {
        let d = weight - mean.get(&column).copied().unwrap_or(0.0);
        sum += d * d;
    }
    for (column, weight) in mean {
        if v.get(*column) == 0.0 {
            sum += weight * weight;
        }
    }
    sum.sqrt()
}

/// Fit a per-question TF-IDF space over the eligible candidates and return
/// their unit vectors (all-zero for candidates with no in-vocabulary tokens).
fn candidate_vectors(answers: &AnswerSet, eligible: &[usize]) -> Result<Vec<TfIdfVector>> {
    let docs: Vec<Vec<String>> = eligible
        .iter()
        .map(|&i| tokenize(&answers.candidates[i].text))
        .collect();
    let vocab = fit_vocabulary(&docs)?;
    Ok(docs.iter().map(|d| tfidf_vector(d, &vocab, true)).collect())
}

/// Scatter per-eligible values back onto the full candidate list.
fn scatter(n: usize, eligible: &[usize], values: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; n];
    for (&i, &v) in eligible.iter().zip(values) {
        out[i] = Some(v);
    }
    out
}

/// Values this close count as tied and resolve to the lowest candidate index.
///
/// Mathematically tied configurations (two candidates are always equidistant
/// from their midpoint centroid) otherwise get decided by last-ulp rounding
/// noise, which depends on summation order.
pub const TIE_EPSILON: f64 = 1e-12;

/// Lowest index of the smallest value, ties within [`TIE_EPSILON`].
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] - TIE_EPSILON {
            best = i;
        }
    }
    best
}

/// Lowest index of the largest value, ties within [`TIE_EPSILON`].
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] + TIE_EPSILON {
            best = i;
        }
    }
    best
}

fn require_eligible(answers: &AnswerSet) -> Result<Vec<usize>> {
    let eligible = answers.eligible_indices();
    if eligible.is_empty() {
        return Err(Error::EmptyAnswerSet);
    }
    Ok(eligible)
}

/// Aggregated Knowledge Model selector.
///
/// Vectorize the eligible answers with TF-IDF (unit-normalized), take the
/// mean vector, and choose the answer with the smallest Euclidean distance
/// to it. Ties break to the lowest candidate index.
pub fn select_centroid(answers: &AnswerSet) -> Result<SelectionResult> {
    let eligible = require_eligible(answers)?;
    let vectors = candidate_vectors(answers, &eligible)?;
    let degenerate = vectors.iter().all(TfIdfVector::is_zero);
    let mean = sparse_mean(&vectors);
    let distances: Vec<f64> = vectors.iter().map(|v| distance_to_sparse(v, &mean)).collect();
    let winner = argmin(&distances);
    Ok(SelectionResult {
        question_id: answers.question_id.clone(),
        strategy: Strategy::Centroid,
        chosen_index: eligible[winner],
        chosen_model_id: answers.candidates[eligible[winner]].model_id.clone(),
        distances: scatter(answers.candidates.len(), &eligible, &distances),
        degenerate,
    })
}

/// Cosine-medoid selector: score each eligible answer by its mean cosine
/// similarity to the other eligible answers and pick the highest score.
pub fn select_cosine_medoid(answers: &AnswerSet) -> Result<SelectionResult> {
    let eligible = require_eligible(answers)?;
    let vectors = candidate_vectors(answers, &eligible)?;
    let degenerate = vectors.iter().all(TfIdfVector::is_zero);
    let m = vectors.len();
    let scores: Vec<f64> = (0..m)
        .map(|i| {
            if m == 1 {
                return 0.0;
            }
            let total: f64 = (0..m)
                .filter(|&j| j != i)
                .map(|j| vectors[i].cosine(&vectors[j]))
                .sum();
            total / (m - 1) as f64
        })
        .collect();
    let winner = argmax(&scores);
    Ok(SelectionResult {
        question_id: answers.question_id.clone(),
        strategy: Strategy::CosineMedoid,
        chosen_index: eligible[winner],
        chosen_model_id: answers.candidates[eligible[winner]].model_id.clone(),
        distances: scatter(answers.candidates.len(), &eligible, &scores),
        degenerate,
    })
}

/// Mean-embedding selector: embed each eligible answer, average the
/// embeddings, and pick the answer closest (Euclidean) to that mean.
pub fn select_mean_embedding(
    answers: &AnswerSet,
    embedder: &dyn Embedder,
) -> Result<SelectionResult> {
    let eligible = require_eligible(answers)?;
    let mut embeddings = Vec::with_capacity(eligible.len());
    for &i in &eligible {
        let c = &answers.candidates[i];
        let e = embedder.embed(&c.text).map_err(|e| Error::Transport {
            endpoint: embedder.provider_id().to_string(),
            message: format!("embedding candidate from {:?} failed: {e}", c.model_id),
        })?;
        embeddings.push(e);
    }
    let degenerate = embeddings.iter().all(|e| e.iter().all(|x| *x == 0.0));
    let mean = centroid(&embeddings)?;
    let distances: Vec<f64> = embeddings
        .iter()
        .map(|e| euclidean_distance(e, &mean))
        .collect();
    let winner = argmin(&distances);
    Ok(SelectionResult {
        question_id: answers.question_id.clone(),
        strategy: Strategy::MeanEmbedding,
        chosen_index: eligible[winner],
        chosen_model_id: answers.candidates[eligible[winner]].model_id.clone(),
        distances: scatter(answers.candidates.len(), &eligible, &distances),
        degenerate,
    })
}

/// Run the given strategy. `embedder` is only consulted for
/// [`Strategy::MeanEmbedding`].
pub fn select(
    strategy: Strategy,
    answers: &AnswerSet,
    embedder: Option<&dyn Embedder>,
) -> Result<SelectionResult> {
    match strategy {
        Strategy::Centroid => select_centroid(answers),
        Strategy::CosineMedoid => select_cosine_medoid(answers),
        Strategy::MeanEmbedding => {
            let embedder = embedder.ok_or_else(|| {
                Error::Config("mean_embedding selector needs an embedder".into())
            })?;
            select_mean_embedding(answers, embedder)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::TableEmbedder;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn set(texts: &[&str]) -> AnswerSet {
        AnswerSet::new(
            "q",
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| AnswerCandidate::new(&format!("m{i}"), t))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn answer_set_rejects_duplicate_model_ids() {
        let err = AnswerSet::new(
            "q",
            vec![AnswerCandidate::new("m", "a"), AnswerCandidate::new("m", "b")],
        );
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn centroid_mean_and_errors() {
        assert_eq!(
            centroid(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(centroid(&[vec![3.0, -1.0]]).unwrap(), vec![3.0, -1.0]);
        assert!(matches!(centroid(&[]), Err(Error::Argument(_))));
        assert!(matches!(
            centroid(&[vec![1.0], vec![1.0, 2.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn centroid_matches_summation_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let vectors: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let got = centroid(&vectors).unwrap();
        for d in 0..5 {
            let mut sum = 0.0;
            for v in &vectors {
                sum += v[d];
            }
            assert!((got[d] - sum / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn select_centroid_hand_oracle() {
        // Normalized vectors (1,0), (1,0), (0,1); centroid (2/3, 1/3).
        let r = select_centroid(&set(&["x", "x", "y"])).unwrap();
        assert_eq!(r.chosen_index, 0);
        assert_eq!(r.chosen_model_id, "m0");
        let d = |i: usize| r.distances[i].unwrap();
        assert!((d(0) - 0.4714).abs() < 1e-4);
        assert!((d(1) - 0.4714).abs() < 1e-4);
        assert!((d(2) - 0.9428).abs() < 1e-4);
        assert!(!r.degenerate);
    }

    #[test]
    fn select_centroid_ties_break_to_lowest_index() {
        let r = select_centroid(&set(&["same", "same", "same"])).unwrap();
        assert_eq!(r.chosen_index, 0);
        for d in &r.distances {
            assert!(d.unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn select_centroid_single_candidate() {
        let r = select_centroid(&set(&["only answer"])).unwrap();
        assert_eq!(r.chosen_index, 0);
        assert!(r.distances[0].unwrap().abs() < 1e-12);
    }

    #[test]
    fn select_centroid_skips_failed_and_empty() {
        let mut candidates = vec![
            AnswerCandidate::failed("m0"),
            AnswerCandidate::new("m1", ""),
            AnswerCandidate::new("m2", "real answer"),
        ];
        candidates[1].ok = true;
        let answers = AnswerSet::new("q", candidates).unwrap();
        let r = select_centroid(&answers).unwrap();
        assert_eq!(r.chosen_index, 2);
        assert_eq!(r.distances[0], None);
        assert_eq!(r.distances[1], None);
    }

    #[test]
    fn select_centroid_errors_on_no_eligible() {
        let answers = AnswerSet::new("q", vec![AnswerCandidate::failed("m0")]).unwrap();
        assert!(matches!(select_centroid(&answers), Err(Error::EmptyAnswerSet)));
    }

    #[test]
    fn select_centroid_flags_degenerate_input() {
        // Punctuation-only answers tokenize to nothing.
        let r = select_centroid(&set(&["!!!", "???"])).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.chosen_index, 0);
    }

    #[test]
    fn cosine_medoid_hand_oracle() {
        let r = select_cosine_medoid(&set(&["x", "x", "y"])).unwrap();
        assert_eq!(r.chosen_index, 0);
        let s = |i: usize| r.distances[i].unwrap();
        assert!((s(0) - 0.5).abs() < 1e-12);
        assert!((s(1) - 0.5).abs() < 1e-12);
        assert!(s(2).abs() < 1e-12);
    }

    #[test]
    fn cosine_medoid_ties_and_identity() {
        let disjoint = select_cosine_medoid(&set(&["x", "y"])).unwrap();
        assert_eq!(disjoint.chosen_index, 0);
        assert_eq!(disjoint.distances[0], Some(0.0));
        assert_eq!(disjoint.distances[1], Some(0.0));

        let same = select_cosine_medoid(&set(&["x", "x", "x"])).unwrap();
        assert_eq!(same.chosen_index, 0);
        for d in &same.distances {
            assert!((d.unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_embedding_hand_oracle() {
        let embedder = TableEmbedder::orthogonal("orth", &["x", "y"]);
        let r = select_mean_embedding(&set(&["x", "x", "y"]), &embedder).unwrap();
        assert_eq!(r.chosen_index, 0);
        assert!((r.distances[0].unwrap() - 0.4714).abs() < 1e-4);
        assert!((r.distances[2].unwrap() - 0.9428).abs() < 1e-4);
    }

    #[test]
    fn mean_embedding_identical_and_single() {
        let embedder = TableEmbedder::orthogonal("orth", &["x"]);
        let same = select_mean_embedding(&set(&["x", "x"]), &embedder).unwrap();
        assert_eq!(same.chosen_index, 0);
        assert_eq!(same.distances[0], Some(0.0));

        let single = select_mean_embedding(&set(&["x"]), &embedder).unwrap();
        assert_eq!(single.chosen_index, 0);
    }

    #[test]
    fn mean_embedding_reports_failing_candidate() {
        let embedder = TableEmbedder::orthogonal("orth", &["x"]);
        let err = select_mean_embedding(&set(&["x", "unknown text"]), &embedder).unwrap_err();
        match err {
            Error::Transport { message, .. } => assert!(message.contains("m1")),
            other => panic!("expected transport error, got {other}"),
        }
    }

    #[test]
    fn selectors_return_an_input_text_verbatim() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let words = ["alpha", "beta", "gamma", "delta"];
        for _ in 0..100 {
            let texts: Vec<String> = (0..rng.random_range(1..=5))
                .map(|_| {
                    (0..rng.random_range(1..6))
                        .map(|_| words[rng.random_range(0..words.len())])
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let answers = set(&refs);
            let embedder = crate::embed::HashEmbedder::new(8);
            for r in [
                select_centroid(&answers).unwrap(),
                select_cosine_medoid(&answers).unwrap(),
                select_mean_embedding(&answers, &embedder).unwrap(),
            ] {
                assert!(texts.contains(&r.chosen_text(&answers).to_string()));
            }
        }
    }

    #[test]
    fn duplicate_majority_wins() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let fillers = ["one off answer", "another stray reply", "noise words here"];
        for _ in 0..100 {
            let majority = "the shared majority answer";
            let n_major = rng.random_range(2..=4usize);
            let n_minor = rng.random_range(0..n_major); // strictly fewer
            let mut texts: Vec<String> = std::iter::repeat_n(majority.to_string(), n_major)
                .chain((0..n_minor).map(|i| fillers[i % fillers.len()].to_string()))
                .collect();
            texts.shuffle(&mut rng);
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let answers = set(&refs);
            assert_eq!(select_centroid(&answers).unwrap().chosen_text(&answers), majority);
            assert_eq!(
                select_cosine_medoid(&answers).unwrap().chosen_text(&answers),
                majority
            );
        }
    }

    #[test]
    fn permuting_candidates_permutes_distances() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let words = ["red", "green", "blue", "cyan"];
        for _ in 0..50 {
            let texts: Vec<String> = (0..4)
                .map(|_| {
                    (1..rng.random_range(2..6))
                        .map(|_| words[rng.random_range(0..words.len())])
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let base = select_centroid(&set(&refs)).unwrap();

            let mut perm: Vec<usize> = (0..texts.len()).collect();
            perm.shuffle(&mut rng);
            let permuted_texts: Vec<&str> = perm.iter().map(|&i| refs[i]).collect();
            let permuted = select_centroid(&set(&permuted_texts)).unwrap();

            for (new_pos, &old_pos) in perm.iter().enumerate() {
                let a = base.distances[old_pos].unwrap();
                let b = permuted.distances[new_pos].unwrap();
                assert!((a - b).abs() < 1e-12);
            }

            // Without ties at the minimum, the chosen text is unchanged.
            let min = base
                .distances
                .iter()
                .flatten()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let ties = base
                .distances
                .iter()
                .flatten()
                .filter(|d| (**d - min).abs() < 1e-12)
                .count();
            if ties == 1 {
                assert_eq!(
                    base.chosen_text(&set(&refs)),
                    permuted.chosen_text(&set(&permuted_texts))
                );
            }
        }
    }

    #[test]
    fn selection_result_serializes_audit_fields() {
        let r = select_centroid(&set(&["x", "y"])).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["question_id"], "q");
        assert_eq!(json["strategy"], "centroid");
        assert_eq!(json["chosen_model_id"], "m0");
        assert!(json["distances"].as_array().unwrap().len() == 2);
    }
}
