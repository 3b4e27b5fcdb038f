//! Experiment harness: every question through every backend plus the
//! aggregated selector, repeated over trials, with mean ± std statistics and
//! report artifacts.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{
    select, AnswerCandidate, AnswerSet, SelectionResult, Strategy,
};
use crate::backends::{Backend, BackendKind, BackendSpec, GenerationResponse};
use crate::corpus::{read_dataset, QATriple};
use crate::embed::{parse_embedder, Embedder};
use crate::error::{Error, Result};
use crate::metrics::{score_all, MetricVector, METRIC_NAMES};
use crate::report;
use crate::retrieval::VectorIndex;

/// Column name of the aggregated model in tables and records.
pub const AKM_MODEL_ID: &str = "AKM";

fn default_temperature() -> f64 {
    crate::backends::DEFAULT_TEMPERATURE
}

fn default_k() -> usize {
    crate::backends::DEFAULT_RETRIEVAL_K
}

fn default_workers() -> usize {
    4
}

fn default_sts_embedder() -> String {
    "hash:64".to_string()
}

/// Everything one experiment run needs, loadable from a TOML file whose keys
/// mirror these fields (`[[backends]]` tables for the roster).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub backends: Vec<BackendSpec>,
    pub selector: Strategy,
    pub eval_set: PathBuf,
    pub trials: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Embedder used for STS scoring (and the mean-embedding selector).
    #[serde(default = "default_sts_embedder")]
    pub sts_embedder: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("bad run config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backends.is_empty() {
            return Err(Error::Config("run config needs at least one backend".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be ≥ 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be ≥ 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be ≥ 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "temperature {} out of range [0, 2]",
                self.temperature
            )));
        }
        let mut ids: Vec<&str> = self.backends.iter().map(|b| b.model_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.backends.len() {
            return Err(Error::Config("backend model_ids must be unique".into()));
        }
        if self.backends.iter().any(|b| b.model_id == AKM_MODEL_ID) {
            return Err(Error::Config(format!(
                "{AKM_MODEL_ID:?} is reserved for the aggregated column"
            )));
        }
        for b in &self.backends {
            b.validate()?;
        }
        Ok(())
    }
}

/// One backend's scored answer to one question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub model_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub answer: String,
    pub latency_ms: f64,
    pub metrics: MetricVector,
}

/// The aggregated answer for one question. `ok` is false when no candidate
/// was eligible for selection (all backends failed or answered empty).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AkmAnswer {
    pub ok: bool,
    pub answer: String,
    pub metrics: MetricVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionResult>,
}

/// Everything recorded for one question in one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub models: Vec<ModelAnswer>,
    pub akm: AkmAnswer,
}

/// One full pass of the eval set through the roster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub questions: Vec<QuestionRecord>,
}

/// Mean and cross-trial sample standard deviation of one table cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub mean: f64,
    pub std: f64,
}

/// Cross-trial statistics per (model, metric) plus the Average row.
///
/// Standard deviations are computed across trial-level means with the n−1
/// denominator (0 for a single trial), not across raw per-question samples.
#[derive(Debug, Clone)]
pub struct TrialStats {
    /// Roster order, then [`AKM_MODEL_ID`].
    pub model_ids: Vec<String>,
    pub trials: usize,
    pub n_questions: usize,
    /// `cells[metric][model]`, metrics in [`METRIC_NAMES`] order.
    pub cells: Vec<Vec<CellStat>>,
    /// Average row: mean of the model's 14 metric means; the std is the mean
    /// of its 14 metric stds.
    pub average: Vec<CellStat>,
    /// `trial_means[model][metric]` → one value per trial (chart input).
    pub trial_means: Vec<Vec<Vec<f64>>>,
}

impl TrialStats {
    pub fn cell(&self, metric: &str, model_id: &str) -> Option<CellStat> {
        let m = METRIC_NAMES.iter().position(|n| *n == metric)?;
        let j = self.model_ids.iter().position(|id| id == model_id)?;
        Some(self.cells[m][j])
    }

    pub fn average_of(&self, model_id: &str) -> Option<CellStat> {
        let j = self.model_ids.iter().position(|id| id == model_id)?;
        Some(self.average[j])
    }
}

struct PreparedBackend {
    backend: Backend,
    index: Option<VectorIndex>,
    embedder: Option<Box<dyn Embedder>>,
}

/// A resolved experiment: dataset loaded, backends and indexes attached.
pub struct Experiment {
    config: RunConfig,
    questions: Vec<QATriple>,
    dataset_sha256: String,
    backends: Vec<PreparedBackend>,
    sts_embedder: Box<dyn Embedder>,
}

impl Experiment {
    /// Load the eval set and resolve every backend. Dataset and configuration
    /// problems are fatal here rather than per-question.
    pub fn prepare(config: RunConfig) -> Result<Experiment> {
        config.validate()?;
        let questions = read_dataset(&config.eval_set)?;
        if questions.is_empty() {
            return Err(Error::Argument(format!(
                "eval set {} is empty",
                config.eval_set.display()
            )));
        }
        let bytes = std::fs::read(&config.eval_set).map_err(|e| Error::io(&config.eval_set, e))?;
        let dataset_sha256: String = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();

        let env = Arc::new(crate::backends::MockEnv {
            reference_answers: questions
                .iter()
                .map(|t| (t.question.clone(), t.answer.clone()))
                .collect(),
            constant_text: String::new(),
        });

        let mut backends = Vec::with_capacity(config.backends.len());
        for spec in &config.backends {
            let mut spec = spec.clone();
            if spec.kind == BackendKind::Rag && spec.retrieval_k.is_none() {
                spec.retrieval_k = Some(config.k);
            }
            let (index, embedder) = if spec.kind == BackendKind::Rag {
                let dir = spec.index_path.clone().ok_or_else(|| {
                    Error::Config(format!("rag backend {} needs index_path", spec.model_id))
                })?;
                let embedder_id = spec.embedder.clone().ok_or_else(|| {
                    Error::Config(format!("rag backend {} needs an embedder", spec.model_id))
                })?;
                let embedder = parse_embedder(&embedder_id)?;
                let index =
                    VectorIndex::load(&dir.join("index.jsonl"), &dir.join("chunks.jsonl"))?;
                if index.provider_id() != embedder.provider_id() {
                    return Err(Error::Config(format!(
                        "index provider {:?} does not match embedder {:?} for {}",
                        index.provider_id(),
                        embedder.provider_id(),
                        spec.model_id
                    )));
                }
                (Some(index), Some(embedder))
            } else {
                (None, None)
            };
            backends.push(PreparedBackend {
                backend: Backend::resolve(spec, &env)?,
                index,
                embedder,
            });
        }

        let sts_embedder = parse_embedder(&config.sts_embedder)?;
        Ok(Experiment {
            config,
            questions,
            dataset_sha256,
            backends,
            sts_embedder,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn questions(&self) -> &[QATriple] {
        &self.questions
    }

    /// Roster ids plus the aggregated column.
    pub fn model_ids(&self) -> Vec<String> {
        self.backends
            .iter()
            .map(|b| b.backend.model_id().to_string())
            .chain(std::iter::once(AKM_MODEL_ID.to_string()))
            .collect()
    }

    /// Run one trial: every question through every backend, then the
    /// selector, everything scored against the references.
    ///
    /// `trial_index` is 1-based; the trial seed is `config.seed + trial_index`
    /// and all randomness (mock dropout) derives from it, so results are
    /// identical for any worker count.
    pub fn run_trial(&self, trial_index: usize) -> Result<TrialRecord> {
        let trial_seed = self.config.seed.wrapping_add(trial_index as u64);
        let n_backends = self.backends.len();
        let jobs: Vec<(usize, usize)> = (0..self.questions.len())
            .flat_map(|q| (0..n_backends).map(move |b| (q, b)))
            .collect();

        let slots: Mutex<Vec<Option<Result<ModelAnswer>>>> =
            Mutex::new((0..jobs.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = self.config.workers.min(jobs.len()).max(1);

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    let (q, b) = jobs[i];
                    let out = self.answer_and_score(q, b, trial_seed);
                    slots.lock().unwrap()[i] = Some(out);
                });
            }
        });

        let mut answers = slots.into_inner().unwrap().into_iter();
        let mut questions = Vec::with_capacity(self.questions.len());
        for triple in &self.questions {
            let mut models = Vec::with_capacity(n_backends);
            for _ in 0..n_backends {
                models.push(answers.next().flatten().expect("slot filled")?);
            }
            let akm = self.aggregate_answers(triple, &models)?;
            questions.push(QuestionRecord {
                question_id: triple.id.clone(),
                models,
                akm,
            });
        }
        Ok(TrialRecord {
            trial_index,
            questions,
        })
    }

    fn answer_and_score(&self, q: usize, b: usize, trial_seed: u64) -> Result<ModelAnswer> {
        let triple = &self.questions[q];
        let prepared = &self.backends[b];
        let temperature = prepared
            .backend
            .spec()
            .effective_temperature(self.config.temperature);
        let response = match prepared.backend.answer_question(
            &triple.question,
            Some(&triple.context),
            prepared.index.as_ref(),
            prepared.embedder.as_deref(),
            temperature,
            trial_seed,
        ) {
            Ok((response, _retrieval)) => response,
            // Runtime failures become failed answers; live endpoints fail
            // routinely and must not abort the trial.
            Err(e) => GenerationResponse::failure(&e.to_string()),
        };
        let metrics = if response.ok {
            score_all(&response.text, &triple.answer, self.sts_embedder.as_ref())?
        } else {
            MetricVector::zeros()
        };
        Ok(ModelAnswer {
            model_id: prepared.backend.model_id().to_string(),
            ok: response.ok,
            error: response.error,
            answer: response.text,
            latency_ms: response.latency_ms,
            metrics,
        })
    }

    fn aggregate_answers(&self, triple: &QATriple, models: &[ModelAnswer]) -> Result<AkmAnswer> {
        let candidates: Vec<AnswerCandidate> = models
            .iter()
            .map(|m| AnswerCandidate {
                model_id: m.model_id.clone(),
                text: m.answer.clone(),
                ok: m.ok,
                latency_ms: m.latency_ms,
            })
            .collect();
        let answer_set = AnswerSet::new(&triple.id, candidates)?;
        if !answer_set.candidates.iter().any(AnswerCandidate::eligible) {
            return Ok(AkmAnswer {
                ok: false,
                answer: String::new(),
                metrics: MetricVector::zeros(),
                selection: None,
            });
        }
        let selection = select(
            self.config.selector,
            &answer_set,
            Some(self.sts_embedder.as_ref()),
        )?;
        let answer = selection.chosen_text(&answer_set).to_string();
        let metrics = score_all(&answer, &triple.answer, self.sts_embedder.as_ref())?;
        Ok(AkmAnswer {
            ok: true,
            answer,
            metrics,
            selection: Some(selection),
        })
    }

    /// Run all trials and write the artifacts: `trials/trial_<i>.jsonl`,
    /// `table.txt`, `table.csv`, `charts/*.svg` and `manifest.json`. On
    /// failure, whatever trials completed stay on disk and the manifest
    /// records the failure.
    pub fn run(&self) -> Result<(TrialStats, Vec<TrialRecord>)> {
        let out = &self.config.output_dir;
        std::fs::create_dir_all(out.join("trials")).map_err(|e| Error::io(out, e))?;
        std::fs::create_dir_all(out.join("charts")).map_err(|e| Error::io(out, e))?;

        match self.run_inner(out) {
            Ok(result) => {
                self.write_manifest(out, "complete", None)?;
                Ok(result)
            }
            Err(e) => {
                let _ = self.write_manifest(out, "failed", Some(&e.to_string()));
                Err(e)
            }
        }
    }

    fn run_inner(&self, out: &Path) -> Result<(TrialStats, Vec<TrialRecord>)> {
        let mut records = Vec::with_capacity(self.config.trials);
        for trial_index in 1..=self.config.trials {
            let record = self.run_trial(trial_index)?;
            write_trial_record(&out.join("trials").join(format!("trial_{trial_index}.jsonl")), &record)?;
            records.push(record);
        }
        let stats = summarize(&records)?;
        let table = report::render_table(&stats);
        std::fs::write(out.join("table.txt"), &table.text)
            .map_err(|e| Error::io(&out.join("table.txt"), e))?;
        std::fs::write(out.join("table.csv"), &table.csv)
            .map_err(|e| Error::io(&out.join("table.csv"), e))?;
        report::render_charts(&stats, &out.join("charts"))?;
        Ok((stats, records))
    }

    fn write_manifest(&self, out: &Path, status: &str, error: Option<&str>) -> Result<()> {
        let manifest = serde_json::json!({
            "config": self.config,
            "dataset_sha256": self.dataset_sha256,
            "n_questions": self.questions.len(),
            "model_ids": self.model_ids(),
            "metric_names": METRIC_NAMES,
            "std_convention": "sample std (n-1) across trial-level means, not across raw samples",
            "status": status,
            "error": error,
        });
        let path = out.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
            context: "manifest".into(),
            source: e,
        })?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Prepare and run in one call.
pub fn run_experiment(config: RunConfig) -> Result<(TrialStats, Vec<TrialRecord>)> {
    Experiment::prepare(config)?.run()
}

fn write_trial_record(path: &Path, record: &TrialRecord) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for q in &record.questions {
        let line = serde_json::to_string(q).map_err(|e| Error::Json {
            context: format!("question record {}", q.question_id),
            source: e,
        })?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Read the `trials/trial_<i>.jsonl` files of a finished run back into
/// records, sorted by trial index.
pub fn load_records(run_dir: &Path) -> Result<Vec<TrialRecord>> {
    let trials_dir = run_dir.join("trials");
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&trials_dir).map_err(|e| Error::io(&trials_dir, e))? {
        let entry = entry.map_err(|e| Error::io(&trials_dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(index) = name
            .strip_prefix("trial_")
            .and_then(|s| s.strip_suffix(".jsonl"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            indexed.push((index, entry.path()));
        }
    }
    indexed.sort_by_key(|(i, _)| *i);
    if indexed.is_empty() {
        return Err(Error::Argument(format!(
            "no trial files under {}",
            trials_dir.display()
        )));
    }
    let mut records = Vec::with_capacity(indexed.len());
    for (trial_index, path) in indexed {
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut questions = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let q: QuestionRecord = serde_json::from_str(&line).map_err(|e| Error::Json {
                context: format!("{}:{}", path.display(), lineno + 1),
                source: e,
            })?;
            questions.push(q);
        }
        records.push(TrialRecord {
            trial_index,
            questions,
        });
    }
    Ok(records)
}

fn mean_and_sample_std(values: &[f64]) -> CellStat {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    CellStat { mean, std }
}

/// Cross-trial statistics: per trial the metric is averaged over questions,
/// then mean and sample std are taken across those trial means.
pub fn summarize(records: &[TrialRecord]) -> Result<TrialStats> {
    let first = records
        .first()
        .ok_or_else(|| Error::Argument("summarize needs at least one trial".into()))?;
    let roster: Vec<String> = first
        .questions
        .first()
        .ok_or_else(|| Error::Argument("trial has no questions".into()))?
        .models
        .iter()
        .map(|m| m.model_id.clone())
        .chain(std::iter::once(AKM_MODEL_ID.to_string()))
        .collect();
    let n_questions = first.questions.len();

    for record in records {
        if record.questions.len() != n_questions {
            return Err(Error::Argument(format!(
                "trial {} has {} questions, expected {n_questions}",
                record.trial_index,
                record.questions.len()
            )));
        }
        for q in &record.questions {
            let ids: Vec<&str> = q
                .models
                .iter()
                .map(|m| m.model_id.as_str())
                .chain(std::iter::once(AKM_MODEL_ID))
                .collect();
            if ids != roster.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::Argument(format!(
                    "inconsistent model roster in trial {} question {}",
                    record.trial_index, q.question_id
                )));
            }
        }
    }

    let n_models = roster.len();
    // trial_means[model][metric][trial]
    let mut trial_means = vec![vec![Vec::with_capacity(records.len()); METRIC_NAMES.len()]; n_models];
    for record in records {
        for (j, model_means) in trial_means.iter_mut().enumerate() {
            let mut sums = [0.0f64; 14];
            for q in &record.questions {
                let values = if j + 1 == n_models {
                    q.akm.metrics.values()
                } else {
                    q.models[j].metrics.values()
                };
                for (s, v) in sums.iter_mut().zip(values) {
                    *s += v;
                }
            }
            for (m, s) in sums.iter().enumerate() {
                model_means[m].push(s / n_questions as f64);
            }
        }
    }

    let mut cells = vec![vec![CellStat { mean: 0.0, std: 0.0 }; n_models]; METRIC_NAMES.len()];
    for j in 0..n_models {
        for m in 0..METRIC_NAMES.len() {
            cells[m][j] = mean_and_sample_std(&trial_means[j][m]);
        }
    }
    let average: Vec<CellStat> = (0..n_models)
        .map(|j| {
            let means: Vec<f64> = (0..METRIC_NAMES.len()).map(|m| cells[m][j].mean).collect();
            let stds: Vec<f64> = (0..METRIC_NAMES.len()).map(|m| cells[m][j].std).collect();
            CellStat {
                mean: means.iter().sum::<f64>() / means.len() as f64,
                std: stds.iter().sum::<f64>() / stds.len() as f64,
            }
        })
        .collect();

    Ok(TrialStats {
        model_ids: roster,
        trials: records.len(),
        n_questions,
        cells,
        average,
        trial_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_dataset;

    fn sample_dataset(n: usize) -> Vec<QATriple> {
        (0..n)
            .map(|i| QATriple {
                id: format!("q{i}"),
                context: format!("the context paragraph number {i} explains the system"),
                question: format!("what does component {i} of the system do"),
                answer: format!("component {i} of the system handles requests and stores results"),
            })
            .collect()
    }

    fn mock_config(dir: &Path, endpoints: &[&str], trials: usize) -> RunConfig {
        let dataset = dir.join("eval.jsonl");
        write_dataset(&dataset, &sample_dataset(4)).unwrap();
        RunConfig {
            backends: endpoints
                .iter()
                .enumerate()
                .map(|(i, e)| BackendSpec::mock(&format!("m{i}"), BackendKind::FinetunedQa, e))
                .collect(),
            selector: Strategy::Centroid,
            eval_set: dataset,
            trials,
            temperature: 0.5,
            seed: 42,
            k: 4,
            workers: 3,
            output_dir: dir.join("run"),
            sts_embedder: "hash:32".to_string(),
        }
    }

    #[test]
    fn trial_record_counts_match_roster_and_questions() {
        let dir = tempfile::tempdir().unwrap();
        let config = mock_config(
            dir.path(),
            &["mock:echo-reference", "mock:echo-reference", "mock:fail-always"],
            1,
        );
        let experiment = Experiment::prepare(config).unwrap();
        let record = experiment.run_trial(1).unwrap();
        assert_eq!(record.questions.len(), 4);
        for q in &record.questions {
            assert_eq!(q.models.len(), 3);
            assert!(q.akm.ok);
        }
    }

    #[test]
    fn echo_roster_scores_all_ones() {
        let dir = tempfile::tempdir().unwrap();
        let config = mock_config(dir.path(), &["mock:echo-reference", "mock:echo-reference"], 2);
        let experiment = Experiment::prepare(config).unwrap();
        let record = experiment.run_trial(1).unwrap();
        for q in &record.questions {
            for m in &q.models {
                for v in m.metrics.values() {
                    assert_eq!(v, 1.0);
                }
            }
            for v in q.akm.metrics.values() {
                assert_eq!(v, 1.0);
            }
        }
    }

    #[test]
    fn failed_backend_scores_zero_and_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let config = mock_config(dir.path(), &["mock:echo-reference", "mock:fail-always"], 1);
        let experiment = Experiment::prepare(config).unwrap();
        let record = experiment.run_trial(1).unwrap();
        for q in &record.questions {
            let failed = &q.models[1];
            assert!(!failed.ok);
            assert!(failed.error.is_some());
            assert_eq!(failed.metrics.values(), [0.0; 14]);
            // The failure is excluded from aggregation, not selected.
            let selection = q.akm.selection.as_ref().unwrap();
            assert_eq!(selection.chosen_model_id, "m0");
            assert_eq!(selection.distances[1], None);
        }
    }

    #[test]
    fn all_failed_question_yields_failed_akm() {
        let dir = tempfile::tempdir().unwrap();
        let config = mock_config(dir.path(), &["mock:fail-always", "mock:fail-always"], 1);
        let experiment = Experiment::prepare(config).unwrap();
        let record = experiment.run_trial(1).unwrap();
        for q in &record.questions {
            assert!(!q.akm.ok);
            assert!(q.akm.selection.is_none());
            assert_eq!(q.akm.metrics.values(), [0.0; 14]);
        }
    }

    #[test]
    fn trials_are_deterministic_for_any_worker_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = mock_config(dir.path(), &["mock:noisy-reference?dropout=0.4"], 1);
        config.workers = 1;
        let one = Experiment::prepare(config.clone()).unwrap().run_trial(3).unwrap();
        config.workers = 8;
        let eight = Experiment::prepare(config).unwrap().run_trial(3).unwrap();
        assert_eq!(
            serde_json::to_string(&one).unwrap(),
            serde_json::to_string(&eight).unwrap()
        );
    }

    #[test]
    fn summarize_two_point_anchor() {
        // Hand-build two trials with known per-trial means.
        let make = |trial_index: usize, value: f64| TrialRecord {
            trial_index,
            questions: vec![QuestionRecord {
                question_id: "q0".into(),
                models: vec![ModelAnswer {
                    model_id: "m0".into(),
                    ok: true,
                    error: None,
                    answer: "a".into(),
                    latency_ms: 0.0,
                    metrics: {
                        let mut v = MetricVector::zeros();
                        v.bleu1 = value;
                        v
                    },
                }],
                akm: AkmAnswer {
                    ok: true,
                    answer: "a".into(),
                    metrics: MetricVector::zeros(),
                    selection: None,
                },
            }],
        };
        let stats = summarize(&[make(1, 0.2), make(2, 0.4)]).unwrap();
        let cell = stats.cell("BLEU-1", "m0").unwrap();
        assert!((cell.mean - 0.3).abs() < 1e-12);
        assert!((cell.std - 0.1414).abs() < 1e-4);

        // Single trial: std reported as 0.
        let single = summarize(&[make(1, 0.2)]).unwrap();
        assert_eq!(single.cell("BLEU-1", "m0").unwrap().std, 0.0);
    }

    #[test]
    fn summarize_rejects_inconsistent_rosters() {
        let dir = tempfile::tempdir().unwrap();
        let config = mock_config(dir.path(), &["mock:echo-reference"], 1);
        let experiment = Experiment::prepare(config).unwrap();
        let a = experiment.run_trial(1).unwrap();
        let mut b = experiment.run_trial(2).unwrap();
        b.questions[0].models[0].model_id = "rogue".into();
        assert!(matches!(summarize(&[a, b]), Err(Error::Argument(_))));
    }

    #[test]
    fn summarize_matches_streaming_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let config = mock_config(
            dir.path(),
            &[
                "mock:noisy-reference?dropout=0.2",
                "mock:noisy-reference?dropout=0.5",
            ],
            6,
        );
        let experiment = Experiment::prepare(config).unwrap();
        let records: Vec<TrialRecord> = (1..=6).map(|i| experiment.run_trial(i).unwrap()).collect();
        let stats = summarize(&records).unwrap();

        // Independent streaming (Welford) recomputation per cell.
        for (j, model_id) in stats.model_ids.iter().enumerate() {
            for (m, metric) in METRIC_NAMES.iter().enumerate() {
                let mut count = 0.0;
                let mut mean = 0.0;
                let mut m2 = 0.0;
                for record in &records {
                    let mut sum = 0.0;
                    for q in &record.questions {
                        let values = if j + 1 == stats.model_ids.len() {
                            q.akm.metrics.values()
                        } else {
                            q.models[j].metrics.values()
                        };
                        sum += values[m];
                    }
                    let x = sum / record.questions.len() as f64;
                    count += 1.0;
                    let delta = x - mean;
                    mean += delta / count;
                    m2 += delta * (x - mean);
                }
                let std = if count > 1.0 { (m2 / (count - 1.0)).sqrt() } else { 0.0 };
                let cell = stats.cell(metric, model_id).unwrap();
                assert!((cell.mean - mean).abs() < 1e-12, "{model_id} {metric}");
                assert!((cell.std - std).abs() < 1e-12, "{model_id} {metric}");
            }
        }
    }

    #[test]
    fn duplicate_majority_scenario_dominates_worst_model() {
        // Two echo backends agree on the reference; the constant backend is
        // always wrong and never selected, so the AKM row beats it on every
        // metric and never drops below any model's cell.
        let dir = tempfile::tempdir().unwrap();
        let config = mock_config(
            dir.path(),
            &[
                "mock:echo-reference",
                "mock:echo-reference",
                "mock:constant?text=i+am+not+sure+about+that+question",
            ],
            3,
        );
        let experiment = Experiment::prepare(config).unwrap();
        let records: Vec<TrialRecord> = (1..=3).map(|i| experiment.run_trial(i).unwrap()).collect();
        for record in &records {
            for q in &record.questions {
                let selection = q.akm.selection.as_ref().unwrap();
                assert_eq!(selection.chosen_model_id, "m0");
                assert_eq!(q.akm.answer, q.models[0].answer);
            }
        }
        let stats = summarize(&records).unwrap();
        for metric in METRIC_NAMES {
            let akm = stats.cell(metric, AKM_MODEL_ID).unwrap().mean;
            for model in ["m0", "m1", "m2"] {
                let cell = stats.cell(metric, model).unwrap().mean;
                assert!(akm >= cell, "{metric}: AKM {akm} below {model} {cell}");
            }
            let worst = stats.cell(metric, "m2").unwrap().mean;
            if worst < 1.0 {
                assert!(akm > worst, "{metric}: AKM {akm} not above worst {worst}");
            }
        }
    }

    #[test]
    fn accounting_totals_match_protocol() {
        let dir = tempfile::tempdir().unwrap();
        let config = mock_config(dir.path(), &["mock:echo-reference", "mock:constant"], 3);
        let experiment = Experiment::prepare(config).unwrap();
        let records: Vec<TrialRecord> = (1..=3).map(|i| experiment.run_trial(i).unwrap()).collect();
        let model_samples: usize = records
            .iter()
            .flat_map(|r| &r.questions)
            .map(|q| q.models.len())
            .sum();
        let akm_samples: usize = records.iter().map(|r| r.questions.len()).sum();
        assert_eq!(model_samples, 4 * 2 * 3);
        assert_eq!(akm_samples, 4 * 3);
    }

    #[test]
    fn run_writes_artifacts_and_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let config = mock_config(dir.path(), &["mock:echo-reference", "mock:constant"], 2);
        let out = config.output_dir.clone();
        let (stats, records) = run_experiment(config).unwrap();
        assert!(out.join("table.txt").exists());
        assert!(out.join("table.csv").exists());
        assert!(out.join("manifest.json").exists());
        assert!(out.join("trials/trial_1.jsonl").exists());
        assert!(out.join("trials/trial_2.jsonl").exists());
        assert!(out.join("charts/metrics_bars.svg").exists());

        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["status"], "complete");
        assert_eq!(manifest["n_questions"], 4);
        assert_eq!(manifest["config"]["seed"], 42);
        assert!(manifest["dataset_sha256"].as_str().unwrap().len() == 64);

        let loaded = load_records(&out).unwrap();
        assert_eq!(loaded.len(), records.len());
        assert_eq!(
            serde_json::to_string(&loaded).unwrap(),
            serde_json::to_string(&records).unwrap()
        );
        let re_stats = summarize(&loaded).unwrap();
        assert_eq!(re_stats.cells.len(), stats.cells.len());
        for (a, b) in re_stats.cells.iter().flatten().zip(stats.cells.iter().flatten()) {
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        }
    }

    #[test]
    fn config_toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let toml_text = r#"
selector = "centroid"
eval_set = "eval.jsonl"
trials = 2
seed = 7
output_dir = "out"

[[backends]]
model_id = "m0"
kind = "finetuned_qa"
endpoint = "mock:echo-reference"

[[backends]]
model_id = "m1"
kind = "rag"
endpoint = "mock:echo-prompt"
prompt_template_id = "rag-default"
index_path = "idx"
embedder = "hash:16"
retrieval_k = 2
"#;
        let path = dir.path().join("run.toml");
        std::fs::write(&path, toml_text).unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.backends.len(), 2);
        assert_eq!(config.temperature, 0.5, "temperature defaults to 0.5");
        assert_eq!(config.k, 4);
        assert_eq!(config.workers, 4);
        assert_eq!(config.sts_embedder, "hash:64");
        assert_eq!(config.backends[1].kind, BackendKind::Rag);

        // Duplicate ids are rejected.
        let dup = toml_text.replace("model_id = \"m1\"", "model_id = \"m0\"");
        std::fs::write(&path, dup).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
