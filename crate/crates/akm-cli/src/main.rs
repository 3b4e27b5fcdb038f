//! Command-line front end: ingest documents, generate QA datasets, build
//! vector indexes, ask single questions, and run the evaluation harness.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use akm::backends::{Backend, BackendKind, BackendSpec, MockEnv};
use akm::corpus::{
    self, chunk_document, ingest_dir, read_dataset, read_documents, write_dataset,
    write_documents, DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE,
};
use akm::embed::parse_embedder;
use akm::harness::{load_records, run_experiment, summarize, RunConfig};
use akm::report::{render_charts, render_table};
use akm::retrieval::VectorIndex;

#[derive(Parser)]
#[command(
    name = "akm",
    version,
    about = "Closed-domain QA toolkit: chunking, retrieval, answer backends, aggregated selection, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a directory of .txt/.md files into a documents file.
    Ingest {
        /// Directory of plain-text/markdown files.
        dir: PathBuf,
        /// Output documents file (JSON lines).
        #[arg(long, default_value = "documents.jsonl")]
        out: PathBuf,
    },
    /// Generate a QA dataset from a documents file via an answer backend.
    GenQa {
        /// Documents file written by `ingest`.
        corpus: PathBuf,
        /// Backend id from --roster, or an endpoint (mock:<name> or URL).
        #[arg(long)]
        backend: String,
        /// TOML file with a [[backends]] roster.
        #[arg(long)]
        roster: Option<PathBuf>,
        /// Output dataset file (JSON lines of {id, context, question, answer}).
        #[arg(long, default_value = "dataset.jsonl")]
        out: PathBuf,
        /// Chunk size in characters; each chunk becomes one QA-gen context.
        #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
        size: usize,
        /// Chunk overlap in characters.
        #[arg(long, default_value_t = DEFAULT_CHUNK_OVERLAP)]
        overlap: usize,
    },
    /// Chunk and embed a corpus into a vector index directory.
    Index {
        /// Documents file from `ingest`, or a QA dataset (its distinct
        /// contexts are indexed).
        dataset: PathBuf,
        /// Embedder id, e.g. hash:64.
        #[arg(long)]
        embedder: String,
        /// Output directory for index.jsonl + chunks.jsonl.
        #[arg(long, default_value = "index")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
        size: usize,
        #[arg(long, default_value_t = DEFAULT_CHUNK_OVERLAP)]
        overlap: usize,
    },
    /// Answer a single question with one backend.
    Ask {
        question: String,
        /// Backend id from --roster, or an endpoint (mock:<name> or URL).
        #[arg(long)]
        backend: String,
        #[arg(long)]
        roster: Option<PathBuf>,
        /// Index directory (makes the backend retrieval-augmented).
        #[arg(long)]
        index: Option<PathBuf>,
        /// Embedder id for retrieval (defaults to hash:64).
        #[arg(long)]
        embedder: Option<String>,
        /// Retrieval depth.
        #[arg(long)]
        k: Option<usize>,
        /// Context paragraph (makes the backend context-conditioned).
        #[arg(long)]
        context: Option<String>,
    },
    /// Run the full experiment described by a run config file.
    Evaluate {
        /// TOML run config mirroring the RunConfig fields.
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-render the table and charts from a finished run directory.
    Report { run_dir: PathBuf },
}

/// TOML roster file: a [[backends]] list.
#[derive(serde::Deserialize)]
struct RosterFile {
    backends: Vec<BackendSpec>,
}

/// Turn --backend into a spec: a roster lookup when a roster is given and the
/// id matches, otherwise an ad-hoc spec around an endpoint string.
fn resolve_spec(
    backend: &str,
    roster: Option<&Path>,
    kind: BackendKind,
) -> Result<BackendSpec> {
    if let Some(path) = roster {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading roster {}", path.display()))?;
        let roster: RosterFile =
            toml::from_str(&text).with_context(|| format!("parsing roster {}", path.display()))?;
        if let Some(spec) = roster.backends.into_iter().find(|b| b.model_id == backend) {
            return Ok(spec);
        }
        bail!("backend {backend:?} not found in {}", path.display());
    }
    if backend.starts_with("mock:") || backend.starts_with("http://") || backend.starts_with("https://")
    {
        return Ok(BackendSpec::mock(backend, kind, backend));
    }
    bail!("--backend must be an endpoint (mock:<name> or URL) or an id from --roster");
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest { dir, out } => {
            let docs = ingest_dir(&dir)?;
            write_documents(&out, &docs)?;
            let chars: usize = docs.iter().map(|d| d.text.chars().count()).sum();
            println!("ingested {} documents ({chars} characters) -> {}", docs.len(), out.display());
        }
        Command::GenQa {
            corpus,
            backend,
            roster,
            out,
            size,
            overlap,
        } => {
            let docs = read_documents(&corpus)?;
            let spec = resolve_spec(&backend, roster.as_deref(), BackendKind::FinetunedQa)?;
            let backend = Backend::resolve(spec, &Arc::new(MockEnv::default()))?;
            let mut triples = Vec::new();
            let mut failures = 0usize;
            for doc in &docs {
                for chunk in chunk_document(doc, size, overlap)? {
                    match corpus::generate_qa_triples(&chunk.chunk_ref(), &chunk.text, &backend) {
                        Ok(mut t) => triples.append(&mut t),
                        Err(e) => {
                            failures += 1;
                            eprintln!("warning: {} failed: {e}", chunk.chunk_ref());
                        }
                    }
                }
            }
            if triples.is_empty() {
                bail!("no QA pairs generated ({failures} failed contexts)");
            }
            write_dataset(&out, &triples)?;
            println!(
                "generated {} QA triples from {} documents -> {} ({failures} failed contexts)",
                triples.len(),
                docs.len(),
                out.display()
            );
        }
        Command::Index {
            dataset,
            embedder,
            out,
            size,
            overlap,
        } => {
            let embedder = parse_embedder(&embedder)?;
            let mut index = VectorIndex::for_embedder(embedder.as_ref());
            // Documents file or QA dataset, decided by which parser accepts it.
            if let Ok(docs) = read_documents(&dataset) {
                for doc in &docs {
                    for chunk in chunk_document(doc, size, overlap)? {
                        index.add(&chunk, embedder.as_ref())?;
                    }
                }
            } else {
                let triples = read_dataset(&dataset)?;
                for (chunk_ref, context) in corpus::distinct_contexts(&triples) {
                    let embedding = embedder.embedding(&context)?;
                    index.add_entry(&chunk_ref, &context, embedding)?;
                }
            }
            std::fs::create_dir_all(&out)?;
            index.write_embeddings(&out.join("index.jsonl"))?;
            index.write_texts(&out.join("chunks.jsonl"))?;
            println!(
                "indexed {} chunks with {} -> {}",
                index.len(),
                index.provider_id(),
                out.display()
            );
        }
        Command::Ask {
            question,
            backend,
            roster,
            index,
            embedder,
            k,
            context,
        } => {
            let kind = if index.is_some() {
                BackendKind::Rag
            } else if context.is_some() {
                BackendKind::FinetunedCtx
            } else {
                BackendKind::FinetunedQa
            };
            let mut spec = resolve_spec(&backend, roster.as_deref(), kind)?;
            if let Some(k) = k {
                spec.retrieval_k = Some(k);
            }

            let loaded_index = match index.or(spec.index_path.clone()) {
                Some(dir) => Some(VectorIndex::load(
                    &dir.join("index.jsonl"),
                    &dir.join("chunks.jsonl"),
                )?),
                None => None,
            };
            let embedder_id = embedder
                .or(spec.embedder.clone())
                .unwrap_or_else(|| "hash:64".to_string());
            let embedder = parse_embedder(&embedder_id)?;
            let resolved = Backend::resolve(spec, &Arc::new(MockEnv::default()))?;

            let (response, retrieval) = resolved.answer_question(
                &question,
                context.as_deref(),
                loaded_index.as_ref(),
                Some(embedder.as_ref()),
                akm::backends::DEFAULT_TEMPERATURE,
                0,
            )?;
            if let Some(retrieval) = retrieval {
                eprintln!("retrieved chunks:");
                for (chunk_ref, score) in &retrieval.chunks {
                    eprintln!("  {chunk_ref}  (cosine {score:.4})");
                }
            }
            if response.ok {
                println!("{}", response.text);
            } else {
                bail!(
                    "backend failed: {}",
                    response.error.unwrap_or_else(|| "unknown error".into())
                );
            }
        }
        Command::Evaluate { config } => {
            let config = RunConfig::load(&config)?;
            let out = config.output_dir.clone();
            let (stats, _records) = run_experiment(config)?;
            print!("{}", render_table(&stats).text);
            println!();
            println!("artifacts written to {}", out.display());
        }
        Command::Report { run_dir } => {
            let records = load_records(&run_dir)?;
            let stats = summarize(&records)?;
            let table = render_table(&stats);
            std::fs::write(run_dir.join("table.txt"), &table.text)?;
            std::fs::write(run_dir.join("table.csv"), &table.csv)?;
            render_charts(&stats, &run_dir.join("charts"))?;
            print!("{}", table.text);
            println!();
            println!("reports regenerated in {}", run_dir.display());
        }
    }
    Ok(())
}
