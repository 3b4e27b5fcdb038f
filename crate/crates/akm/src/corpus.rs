//! Document ingestion, chunking, QA-pair generation and dataset splits.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::backends::Backend;
use crate::error::{Error, Result};

/// Default chunk size in characters.
pub const DEFAULT_CHUNK_SIZE: usize = 1000;
/// Default overlap between consecutive chunks, in characters.
pub const DEFAULT_CHUNK_OVERLAP: usize = 200;

/// A raw source document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source_uri: String,
    pub text: String,
}

impl Document {
    pub fn new(id: &str, source_uri: &str, text: &str) -> Self {
        Self {
            id: id.to_string(),
            source_uri: source_uri.to_string(),
            text: text.to_string(),
        }
    }
}

/// A contiguous window of a document, addressed by character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    /// (start, end) character offsets into the parent document.
    pub char_span: (usize, usize),
}

impl Chunk {
    /// Stable identifier used by vector indexes: `<doc_id>#<index>`.
    pub fn chunk_ref(&self) -> String {
        format!("{}#{}", self.doc_id, self.index)
    }
}

/// One (context, question, reference answer) record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QATriple {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answer: String,
}

/// A seeded train/eval partition of a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<QATriple>,
    pub eval: Vec<QATriple>,
    pub seed: u64,
    pub fraction: f64,
}

/// Split a document into sliding windows of `size` characters with the given
/// overlap. The window stride is `size − overlap`; generation stops with the
/// window that reaches the end of the text, so the final chunk may be short.
pub fn chunk_document(doc: &Document, size: usize, overlap: usize) -> Result<Vec<Chunk>> {
    if overlap >= size {
        return Err(Error::Config(format!(
            "chunk overlap ({overlap}) must be smaller than chunk size ({size})"
        )));
    }
    // Character offset -> byte offset, plus the end sentinel.
    let boundaries: Vec<usize> = doc
        .text
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(doc.text.len()))
        .collect();
    let n_chars = boundaries.len() - 1;
    if n_chars == 0 {
        return Ok(Vec::new());
    }
    let stride = size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0usize;
    loop {
        let end = (start + size).min(n_chars);
        chunks.push(Chunk {
            doc_id: doc.id.clone(),
            index: chunks.len(),
            text: doc.text[boundaries[start]..boundaries[end]].to_string(),
            char_span: (start, end),
        });
        if start + size >= n_chars {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

/// Load every `.txt`/`.md` file under `dir` as a document. The file name
/// without extension becomes the document id; files are returned sorted by id.
pub fn ingest_dir(dir: &Path) -> Result<Vec<Document>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut docs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_text = matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("txt") | Some("md") | Some("markdown")
        );
        if !path.is_file() || !is_text {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Argument(format!("unusable file name: {}", path.display())))?
            .to_string();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        docs.push(Document::new(&id, &path.display().to_string(), &text));
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    for pair in docs.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::Argument(format!(
                "duplicate document id {:?} in {}",
                pair[0].id,
                dir.display()
            )));
        }
    }
    Ok(docs)
}

/// Prompt sent to a backend to turn a context paragraph into QA pairs.
pub fn qa_generation_prompt(context: &str) -> String {
    format!(
        "Read the context below and write concise question-answer pairs covering it. \
         Output one field per line, strictly alternating lines that start with \"Q:\" \
         and lines that start with \"A:\". Output nothing else.\n\nContext:\n{context}\n\nPairs:"
    )
}

/// Parse strictly alternating `Q:`/`A:` lines into (question, answer) pairs.
///
/// Every non-blank line must start with one of the two markers, the sequence
/// must start with `Q:`, and each `Q:` must be followed by an `A:`. Violations
/// are parse errors carrying the raw text.
pub fn parse_qa_pairs(raw: &str) -> Result<Vec<(String, String)>> {
    let fail = |message: &str| Error::Parse {
        message: message.to_string(),
        raw: raw.to_string(),
    };
    let mut pairs = Vec::new();
    let mut pending_question: Option<String> = None;
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(q) = line.strip_prefix("Q:") {
            if pending_question.is_some() {
                return Err(fail("two consecutive Q: lines"));
            }
            let q = q.trim();
            if q.is_empty() {
                return Err(fail("empty question"));
            }
            pending_question = Some(q.to_string());
        } else if let Some(a) = line.strip_prefix("A:") {
            let q = pending_question
                .take()
                .ok_or_else(|| fail("A: line without a preceding Q: line"))?;
            let a = a.trim();
            if a.is_empty() {
                return Err(fail("empty answer"));
            }
            pairs.push((q, a.to_string()));
        } else {
            return Err(fail("line does not start with Q: or A:"));
        }
    }
    if pending_question.is_some() {
        return Err(fail("trailing Q: line without an answer"));
    }
    Ok(pairs)
}

/// Serialize pairs back to the `Q:`/`A:` line format accepted by
/// [`parse_qa_pairs`].
pub fn format_qa_pairs(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (q, a) in pairs {
        out.push_str("Q: ");
        out.push_str(q);
        out.push_str("\nA: ");
        out.push_str(a);
        out.push('\n');
    }
    out
}

/// Ask `backend` to generate QA pairs for one context paragraph.
pub fn generate_qa_pairs(context: &str, backend: &Backend) -> Result<Vec<(String, String)>> {
    if context.is_empty() {
        return Err(Error::Argument("QA generation needs a non-empty context".into()));
    }
    let response = backend.complete(&qa_generation_prompt(context), 0)?;
    if !response.ok {
        return Err(Error::Transport {
            endpoint: backend.endpoint().to_string(),
            message: response
                .error
                .unwrap_or_else(|| "backend failed without a message".into()),
        });
    }
    parse_qa_pairs(&response.text)
}

/// Generate QA triples for a context, assigning ids `<prefix>-q<n>`.
pub fn generate_qa_triples(
    id_prefix: &str,
    context: &str,
    backend: &Backend,
) -> Result<Vec<QATriple>> {
    let pairs = generate_qa_pairs(context, backend)?;
    Ok(pairs
        .into_iter()
        .enumerate()
        .map(|(i, (question, answer))| QATriple {
            id: format!("{id_prefix}-q{i}"),
            context: context.to_string(),
            question,
            answer,
        })
        .collect())
}

/// Deterministically shuffle and partition `triples`.
///
/// The train side receives `round(fraction × N)` records. The same seed
/// always yields the same split.
pub fn split_dataset(triples: &[QATriple], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if triples.is_empty() {
        return Err(Error::Argument("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut shuffled: Vec<QATriple> = triples.to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_train = (fraction * triples.len() as f64).round() as usize;
    let eval = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        eval,
        seed,
        fraction,
    })
}

/// Write triples as JSON lines with fields {id, context, question, answer}.
pub fn write_dataset(path: &Path, triples: &[QATriple]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for t in triples {
        let line = serde_json::to_string(t).map_err(|e| Error::Json {
            context: format!("triple {}", t.id),
            source: e,
        })?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Read a JSON-lines dataset written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<Vec<QATriple>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let triple: QATriple = serde_json::from_str(&line).map_err(|e| Error::Json {
            context: format!("{}:{}", path.display(), lineno + 1),
            source: e,
        })?;
        triples.push(triple);
    }
    Ok(triples)
}

/// Write documents as JSON lines ({id, source_uri, text}).
pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for d in docs {
        let line = serde_json::to_string(d).map_err(|e| Error::Json {
            context: format!("document {}", d.id),
            source: e,
        })?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Read a JSON-lines documents file written by [`write_documents`].
pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Json {
            context: format!("{}:{}", path.display(), lineno + 1),
            source: e,
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// The distinct contexts of a dataset, in first-appearance order, with a
/// stable ref for each (`ctx#<n>`). Useful for indexing a QA dataset directly.
pub fn distinct_contexts(triples: &[QATriple]) -> Vec<(String, String)> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for t in triples {
        if !seen.contains_key(t.context.as_str()) {
            seen.insert(t.context.as_str(), out.len());
            out.push((format!("ctx#{}", out.len()), t.context.clone()));
        }
    }
    out
}
