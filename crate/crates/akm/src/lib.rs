//! Backend-agnostic toolkit for closed-domain question answering: document
//! chunking and retrieval, a uniform answer-backend abstraction, aggregated
//! answer selection over a model roster, and a repeated-trial evaluation
//! harness with BLEU/ROUGE/STS statistics and report generation.
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] ingests documents, chunks them, drives QA-pair generation
//!    through a backend, and manages seeded dataset splits.
//! 2. [`retrieval`] stores chunk embeddings and answers exact top-k cosine
//!    queries; [`embed`] defines the embedding-provider contract.
//! 3. [`backends`] speaks to answer backends — deterministic mocks or a
//!    generic HTTP endpoint — covering plain, context-conditioned and
//!    retrieval-augmented question answering.
//! 4. [`aggregate`] picks one representative answer from the roster's
//!    candidates (TF-IDF centroid selection, with cosine-medoid and
//!    mean-embedding alternatives); [`vectorize`] supplies the TF-IDF space.
//! 5. [`metrics`] scores answers against references; [`harness`] repeats the
//!    whole experiment over trials and [`report`] renders the mean ± std
//!    table and charts.

pub mod aggregate;
pub mod backends;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod report;
pub mod retrieval;
pub mod vectorize;

pub use error::{Error, Result};
