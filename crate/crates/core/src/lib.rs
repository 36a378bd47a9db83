//! Synthesis of difficulty-calibrated multi-hop QA benchmarks from a text
//! corpus, plus an evaluation harness for retrieval-augmented systems.
//!
//! The pipeline runs in dependency order: articles are ingested and chunked,
//! sentences become verified claims, claims become knowledge-graph triples,
//! the graph is augmented with equivalence links discovered per embedding
//! cluster, multi-hop paths are enumerated and turned into QA pairs, each
//! pair is scored for retrieval difficulty, and finally a RAG system is
//! evaluated against the resulting hop-by-difficulty matrix.
//!
//! Every stage is deterministic for a fixed seed and provider, so artifacts
//! are reproducible byte for byte.

pub mod augment;
pub mod claims;
pub mod corpus;
pub mod difficulty;
pub mod evalharness;
pub mod gateway;
pub mod graph;
pub mod hashing;
pub mod normalize;
pub mod pipeline;
pub mod qagen;
