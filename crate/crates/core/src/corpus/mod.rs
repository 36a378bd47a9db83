//! Corpus handling: article ingestion, length filtering, sentence splitting,
//! token-window chunking, and chunk embedding.

mod sentences;
pub mod tokenizer;

pub use sentences::{split_sentences, Sentence};
pub use tokenizer::{tokenizer_by_name, TokenSpan, Tokenizer, WhitespacePunctTokenizer};

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::hashing::short_hash;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read corpus input: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("chunk window invalid: max_tokens ({max}) must exceed overlap ({overlap})")]
    WindowTooSmall { max: usize, overlap: usize },
    #[error(transparent)]
    Embedding(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub domain_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_at: Option<String>,
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub article_id: String,
    /// Token window within the article, half-open.
    pub start: usize,
    pub end: usize,
    /// Byte range of the window within the article text.
    pub byte_start: usize,
    pub byte_end: usize,
    pub text: String,
    /// Empty until `embed_chunks` runs.
    #[serde(default)]
    pub embedding: Vec<f64>,
}

/// What to do with an input line that does not parse as an article record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedPolicy {
    Skip,
    Abort,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    text: Option<String>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    published_at: Option<String>,
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub articles: Vec<Article>,
    /// (1-based line number, reason) for each skipped line.
    pub skipped: Vec<(usize, String)>,
}

/// Reads JSONL article records. Records missing an id get a stable one
/// derived from the text hash. Malformed lines are skipped with a log entry
/// or abort the run, per `policy`.
pub fn ingest(
    reader: impl Read,
    domain_tag: &str,
    tokenizer: &dyn Tokenizer,
    policy: MalformedPolicy,
) -> Result<IngestReport, CorpusError> {
    let mut report = IngestReport::default();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Result<RawRecord, _> = serde_json::from_str(&line);
        let reason = match parsed {
            Ok(rec) => match rec.text {
                Some(text) if !text.trim().is_empty() => {
                    let id = rec
                        .id
                        .filter(|s| !s.trim().is_empty())
                        .unwrap_or_else(|| format!("art-{}", short_hash(&text)));
                    let token_count = tokenizer.count(&text);
                    report.articles.push(Article {
                        id,
                        source: rec.source,
                        domain_tag: domain_tag.to_string(),
                        published_at: rec.published_at,
                        text,
                        token_count,
                    });
                    continue;
                }
                Some(_) => "empty text field".to_string(),
                None => "missing text field".to_string(),
            },
            Err(e) => format!("invalid JSON: {e}"),
        };
        match policy {
            MalformedPolicy::Abort => {
                return Err(CorpusError::MalformedRecord {
                    line: line_no,
                    reason,
                })
            }
            MalformedPolicy::Skip => {
                log::warn!("skipping corpus line {line_no}: {reason}");
                report.skipped.push((line_no, reason));
            }
        }
    }
    Ok(report)
}

pub fn ingest_path(
    path: &Path,
    domain_tag: &str,
    tokenizer: &dyn Tokenizer,
    policy: MalformedPolicy,
) -> Result<IngestReport, CorpusError> {
    let file = std::fs::File::open(path)?;
    ingest(file, domain_tag, tokenizer, policy)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped_short: usize,
    pub dropped_long: usize,
}

/// Keeps articles whose token count lies in `[min_tokens, max_tokens]`.
pub fn filter_by_length(
    articles: Vec<Article>,
    min_tokens: usize,
    max_tokens: usize,
) -> (Vec<Article>, FilterReport) {
    let mut report = FilterReport::default();
    let kept: Vec<Article> = articles
        .into_iter()
        .filter(|a| {
            if a.token_count < min_tokens {
                report.dropped_short += 1;
                false
            } else if a.token_count > max_tokens {
                report.dropped_long += 1;
                false
            } else {
                true
            }
        })
        .collect();
    report.kept = kept.len();
    if report.dropped_short + report.dropped_long > 0 {
        log::info!(
            "length filter kept {} articles, dropped {} short and {} long",
            report.kept,
            report.dropped_short,
            report.dropped_long
        );
    }
    (kept, report)
}

#[derive(Debug, Clone, Copy)]
pub struct ChunkParams {
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams {
            min_tokens: 128,
            max_tokens: 256,
            overlap: 50,
        }
    }
}

/// Greedy token windowing. Each chunk covers `[p, min(p + max_tokens, N))`
/// and the window advances to `end - overlap`, so consecutive chunks share
/// exactly `overlap` tokens. A final fragment shorter than `min_tokens` is
/// still emitted so every token lands in at least one chunk.
pub fn chunk_article(
    article: &Article,
    tokenizer: &dyn Tokenizer,
    params: ChunkParams,
) -> Result<Vec<Chunk>, CorpusError> {
    if params.max_tokens <= params.overlap {
        return Err(CorpusError::WindowTooSmall {
            max: params.max_tokens,
            overlap: params.overlap,
        });
    }
    let spans = tokenizer.tokenize(&article.text);
    let n = spans.len();
    let mut chunks = Vec::new();
    let mut p = 0usize;
    while p < n {
        let end = (p + params.max_tokens).min(n);
        let byte_start = spans[p].start;
        let byte_end = spans[end - 1].end;
        chunks.push(Chunk {
            id: short_hash(format!("{}:{p}:{end}", article.id)),
            article_id: article.id.clone(),
            start: p,
            end,
            byte_start,
            byte_end,
            text: article.text[byte_start..byte_end].to_string(),
            embedding: Vec::new(),
        });
        if end == n {
            break;
        }
        p = end - params.overlap;
    }
    Ok(chunks)
}

/// Embeds chunk texts in batches through the gateway, writing unit-norm
/// vectors back onto the chunks in their original order.
pub fn embed_chunks(
    chunks: &mut [Chunk],
    gateway: &Gateway,
    batch_size: usize,
) -> Result<(), CorpusError> {
    let batch_size = batch_size.max(1);
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = gateway.embed_batched(&texts, batch_size)?;
    debug_assert_eq!(vectors.len(), chunks.len());
    for (chunk, vec) in chunks.iter_mut().zip(vectors) {
        chunk.embedding = vec;
    }
    Ok(())
}

/// Chunks supporting a sentence: those whose byte span fully contains it, or,
/// when the window boundary cuts the sentence, every chunk overlapping it.
pub fn supporting_chunks<'a>(chunks: &'a [Chunk], sentence: &Sentence) -> Vec<&'a Chunk> {
    let containing: Vec<&Chunk> = chunks
        .iter()
        .filter(|c| {
            c.article_id == sentence.article_id
                && c.byte_start <= sentence.byte_start
                && sentence.byte_end <= c.byte_end
        })
        .collect();
    if !containing.is_empty() {
        return containing;
    }
    chunks
        .iter()
        .filter(|c| {
            c.article_id == sentence.article_id
                && c.byte_start < sentence.byte_end
                && sentence.byte_start < c.byte_end
        })
        .collect()
}
