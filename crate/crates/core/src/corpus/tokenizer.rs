//! Pluggable tokenization. Token counts gate article length filtering and
//! chunk windows, so the tokenizer must be deterministic across runs.

use serde::{Deserialize, Serialize};

/// Byte span of one token within the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

pub trait Tokenizer: Send + Sync {
    /// Splits `text` into non-overlapping token spans in source order.
    fn tokenize(&self, text: &str) -> Vec<TokenSpan>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }

    /// Stable identifier recorded in run manifests.
    fn name(&self) -> &'static str;
}

/// Default tokenizer: maximal alphanumeric runs are one token each, every
/// other non-whitespace character is a single-character token.
#[derive(Debug, Default, Clone, Copy)]
pub struct WhitespacePunctTokenizer;

impl Tokenizer for WhitespacePunctTokenizer {
    fn tokenize(&self, text: &str) -> Vec<TokenSpan> {
        let mut spans = Vec::new();
        let mut word_start: Option<usize> = None;
        for (idx, ch) in text.char_indices() {
            if ch.is_alphanumeric() {
                if word_start.is_none() {
                    word_start = Some(idx);
                }
            } else {
                if let Some(start) = word_start.take() {
                    spans.push(TokenSpan { start, end: idx });
                }
                if !ch.is_whitespace() {
                    spans.push(TokenSpan {
                        start: idx,
                        end: idx + ch.len_utf8(),
                    });
                }
            }
        }
        if let Some(start) = word_start {
            spans.push(TokenSpan {
                start,
                end: text.len(),
            });
        }
        spans
    }

    fn name(&self) -> &'static str {
        "whitespace-punct"
    }
}

/// Looks up the tokenizer configured for a run. Only one implementation is
/// bundled; the registry exists so embedders can match a model's tokenizer
/// without touching call sites.
pub fn tokenizer_by_name(name: &str) -> Option<Box<dyn Tokenizer>> {
    match name {
        "whitespace-punct" => Some(Box::new(WhitespacePunctTokenizer)),
        _ => None,
    }
}
