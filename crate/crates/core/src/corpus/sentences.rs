//! Rule-based sentence splitting. Splits on terminal punctuation followed by
//! whitespace and a sentence-opening character, with an exception list for
//! common abbreviations so "Dr. Smith" stays intact. Every non-whitespace
//! character of the input lands in exactly one sentence.

use serde::{Deserialize, Serialize};

use super::Article;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub article_id: String,
    /// Position within the article, contiguous from 0.
    pub index: usize,
    pub text: String,
    /// Byte range of the trimmed sentence within the article text.
    pub byte_start: usize,
    pub byte_end: usize,
}

/// Dotted tokens that end with '.' without ending a sentence. Compared
/// case-insensitively against the full dotted run preceding the period.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "rev", "gen", "sen", "rep", "gov", "st", "jr", "sr", "vs",
    "etc", "e.g", "i.e", "cf", "inc", "ltd", "co", "corp", "dept", "est", "fig", "al", "jan",
    "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "mon", "tue",
    "wed", "thu", "fri", "sat", "sun", "u.s", "u.k", "u.n",
];

fn is_terminal(ch: char) -> bool {
    matches!(ch, '.' | '!' | '?')
}

fn is_closer(ch: char) -> bool {
    matches!(ch, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_sentence_start(ch: char) -> bool {
    ch.is_uppercase() || ch.is_ascii_digit() || matches!(ch, '"' | '\'' | '(' | '\u{201c}' | '\u{2018}')
}

/// True when the dotted word ending at `dot_idx` (exclusive) is a known
/// abbreviation, e.g. the "U.S" before the final period of "U.S.".
fn ends_with_abbreviation(chars: &[(usize, char)], dot_idx: usize) -> bool {
    let mut start = dot_idx;
    while start > 0 {
        let prev = chars[start - 1].1;
        if prev.is_alphanumeric() || prev == '.' {
            start -= 1;
        } else {
            break;
        }
    }
    if start == dot_idx {
        return false;
    }
    let word: String = chars[start..dot_idx]
        .iter()
        .map(|&(_, c)| c)
        .collect::<String>()
        .to_lowercase();
    let word = word.trim_matches('.');
    ABBREVIATIONS.contains(&word)
}

/// Splits an article into sentences. Indices are contiguous from 0 and no
/// sentence is empty after trimming.
pub fn split_sentences(article: &Article) -> Vec<Sentence> {
    let text = article.text.as_str();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let mut out: Vec<Sentence> = Vec::new();
    let mut sent_start = 0usize;

    let push = |out: &mut Vec<Sentence>, start: usize, end: usize| {
        let raw = &text[start..end];
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return;
        }
        let lead = raw.len() - raw.trim_start().len();
        let byte_start = start + lead;
        let byte_end = byte_start + trimmed.len();
        let index = out.len();
        out.push(Sentence {
            id: format!("{}:s{}", article.id, index),
            article_id: article.id.clone(),
            index,
            text: trimmed.to_string(),
            byte_start,
            byte_end,
        });
    };

    let mut i = 0usize;
    while i < n {
        let (_, ch) = chars[i];
        if !is_terminal(ch) {
            i += 1;
            continue;
        }
        // Consume the whole terminal run ("...", "?!") and trailing closers.
        let mut j = i;
        while j + 1 < n && is_terminal(chars[j + 1].1) {
            j += 1;
        }
        let mut k = j;
        while k + 1 < n && is_closer(chars[k + 1].1) {
            k += 1;
        }
        let end_byte = chars[k].0 + chars[k].1.len_utf8();
        let mut m = k + 1;
        while m < n && chars[m].1.is_whitespace() {
            m += 1;
        }
        let at_end = m == n;
        let followed_by_space = at_end || m > k + 1;
        let next_opens = at_end || is_sentence_start(chars[m].1);
        let abbrev = ch == '.' && j == i && ends_with_abbreviation(&chars, i);
        if followed_by_space && next_opens && !abbrev {
            push(&mut out, sent_start, end_byte);
            sent_start = if at_end { text.len() } else { chars[m].0 };
            i = m;
        } else {
            i = k + 1;
        }
    }
    if sent_start < text.len() {
        push(&mut out, sent_start, text.len());
    }
    out
}
