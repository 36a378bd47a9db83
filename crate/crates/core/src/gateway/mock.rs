//! Offline providers with deterministic, rule-based behavior. The chat mock
//! applies a fixed per-template rule set (overridable with scripted outputs
//! keyed by prompt hash) and the embedding mock derives vectors from token
//! hashes, so every output is a pure function of the rendered prompt.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChatCall, ChatProvider, EmbeddingProvider, ProviderFailure, TemplateName};
use crate::hashing::sha_hex;
use crate::normalize::fold;

const STOPWORDS: &[&str] = &[
    "the", "a", "an", "of", "in", "on", "at", "to", "and", "or", "is", "was", "were", "are",
    "be", "by", "for", "with", "as", "from", "has", "had", "have", "its", "their",
];

/// Relationship phrases the triple-extraction rule recognizes when no
/// scripted output matches the prompt.
const PREDICATES: &[&str] = &[
    "was acquired by",
    "was founded by",
    "was developed by",
    "is located in",
    "signed with",
    "partnered with",
    "plays for",
    "led to",
    "resulted in",
    "relocated to",
    "donated to",
    "merged with",
    "defeated",
    "acquired",
    "joined",
    "hosts",
    "hosted",
    "banned",
    "approved",
    "founded",
    "sponsors",
    "sponsored",
    "announced",
    "launched",
    "won",
    "causes",
    "caused",
    "triggered",
    "oversees",
    "manages",
    "employs",
    "produces",
    "supplies",
    "funds",
    "funded",
    "opened",
    "endorsed",
    "recommends",
    "recommended",
    "regulates",
    "authorized",
    "awarded",
];

/// Surface sets the equivalence rule treats as the same entity in any
/// context. Keys are compared via [`crate::normalize::entity_key`].
const ALIAS_CLASSES: &[&[&str]] = &[
    &["usa", "united states", "u.s."],
    &["uk", "united kingdom"],
    &["un", "united nations"],
    &["eu", "european union"],
    &["who", "world health organization"],
    &["nyc", "new york city"],
    &["fda", "food and drug administration"],
    &["cdc", "centers for disease control and prevention"],
    &["nasa", "national aeronautics and space administration"],
];

const VAGUE_MARKERS: &[&str] = &[
    "other countries",
    "certain individuals",
    "this technology",
    "some people",
    "several sources",
    "various reasons",
];

const OPINION_MARKERS: &[&str] = &[
    "think", "thinks", "believe", "believes", "believed", "opinion", "feel", "feels", "felt",
    "seems", "seem", "arguably", "probably", "perhaps", "hopefully", "unfortunately", "sadly",
    "amazing", "terrible", "awful", "wonderful", "beautiful", "disappointing", "impressive",
    "remarkable", "stunning", "exciting", "boring", "best", "worst", "overrated", "underrated",
    "should", "ought",
];

/// Marker phrase the auxiliary fact/opinion classifier prompt carries so the
/// mock can recognize it among raw (template-less) completions.
pub const FACT_JUDGE_MARKER: &str = "Classify the sentence as Factual or Opinion.";

pub struct MockChatProvider {
    scripts: BTreeMap<String, String>,
}

impl Default for MockChatProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl MockChatProvider {
    pub fn new() -> Self {
        MockChatProvider {
            scripts: BTreeMap::new(),
        }
    }

    /// Scripted outputs keyed by the SHA-256 of the rendered user prompt.
    /// Scripts win over the built-in rules, which lets tests pin exact model
    /// outputs for prompts whose rule-based answer would be inconvenient.
    pub fn with_scripts(scripts: BTreeMap<String, String>) -> Self {
        MockChatProvider { scripts }
    }

    pub fn script_key(user_prompt: &str) -> String {
        sha_hex(user_prompt)
    }

    fn var<'a>(call: &'a ChatCall, key: &str) -> Result<&'a str, ProviderFailure> {
        call.vars
            .and_then(|v| v.get(key))
            .map(|s| s.as_str())
            .ok_or_else(|| {
                ProviderFailure::Fatal(format!("mock chat: missing template variable '{key}'"))
            })
    }
}

impl ChatProvider for MockChatProvider {
    fn complete(&self, call: &ChatCall) -> Result<String, ProviderFailure> {
        if let Some(scripted) = self.scripts.get(&Self::script_key(call.user)) {
            return Ok(scripted.clone());
        }
        match call.template {
            Some(TemplateName::ClaimGeneration) => {
                Ok(Self::var(call, "evidence")?.trim().to_string())
            }
            Some(TemplateName::ConsistencyCheck) => {
                let sentence = Self::var(call, "sentence")?;
                let claim = Self::var(call, "claim")?;
                Ok(if claim_supported(sentence, claim) {
                    "Yes".into()
                } else {
                    "No".into()
                })
            }
            Some(TemplateName::TripleExtraction) => {
                Ok(extract_triples_rule(Self::var(call, "sentences")?))
            }
            Some(TemplateName::EquivalenceSearch) => {
                Ok(equivalence_rule(Self::var(call, "pairs")?))
            }
            Some(TemplateName::QaGeneration) => qa_generation_rule(Self::var(call, "triples")?),
            Some(TemplateName::QaValidation) => {
                let question = Self::var(call, "question")?;
                let answer = Self::var(call, "answer")?;
                Ok(validation_rule(question, answer))
            }
            Some(TemplateName::RagAnswer) => {
                let question = Self::var(call, "question")?;
                let context = Self::var(call, "top_chunks")?;
                Ok(rag_answer_rule(question, context))
            }
            Some(TemplateName::Judge) => {
                let gold = Self::var(call, "gt_answer")?;
                let response = Self::var(call, "rag_answer")?;
                let gold = fold(gold);
                Ok(if !gold.is_empty() && fold(response).contains(&gold) {
                    "True".into()
                } else {
                    "False".into()
                })
            }
            None if call.system.contains(FACT_JUDGE_MARKER) => {
                let sentence = call
                    .user
                    .strip_prefix("Sentence: ")
                    .unwrap_or(call.user);
                let words: BTreeSet<String> =
                    fold(sentence).split_whitespace().map(String::from).collect();
                let opinion = OPINION_MARKERS.iter().any(|m| words.contains(*m));
                Ok(if opinion { "Opinion".into() } else { "Factual".into() })
            }
            None => Err(ProviderFailure::Fatal(
                "mock chat has no rule for this prompt".into(),
            )),
        }
    }

    fn id(&self) -> String {
        "mock-chat".into()
    }
}

/// True when every content word of the claim appears in the sentence.
fn claim_supported(sentence: &str, claim: &str) -> bool {
    let sentence_words: BTreeSet<String> =
        fold(sentence).split_whitespace().map(String::from).collect();
    fold(claim)
        .split_whitespace()
        .filter(|w| !STOPWORDS.contains(w))
        .all(|w| sentence_words.contains(w))
}

/// Finds the earliest predicate occurrence (ties broken toward the longest
/// phrase) and splits the sentence around it.
fn split_on_predicate(text: &str) -> Option<(String, &'static str, String)> {
    let mut best: Option<(usize, &'static str)> = None;
    for &pred in PREDICATES {
        let needle = format!(" {pred} ");
        if let Some(pos) = text.find(&needle) {
            let better = match best {
                None => true,
                Some((bpos, bpred)) => pos < bpos || (pos == bpos && pred.len() > bpred.len()),
            };
            if better {
                best = Some((pos, pred));
            }
        }
    }
    let (pos, pred) = best?;
    let subject = text[..pos].trim();
    let object = text[pos + pred.len() + 2..]
        .trim()
        .trim_end_matches(['.', '!', '?'])
        .trim();
    if subject.is_empty() || object.is_empty() || subject.contains('|') || object.contains('|') {
        return None;
    }
    Some((subject.to_string(), pred, object.to_string()))
}

fn extract_triples_rule(sentences_block: &str) -> String {
    let mut lines = Vec::new();
    for line in sentences_block.lines() {
        let Some(rest) = line.trim().strip_prefix("Sentence ") else {
            continue;
        };
        let Some((idx, text)) = rest.split_once(": ") else {
            continue;
        };
        if let Some((subject, pred, object)) = split_on_predicate(text) {
            lines.push(format!("({subject}|{pred}|{object}|{idx})"));
        }
    }
    lines.join("\n")
}

fn entities_from_pairs(pairs_block: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for line in pairs_block.lines() {
        let Some(rest) = line.trim().strip_prefix("Triple: ") else {
            continue;
        };
        let inner = rest.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<&str> = inner.split('|').collect();
        if parts.len() < 3 {
            continue;
        }
        for surface in [parts[0], parts[2]] {
            let surface = surface.trim();
            if !surface.is_empty() && seen.insert(surface.to_string()) {
                out.push(surface.to_string());
            }
        }
    }
    out
}

fn alias_class(surface: &str) -> Option<usize> {
    let key = crate::normalize::entity_key(surface);
    ALIAS_CLASSES
        .iter()
        .position(|class| class.contains(&key.as_str()))
}

fn equivalence_rule(pairs_block: &str) -> String {
    let entities = entities_from_pairs(pairs_block);
    let mut groups: Vec<String> = Vec::new();

    let mut by_class: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for e in &entities {
        if let Some(class) = alias_class(e) {
            by_class.entry(class).or_default().insert(e.clone());
        }
    }
    for members in by_class.values() {
        if members.len() >= 2 {
            let line = members.iter().cloned().collect::<Vec<_>>().join("|");
            groups.push(format!("[{line}] \"always\""));
        }
    }

    let token_sets: Vec<(String, BTreeSet<String>)> = entities
        .iter()
        .map(|e| {
            (
                e.clone(),
                fold(e).split_whitespace().map(String::from).collect(),
            )
        })
        .collect();
    let mut contextual: BTreeSet<(String, String)> = BTreeSet::new();
    for (a, atoks) in &token_sets {
        for (b, btoks) in &token_sets {
            if a == b || atoks.len() < 2 || atoks.len() >= btoks.len() {
                continue;
            }
            if alias_class(a).is_some() && alias_class(a) == alias_class(b) {
                continue;
            }
            if atoks.is_subset(btoks) {
                contextual.insert((a.clone(), b.clone()));
            }
        }
    }
    for (a, b) in contextual {
        groups.push(format!("[{a}|{b}] \"context\""));
    }

    if groups.is_empty() {
        "No identical entities found.".into()
    } else {
        groups.sort();
        groups.join("\n")
    }
}

fn parse_triple_lines(triples_block: &str) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    for line in triples_block.lines() {
        let inner = line.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<&str> = inner.split('|').collect();
        if parts.len() >= 3 {
            out.push((
                parts[0].trim().to_string(),
                parts[1].trim().to_string(),
                parts[2].trim().to_string(),
            ));
        }
    }
    out
}

fn qa_generation_rule(triples_block: &str) -> Result<String, ProviderFailure> {
    let triples = parse_triple_lines(triples_block);
    if triples.is_empty() {
        return Err(ProviderFailure::Fatal(
            "mock chat: qa_generation saw no triples".into(),
        ));
    }
    let (last_s, last_r, last_o) = triples.last().unwrap().clone();
    let clauses: Vec<String> = triples[..triples.len() - 1]
        .iter()
        .map(|(s, r, o)| format!("{s} {r} {o}"))
        .collect();
    let question = if clauses.is_empty() {
        format!("What does {last_s} {last_r}?")
    } else {
        format!("Given that {}, what does {last_s} {last_r}?", clauses.join(", and "))
    };
    Ok(format!("Question: {question} | Answer: {last_o}"))
}

fn validation_rule(question: &str, answer: &str) -> String {
    let combined = format!("{} {}", fold(question), fold(answer));
    for marker in VAGUE_MARKERS {
        if combined.contains(marker) {
            return "False".into();
        }
    }
    let folded_answer = fold(answer);
    if matches!(
        folded_answer.as_str(),
        "he" | "she" | "it" | "they" | "this" | "that"
    ) {
        return "False".into();
    }
    "True".into()
}

/// Answers by locating the question's final "what does X?" pattern inside
/// the provided context and echoing the words that follow it up to the end
/// of that sentence. No match means "UNKNOWN".
fn rag_answer_rule(question: &str, context: &str) -> String {
    let Some(tail_start) = question.rfind("what does ") else {
        return "UNKNOWN".into();
    };
    let tail = &question[tail_start + "what does ".len()..];
    let tail = tail.trim_end().trim_end_matches('?');
    let pattern: Vec<String> = fold(tail)
        .split_whitespace()
        .map(String::from)
        .collect();
    if pattern.is_empty() {
        return "UNKNOWN".into();
    }
    for segment in context.split(['.', '!', '?']) {
        let words: Vec<&str> = segment.split_whitespace().collect();
        // Indices of words that survive folding, so the answer can be
        // reassembled from the original casing.
        let folded: Vec<(usize, String)> = words
            .iter()
            .enumerate()
            .filter_map(|(i, w)| {
                let f = fold(w);
                if f.is_empty() {
                    None
                } else {
                    Some((i, f))
                }
            })
            .collect();
        if folded.len() < pattern.len() {
            continue;
        }
        for start in 0..=folded.len() - pattern.len() {
            let window = &folded[start..start + pattern.len()];
            if window.iter().map(|(_, f)| f.as_str()).eq(pattern.iter().map(String::as_str)) {
                let after = window.last().unwrap().0 + 1;
                if after < words.len() {
                    let answer = words[after..].join(" ");
                    let answer = answer.trim().trim_end_matches([',', ';', ':']).trim();
                    if !answer.is_empty() {
                        return answer.to_string();
                    }
                }
            }
        }
    }
    "UNKNOWN".into()
}

pub struct MockEmbeddingProvider {
    dim: usize,
    seed: u64,
}

impl MockEmbeddingProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        MockEmbeddingProvider { dim, seed }
    }

    /// Deterministic pseudo-random unit vector for one token.
    fn token_vector(&self, token: &str) -> Vec<f64> {
        let digest = sha_hex(token);
        let mut bytes = [0u8; 8];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = u8::from_str_radix(&digest[i * 2..i * 2 + 2], 16).unwrap();
        }
        let token_seed = u64::from_be_bytes(bytes) ^ self.seed;
        let mut rng = ChaCha8Rng::seed_from_u64(token_seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        v
    }
}

impl Default for MockEmbeddingProvider {
    fn default() -> Self {
        MockEmbeddingProvider::new(64, 7)
    }
}

impl EmbeddingProvider for MockEmbeddingProvider {
    fn embed(&self, texts: &[String], _model: &str) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        Ok(texts
            .iter()
            .map(|text| {
                let folded = fold(text);
                let tokens: Vec<&str> = folded.split_whitespace().collect();
                let tokens = if tokens.is_empty() { vec![""] } else { tokens };
                let mut acc = vec![0.0f64; self.dim];
                for t in &tokens {
                    for (a, x) in acc.iter_mut().zip(self.token_vector(t)) {
                        *a += x;
                    }
                }
                let n = tokens.len() as f64;
                for a in &mut acc {
                    *a /= n;
                }
                acc
            })
            .collect())
    }

    fn id(&self) -> String {
        format!("mock-embed-d{}-s{}", self.dim, self.seed)
    }
}
