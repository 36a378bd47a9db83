//! Reasoning-path enumeration over the augmented graph and multi-hop QA
//! synthesis. Paths are all simple directed paths whose length equals the
//! endpoints' shortest-path distance, for 2 to 5 hops; each surviving path
//! becomes one question whose gold answer is the terminal entity.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::claims::Claim;
use crate::corpus::{supporting_chunks, Chunk, Sentence};
use crate::gateway::{Gateway, GatewayError, TemplateName};
use crate::graph::{Edge, KnowledgeGraph, NodeId, Provenance};
use crate::hashing::short_hash;
use crate::normalize::{entity_key, parse_true_false};

pub const MIN_HOPS: usize = 2;
pub const MAX_HOPS: usize = 5;
/// Safety cap on enumerated paths per (start, end) pair.
pub const DEFAULT_PATH_CAP: usize = 64;
/// Paths sampled per hop count before validation.
pub const DEFAULT_PER_HOP: usize = 400;
/// Whitespace-token limit on gold answers.
pub const MAX_ANSWER_TOKENS: usize = 10;

/// Shown to the model so the single-line pipe format is unambiguous.
pub const QA_EXAMPLES: &str = "Question: Given that Acme Robotics was acquired by Helios Group, \
and Helios Group is located in Austin, in which city is the company that acquired Acme Robotics \
located? | Answer: Austin";

#[derive(Debug, thiserror::Error)]
pub enum QagenError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("path references claim {0} which is not in the claim set")]
    MissingClaim(String),
    #[error("claim {claim_id} references sentence {sentence_id} which is not in the corpus")]
    MissingSentence {
        claim_id: String,
        sentence_id: String,
    },
    #[error("no chunk contains the sentence behind claim {claim_id}")]
    NoSupportingChunk { claim_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReasoningPath {
    /// Chained edges: dst of edge i is src of edge i+1; nodes all distinct.
    pub edges: Vec<Edge>,
}

impl ReasoningPath {
    pub fn hop_count(&self) -> usize {
        self.edges.len()
    }

    pub fn start(&self) -> NodeId {
        self.edges[0].src
    }

    pub fn end(&self) -> NodeId {
        self.edges.last().unwrap().dst
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.edges.len() + 1);
        out.push(self.edges[0].src);
        out.extend(self.edges.iter().map(|e| e.dst));
        out
    }

    /// Canonical ordering and identity key.
    pub fn key(&self) -> String {
        let mut parts: Vec<String> = vec![self.edges[0].src.0.to_string()];
        for e in &self.edges {
            parts.push(e.predicate.clone());
            parts.push(e.claim_id.clone());
            parts.push(e.dst.0.to_string());
        }
        parts.join("\u{1}")
    }

    pub fn uses_mirrored(&self) -> bool {
        self.edges
            .iter()
            .any(|e| e.provenance == Provenance::Mirrored)
    }

    /// True when consecutive edges meet at a junction under different
    /// surface forms, i.e. the chain only connects because those surfaces
    /// were merged into one node.
    pub fn uses_merged(&self) -> bool {
        self.edges
            .windows(2)
            .any(|w| entity_key(&w[0].dst_surface) != entity_key(&w[1].src_surface))
    }
}

/// Enumerates, for every ordered node pair (s, t) whose shortest-path
/// distance d falls in [MIN_HOPS, MAX_HOPS], all simple directed paths of
/// length exactly d from s to t. Parallel edges between two nodes are
/// collapsed to one representative (extracted preferred over mirrored,
/// then smallest predicate and claim id). Pairs exceeding `cap` paths are
/// truncated with a log entry.
pub fn enumerate_paths(kg: &KnowledgeGraph, cap: usize) -> Vec<ReasoningPath> {
    let n = kg.nodes().len();
    let mut representative: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (i, e) in kg.edges().iter().enumerate() {
        if e.src == e.dst {
            continue;
        }
        let key = (e.src.0, e.dst.0);
        match representative.get(&key) {
            Some(&j) => {
                let old = &kg.edges()[j];
                let rank = |x: &Edge| {
                    (
                        x.provenance != Provenance::Extracted,
                        x.predicate.clone(),
                        x.claim_id.clone(),
                    )
                };
                if rank(e) < rank(old) {
                    representative.insert(key, i);
                }
            }
            None => {
                representative.insert(key, i);
            }
        }
    }
    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(u, v) in representative.keys() {
        neighbors[u as usize].push(v);
    }

    let mut out = Vec::new();
    let mut pair_counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut truncated: BTreeSet<(u32, u32)> = BTreeSet::new();
    for s in 0..n as u32 {
        // BFS layering: following only edges that step one layer outward
        // makes every DFS prefix a shortest path from s.
        let mut dist = vec![u32::MAX; n];
        dist[s as usize] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &neighbors[u as usize] {
                if dist[v as usize] == u32::MAX {
                    dist[v as usize] = dist[u as usize] + 1;
                    queue.push_back(v);
                }
            }
        }

        let mut stack_nodes = vec![s];
        let mut stack_edges: Vec<usize> = Vec::new();
        dfs_layered(
            kg,
            &neighbors,
            &representative,
            &dist,
            cap,
            &mut stack_nodes,
            &mut stack_edges,
            &mut pair_counts,
            &mut truncated,
            &mut out,
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn dfs_layered(
    kg: &KnowledgeGraph,
    neighbors: &[Vec<u32>],
    representative: &BTreeMap<(u32, u32), usize>,
    dist: &[u32],
    cap: usize,
    stack_nodes: &mut Vec<u32>,
    stack_edges: &mut Vec<usize>,
    pair_counts: &mut BTreeMap<(u32, u32), usize>,
    truncated: &mut BTreeSet<(u32, u32)>,
    out: &mut Vec<ReasoningPath>,
) {
    let depth = stack_edges.len();
    if depth >= MIN_HOPS {
        let s = stack_nodes[0];
        let t = *stack_nodes.last().unwrap();
        let count = pair_counts.entry((s, t)).or_insert(0);
        if *count < cap {
            *count += 1;
            out.push(ReasoningPath {
                edges: stack_edges
                    .iter()
                    .map(|&i| kg.edges()[i].clone())
                    .collect(),
            });
        } else if truncated.insert((s, t)) {
            log::warn!(
                "path cap {cap} reached for pair ({} -> {}); further paths dropped",
                kg.node(NodeId(s)).representative(),
                kg.node(NodeId(t)).representative()
            );
        }
    }
    if depth == MAX_HOPS {
        return;
    }
    let u = *stack_nodes.last().unwrap();
    for &v in &neighbors[u as usize] {
        if dist[v as usize] != dist[u as usize] + 1 {
            continue;
        }
        stack_nodes.push(v);
        stack_edges.push(representative[&(u, v)]);
        dfs_layered(
            kg,
            neighbors,
            representative,
            dist,
            cap,
            stack_nodes,
            stack_edges,
            pair_counts,
            truncated,
            out,
        );
        stack_nodes.pop();
        stack_edges.pop();
    }
}

/// Keeps one path per (start, end, hop count) and samples `per_hop` paths
/// per hop level. Input order does not matter: paths are sorted by key
/// before the seeded shuffle, and the result is sorted by key again.
pub fn dedupe_and_sample(
    paths: Vec<ReasoningPath>,
    per_hop: usize,
    seed: u64,
) -> Vec<ReasoningPath> {
    let mut paths = paths;
    paths.sort_by_key(ReasoningPath::key);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    paths.shuffle(&mut rng);

    let mut seen: BTreeSet<(u32, u32, usize)> = BTreeSet::new();
    let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
    let mut kept = Vec::new();
    for p in paths {
        let sig = (p.start().0, p.end().0, p.hop_count());
        if !seen.insert(sig) {
            continue;
        }
        let slot = taken.entry(p.hop_count()).or_insert(0);
        if *slot < per_hop {
            *slot += 1;
            kept.push(p);
        }
    }
    kept.sort_by_key(ReasoningPath::key);
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(rename = "hop")]
    pub hop_count: usize,
    #[serde(rename = "claim_ids")]
    pub supporting_claim_ids: Vec<String>,
    #[serde(rename = "chunk_ids")]
    pub supporting_chunk_ids: Vec<String>,
    pub uses_mirrored: bool,
    pub uses_merged: bool,
    pub validated: bool,
    #[serde(skip)]
    pub path: ReasoningPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    QaParse,
    AnswerTooLong,
}

impl DiscardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::QaParse => "qa_parse",
            DiscardReason::AnswerTooLong => "answer_too_long",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QaOutcome {
    Generated(Box<QAPair>),
    Discarded {
        path_key: String,
        reason: DiscardReason,
    },
}

/// Corpus lookups needed to assemble prompts and supporting references.
pub struct QaSources<'a> {
    pub graph: &'a KnowledgeGraph,
    claims_by_id: BTreeMap<&'a str, &'a Claim>,
    sentences_by_id: BTreeMap<&'a str, &'a Sentence>,
    chunks: &'a [Chunk],
}

impl<'a> QaSources<'a> {
    pub fn new(
        graph: &'a KnowledgeGraph,
        claims: &'a [Claim],
        sentences: &'a [Sentence],
        chunks: &'a [Chunk],
    ) -> Self {
        QaSources {
            graph,
            claims_by_id: claims.iter().map(|c| (c.id.as_str(), c)).collect(),
            sentences_by_id: sentences.iter().map(|s| (s.id.as_str(), s)).collect(),
            chunks,
        }
    }

    fn supporting(&self, path: &ReasoningPath) -> Result<SupportSet<'a>, QagenError> {
        let mut claims = Vec::new();
        let mut chunk_ids = Vec::new();
        let mut chunk_texts = Vec::new();
        let mut seen_claims = BTreeSet::new();
        let mut seen_chunks = BTreeSet::new();
        for e in &path.edges {
            let claim = self
                .claims_by_id
                .get(e.claim_id.as_str())
                .copied()
                .ok_or_else(|| QagenError::MissingClaim(e.claim_id.clone()))?;
            let sentence = self
                .sentences_by_id
                .get(claim.sentence_id.as_str())
                .copied()
                .ok_or_else(|| QagenError::MissingSentence {
                    claim_id: claim.id.clone(),
                    sentence_id: claim.sentence_id.clone(),
                })?;
            let support = supporting_chunks(self.chunks, sentence);
            if support.is_empty() {
                return Err(QagenError::NoSupportingChunk {
                    claim_id: claim.id.clone(),
                });
            }
            if seen_claims.insert(claim.id.as_str()) {
                claims.push(claim);
            }
            for chunk in support {
                if seen_chunks.insert(chunk.id.as_str()) {
                    chunk_ids.push(chunk.id.clone());
                    chunk_texts.push(chunk.text.as_str());
                }
            }
        }
        Ok(SupportSet {
            claims,
            chunk_ids,
            chunk_texts,
        })
    }
}

struct SupportSet<'a> {
    claims: Vec<&'a Claim>,
    chunk_ids: Vec<String>,
    chunk_texts: Vec<&'a str>,
}

fn parse_qa_line(text: &str) -> Option<(String, String)> {
    for line in text.lines() {
        let line = line.trim();
        let Some((left, right)) = line.split_once('|') else {
            continue;
        };
        let Some(q) = left.trim().strip_prefix("Question:") else {
            continue;
        };
        let Some(a) = right.trim().strip_prefix("Answer:") else {
            continue;
        };
        let (q, a) = (q.trim(), a.trim());
        if !q.is_empty() && !a.is_empty() {
            return Some((q.to_string(), a.to_string()));
        }
    }
    None
}

/// Generates one QA pair for a path. Entities are rendered with their
/// node's representative surface so merged junctions read coherently; the
/// gold answer must be short and concrete or the path is discarded.
pub fn generate_qa(
    path: &ReasoningPath,
    sources: &QaSources,
    gateway: &Gateway,
) -> Result<QaOutcome, QagenError> {
    let support = sources.supporting(path)?;
    let triples: Vec<String> = path
        .edges
        .iter()
        .map(|e| {
            format!(
                "({}|{}|{})",
                sources.graph.node(e.src).representative(),
                e.predicate,
                sources.graph.node(e.dst).representative()
            )
        })
        .collect();
    let claims: Vec<&str> = support.claims.iter().map(|c| c.text.as_str()).collect();
    let vars = BTreeMap::from([
        ("examples".to_string(), QA_EXAMPLES.to_string()),
        ("triples".to_string(), triples.join("\n")),
        ("claims".to_string(), claims.join("\n")),
        ("chunks".to_string(), support.chunk_texts.join("\n\n")),
    ]);
    let resp = gateway.complete(TemplateName::QaGeneration, &vars)?;
    let Some((question, answer)) = parse_qa_line(&resp.text) else {
        log::warn!("qa output for path {} did not parse: {:?}", path.key(), resp.text);
        return Ok(QaOutcome::Discarded {
            path_key: path.key(),
            reason: DiscardReason::QaParse,
        });
    };
    if answer.split_whitespace().count() > MAX_ANSWER_TOKENS {
        return Ok(QaOutcome::Discarded {
            path_key: path.key(),
            reason: DiscardReason::AnswerTooLong,
        });
    }
    Ok(QaOutcome::Generated(Box::new(QAPair {
        id: format!("qa-{}", short_hash(&path.key())),
        question,
        answer,
        hop_count: path.hop_count(),
        supporting_claim_ids: support.claims.iter().map(|c| c.id.clone()).collect(),
        supporting_chunk_ids: support.chunk_ids,
        uses_mirrored: path.uses_mirrored(),
        uses_merged: path.uses_merged(),
        validated: false,
        path: path.clone(),
    })))
}

/// Marks the pair validated iff the ambiguity check answers True. An
/// unparseable verdict counts as not validated.
pub fn validate_qa(qa: &mut QAPair, gateway: &Gateway) -> Result<(), QagenError> {
    let vars = BTreeMap::from([
        ("question".to_string(), qa.question.clone()),
        ("answer".to_string(), qa.answer.clone()),
    ]);
    let resp = gateway.complete(TemplateName::QaValidation, &vars)?;
    qa.validated = match parse_true_false(&resp.text) {
        Some(v) => v,
        None => {
            log::warn!(
                "validation verdict for {} did not parse: {:?}",
                qa.id,
                resp.text
            );
            false
        }
    };
    Ok(())
}
