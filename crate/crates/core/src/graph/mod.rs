//! Knowledge graph construction. Claims become subject/predicate/object
//! triples via a batched extraction prompt; triples become a directed graph
//! whose nodes merge entity mentions that are textually identical after
//! case folding and whitespace collapsing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::claims::Claim;
use crate::gateway::{Gateway, GatewayError, TemplateName};
use crate::normalize::entity_key;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("triple extraction batch too large: {0} claims (limit 10)")]
    BatchTooLarge(usize),
    #[error("graph deserialization failed: {0}")]
    Load(#[from] serde_json::Error),
    #[error("edge references missing node {0:?}")]
    DanglingEdge(NodeId),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub sentence_id: String,
    pub claim_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Extracted directly from a claim.
    Extracted,
    /// Copied onto an equivalent entity during augmentation.
    Mirrored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: NodeId,
    /// Case-folded, whitespace-collapsed key; unique across the graph.
    pub canonical: String,
    /// Observed surface forms with occurrence counts.
    pub surfaces: BTreeMap<String, u32>,
}

impl Entity {
    /// Display form: the most frequent surface, ties broken lexicographically.
    pub fn representative(&self) -> &str {
        self.surfaces
            .iter()
            .max_by(|(sa, ca), (sb, cb)| ca.cmp(cb).then(sb.cmp(sa)))
            .map(|(s, _)| s.as_str())
            .unwrap_or(&self.canonical)
    }

    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        self.surfaces.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub predicate: String,
    pub claim_id: String,
    pub provenance: Provenance,
    /// Surface forms the endpoints had in the originating claim; these keep
    /// track of which connections only exist because of entity merging.
    pub src_surface: String,
    pub dst_surface: String,
}

impl Edge {
    fn dedup_key(&self) -> (NodeId, NodeId, String, String) {
        (
            self.src,
            self.dst,
            self.predicate.clone(),
            self.claim_id.clone(),
        )
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "GraphRepr", into = "GraphRepr")]
pub struct KnowledgeGraph {
    nodes: Vec<Entity>,
    edges: Vec<Edge>,
    by_canonical: BTreeMap<String, NodeId>,
    by_surface: BTreeMap<String, NodeId>,
    edge_keys: BTreeSet<(NodeId, NodeId, String, String)>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<Entity>,
    edges: Vec<Edge>,
}

impl From<GraphRepr> for KnowledgeGraph {
    fn from(repr: GraphRepr) -> Self {
        let mut g = KnowledgeGraph {
            nodes: repr.nodes,
            edges: repr.edges,
            ..KnowledgeGraph::default()
        };
        g.rebuild_indexes();
        g
    }
}

impl From<KnowledgeGraph> for GraphRepr {
    fn from(g: KnowledgeGraph) -> Self {
        GraphRepr {
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        KnowledgeGraph::default()
    }

    pub fn nodes(&self) -> &[Entity] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> &Entity {
        &self.nodes[id.0 as usize]
    }

    fn rebuild_indexes(&mut self) {
        self.by_canonical = self
            .nodes
            .iter()
            .map(|n| (n.canonical.clone(), n.id))
            .collect();
        self.by_surface.clear();
        for n in &self.nodes {
            for s in n.surfaces.keys() {
                self.by_surface.insert(entity_key(s), n.id);
            }
        }
        self.edge_keys = self.edges.iter().map(Edge::dedup_key).collect();
    }

    /// Node for a surface form, creating it if the canonical key is new.
    pub fn ensure_node(&mut self, surface: &str) -> NodeId {
        let key = entity_key(surface);
        let id = match self.by_canonical.get(&key) {
            Some(&id) => id,
            None => {
                let id = NodeId(self.nodes.len() as u32);
                self.nodes.push(Entity {
                    id,
                    canonical: key.clone(),
                    surfaces: BTreeMap::new(),
                });
                self.by_canonical.insert(key.clone(), id);
                id
            }
        };
        *self.nodes[id.0 as usize]
            .surfaces
            .entry(surface.trim().to_string())
            .or_insert(0) += 1;
        self.by_surface.insert(key, id);
        id
    }

    /// Inserts a fully-formed node during graph rebuilds. The canonical key
    /// must be unique.
    pub fn insert_node(&mut self, canonical: String, surfaces: BTreeMap<String, u32>) -> NodeId {
        debug_assert!(
            !self.by_canonical.contains_key(&canonical),
            "duplicate canonical key {canonical}"
        );
        let id = NodeId(self.nodes.len() as u32);
        for s in surfaces.keys() {
            self.by_surface.insert(entity_key(s), id);
        }
        self.by_canonical.insert(canonical.clone(), id);
        self.nodes.push(Entity {
            id,
            canonical,
            surfaces,
        });
        id
    }

    /// Adds an edge unless an edge with the same (src, dst, predicate,
    /// claim) already exists, regardless of provenance.
    pub fn add_edge(&mut self, edge: Edge) -> bool {
        debug_assert!((edge.src.0 as usize) < self.nodes.len());
        debug_assert!((edge.dst.0 as usize) < self.nodes.len());
        if self.edge_keys.insert(edge.dedup_key()) {
            self.edges.push(edge);
            true
        } else {
            false
        }
    }

    /// Looks a surface form up across every node's recorded surfaces.
    pub fn resolve_surface(&self, surface: &str) -> Option<NodeId> {
        self.by_surface.get(&entity_key(surface)).copied()
    }

    /// Outgoing edge indices per node.
    pub fn out_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            adj[e.src.0 as usize].push(i);
        }
        adj
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GraphRepr {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        })
        .expect("graph serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, GraphError> {
        let repr: GraphRepr = serde_json::from_str(json)?;
        let g: KnowledgeGraph = repr.into();
        for e in &g.edges {
            if e.src.0 as usize >= g.nodes.len() {
                return Err(GraphError::DanglingEdge(e.src));
            }
            if e.dst.0 as usize >= g.nodes.len() {
                return Err(GraphError::DanglingEdge(e.dst));
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TripleParseReport {
    pub parsed: usize,
    pub skipped_unparseable: usize,
    pub skipped_bad_index: usize,
    pub skipped_duplicates: usize,
}

/// Parses model output lines of the form
/// `(source_entity|relationship|target_entity|sentence_id)` where the id is
/// a 1-based index into `batch`. Malformed lines and out-of-range indices
/// are skipped and counted; exact and reversed duplicates from the same
/// claim are dropped.
pub fn parse_triples(output: &str, batch: &[&Claim]) -> (Vec<Triple>, TripleParseReport) {
    let mut triples = Vec::new();
    let mut report = TripleParseReport::default();
    let mut seen: BTreeSet<(String, String, String, usize)> = BTreeSet::new();
    for line in output.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(inner) = line.strip_prefix('(').and_then(|l| l.strip_suffix(')')) else {
            report.skipped_unparseable += 1;
            continue;
        };
        let parts: Vec<&str> = inner.split('|').collect();
        if parts.len() != 4 {
            report.skipped_unparseable += 1;
            continue;
        }
        let subject = parts[0].trim();
        let predicate = parts[1].trim();
        let object = parts[2].trim();
        if subject.is_empty() || predicate.is_empty() || object.is_empty() {
            report.skipped_unparseable += 1;
            continue;
        }
        let index: usize = match parts[3].trim().parse() {
            Ok(i) => i,
            Err(_) => {
                report.skipped_unparseable += 1;
                continue;
            }
        };
        if index == 0 || index > batch.len() {
            report.skipped_bad_index += 1;
            continue;
        }
        // Keys are (endpoint, endpoint, predicate, index); probing both
        // endpoint orders catches exact and reversed repeats alike.
        let forward_key = (
            subject.to_string(),
            object.to_string(),
            predicate.to_string(),
            index,
        );
        let reversed_key = (
            object.to_string(),
            subject.to_string(),
            predicate.to_string(),
            index,
        );
        if seen.contains(&forward_key) || seen.contains(&reversed_key) {
            report.skipped_duplicates += 1;
            continue;
        }
        let claim = batch[index - 1];
        triples.push(Triple {
            subject: forward_key.0.clone(),
            predicate: forward_key.2.clone(),
            object: forward_key.1.clone(),
            sentence_id: claim.sentence_id.clone(),
            claim_id: claim.id.clone(),
        });
        seen.insert(forward_key);
        report.parsed += 1;
    }
    (triples, report)
}

/// Extracts triples for up to 10 claims in one model call.
pub fn extract_triples(
    batch: &[&Claim],
    gateway: &Gateway,
) -> Result<(Vec<Triple>, TripleParseReport), GraphError> {
    if batch.len() > 10 {
        return Err(GraphError::BatchTooLarge(batch.len()));
    }
    if batch.is_empty() {
        return Ok((Vec::new(), TripleParseReport::default()));
    }
    let sentences: Vec<String> = batch
        .iter()
        .enumerate()
        .map(|(i, c)| format!("Sentence {}: {}", i + 1, c.text))
        .collect();
    let vars = [("sentences".to_string(), sentences.join("\n"))]
        .into_iter()
        .collect();
    let resp = gateway.complete(TemplateName::TripleExtraction, &vars)?;
    Ok(parse_triples(&resp.text, batch))
}

/// Builds the graph as a deterministic fold over sorted triples, so any
/// permutation of the same triple set yields an identical graph, node ids
/// included. Entity mentions merge when their canonical keys match.
pub fn build_graph(triples: &[Triple]) -> KnowledgeGraph {
    let mut sorted: Vec<&Triple> = triples.iter().collect();
    sorted.sort_by(|a, b| {
        (
            entity_key(&a.subject),
            &a.predicate,
            entity_key(&a.object),
            &a.claim_id,
            &a.sentence_id,
        )
            .cmp(&(
                entity_key(&b.subject),
                &b.predicate,
                entity_key(&b.object),
                &b.claim_id,
                &b.sentence_id,
            ))
    });
    let mut g = KnowledgeGraph::new();
    for t in sorted {
        let src = g.ensure_node(&t.subject);
        let dst = g.ensure_node(&t.object);
        g.add_edge(Edge {
            src,
            dst,
            predicate: t.predicate.clone(),
            claim_id: t.claim_id.clone(),
            provenance: Provenance::Extracted,
            src_surface: t.subject.trim().to_string(),
            dst_surface: t.object.trim().to_string(),
        });
    }
    g
}
