//! Missing-link augmentation: claims are soft-clustered by embedding, an
//! LLM proposes entity equivalences within each cluster, and the graph is
//! rewritten so exact equivalents merge into one canonical node while
//! contextual equivalents exchange mirrored copies of their in-cluster
//! edges.

pub mod gmm;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::claims::Claim;
use crate::gateway::{Gateway, GatewayError, TemplateName};
use crate::graph::{Edge, KnowledgeGraph, NodeId, Provenance, Triple};
use crate::normalize::entity_key;

pub use gmm::{
    assign, bic, default_component_count, fit_gmm, select_k_bic, ClusterAssignment, GmmError,
    GmmModel,
};

/// Shown to the model before the cluster's triples; the two lines mirror
/// the instruction examples so the output shape is unambiguous.
pub const EQUIVALENCE_EXAMPLES: &str =
    "[USA|United States] \"always\"\n[study co-author|microplastics researcher] \"context\"";

const SENTINEL: &str = "No identical entities found.";

/// Clusters with more triples than this are split into overlapping
/// sub-batches (stride 30) so boundary-spanning pairs still co-occur.
const BATCH_WINDOW: usize = 40;
const BATCH_STRIDE: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivalenceKind {
    /// Same referent in any context; members merge into one node.
    Exact,
    /// Same referent only within the cluster; members mirror edges.
    Contextual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceGroup {
    pub cluster_id: usize,
    /// Distinct entity surface strings, sorted; always at least two.
    pub members: Vec<String>,
    pub kind: EquivalenceKind,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LinkReport {
    pub clusters_processed: usize,
    pub clusters_skipped_small: usize,
    pub exact_groups: usize,
    pub contextual_groups: usize,
    pub unparseable_lines: usize,
    pub dropped_members: usize,
}

enum ParsedLine {
    Group(Vec<String>, EquivalenceKind),
    Sentinel,
    Unparseable,
}

fn parse_equivalence_line(line: &str) -> ParsedLine {
    let line = line.trim();
    if line == SENTINEL {
        return ParsedLine::Sentinel;
    }
    let Some(rest) = line.strip_prefix('[') else {
        return ParsedLine::Unparseable;
    };
    let Some(close) = rest.find(']') else {
        return ParsedLine::Unparseable;
    };
    let members: Vec<String> = rest[..close]
        .split('|')
        .map(|m| m.trim().to_string())
        .collect();
    if members.len() < 2 || members.iter().any(String::is_empty) {
        return ParsedLine::Unparseable;
    }
    let kind = match rest[close + 1..].trim() {
        "\"always\"" => EquivalenceKind::Exact,
        "\"context\"" => EquivalenceKind::Contextual,
        _ => return ParsedLine::Unparseable,
    };
    ParsedLine::Group(members, kind)
}

fn sub_batches(len: usize) -> Vec<(usize, usize)> {
    if len <= BATCH_WINDOW {
        return vec![(0, len)];
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        if start + BATCH_WINDOW >= len {
            out.push((start, len));
            return out;
        }
        out.push((start, start + BATCH_WINDOW));
        start += BATCH_STRIDE;
    }
}

/// Runs the equivalence prompt over one cluster's triples and parses the
/// proposed groups. Members that never appear as an entity in the
/// cluster's triples are dropped with a warning; groups shrinking below
/// two members are discarded.
pub fn detect_equivalences(
    cluster_id: usize,
    triples: &[&Triple],
    claim_texts: &BTreeMap<&str, &str>,
    gateway: &Gateway,
) -> Result<(Vec<EquivalenceGroup>, LinkReport), AugmentError> {
    let mut report = LinkReport::default();
    let mut known = BTreeSet::new();
    for t in triples {
        known.insert(entity_key(&t.subject));
        known.insert(entity_key(&t.object));
    }
    let mut seen = BTreeSet::new();
    let mut groups = Vec::new();
    for (start, end) in sub_batches(triples.len()) {
        let pairs: Vec<String> = triples[start..end]
            .iter()
            .map(|t| {
                let claim = claim_texts.get(t.claim_id.as_str()).copied().unwrap_or("");
                format!(
                    "Triple: ({}|{}|{})\nClaim: {}",
                    t.subject, t.predicate, t.object, claim
                )
            })
            .collect();
        let vars = BTreeMap::from([
            ("examples".to_string(), EQUIVALENCE_EXAMPLES.to_string()),
            ("pairs".to_string(), pairs.join("\n")),
        ]);
        let resp = gateway.complete(TemplateName::EquivalenceSearch, &vars)?;
        for line in resp.text.lines().filter(|l| !l.trim().is_empty()) {
            match parse_equivalence_line(line) {
                ParsedLine::Sentinel => {}
                ParsedLine::Unparseable => {
                    log::warn!("cluster {cluster_id}: unparseable equivalence line {line:?}");
                    report.unparseable_lines += 1;
                }
                ParsedLine::Group(raw_members, kind) => {
                    let mut members = BTreeSet::new();
                    for m in raw_members {
                        if known.contains(&entity_key(&m)) {
                            members.insert(m);
                        } else {
                            log::warn!(
                                "cluster {cluster_id}: dropping member {m:?} absent from triples"
                            );
                            report.dropped_members += 1;
                        }
                    }
                    if members.len() < 2 {
                        continue;
                    }
                    let members: Vec<String> = members.into_iter().collect();
                    if seen.insert((members.clone(), kind)) {
                        match kind {
                            EquivalenceKind::Exact => report.exact_groups += 1,
                            EquivalenceKind::Contextual => report.contextual_groups += 1,
                        }
                        groups.push(EquivalenceGroup {
                            cluster_id,
                            members,
                            kind,
                        });
                    }
                }
            }
        }
    }
    report.clusters_processed = 1;
    Ok((groups, report))
}

/// Runs equivalence detection across every cluster with at least two
/// member claims. Cluster membership is soft, so one claim may contribute
/// its triples to several clusters.
pub fn link_clusters(
    assignments: &[ClusterAssignment],
    claims: &[Claim],
    triples: &[Triple],
    k: usize,
    gateway: &Gateway,
) -> Result<(Vec<EquivalenceGroup>, LinkReport), AugmentError> {
    let claim_texts: BTreeMap<&str, &str> = claims
        .iter()
        .map(|c| (c.id.as_str(), c.text.as_str()))
        .collect();
    let mut cluster_claims: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); k];
    for a in assignments {
        for &c in &a.memberships {
            cluster_claims[c].insert(a.claim_id.as_str());
        }
    }
    let mut all_groups = Vec::new();
    let mut total = LinkReport::default();
    for (cluster_id, members) in cluster_claims.iter().enumerate() {
        if members.len() < 2 {
            total.clusters_skipped_small += 1;
            continue;
        }
        let cluster_triples: Vec<&Triple> = triples
            .iter()
            .filter(|t| members.contains(t.claim_id.as_str()))
            .collect();
        if cluster_triples.is_empty() {
            total.clusters_skipped_small += 1;
            continue;
        }
        let (groups, report) =
            detect_equivalences(cluster_id, &cluster_triples, &claim_texts, gateway)?;
        total.clusters_processed += report.clusters_processed;
        total.exact_groups += report.exact_groups;
        total.contextual_groups += report.contextual_groups;
        total.unparseable_lines += report.unparseable_lines;
        total.dropped_members += report.dropped_members;
        all_groups.extend(groups);
    }
    Ok((all_groups, total))
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AugmentReport {
    pub nodes_merged_away: usize,
    pub exact_groups_applied: usize,
    pub contextual_groups_applied: usize,
    pub mirrored_edges_added: usize,
    pub unresolved_members: usize,
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Applies equivalence groups to the graph. Exact groups are closed
/// transitively across clusters via union-find and merged into canonical
/// nodes (surfaces unioned, edges re-pointed, duplicates collapsed).
/// Contextual groups then copy each member's in-cluster edges onto every
/// other member as provenance=mirrored edges; copies that would form a
/// self-loop are skipped. The whole rewrite is a deterministic fold over
/// sorted groups and is idempotent.
pub fn augment_graph(
    kg: &KnowledgeGraph,
    groups: &[EquivalenceGroup],
    assignments: &[ClusterAssignment],
) -> (KnowledgeGraph, AugmentReport) {
    let mut report = AugmentReport::default();
    let mut sorted: Vec<&EquivalenceGroup> = groups.iter().collect();
    sorted.sort_by(|a, b| {
        (a.cluster_id, &a.members, a.kind).cmp(&(b.cluster_id, &b.members, b.kind))
    });

    // Phase 1: exact merges.
    let mut uf = UnionFind::new(kg.nodes().len());
    for g in sorted.iter().filter(|g| g.kind == EquivalenceKind::Exact) {
        let mut resolved = Vec::new();
        for m in &g.members {
            match kg.resolve_surface(m) {
                Some(id) => resolved.push(id),
                None => {
                    log::warn!("exact group member {m:?} does not resolve to a node; skipping");
                    report.unresolved_members += 1;
                }
            }
        }
        if resolved.len() >= 2 {
            report.exact_groups_applied += 1;
            for pair in resolved.windows(2) {
                uf.union(pair[0].0 as usize, pair[1].0 as usize);
            }
        }
    }

    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..kg.nodes().len() {
        classes.entry(uf.find(i)).or_default().push(i);
    }
    report.nodes_merged_away = kg.nodes().len() - classes.len();

    // Rebuild nodes: one per class, canonical key from the representative
    // surface (most frequent, ties lexicographically smallest).
    let mut class_specs: Vec<(String, BTreeMap<String, u32>, Vec<usize>)> = classes
        .into_values()
        .map(|members| {
            let mut surfaces: BTreeMap<String, u32> = BTreeMap::new();
            for &m in &members {
                for (s, c) in &kg.nodes()[m].surfaces {
                    *surfaces.entry(s.clone()).or_insert(0) += c;
                }
            }
            let representative = surfaces
                .iter()
                .max_by(|(sa, ca), (sb, cb)| ca.cmp(cb).then(sb.cmp(sa)))
                .map(|(s, _)| s.clone())
                .unwrap_or_default();
            (entity_key(&representative), surfaces, members)
        })
        .collect();
    class_specs.sort_by(|a, b| a.0.cmp(&b.0));

    let mut remap = vec![NodeId(0); kg.nodes().len()];
    let mut out = KnowledgeGraph::new();
    for (canonical, surfaces, members) in class_specs {
        let id = out.insert_node(canonical, surfaces);
        for m in members {
            remap[m] = id;
        }
    }
    for e in kg.edges() {
        out.add_edge(Edge {
            src: remap[e.src.0 as usize],
            dst: remap[e.dst.0 as usize],
            ..e.clone()
        });
    }

    // Phase 2: contextual mirroring, restricted to edges whose claim
    // belongs to the group's cluster.
    let mut cluster_claims: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for a in assignments {
        for &c in &a.memberships {
            cluster_claims
                .entry(c)
                .or_default()
                .insert(a.claim_id.as_str());
        }
    }
    let empty = BTreeSet::new();
    for g in sorted
        .iter()
        .filter(|g| g.kind == EquivalenceKind::Contextual)
    {
        let in_cluster = cluster_claims.get(&g.cluster_id).unwrap_or(&empty);
        let mut members: Vec<(NodeId, &str)> = Vec::new();
        for m in &g.members {
            match out.resolve_surface(m) {
                Some(id) if !members.iter().any(|(n, _)| *n == id) => {
                    members.push((id, m.as_str()))
                }
                Some(_) => {}
                None => {
                    log::warn!(
                        "contextual group member {m:?} does not resolve to a node; skipping"
                    );
                    report.unresolved_members += 1;
                }
            }
        }
        if members.len() < 2 {
            continue;
        }
        report.contextual_groups_applied += 1;
        let snapshot: Vec<Edge> = out.edges().to_vec();
        for &(from, _) in &members {
            for &(to, to_surface) in &members {
                if from == to {
                    continue;
                }
                for e in snapshot
                    .iter()
                    .filter(|e| in_cluster.contains(e.claim_id.as_str()))
                {
                    let copy = if e.src == from && e.dst != to {
                        Some(Edge {
                            src: to,
                            dst: e.dst,
                            predicate: e.predicate.clone(),
                            claim_id: e.claim_id.clone(),
                            provenance: Provenance::Mirrored,
                            src_surface: to_surface.to_string(),
                            dst_surface: e.dst_surface.clone(),
                        })
                    } else if e.dst == from && e.src != to {
                        Some(Edge {
                            src: e.src,
                            dst: to,
                            predicate: e.predicate.clone(),
                            claim_id: e.claim_id.clone(),
                            provenance: Provenance::Mirrored,
                            src_surface: e.src_surface.clone(),
                            dst_surface: to_surface.to_string(),
                        })
                    } else {
                        None
                    };
                    if let Some(copy) = copy {
                        if out.add_edge(copy) {
                            report.mirrored_edges_added += 1;
                        }
                    }
                }
            }
        }
    }

    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GatewayOptions, MockChatProvider, MockEmbeddingProvider};
    use crate::graph::build_graph;

    fn mock_gateway() -> Gateway {
        Gateway::new(
            Box::new(MockChatProvider::new()),
            Box::new(MockEmbeddingProvider::default()),
            None,
            GatewayOptions::default(),
        )
    }

    fn triple(s: &str, p: &str, o: &str, claim: &str) -> Triple {
        Triple {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
            sentence_id: format!("{claim}:s"),
            claim_id: claim.into(),
        }
    }

    fn assignment(claim: &str, clusters: &[usize]) -> ClusterAssignment {
        ClusterAssignment {
            claim_id: claim.into(),
            responsibilities: Vec::new(),
            memberships: clusters.to_vec(),
        }
    }

    #[test]
    fn parses_group_lines_and_sentinel() {
        match parse_equivalence_line("[USA|United States] \"always\"") {
            ParsedLine::Group(m, EquivalenceKind::Exact) => {
                assert_eq!(m, vec!["USA", "United States"]);
            }
            _ => panic!("expected exact group"),
        }
        match parse_equivalence_line("  [the Biden administration|the U.S. government] \"context\"") {
            ParsedLine::Group(m, EquivalenceKind::Contextual) => assert_eq!(m.len(), 2),
            _ => panic!("expected contextual group"),
        }
        assert!(matches!(
            parse_equivalence_line("No identical entities found."),
            ParsedLine::Sentinel
        ));
        for bad in [
            "USA|United States \"always\"",
            "[USA] \"always\"",
            "[USA|United States] always",
            "[USA|United States] \"sometimes\"",
            "[|x] \"always\"",
        ] {
            assert!(
                matches!(parse_equivalence_line(bad), ParsedLine::Unparseable),
                "{bad:?} should be unparseable"
            );
        }
    }

    #[test]
    fn sub_batches_overlap_long_clusters() {
        assert_eq!(sub_batches(10), vec![(0, 10)]);
        assert_eq!(sub_batches(40), vec![(0, 40)]);
        assert_eq!(sub_batches(100), vec![(0, 40), (30, 70), (60, 100)]);
        for w in sub_batches(205).windows(2) {
            assert!(w[0].1 > w[1].0, "windows must overlap: {w:?}");
        }
    }

    #[test]
    fn detected_members_must_appear_in_cluster_triples() {
        let gw = mock_gateway();
        let t1 = triple("USA", "hosts", "Trade Summit", "c1");
        let t2 = triple("United States", "signed with", "Canada", "c2");
        let triples = vec![&t1, &t2];
        let claim_texts: BTreeMap<&str, &str> =
            BTreeMap::from([("c1", "USA hosts Trade Summit."), ("c2", "United States signed with Canada.")]);
        let (groups, report) = detect_equivalences(0, &triples, &claim_texts, &gw).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].kind, EquivalenceKind::Exact);
        assert_eq!(groups[0].members, vec!["USA", "United States"]);
        assert_eq!(report.exact_groups, 1);
        assert_eq!(report.dropped_members, 0);
    }

    #[test]
    fn contextual_pairs_come_from_token_overlap() {
        let gw = mock_gateway();
        let t1 = triple("Marine Biology Institute", "funds", "Reef Survey", "c1");
        let t2 = triple("Biology Institute", "employs", "Divers", "c2");
        let triples = vec![&t1, &t2];
        let claim_texts: BTreeMap<&str, &str> = BTreeMap::from([
            ("c1", "Marine Biology Institute funds Reef Survey."),
            ("c2", "Biology Institute employs Divers."),
        ]);
        let (groups, _) = detect_equivalences(3, &triples, &claim_texts, &gw).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].kind, EquivalenceKind::Contextual);
        assert_eq!(groups[0].cluster_id, 3);
    }

    #[test]
    fn exact_merge_collapses_nodes_and_keeps_edges() {
        let triples = vec![
            triple("USA", "hosts", "Trade Summit", "c1"),
            triple("United States", "signed with", "Canada", "c2"),
        ];
        let kg = build_graph(&triples);
        assert_eq!(kg.nodes().len(), 4);
        let groups = vec![EquivalenceGroup {
            cluster_id: 0,
            members: vec!["USA".into(), "United States".into()],
            kind: EquivalenceKind::Exact,
        }];
        let (merged, report) = augment_graph(&kg, &groups, &[]);
        assert_eq!(report.nodes_merged_away, 1);
        assert_eq!(merged.nodes().len(), 3);
        assert_eq!(merged.edges().len(), 2);
        let node = merged.resolve_surface("USA").unwrap();
        assert_eq!(node, merged.resolve_surface("United States").unwrap());
        assert_eq!(merged.node(node).representative(), "USA");
        let out_preds: Vec<&str> = merged
            .edges()
            .iter()
            .filter(|e| e.src == node)
            .map(|e| e.predicate.as_str())
            .collect();
        assert_eq!(out_preds.len(), 2);
        // A 2-hop path through the merged node now exists where none did.
        let summit = merged.resolve_surface("Trade Summit").unwrap();
        let canada = merged.resolve_surface("Canada").unwrap();
        assert!(merged
            .edges()
            .iter()
            .any(|e| e.src == node && e.dst == summit));
        assert!(merged
            .edges()
            .iter()
            .any(|e| e.src == node && e.dst == canada));
    }

    #[test]
    fn contextual_mirroring_respects_cluster_boundaries() {
        let triples = vec![
            triple("Alice", "joined", "Acme", "c1"),
            triple("Bob", "left", "Acme", "c2"),
        ];
        let kg = build_graph(&triples);
        let groups = vec![EquivalenceGroup {
            cluster_id: 0,
            members: vec!["Alice".into(), "Bob".into()],
            kind: EquivalenceKind::Contextual,
        }];
        // c1 is in cluster 0; c2 is not.
        let assignments = vec![assignment("c1", &[0]), assignment("c2", &[1])];
        let (augmented, report) = augment_graph(&kg, &groups, &assignments);
        assert_eq!(report.mirrored_edges_added, 1);
        assert_eq!(augmented.edges().len(), 3);
        let bob = augmented.resolve_surface("Bob").unwrap();
        let alice = augmented.resolve_surface("Alice").unwrap();
        let mirrored: Vec<&Edge> = augmented
            .edges()
            .iter()
            .filter(|e| e.provenance == Provenance::Mirrored)
            .collect();
        assert_eq!(mirrored.len(), 1);
        assert_eq!(mirrored[0].src, bob);
        assert_eq!(mirrored[0].predicate, "joined");
        assert_eq!(mirrored[0].claim_id, "c1");
        assert_eq!(mirrored[0].src_surface, "Bob");
        // Bob's own edge came from an out-of-cluster claim, so Alice gains
        // nothing.
        assert!(!augmented
            .edges()
            .iter()
            .any(|e| e.src == alice && e.predicate == "left"));
    }

    #[test]
    fn mirroring_is_symmetric_within_the_cluster() {
        let triples = vec![
            triple("Alpha Fund", "backs", "SolarCo", "c1"),
            triple("Alpha Fund", "exited", "WindCo", "c2"),
            triple("Beta Fund", "backs", "HydroCo", "c3"),
            triple("City Council", "audited", "Alpha Fund", "c4"),
        ];
        let kg = build_graph(&triples);
        let groups = vec![EquivalenceGroup {
            cluster_id: 0,
            members: vec!["Alpha Fund".into(), "Beta Fund".into()],
            kind: EquivalenceKind::Contextual,
        }];
        let assignments: Vec<ClusterAssignment> = ["c1", "c2", "c3", "c4"]
            .iter()
            .map(|c| assignment(c, &[0]))
            .collect();
        let (augmented, _) = augment_graph(&kg, &groups, &assignments);
        let profile = |surface: &str| -> Vec<(String, NodeId, bool)> {
            let id = augmented.resolve_surface(surface).unwrap();
            let mut v: Vec<(String, NodeId, bool)> = augmented
                .edges()
                .iter()
                .filter_map(|e| {
                    if e.src == id {
                        Some((e.predicate.clone(), e.dst, true))
                    } else if e.dst == id {
                        Some((e.predicate.clone(), e.src, false))
                    } else {
                        None
                    }
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(profile("Alpha Fund"), profile("Beta Fund"));
    }

    #[test]
    fn mirroring_never_creates_self_loops() {
        let triples = vec![
            triple("Alice", "mentored", "Bob", "c1"),
            triple("Bob", "thanked", "Alice", "c2"),
        ];
        let kg = build_graph(&triples);
        let groups = vec![EquivalenceGroup {
            cluster_id: 0,
            members: vec!["Alice".into(), "Bob".into()],
            kind: EquivalenceKind::Contextual,
        }];
        let assignments = vec![assignment("c1", &[0]), assignment("c2", &[0])];
        let (augmented, _) = augment_graph(&kg, &groups, &assignments);
        assert!(augmented.edges().iter().all(|e| e.src != e.dst));
    }

    #[test]
    fn augmentation_is_idempotent() {
        let triples = vec![
            triple("USA", "hosts", "Trade Summit", "c1"),
            triple("United States", "signed with", "Canada", "c2"),
            triple("Marine Biology Institute", "funds", "Reef Survey", "c3"),
            triple("Biology Institute", "employs", "Divers", "c4"),
        ];
        let kg = build_graph(&triples);
        let groups = vec![
            EquivalenceGroup {
                cluster_id: 0,
                members: vec!["USA".into(), "United States".into()],
                kind: EquivalenceKind::Exact,
            },
            EquivalenceGroup {
                cluster_id: 0,
                members: vec!["Biology Institute".into(), "Marine Biology Institute".into()],
                kind: EquivalenceKind::Contextual,
            },
        ];
        let assignments: Vec<ClusterAssignment> = ["c1", "c2", "c3", "c4"]
            .iter()
            .map(|c| assignment(c, &[0]))
            .collect();
        let (once, _) = augment_graph(&kg, &groups, &assignments);
        let (twice, report2) = augment_graph(&once, &groups, &assignments);
        assert_eq!(once.to_json(), twice.to_json());
        assert_eq!(report2.mirrored_edges_added, 0);
        assert_eq!(report2.nodes_merged_away, 0);
    }

    #[test]
    fn unresolved_members_are_skipped_not_fatal() {
        let triples = vec![triple("Alice", "joined", "Acme", "c1")];
        let kg = build_graph(&triples);
        let groups = vec![EquivalenceGroup {
            cluster_id: 0,
            members: vec!["Alice".into(), "Nobody Known".into()],
            kind: EquivalenceKind::Exact,
        }];
        let (augmented, report) = augment_graph(&kg, &groups, &[]);
        assert_eq!(report.unresolved_members, 1);
        assert_eq!(report.exact_groups_applied, 0);
        assert_eq!(augmented.nodes().len(), kg.nodes().len());
    }

    #[test]
    fn link_clusters_skips_singleton_clusters() {
        let gw = mock_gateway();
        let claims: Vec<Claim> = [
            ("c1", "USA hosts Trade Summit."),
            ("c2", "United States signed with Canada."),
            ("c3", "Lone claim here."),
        ]
        .iter()
        .map(|(id, text)| Claim {
            id: (*id).into(),
            sentence_id: format!("{id}:s"),
            article_id: "a1".into(),
            text: (*text).into(),
            verified: true,
            drop_reason: None,
            embedding: Vec::new(),
        })
        .collect();
        let triples = vec![
            triple("USA", "hosts", "Trade Summit", "c1"),
            triple("United States", "signed with", "Canada", "c2"),
            triple("Loner", "opened", "Shop", "c3"),
        ];
        let assignments = vec![
            assignment("c1", &[0]),
            assignment("c2", &[0]),
            assignment("c3", &[1]),
        ];
        let (groups, report) = link_clusters(&assignments, &claims, &triples, 2, &gw).unwrap();
        assert_eq!(report.clusters_processed, 1);
        assert_eq!(report.clusters_skipped_small, 1);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, vec!["USA", "United States"]);
    }
}
