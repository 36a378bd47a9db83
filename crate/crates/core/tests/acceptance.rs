//! Release gate. Each numbered check guards one advertised behavior and
//! prints its own PASS/FAIL line, so a single run of this suite reads as
//! the release checklist. Checks with a runtime budget fail when they
//! exceed it.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use grade_core::augment::gmm::{assign, fit_gmm, ClusterAssignment};
use grade_core::augment::{augment_graph, EquivalenceGroup, EquivalenceKind};
use grade_core::difficulty::{aggregate, bin_quartiles, Aggregator, DifficultyScore};
use grade_core::evalharness::{
    diagnostics, evaluate, fill_matrix, pearson, EvalSummary, RagRequest, RagSystem,
};
use grade_core::gateway::mock::{MockChatProvider, MockEmbeddingProvider};
use grade_core::gateway::{Gateway, GatewayOptions};
use grade_core::graph::{build_graph, KnowledgeGraph, Triple};
use grade_core::pipeline::{run_pipeline, Config};
use grade_core::qagen::{enumerate_paths, QAPair, ReasoningPath};
use grade_core::corpus::Chunk;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/news20.jsonl");

fn mock_gateway() -> Gateway {
    Gateway::new(
        Box::new(MockChatProvider::new()),
        Box::new(MockEmbeddingProvider::default()),
        None,
        GatewayOptions::default(),
    )
}

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(
    outcomes: &mut Vec<Outcome>,
    name: &'static str,
    budget: Option<Duration>,
    f: impl FnOnce(),
) {
    let start = Instant::now();
    let result = std::panic::catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(()) => match budget {
            Some(b) if elapsed > b => (
                false,
                format!("took {:.2}s, budget {:.0}s", elapsed.as_secs_f64(), b.as_secs_f64()),
            ),
            _ => (true, format!("{:.2}s", elapsed.as_secs_f64())),
        },
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| payload.downcast_ref::<&str>().copied())
                .unwrap_or("panic without message");
            (false, msg.lines().next().unwrap_or(msg).to_string())
        }
    };
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("{verdict}  {name}  [{detail}]");
    outcomes.push(Outcome { name, passed, detail });
}

#[test]
fn release_gate() {
    let mut outcomes = Vec::new();

    check(
        &mut outcomes,
        "01 aggregator-inequality-and-min-identity",
        Some(Duration::from_secs(5)),
        aggregator_inequality_and_min_identity,
    );
    check(&mut outcomes, "02 power-mean-spot-value", None, power_mean_spot_value);
    check(
        &mut outcomes,
        "03 gmm-em-properties",
        Some(Duration::from_secs(30)),
        gmm_em_properties,
    );
    check(
        &mut outcomes,
        "04 shortest-path-enumeration-oracle",
        Some(Duration::from_secs(60)),
        shortest_path_enumeration_oracle,
    );
    check(
        &mut outcomes,
        "05 augmentation-merge-and-mirror",
        None,
        augmentation_merge_and_mirror,
    );
    check(&mut outcomes, "06 quartile-binning", None, quartile_binning);
    check(&mut outcomes, "07 pearson-correlation-oracle", None, pearson_correlation_oracle);

    // The determinism check leaves its first run on disk for the accounting
    // check that follows.
    let keep_a = tempfile::tempdir().expect("tempdir");
    let keep_b = tempfile::tempdir().expect("tempdir");
    let out_a = keep_a.path().join("out");
    let out_b = keep_b.path().join("out");
    {
        let (out_a, out_b) = (out_a.clone(), out_b.clone());
        check(
            &mut outcomes,
            "08 end-to-end-determinism",
            Some(Duration::from_secs(120)),
            move || end_to_end_determinism(&out_a, &out_b),
        );
    }
    {
        let out_a = out_a.clone();
        check(
            &mut outcomes,
            "09 synthetic-difficulty-trend",
            None,
            synthetic_difficulty_trend,
        );
        check(
            &mut outcomes,
            "10 missing-link-accounting",
            None,
            move || missing_link_accounting(&out_a),
        );
    }

    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}

// -- 01 --------------------------------------------------------------------

fn aggregator_inequality_and_min_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let len = rng.gen_range(2..=16);
        // 1 - [0,1) lands in (0,1].
        let sims: Vec<f64> = (0..len).map(|_| 1.0 - rng.gen::<f64>()).collect();
        let d_min = aggregate(&sims, Aggregator::Min).unwrap();
        let d_pow = aggregate(&sims, Aggregator::PowerMean(-2.0)).unwrap();
        let d_mean = aggregate(&sims, Aggregator::Mean).unwrap();
        assert!(
            d_min >= d_pow && d_pow >= d_mean,
            "ordering violated: min {d_min} pow {d_pow} mean {d_mean} for {sims:?}"
        );
        let min = sims.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(d_min, 1.0 - min, "min aggregation must be exactly 1 - min(s)");
    }
}

// -- 02 --------------------------------------------------------------------

fn power_mean_spot_value() {
    // 1 - 2.5^(-1/2), evaluated independently at high precision.
    let expected = 0.367_544_467_966_324_1_f64;
    let got = aggregate(&[0.5, 1.0], Aggregator::PowerMean(-2.0)).unwrap();
    assert!(
        (got - expected).abs() < 1e-12,
        "pmean(-2) of {{0.5, 1.0}}: got {got}, want {expected}"
    );
}

// -- 03 --------------------------------------------------------------------

fn gmm_em_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..50u64 {
        let n = rng.gen_range(20..=200);
        let dim = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=4);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let model = fit_gmm(&points, k, case, 100, 1e-6).unwrap();
        for w in model.log_likelihood_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-7,
                "log-likelihood decreased: {} -> {} (case {case})",
                w[0],
                w[1]
            );
        }
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        for a in assign(&model, &points, &ids, 0.2).unwrap() {
            let total: f64 = a.responsibilities.iter().sum();
            assert!(
                (total - 1.0).abs() <= 1e-9,
                "responsibilities sum to {total} (case {case})"
            );
        }
    }

    // Two well-separated 1-D groups must be recovered across seeds.
    let points: Vec<Vec<f64>> = [0.0, 0.1, 10.0, 10.1].iter().map(|&v| vec![v]).collect();
    let ids: Vec<String> = (0..4).map(|i| format!("p{i}")).collect();
    let argmax = |a: &ClusterAssignment| {
        a.responsibilities
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .unwrap()
            .0
    };
    let mut recovered = 0;
    for seed in 0..10 {
        let model = fit_gmm(&points, 2, seed, 200, 1e-9).unwrap();
        let groups: Vec<usize> = assign(&model, &points, &ids, 0.5)
            .unwrap()
            .iter()
            .map(argmax)
            .collect();
        if groups[0] == groups[1] && groups[2] == groups[3] && groups[0] != groups[2] {
            recovered += 1;
        }
    }
    assert!(recovered >= 9, "two-group fixture recovered from {recovered}/10 seeds");
}

// -- 04 --------------------------------------------------------------------

fn shortest_path_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..120 {
        let n_nodes: u32 = rng.gen_range(4..=12);
        let target_edges = rng.gen_range(6..=30);
        let mut pairs = BTreeSet::new();
        for _ in 0..target_edges {
            let a = rng.gen_range(0..n_nodes);
            let b = rng.gen_range(0..n_nodes);
            if a != b {
                pairs.insert((a, b));
            }
        }
        let triples: Vec<Triple> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| Triple {
                subject: format!("n{a:02}"),
                predicate: "linked".into(),
                object: format!("n{b:02}"),
                sentence_id: format!("s:{i}"),
                claim_id: format!("c{i}"),
            })
            .collect();
        let kg = build_graph(&triples);
        let got: BTreeSet<Vec<u32>> = enumerate_paths(&kg, usize::MAX)
            .iter()
            .map(node_sequence)
            .collect();
        let want = brute_force_shortest(&kg);
        assert_eq!(got, want, "path sets differ on case {case}");
    }
}

fn node_sequence(path: &ReasoningPath) -> Vec<u32> {
    let mut seq = vec![path.edges[0].src.0];
    seq.extend(path.edges.iter().map(|e| e.dst.0));
    seq
}

/// Unpruned oracle: every simple path of length 2..=5, kept only when its
/// length equals the endpoint pair's BFS distance.
fn brute_force_shortest(kg: &KnowledgeGraph) -> BTreeSet<Vec<u32>> {
    let n = kg.nodes().len();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for e in kg.edges() {
        adj[e.src.0 as usize].insert(e.dst.0 as usize);
    }
    let mut out = BTreeSet::new();
    for start in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let mut path = vec![start];
        let mut visited = vec![false; n];
        visited[start] = true;
        walk(&adj, &dist, &mut path, &mut visited, &mut out);
    }
    out
}

fn walk(
    adj: &[BTreeSet<usize>],
    dist: &[usize],
    path: &mut Vec<usize>,
    visited: &mut [bool],
    out: &mut BTreeSet<Vec<u32>>,
) {
    let edges = path.len() - 1;
    if edges >= 2 && edges == dist[*path.last().unwrap()] {
        out.insert(path.iter().map(|&i| i as u32).collect());
    }
    if edges == 5 {
        return;
    }
    let u = *path.last().unwrap();
    for &v in &adj[u] {
        if !visited[v] {
            visited[v] = true;
            path.push(v);
            walk(adj, dist, path, visited, out);
            path.pop();
            visited[v] = false;
        }
    }
}

// -- 05 --------------------------------------------------------------------

fn augmentation_merge_and_mirror() {
    let t = |s: &str, p: &str, o: &str, sid: &str, cid: &str| Triple {
        subject: s.into(),
        predicate: p.into(),
        object: o.into(),
        sentence_id: sid.into(),
        claim_id: cid.into(),
    };
    // Eight nodes; c5 sits outside cluster 0 so its edge must not mirror.
    let triples = vec![
        t("Alder Works", "funds", "UK", "s:a", "c1"),
        t("United Kingdom", "approved", "Brookfield Depot", "s:b", "c2"),
        t("Dunmore College", "manages", "the North Yard", "s:c", "c3"),
        t("the North Yard Annex", "hosts", "Elm Market", "s:d", "c4"),
        t("Brookfield Depot", "supplies", "the North Yard", "s:e", "c5"),
    ];
    let kg = build_graph(&triples);
    assert_eq!(kg.nodes().len(), 8);

    let groups = vec![
        EquivalenceGroup {
            cluster_id: 0,
            members: vec!["UK".into(), "United Kingdom".into()],
            kind: EquivalenceKind::Exact,
        },
        EquivalenceGroup {
            cluster_id: 0,
            members: vec!["the North Yard".into(), "the North Yard Annex".into()],
            kind: EquivalenceKind::Contextual,
        },
    ];
    let member = |cid: &str, cluster: usize| ClusterAssignment {
        claim_id: cid.into(),
        responsibilities: vec![1.0],
        memberships: vec![cluster],
    };
    let assignments = vec![
        member("c1", 0),
        member("c2", 0),
        member("c3", 0),
        member("c4", 0),
        member("c5", 1),
    ];

    let (aug, report) = augment_graph(&kg, &groups, &assignments);

    let canonicals: Vec<&str> = aug.nodes().iter().map(|n| n.canonical.as_str()).collect();
    assert_eq!(
        canonicals,
        vec![
            "alder works",
            "brookfield depot",
            "dunmore college",
            "elm market",
            "the north yard",
            "the north yard annex",
            "uk",
        ]
    );
    let uk = &aug.nodes()[aug.resolve_surface("UK").unwrap().0 as usize];
    assert_eq!(uk.representative(), "UK");
    assert_eq!(
        uk.surfaces.iter().map(|(s, &c)| (s.as_str(), c)).collect::<Vec<_>>(),
        vec![("UK", 1), ("United Kingdom", 1)]
    );

    let got: BTreeSet<(String, String, String, String, String, String, String)> = aug
        .edges()
        .iter()
        .map(|e| {
            (
                aug.node(e.src).canonical.clone(),
                aug.node(e.dst).canonical.clone(),
                e.predicate.clone(),
                e.claim_id.clone(),
                format!("{:?}", e.provenance),
                e.src_surface.clone(),
                e.dst_surface.clone(),
            )
        })
        .collect();
    let s = String::from;
    let want: BTreeSet<_> = [
        (s("alder works"), s("uk"), s("funds"), s("c1"), s("Extracted"), s("Alder Works"), s("UK")),
        (s("uk"), s("brookfield depot"), s("approved"), s("c2"), s("Extracted"), s("United Kingdom"), s("Brookfield Depot")),
        (s("dunmore college"), s("the north yard"), s("manages"), s("c3"), s("Extracted"), s("Dunmore College"), s("the North Yard")),
        (s("dunmore college"), s("the north yard annex"), s("manages"), s("c3"), s("Mirrored"), s("Dunmore College"), s("the North Yard Annex")),
        (s("the north yard annex"), s("elm market"), s("hosts"), s("c4"), s("Extracted"), s("the North Yard Annex"), s("Elm Market")),
        (s("the north yard"), s("elm market"), s("hosts"), s("c4"), s("Mirrored"), s("the North Yard"), s("Elm Market")),
        (s("brookfield depot"), s("the north yard"), s("supplies"), s("c5"), s("Extracted"), s("Brookfield Depot"), s("the North Yard")),
    ]
    .into_iter()
    .collect();
    assert_eq!(got, want);
    assert_eq!(report.exact_groups_applied, 1);
    assert_eq!(report.nodes_merged_away, 1);

    // Second application over the already-augmented graph changes nothing.
    let (again, _) = augment_graph(&aug, &groups, &assignments);
    assert_eq!(aug.to_json(), again.to_json(), "augmentation must be idempotent");
}

// -- 06 --------------------------------------------------------------------

fn quartile_binning() {
    let score = |i: usize, hop: usize, value: f64| DifficultyScore {
        qa_id: format!("q{hop}-{i:02}"),
        hop,
        aggregator: "min".into(),
        similarities: vec![1.0 - value],
        score: value,
        bin: None,
    };
    // Insertion order deliberately scrambled; binning must sort.
    let mut scores = Vec::new();
    for (i, v) in [0.62, 0.11, 0.45, 0.83, 0.27, 0.74, 0.05, 0.91].iter().enumerate() {
        scores.push(score(i, 2, *v));
    }
    for (i, v) in [0.55, 0.13, 0.92, 0.38, 0.71, 0.02, 0.66, 0.29, 0.84, 0.47]
        .iter()
        .enumerate()
    {
        scores.push(score(i, 3, *v));
    }
    let matrix = bin_quartiles(&mut scores, true);

    let sizes = |hop: usize| -> Vec<usize> {
        let row = matrix.hops.iter().position(|&h| h == hop).unwrap();
        matrix.cells[row].iter().map(|c| c.count).collect()
    };
    assert_eq!(sizes(2), vec![2, 2, 2, 2]);
    assert_eq!(sizes(3), vec![3, 3, 2, 2]);
    assert_eq!(matrix.total_count(), 18);

    // Bin boundaries are ordered: nothing in bin b exceeds anything in b+1.
    for hop in [2, 3] {
        for b in 0..3 {
            let max_b = scores
                .iter()
                .filter(|s| s.hop == hop && s.bin == Some(b))
                .map(|s| s.score)
                .fold(f64::NEG_INFINITY, f64::max);
            let min_next = scores
                .iter()
                .filter(|s| s.hop == hop && s.bin == Some(b + 1))
                .map(|s| s.score)
                .fold(f64::INFINITY, f64::min);
            assert!(max_b <= min_next, "hop {hop}: bin {b} overlaps bin {}", b + 1);
        }
    }
}

// -- 07 --------------------------------------------------------------------

fn pearson_correlation_oracle() {
    assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
    assert_eq!(pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap(), -1.0);
    let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((r - 0.8).abs() < 1e-12, "got {r}, want 0.8");

    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for case in 0..1_000 {
        let len = rng.gen_range(3..=24);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let r = pearson(&x, &y).unwrap();
        let a = rng.gen_range(0.1..5.0);
        let b = rng.gen_range(-10.0..10.0);
        let c = rng.gen_range(0.1..5.0);
        let d = rng.gen_range(-10.0..10.0);
        let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let y2: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        let r2 = pearson(&x2, &y2).unwrap();
        assert!(
            (r - r2).abs() <= 1e-9,
            "affine transform moved r from {r} to {r2} (case {case})"
        );
    }
}

// -- 08 --------------------------------------------------------------------

fn write_fixture_config(workdir: &Path) -> PathBuf {
    let dir = workdir.parent().unwrap();
    let config = format!(
        r#"workdir = "{workdir}"

[corpus]
input = "{input}"
domain = "news"
min_tokens = 128
max_tokens = 2048
chunk_min = 48
chunk_max = 96
chunk_overlap = 24

[provider]
kind = "mock"

[clustering]
k = 2
tau = 0.15
seed = 7

[paths]
per_hop = 400
seed = 7

[difficulty]
aggregator = "min"
per_hop = true

[eval]
k = 10
"#,
        workdir = workdir.display(),
        input = FIXTURE,
    );
    let path = dir.join("grade.toml");
    std::fs::write(&path, config).expect("write config");
    path
}

fn run_fixture_pipeline(workdir: &Path) {
    let config = Config::load(&write_fixture_config(workdir)).expect("load config");
    run_pipeline(&config, &["all".to_string()], false).expect("pipeline run");
}

fn end_to_end_determinism(out_a: &Path, out_b: &Path) {
    run_fixture_pipeline(out_a);
    run_fixture_pipeline(out_b);
    for name in ["qa.jsonl", "matrix.csv", "summary.json"] {
        let a = std::fs::read(out_a.join(name)).expect(name);
        let b = std::fs::read(out_b.join(name)).expect(name);
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

// -- 09 --------------------------------------------------------------------

/// Answers with the gold string for a predetermined set of queries and an
/// unrelated string otherwise, so judged correctness follows a correctness
/// probability that decreases in true difficulty and hop count.
struct CalibratedRag {
    correct: BTreeSet<String>,
    gold: BTreeMap<String, String>,
}

impl RagSystem for CalibratedRag {
    fn id(&self) -> String {
        "calibrated-synthetic".into()
    }

    fn answer(&self, request: &RagRequest) -> Result<String, grade_core::evalharness::EvalError> {
        Ok(if self.correct.contains(request.qa_id) {
            self.gold[request.qa_id].clone()
        } else {
            "unresolved".to_string()
        })
    }
}

fn synthetic_difficulty_trend() {
    let per_hop = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    let mut scores = Vec::new();
    let mut qas = Vec::new();
    let mut correct = BTreeSet::new();
    let mut gold = BTreeMap::new();
    for hop in [2usize, 3, 4, 5] {
        for i in 0..per_hop {
            let difficulty = (i as f64 + 0.5) / per_hop as f64;
            let id = format!("q{hop}-{i:03}");
            scores.push(DifficultyScore {
                qa_id: id.clone(),
                hop,
                aggregator: "min".into(),
                similarities: vec![1.0 - difficulty],
                score: difficulty,
                bin: None,
            });
            let p_correct =
                (1.02 - 0.55 * difficulty - 0.13 * (hop as f64 - 2.0)).clamp(0.02, 0.99);
            if rng.gen::<f64>() < p_correct {
                correct.insert(id.clone());
            }
            let answer = format!("entity {id}");
            gold.insert(id.clone(), answer.clone());
            qas.push(QAPair {
                id: id.clone(),
                question: format!("synthetic question {id}"),
                answer,
                hop_count: hop,
                supporting_claim_ids: vec![],
                supporting_chunk_ids: vec![],
                uses_mirrored: false,
                uses_merged: false,
                validated: true,
                path: ReasoningPath::default(),
            });
        }
    }
    let matrix = bin_quartiles(&mut scores, true);

    let chunk = Chunk {
        id: "ch0".into(),
        article_id: "synthetic".into(),
        start: 0,
        end: 1,
        byte_start: 0,
        byte_end: 1,
        text: "synthetic context".into(),
        embedding: vec![0.125; 64],
    };
    let gateway = mock_gateway();
    let rag = CalibratedRag { correct, gold };
    let outcome = evaluate(&qas, &[chunk], &rag, &gateway, 1).expect("evaluate");
    let filled = fill_matrix(&outcome.records, &matrix).expect("fill");
    let summary = diagnostics(&filled, &outcome.records, &scores, &qas, outcome.judge_parse_misses);

    let accuracies: Vec<f64> = summary
        .hops
        .iter()
        .map(|h| h.accuracy.expect("every hop row evaluated"))
        .collect();
    for w in accuracies.windows(2) {
        assert!(
            w[1] < w[0],
            "per-hop accuracy must decline: {accuracies:?}"
        );
    }
    let diag = summary
        .diagonal_error_r
        .r
        .expect("diagonal correlation defined");
    assert!(diag >= 0.9, "diagonal error correlation {diag} below 0.9");
}

// -- 10 --------------------------------------------------------------------

/// Hand counts from the bundled corpus design: each article contributes a
/// known relation chain, four articles merge an alias pair, three mirror a
/// token-subset pair. Totals are ordered-pair counts at each BFS distance.
const EXPECTED_SHARES: [(usize, usize, usize, usize); 4] = [
    // (hop, total, mirrored, merged)
    (2, 72, 7, 4),
    (3, 50, 6, 8),
    (4, 28, 3, 8),
    (5, 10, 0, 4),
];

fn missing_link_accounting(out_a: &Path) {
    let qa_raw = std::fs::read_to_string(out_a.join("qa.jsonl")).expect("qa.jsonl");
    let qas: Vec<QAPair> = qa_raw
        .lines()
        .map(|l| serde_json::from_str(l).expect("qa line"))
        .collect();
    assert!(qas.iter().all(|q| q.validated), "fixture pairs all validate");

    let mut recount: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for qa in &qas {
        let row = recount.entry(qa.hop_count).or_default();
        row.0 += 1;
        if qa.uses_mirrored {
            row.1 += 1;
        }
        if qa.uses_merged {
            row.2 += 1;
        }
    }
    for (hop, total, mirrored, merged) in EXPECTED_SHARES {
        assert_eq!(
            recount.get(&hop).copied(),
            Some((total, mirrored, merged)),
            "hop {hop} flag counts diverge from the corpus design"
        );
    }
    assert_eq!(recount.len(), 4);

    let summary: EvalSummary =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("summary.json")).expect("summary"))
            .expect("summary parse");
    for (hop, total, mirrored, merged) in EXPECTED_SHARES {
        let row = summary
            .missing_links
            .iter()
            .find(|m| m.hop == hop)
            .expect("summary covers every hop");
        assert_eq!(row.total, total);
        let close = |got: Option<f64>, count: usize| {
            let want = count as f64 / total as f64;
            assert!(
                (got.expect("share defined") - want).abs() < 1e-12,
                "hop {hop}: share {got:?} vs {want}"
            );
        };
        close(row.mirrored_share, mirrored);
        close(row.merged_share, merged);
    }
}

// -- 11 --------------------------------------------------------------------

/// Directional live check, deliberately outside the default suite: point
/// GRADE_LIVE_INPUT at any recent news JSONL, export the provider key named
/// by api_key_env (default OPENAI_API_KEY), and run with --ignored. Passes
/// when at least one of two full runs shows non-increasing per-hop accuracy.
#[test]
#[ignore = "needs a live provider; run with --ignored and GRADE_LIVE_INPUT set"]
fn live_provider_directional_trend() {
    let Ok(input) = std::env::var("GRADE_LIVE_INPUT") else {
        println!("SKIP  11 live-provider-directional-trend  [GRADE_LIVE_INPUT unset]");
        return;
    };
    let chat_model =
        std::env::var("GRADE_LIVE_CHAT_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into());
    let embed_model = std::env::var("GRADE_LIVE_EMBED_MODEL")
        .unwrap_or_else(|_| "text-embedding-3-small".into());

    let mut trend_ok = 0;
    for run in 0..2u32 {
        let dir = tempfile::tempdir().expect("tempdir");
        let workdir = dir.path().join("out");
        let config = format!(
            r#"workdir = "{workdir}"

[corpus]
input = "{input}"
domain = "news"

[provider]
kind = "openai"
chat_model = "{chat_model}"
embedding_model = "{embed_model}"

[clustering]
k = "auto"
seed = {seed}

[paths]
seed = {seed}
"#,
            workdir = workdir.display(),
            seed = 7 + run,
        );
        let path = dir.path().join("grade.toml");
        std::fs::write(&path, config).expect("write config");
        let config = Config::load(&path).expect("load config");
        run_pipeline(&config, &["all".to_string()], false).expect("live pipeline run");

        let trends = std::fs::read_to_string(workdir.join("trends.csv")).expect("trends.csv");
        let accuracies: Vec<f64> = trends
            .lines()
            .skip(1)
            .filter_map(|line| {
                let cols: Vec<&str> = line.split(',').collect();
                let evaluated: usize = cols[1].parse().ok()?;
                (evaluated > 0).then(|| cols[2].parse::<f64>().ok())?
            })
            .collect();
        if accuracies.windows(2).all(|w| w[1] <= w[0] + 1e-9) {
            trend_ok += 1;
        }
    }
    let passed = trend_ok >= 1;
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("{verdict}  11 live-provider-directional-trend  [{trend_ok}/2 runs non-increasing]");
    assert!(passed, "no live run showed non-increasing per-hop accuracy");
}
