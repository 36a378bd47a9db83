//! The fourteen pipeline stages. Each one reads its declared input
//! artifacts from the workdir, does its work through the core modules, and
//! writes its declared outputs; the engine in the parent module decides
//! whether a stage needs to run at all.

use std::collections::BTreeMap;
use std::path::Path;

use crate::augment::{
    assign, augment_graph, default_component_count, fit_gmm, link_clusters, select_k_bic,
    ClusterAssignment, EquivalenceGroup, GmmError, GmmModel,
};
use crate::claims::{build_claims, classify_factual, Claim, LlmFactJudge};
use crate::corpus::{
    chunk_article, embed_chunks, filter_by_length, ingest_path, split_sentences,
    tokenizer_by_name, Article, Chunk, CorpusError, Sentence, Tokenizer,
};
use crate::difficulty::{bin_quartiles, score_query, DifficultyMatrix, DifficultyScore};
use crate::evalharness::{
    diagnostics, evaluate, fill_matrix, matrix_csv, trends_csv, EvalError, EvalRecord,
    GatewayRag, RagSystem, SubprocessRag,
};
use crate::gateway::{Gateway, GatewayError};
use crate::graph::{build_graph, extract_triples, GraphError, KnowledgeGraph, Triple};
use crate::normalize::parse_true_false;
use crate::qagen::{
    dedupe_and_sample, enumerate_paths, generate_qa, validate_qa, QAPair, QaOutcome,
    QaSources, QagenError, ReasoningPath,
};

use super::artifacts::{read_json, read_jsonl, write_json, write_jsonl, write_text, ArtifactError};
use super::config::{Config, ComponentCount, RagKind};

#[derive(Debug, thiserror::Error)]
pub enum StageFailure {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
    #[error(transparent)]
    Qagen(#[from] QagenError),
    #[error(transparent)]
    Difficulty(#[from] crate::difficulty::DifficultyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{0}")]
    Invalid(String),
}

fn tokenizer(config: &Config) -> Result<Box<dyn Tokenizer>, StageFailure> {
    tokenizer_by_name(&config.corpus.tokenizer).ok_or_else(|| {
        StageFailure::Invalid(format!("unknown tokenizer {:?}", config.corpus.tokenizer))
    })
}

pub fn ingest(config: &Config, workdir: &Path) -> Result<(), StageFailure> {
    if config.corpus.input.trim().is_empty() {
        return Err(StageFailure::Invalid(
            "corpus.input is not set; nothing to ingest".into(),
        ));
    }
    let tok = tokenizer(config)?;
    let report = ingest_path(
        Path::new(&config.corpus.input),
        &config.corpus.domain,
        tok.as_ref(),
        config.corpus.malformed,
    )?;
    let (articles, filter) = filter_by_length(
        report.articles,
        config.corpus.min_tokens,
        config.corpus.max_tokens,
    );
    let sentences: Vec<Sentence> = articles.iter().flat_map(split_sentences).collect();
    log::info!(
        "ingest: {} articles kept ({} skipped lines, {} filtered by length), {} sentences",
        articles.len(),
        report.skipped.len(),
        filter.dropped_short + filter.dropped_long,
        sentences.len()
    );
    write_jsonl(&workdir.join("articles.jsonl"), &articles)?;
    write_jsonl(&workdir.join("sentences.jsonl"), &sentences)?;
    Ok(())
}

pub fn chunk(config: &Config, workdir: &Path, gateway: &Gateway) -> Result<(), StageFailure> {
    let articles: Vec<Article> = read_jsonl(&workdir.join("articles.jsonl"))?;
    let tok = tokenizer(config)?;
    let params = config.chunk_params();
    let mut chunks: Vec<Chunk> = Vec::new();
    for article in &articles {
        chunks.extend(chunk_article(article, tok.as_ref(), params)?);
    }
    embed_chunks(&mut chunks, gateway, config.provider.embed_batch_size)?;
    log::info!("chunk: {} chunks from {} articles", chunks.len(), articles.len());
    write_jsonl(&workdir.join("chunks.jsonl"), &chunks)?;
    Ok(())
}

pub fn claims(config: &Config, workdir: &Path, gateway: &Gateway) -> Result<(), StageFailure> {
    let _ = config;
    let sentences: Vec<Sentence> = read_jsonl(&workdir.join("sentences.jsonl"))?;
    let articles: Vec<Article> = read_jsonl(&workdir.join("articles.jsonl"))?;
    let judge = LlmFactJudge::new(gateway);
    let (factual, classify) = classify_factual(&sentences, &judge)?;
    let (claims, report) = build_claims(&factual, &articles, gateway)?;
    log::info!(
        "claims: {} factual sentences of {}, {} claims verified of {} generated",
        classify.kept,
        sentences.len(),
        report.verified,
        report.generated
    );
    write_jsonl(&workdir.join("claims.jsonl"), &claims)?;
    Ok(())
}

fn verified_claims(workdir: &Path) -> Result<Vec<Claim>, StageFailure> {
    let claims: Vec<Claim> = read_jsonl(&workdir.join("claims.jsonl"))?;
    Ok(claims.into_iter().filter(|c| c.verified).collect())
}

pub fn triples(config: &Config, workdir: &Path, gateway: &Gateway) -> Result<(), StageFailure> {
    let _ = config;
    let claims = verified_claims(workdir)?;
    let mut triples: Vec<Triple> = Vec::new();
    let mut parsed = 0usize;
    let mut skipped = 0usize;
    for batch in claims.chunks(10) {
        let refs: Vec<&Claim> = batch.iter().collect();
        let (batch_triples, report) = extract_triples(&refs, gateway)?;
        parsed += report.parsed;
        skipped +=
            report.skipped_unparseable + report.skipped_bad_index + report.skipped_duplicates;
        triples.extend(batch_triples);
    }
    log::info!(
        "triples: {parsed} parsed, {skipped} skipped, from {} claims",
        claims.len()
    );
    write_jsonl(&workdir.join("triples.jsonl"), &triples)?;
    Ok(())
}

pub fn graph(workdir: &Path) -> Result<(), StageFailure> {
    let triples: Vec<Triple> = read_jsonl(&workdir.join("triples.jsonl"))?;
    let kg = build_graph(&triples);
    log::info!(
        "graph: {} nodes, {} edges",
        kg.nodes().len(),
        kg.edges().len()
    );
    write_text(&workdir.join("graph.json"), &kg.to_json())?;
    Ok(())
}

pub fn cluster(config: &Config, workdir: &Path, gateway: &Gateway) -> Result<(), StageFailure> {
    let claims = verified_claims(workdir)?;
    let texts: Vec<String> = claims.iter().map(|c| c.text.clone()).collect();
    let ids: Vec<String> = claims.iter().map(|c| c.id.clone()).collect();
    let points = gateway.embed_batched(&texts, config.provider.embed_batch_size)?;
    let section = &config.clustering;
    let k = match &section.k {
        ComponentCount::Fixed(k) => *k,
        _ if section.bic_sweep => {
            let (best, sweep) = select_k_bic(&points, section.seed, section.max_iters, section.tol)?;
            log::info!("cluster: BIC sweep {sweep:?} chose k = {best}");
            best
        }
        _ => default_component_count(points.len()),
    };
    let model = fit_gmm(&points, k, section.seed, section.max_iters, section.tol)?;
    let assignments = assign(&model, &points, &ids, section.tau)?;
    log::info!(
        "cluster: k = {}, {} claims, converged = {}",
        model.k,
        assignments.len(),
        model.converged
    );
    write_json(&workdir.join("gmm.json"), &model)?;
    write_jsonl(&workdir.join("clusters.jsonl"), &assignments)?;
    Ok(())
}

pub fn link(workdir: &Path, gateway: &Gateway) -> Result<(), StageFailure> {
    let assignments: Vec<ClusterAssignment> = read_jsonl(&workdir.join("clusters.jsonl"))?;
    let claims: Vec<Claim> = read_jsonl(&workdir.join("claims.jsonl"))?;
    let triples: Vec<Triple> = read_jsonl(&workdir.join("triples.jsonl"))?;
    let model: GmmModel = read_json(&workdir.join("gmm.json"))?;
    let (groups, report) = link_clusters(&assignments, &claims, &triples, model.k, gateway)?;
    log::info!(
        "link: {} exact and {} contextual groups from {} clusters ({} skipped small)",
        report.exact_groups,
        report.contextual_groups,
        report.clusters_processed,
        report.clusters_skipped_small
    );
    write_jsonl(&workdir.join("equivalences.jsonl"), &groups)?;
    Ok(())
}

pub fn augment(workdir: &Path) -> Result<(), StageFailure> {
    let kg = KnowledgeGraph::from_json(&std::fs::read_to_string(workdir.join("graph.json"))
        .map_err(|source| ArtifactError::Io {
            path: workdir.join("graph.json"),
            source,
        })?)?;
    let groups: Vec<EquivalenceGroup> = read_jsonl(&workdir.join("equivalences.jsonl"))?;
    let assignments: Vec<ClusterAssignment> = read_jsonl(&workdir.join("clusters.jsonl"))?;
    let (augmented, report) = augment_graph(&kg, &groups, &assignments);
    log::info!(
        "augment: {} nodes merged away, {} mirrored edges added",
        report.nodes_merged_away,
        report.mirrored_edges_added
    );
    write_text(&workdir.join("graph.augmented.json"), &augmented.to_json())?;
    Ok(())
}

fn load_graph(workdir: &Path, name: &str) -> Result<KnowledgeGraph, StageFailure> {
    let text = std::fs::read_to_string(workdir.join(name)).map_err(|source| ArtifactError::Io {
        path: workdir.join(name),
        source,
    })?;
    Ok(KnowledgeGraph::from_json(&text)?)
}

pub fn paths(config: &Config, workdir: &Path) -> Result<(), StageFailure> {
    let kg = load_graph(workdir, "graph.augmented.json")?;
    let all = enumerate_paths(&kg, config.paths.pair_cap);
    let sampled = dedupe_and_sample(all, config.paths.per_hop, config.paths.seed);
    let mut per_hop = BTreeMap::new();
    for p in &sampled {
        *per_hop.entry(p.hop_count()).or_insert(0usize) += 1;
    }
    log::info!("paths: kept {} ({per_hop:?})", sampled.len());
    write_jsonl(&workdir.join("paths.jsonl"), &sampled)?;
    Ok(())
}

pub fn qagen(workdir: &Path, gateway: &Gateway) -> Result<(), StageFailure> {
    let paths: Vec<ReasoningPath> = read_jsonl(&workdir.join("paths.jsonl"))?;
    let kg = load_graph(workdir, "graph.augmented.json")?;
    let claims: Vec<Claim> = read_jsonl(&workdir.join("claims.jsonl"))?;
    let sentences: Vec<Sentence> = read_jsonl(&workdir.join("sentences.jsonl"))?;
    let chunks: Vec<Chunk> = read_jsonl(&workdir.join("chunks.jsonl"))?;
    let sources = QaSources::new(&kg, &claims, &sentences, &chunks);
    let mut pairs: Vec<QAPair> = Vec::new();
    let mut discards: BTreeMap<&'static str, usize> = BTreeMap::new();
    for path in &paths {
        match generate_qa(path, &sources, gateway)? {
            QaOutcome::Generated(qa) => pairs.push(*qa),
            QaOutcome::Discarded { reason, .. } => {
                *discards.entry(reason.as_str()).or_insert(0) += 1;
            }
        }
    }
    log::info!(
        "qagen: {} pairs from {} paths, discards {discards:?}",
        pairs.len(),
        paths.len()
    );
    write_jsonl(&workdir.join("qa.generated.jsonl"), &pairs)?;
    Ok(())
}

pub fn validate(workdir: &Path, gateway: &Gateway) -> Result<(), StageFailure> {
    let mut pairs: Vec<QAPair> = read_jsonl(&workdir.join("qa.generated.jsonl"))?;
    for qa in &mut pairs {
        validate_qa(qa, gateway)?;
    }
    let kept = pairs.iter().filter(|q| q.validated).count();
    log::info!("validate: {kept} of {} pairs validated", pairs.len());
    write_jsonl(&workdir.join("qa.jsonl"), &pairs)?;
    Ok(())
}

fn validated_pairs(workdir: &Path) -> Result<Vec<QAPair>, StageFailure> {
    let pairs: Vec<QAPair> = read_jsonl(&workdir.join("qa.jsonl"))?;
    Ok(pairs.into_iter().filter(|q| q.validated).collect())
}

pub fn score(config: &Config, workdir: &Path, gateway: &Gateway) -> Result<(), StageFailure> {
    let pairs = validated_pairs(workdir)?;
    let chunks: Vec<Chunk> = read_jsonl(&workdir.join("chunks.jsonl"))?;
    let by_id: BTreeMap<&str, &Chunk> = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
    let questions: Vec<String> = pairs.iter().map(|q| q.question.clone()).collect();
    let question_embeddings =
        gateway.embed_batched(&questions, config.provider.embed_batch_size)?;
    let aggregator = config.aggregator();
    let mut scores: Vec<DifficultyScore> = Vec::with_capacity(pairs.len());
    for (qa, q_emb) in pairs.iter().zip(&question_embeddings) {
        let mut chunk_embeddings: Vec<&[f64]> = Vec::new();
        for id in &qa.supporting_chunk_ids {
            let chunk = by_id.get(id.as_str()).ok_or_else(|| {
                StageFailure::Invalid(format!("qa {} references unknown chunk {id}", qa.id))
            })?;
            if chunk.embedding.is_empty() {
                return Err(StageFailure::Invalid(format!(
                    "chunk {id} has no embedding; re-run the chunk stage"
                )));
            }
            chunk_embeddings.push(&chunk.embedding);
        }
        scores.push(score_query(
            &qa.id,
            qa.hop_count,
            q_emb,
            &chunk_embeddings,
            aggregator,
        )?);
    }
    let matrix = bin_quartiles(&mut scores, config.difficulty.per_hop);
    log::info!(
        "score: {} queries binned ({} aggregation, per_hop = {})",
        scores.len(),
        matrix.aggregator,
        matrix.per_hop
    );
    write_jsonl(&workdir.join("difficulty.jsonl"), &scores)?;
    write_json(&workdir.join("matrix.json"), &matrix)?;
    Ok(())
}

pub fn eval(config: &Config, workdir: &Path, gateway: &Gateway) -> Result<(), StageFailure> {
    // The matrix fixes the query set under evaluation; pairs validated
    // after the last score run are ignored until score reruns.
    let matrix: DifficultyMatrix = read_json(&workdir.join("matrix.json"))?;
    let in_matrix: std::collections::BTreeSet<&str> = matrix
        .cells
        .iter()
        .flat_map(|row| row.iter())
        .flat_map(|cell| cell.query_ids.iter().map(String::as_str))
        .collect();
    let pairs: Vec<QAPair> = validated_pairs(workdir)?
        .into_iter()
        .filter(|q| in_matrix.contains(q.id.as_str()))
        .collect();
    let chunks: Vec<Chunk> = read_jsonl(&workdir.join("chunks.jsonl"))?;
    let rag: Box<dyn RagSystem> = match config.eval.rag {
        RagKind::Gateway => Box::new(GatewayRag::new(gateway)),
        RagKind::Subprocess => {
            let argv = &config.eval.subprocess;
            let mut sub = SubprocessRag::new(argv[0].clone(), argv[1..].to_vec());
            if !config.eval.model.is_empty() {
                sub = sub.with_label(config.eval.model.clone());
            }
            Box::new(sub)
        }
    };
    let mut outcome = evaluate(&pairs, &chunks, rag.as_ref(), gateway, config.eval.k)?;
    if !config.eval.model.is_empty() {
        for r in &mut outcome.records {
            r.model_id = config.eval.model.clone();
        }
    }
    let correct = outcome.records.iter().filter(|r| r.judged_correct).count();
    log::info!(
        "eval: {} of {} judged correct, {} judge parse misses",
        correct,
        outcome.records.len(),
        outcome.judge_parse_misses
    );
    write_jsonl(&workdir.join("eval.jsonl"), &outcome.records)?;
    Ok(())
}

pub fn report(workdir: &Path) -> Result<(), StageFailure> {
    let records: Vec<EvalRecord> = read_jsonl(&workdir.join("eval.jsonl"))?;
    let matrix: DifficultyMatrix = read_json(&workdir.join("matrix.json"))?;
    let scores: Vec<DifficultyScore> = read_jsonl(&workdir.join("difficulty.jsonl"))?;
    let pairs = validated_pairs(workdir)?;
    let judge_parse_misses = records
        .iter()
        .filter(|r| parse_true_false(&r.judge_raw).is_none())
        .count();
    let filled = fill_matrix(&records, &matrix)?;
    let summary = diagnostics(&filled, &records, &scores, &pairs, judge_parse_misses);
    write_json(&workdir.join("summary.json"), &summary)?;
    write_text(&workdir.join("matrix.csv"), &matrix_csv(&filled))?;
    write_text(
        &workdir.join("matrix.2bin.csv"),
        &matrix_csv(&filled.collapse_to_low_high()),
    )?;
    write_text(&workdir.join("trends.csv"), &trends_csv(&summary))?;
    log::info!(
        "report: diagonal r = {:?}, {} queries summarized",
        summary.diagonal_error_r.r,
        summary.total_evaluated
    );
    Ok(())
}
