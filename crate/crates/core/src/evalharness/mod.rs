//! Evaluation of retrieval-augmented answering over the difficulty matrix:
//! retrieve chunks for each question, let the system under test answer,
//! judge against the gold answer, and fold the verdicts into per-cell error
//! rates and correlation diagnostics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::difficulty::{similarity, DifficultyError, DifficultyMatrix, DifficultyScore};
use crate::gateway::{Gateway, GatewayError, TemplateName};
use crate::normalize::parse_true_false;
use crate::qagen::QAPair;

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Similarity(#[from] DifficultyError),
    #[error("cannot retrieve from an empty corpus")]
    EmptyCorpus,
    #[error("chunk {0} has no embedding; run the embedding stage first")]
    MissingEmbedding(String),
    #[error("refusing to answer with an empty retrieval")]
    EmptyRetrieval,
    #[error("evaluation records reference query ids absent from the matrix: {}", .0.join(", "))]
    OrphanRecords(Vec<String>),
    #[error("rag subprocess error: {0}")]
    Subprocess(String),
}

/// One evaluated query, serialized as a line of eval.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qa_id: String,
    pub retrieved_chunk_ids: Vec<String>,
    pub generated_answer: String,
    pub judged_correct: bool,
    pub model_id: String,
    /// Raw judge output, kept for auditing parse behavior.
    pub judge_raw: String,
}

/// Ranks chunks by cosine similarity to the question embedding and returns
/// the top `k` chunk ids, scores descending, ties broken by chunk id
/// ascending.
pub fn retrieve(
    question: &str,
    chunks: &[Chunk],
    k: usize,
    gateway: &Gateway,
) -> Result<Vec<String>, EvalError> {
    if chunks.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let q = &gateway.embed(&[question.to_string()])?[0];
    let mut scored: Vec<(&Chunk, f64)> = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        if chunk.embedding.is_empty() {
            return Err(EvalError::MissingEmbedding(chunk.id.clone()));
        }
        scored.push((chunk, similarity(q, &chunk.embedding)?));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosine similarities are finite")
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    Ok(scored.into_iter().take(k).map(|(c, _)| c.id.clone()).collect())
}

/// Produces an answer from the retrieved context alone.
pub fn answer(
    question: &str,
    context: &[String],
    gateway: &Gateway,
) -> Result<String, EvalError> {
    if context.is_empty() {
        return Err(EvalError::EmptyRetrieval);
    }
    let mut vars = BTreeMap::new();
    vars.insert("question".to_string(), question.to_string());
    vars.insert("top_chunks".to_string(), context.join("\n\n"));
    let response = gateway.complete(TemplateName::RagAnswer, &vars)?;
    Ok(response.text.trim().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeVerdict {
    pub correct: bool,
    /// True when the judge output parsed as neither true nor false; such
    /// answers count as incorrect.
    pub parse_miss: bool,
    pub raw: String,
}

/// Asks the judge model whether the generated answer matches the gold one.
pub fn judge(
    question: &str,
    gold_answer: &str,
    generated_answer: &str,
    gateway: &Gateway,
) -> Result<JudgeVerdict, EvalError> {
    let mut vars = BTreeMap::new();
    vars.insert("question".to_string(), question.to_string());
    vars.insert("gt_answer".to_string(), gold_answer.to_string());
    vars.insert("rag_answer".to_string(), generated_answer.to_string());
    let response = gateway.complete(TemplateName::Judge, &vars)?;
    let raw = response.text;
    match parse_true_false(&raw) {
        Some(correct) => Ok(JudgeVerdict {
            correct,
            parse_miss: false,
            raw,
        }),
        None => {
            log::warn!("judge output did not parse as true/false: {raw:?}");
            Ok(JudgeVerdict {
                correct: false,
                parse_miss: true,
                raw,
            })
        }
    }
}

pub struct RagRequest<'a> {
    pub qa_id: &'a str,
    pub question: &'a str,
    /// Retrieved chunk texts in rank order.
    pub context: &'a [String],
}

/// A system under evaluation: given a question and retrieved context, it
/// returns an answer string.
pub trait RagSystem {
    fn id(&self) -> String;
    fn answer(&self, request: &RagRequest) -> Result<String, EvalError>;
}

/// Baseline system: answers with the gateway's chat model over the standard
/// answering prompt.
pub struct GatewayRag<'a> {
    gateway: &'a Gateway,
}

impl<'a> GatewayRag<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        GatewayRag { gateway }
    }
}

impl RagSystem for GatewayRag<'_> {
    fn id(&self) -> String {
        self.gateway.chat_model().to_string()
    }

    fn answer(&self, request: &RagRequest) -> Result<String, EvalError> {
        answer(request.question, request.context, self.gateway)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    qa_id: &'a str,
    question: &'a str,
    context: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    qa_id: String,
    answer: String,
}

struct SubprocessIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Adapter for external systems. The child process is spawned once and
/// spoken to over line-delimited JSON: one request object
/// {"qa_id", "question", "context"} per line on stdin, one response object
/// {"qa_id", "answer"} per line on stdout.
pub struct SubprocessRag {
    program: String,
    args: Vec<String>,
    label: String,
    io: Mutex<Option<SubprocessIo>>,
}

impl SubprocessRag {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        let program = program.into();
        let label = format!("subprocess:{program}");
        SubprocessRag {
            program,
            args,
            label,
            io: Mutex::new(None),
        }
    }

    /// Overrides the model id recorded in evaluation records.
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    fn spawn(&self) -> Result<SubprocessIo, EvalError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| EvalError::Subprocess(format!("failed to spawn {}: {e}", self.program)))?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout was piped"));
        Ok(SubprocessIo {
            child,
            stdin,
            stdout,
        })
    }
}

impl RagSystem for SubprocessRag {
    fn id(&self) -> String {
        self.label.clone()
    }

    fn answer(&self, request: &RagRequest) -> Result<String, EvalError> {
        let mut guard = self.io.lock().expect("subprocess mutex poisoned");
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let io = guard.as_mut().expect("just spawned");
        let line = serde_json::to_string(&WireRequest {
            qa_id: request.qa_id,
            question: request.question,
            context: request.context,
        })
        .expect("wire request serializes");
        io.stdin
            .write_all(line.as_bytes())
            .and_then(|_| io.stdin.write_all(b"\n"))
            .and_then(|_| io.stdin.flush())
            .map_err(|e| EvalError::Subprocess(format!("write to child failed: {e}")))?;
        let mut response = String::new();
        let n = io
            .stdout
            .read_line(&mut response)
            .map_err(|e| EvalError::Subprocess(format!("read from child failed: {e}")))?;
        if n == 0 {
            return Err(EvalError::Subprocess("child closed its stdout".into()));
        }
        let parsed: WireResponse = serde_json::from_str(response.trim())
            .map_err(|e| EvalError::Subprocess(format!("malformed response line: {e}")))?;
        if parsed.qa_id != request.qa_id {
            return Err(EvalError::Subprocess(format!(
                "response for {:?} arrived while waiting on {:?}",
                parsed.qa_id, request.qa_id
            )));
        }
        Ok(parsed.answer)
    }
}

impl Drop for SubprocessRag {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.io.lock() {
            if let Some(mut io) = guard.take() {
                let _ = io.child.kill();
                let _ = io.child.wait();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    /// One record per input pair, in input order.
    pub records: Vec<EvalRecord>,
    pub judge_parse_misses: usize,
}

/// Runs retrieve -> answer -> judge for every pair.
pub fn evaluate(
    qas: &[QAPair],
    chunks: &[Chunk],
    rag: &dyn RagSystem,
    gateway: &Gateway,
    k: usize,
) -> Result<EvalOutcome, EvalError> {
    let by_id: BTreeMap<&str, &Chunk> = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
    let model_id = rag.id();
    let mut records = Vec::with_capacity(qas.len());
    let mut judge_parse_misses = 0;
    for qa in qas {
        let retrieved = retrieve(&qa.question, chunks, k, gateway)?;
        let context: Vec<String> = retrieved
            .iter()
            .map(|id| by_id[id.as_str()].text.clone())
            .collect();
        let generated = rag.answer(&RagRequest {
            qa_id: &qa.id,
            question: &qa.question,
            context: &context,
        })?;
        let verdict = judge(&qa.question, &qa.answer, &generated, gateway)?;
        if verdict.parse_miss {
            judge_parse_misses += 1;
        }
        records.push(EvalRecord {
            qa_id: qa.id.clone(),
            retrieved_chunk_ids: retrieved,
            generated_answer: generated,
            judged_correct: verdict.correct,
            model_id: model_id.clone(),
            judge_raw: verdict.raw,
        });
    }
    Ok(EvalOutcome {
        records,
        judge_parse_misses,
    })
}

/// Writes per-cell error rates into a copy of the matrix: incorrect over
/// evaluated, null for cells with no evaluated queries. Cell membership and
/// counts are untouched. A record whose qa_id is in no cell is an error.
pub fn fill_matrix(
    records: &[EvalRecord],
    matrix: &DifficultyMatrix,
) -> Result<DifficultyMatrix, EvalError> {
    let known: BTreeSet<&str> = matrix
        .cells
        .iter()
        .flat_map(|row| row.iter())
        .flat_map(|cell| cell.query_ids.iter().map(String::as_str))
        .collect();
    let orphans: Vec<String> = records
        .iter()
        .map(|r| r.qa_id.as_str())
        .filter(|id| !known.contains(id))
        .collect::<BTreeSet<&str>>()
        .into_iter()
        .map(String::from)
        .collect();
    if !orphans.is_empty() {
        return Err(EvalError::OrphanRecords(orphans));
    }
    let verdicts: BTreeMap<&str, bool> = records
        .iter()
        .map(|r| (r.qa_id.as_str(), r.judged_correct))
        .collect();
    let mut out = matrix.clone();
    for row in &mut out.cells {
        for cell in row {
            let mut evaluated = 0usize;
            let mut incorrect = 0usize;
            for id in &cell.query_ids {
                if let Some(&correct) = verdicts.get(id.as_str()) {
                    evaluated += 1;
                    if !correct {
                        incorrect += 1;
                    }
                }
            }
            cell.error_rate = (evaluated > 0).then(|| incorrect as f64 / evaluated as f64);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorrelationUndefined {
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0} series has zero variance")]
    ZeroVariance(&'static str),
}

/// Pearson correlation coefficient. Undefined (rather than NaN) for short
/// or constant series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CorrelationUndefined> {
    if x.len() != y.len() {
        return Err(CorrelationUndefined::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(CorrelationUndefined::TooFewPoints(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(CorrelationUndefined::ZeroVariance("x"));
    }
    if var_y == 0.0 {
        return Err(CorrelationUndefined::ZeroVariance("y"));
    }
    Ok(cov / (var_x * var_y).sqrt())
}

/// A correlation that may be undefined; the reason is carried into reports
/// instead of a bare null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationValue {
    pub r: Option<f64>,
    pub reason: Option<String>,
}

impl From<Result<f64, CorrelationUndefined>> for CorrelationValue {
    fn from(result: Result<f64, CorrelationUndefined>) -> Self {
        match result {
            Ok(r) => CorrelationValue {
                r: Some(r),
                reason: None,
            },
            Err(e) => CorrelationValue {
                r: None,
                reason: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingLinkShare {
    pub hop: usize,
    pub total: usize,
    /// Fraction of pairs whose reasoning path needs a mirrored edge.
    pub mirrored_share: Option<f64>,
    /// Fraction of pairs whose path crosses a merged-entity junction.
    pub merged_share: Option<f64>,
}

/// Per-hop share of pairs that depend on augmentation.
pub fn missing_link_shares(qas: &[QAPair]) -> Vec<MissingLinkShare> {
    crate::difficulty::HOPS
        .iter()
        .map(|&hop| {
            let row: Vec<&QAPair> = qas.iter().filter(|q| q.hop_count == hop).collect();
            let total = row.len();
            let share = |pred: fn(&&QAPair) -> bool| {
                (total > 0).then(|| row.iter().filter(|q| pred(q)).count() as f64 / total as f64)
            };
            MissingLinkShare {
                hop,
                total,
                mirrored_share: share(|q| q.uses_mirrored),
                merged_share: share(|q| q.uses_merged),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopDiagnostics {
    pub hop: usize,
    pub evaluated: usize,
    pub accuracy: Option<f64>,
    /// Mean difficulty of the scored queries in each bin.
    pub bin_mean_difficulty: Vec<Option<f64>>,
    pub bin_accuracy: Vec<Option<f64>>,
    pub bin_error_rate: Vec<Option<f64>>,
    /// Correlation between bin mean difficulty and bin accuracy across the
    /// row (expected negative when difficulty predicts failure).
    pub difficulty_accuracy_r: CorrelationValue,
    /// Same series against error rate (expected positive).
    pub difficulty_error_r: CorrelationValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model_id: String,
    pub total_evaluated: usize,
    pub judge_parse_misses: usize,
    pub hops: Vec<HopDiagnostics>,
    /// Correlation of error rate against position along the matrix
    /// diagonal, cells (2, bin 0) through (5, bin 3).
    pub diagonal_error_r: CorrelationValue,
    pub missing_links: Vec<MissingLinkShare>,
}

/// Folds verdicts, difficulty scores, and matrix membership into the
/// report-facing summary.
pub fn diagnostics(
    matrix: &DifficultyMatrix,
    records: &[EvalRecord],
    scores: &[DifficultyScore],
    qas: &[QAPair],
    judge_parse_misses: usize,
) -> EvalSummary {
    let verdicts: BTreeMap<&str, bool> = records
        .iter()
        .map(|r| (r.qa_id.as_str(), r.judged_correct))
        .collect();
    let difficulty_of: BTreeMap<&str, f64> = scores
        .iter()
        .map(|s| (s.qa_id.as_str(), s.score))
        .collect();

    let cell_accuracy = |cell: &crate::difficulty::MatrixCell| -> Option<f64> {
        let evaluated: Vec<bool> = cell
            .query_ids
            .iter()
            .filter_map(|id| verdicts.get(id.as_str()).copied())
            .collect();
        (!evaluated.is_empty())
            .then(|| evaluated.iter().filter(|&&c| c).count() as f64 / evaluated.len() as f64)
    };
    let cell_difficulty = |cell: &crate::difficulty::MatrixCell| -> Option<f64> {
        let scored: Vec<f64> = cell
            .query_ids
            .iter()
            .filter_map(|id| difficulty_of.get(id.as_str()).copied())
            .collect();
        (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64)
    };

    let mut hops = Vec::with_capacity(matrix.hops.len());
    for (row_index, &hop) in matrix.hops.iter().enumerate() {
        let row = &matrix.cells[row_index];
        let bin_mean_difficulty: Vec<Option<f64>> = row.iter().map(&cell_difficulty).collect();
        let bin_accuracy: Vec<Option<f64>> = row.iter().map(&cell_accuracy).collect();
        let bin_error_rate: Vec<Option<f64>> =
            bin_accuracy.iter().map(|a| a.map(|a| 1.0 - a)).collect();

        let mut evaluated = 0usize;
        let mut correct = 0usize;
        for cell in row {
            for id in &cell.query_ids {
                if let Some(&c) = verdicts.get(id.as_str()) {
                    evaluated += 1;
                    if c {
                        correct += 1;
                    }
                }
            }
        }
        let accuracy = (evaluated > 0).then(|| correct as f64 / evaluated as f64);

        let series: Vec<(f64, f64)> = bin_mean_difficulty
            .iter()
            .zip(&bin_accuracy)
            .filter_map(|(d, a)| d.zip(*a))
            .collect();
        let d: Vec<f64> = series.iter().map(|(d, _)| *d).collect();
        let acc: Vec<f64> = series.iter().map(|(_, a)| *a).collect();
        let err: Vec<f64> = acc.iter().map(|a| 1.0 - a).collect();

        hops.push(HopDiagnostics {
            hop,
            evaluated,
            accuracy,
            bin_mean_difficulty,
            bin_accuracy,
            bin_error_rate,
            difficulty_accuracy_r: pearson(&d, &acc).into(),
            difficulty_error_r: pearson(&d, &err).into(),
        });
    }

    // Diagonal: one cell per row, bin index equal to row index.
    let mut positions = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in matrix.cells.iter().enumerate() {
        if let Some(cell) = row.get(i) {
            if let Some(acc) = cell_accuracy(cell) {
                positions.push(i as f64);
                errors.push(1.0 - acc);
            }
        }
    }

    EvalSummary {
        model_id: records
            .first()
            .map(|r| r.model_id.clone())
            .unwrap_or_default(),
        total_evaluated: records.len(),
        judge_parse_misses,
        hops,
        diagonal_error_r: pearson(&positions, &errors).into(),
        missing_links: missing_link_shares(qas),
    }
}

/// Error-rate grid as CSV: one row per hop, one column per bin, empty
/// fields for unevaluated cells.
pub fn matrix_csv(matrix: &DifficultyMatrix) -> String {
    let bins = matrix.bin_count();
    let mut out = String::from("hop");
    for b in 1..=bins {
        out.push_str(&format!(",bin{b}"));
    }
    out.push('\n');
    for (row, &hop) in matrix.hops.iter().enumerate() {
        out.push_str(&hop.to_string());
        for cell in &matrix.cells[row] {
            out.push(',');
            if let Some(e) = cell.error_rate {
                out.push_str(&e.to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// Per-hop accuracy trend as CSV.
pub fn trends_csv(summary: &EvalSummary) -> String {
    let mut out = String::from("hop,evaluated,accuracy\n");
    for h in &summary.hops {
        out.push_str(&h.hop.to_string());
        out.push(',');
        out.push_str(&h.evaluated.to_string());
        out.push(',');
        if let Some(a) = h.accuracy {
            out.push_str(&a.to_string());
        }
        out.push('\n');
    }
    out
}
