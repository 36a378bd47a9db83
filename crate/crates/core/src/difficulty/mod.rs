//! Retrieval-difficulty scoring and the hop x difficulty matrix. A query's
//! difficulty is one minus an aggregate of its similarities to the chunks
//! that support it; the minimum aggregate treats the least similar
//! supporting chunk as the retrieval bottleneck.

use serde::{Deserialize, Serialize};

/// Similarities are clamped to at least this before a power-mean exponent
/// is applied, so near-zero values cannot blow up the reciprocal powers.
/// Min and mean accept negative cosines unclamped.
pub const POWER_MEAN_EPSILON: f64 = 1e-4;

/// Hop counts forming the matrix rows.
pub const HOPS: [usize; 4] = [2, 3, 4, 5];

pub const QUARTILE_BINS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum DifficultyError {
    #[error("cannot take similarity with a zero vector")]
    ZeroVector,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cannot aggregate an empty similarity list")]
    EmptySimilarities,
    #[error("unknown aggregator {0:?} (expected \"min\", \"mean\", or \"pmean:<p>\")")]
    UnknownAggregator(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    Min,
    Mean,
    /// Power mean with the given nonzero exponent; the paper's variant
    /// uses p = -2.
    PowerMean(f64),
}

impl Aggregator {
    /// Parses the CLI/config spelling: "min", "mean", or "pmean:<p>".
    pub fn parse(s: &str) -> Result<Self, DifficultyError> {
        match s {
            "min" => Ok(Aggregator::Min),
            "mean" => Ok(Aggregator::Mean),
            _ => {
                if let Some(p) = s.strip_prefix("pmean:") {
                    let p: f64 = p
                        .parse()
                        .map_err(|_| DifficultyError::UnknownAggregator(s.to_string()))?;
                    if p == 0.0 || !p.is_finite() {
                        return Err(DifficultyError::UnknownAggregator(s.to_string()));
                    }
                    Ok(Aggregator::PowerMean(p))
                } else {
                    Err(DifficultyError::UnknownAggregator(s.to_string()))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Aggregator::Min => "min".into(),
            Aggregator::Mean => "mean".into(),
            Aggregator::PowerMean(p) => format!("pmean:{p}"),
        }
    }
}

/// Cosine similarity of two unit vectors, i.e. their dot product.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64, DifficultyError> {
    if a.len() != b.len() {
        return Err(DifficultyError::DimensionMismatch(a.len(), b.len()));
    }
    if a.iter().all(|&x| x == 0.0) || b.iter().all(|&x| x == 0.0) {
        return Err(DifficultyError::ZeroVector);
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Retrieval difficulty: 1 minus the aggregated similarity.
pub fn aggregate(similarities: &[f64], aggregator: Aggregator) -> Result<f64, DifficultyError> {
    if similarities.is_empty() {
        return Err(DifficultyError::EmptySimilarities);
    }
    let n = similarities.len() as f64;
    let value = match aggregator {
        Aggregator::Min => 1.0 - similarities.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregator::Mean => 1.0 - similarities.iter().sum::<f64>() / n,
        Aggregator::PowerMean(p) => {
            let mean_pow = similarities
                .iter()
                .map(|&s| s.max(POWER_MEAN_EPSILON).powf(p))
                .sum::<f64>()
                / n;
            1.0 - mean_pow.powf(1.0 / p)
        }
    };
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub qa_id: String,
    pub hop: usize,
    pub aggregator: String,
    /// s(q, c) for every supporting chunk c, in chunk order.
    pub similarities: Vec<f64>,
    pub score: f64,
    /// Quartile bin index, assigned by bin_quartiles.
    pub bin: Option<usize>,
}

/// Scores one query against its supporting chunk embeddings.
pub fn score_query(
    qa_id: &str,
    hop: usize,
    question_embedding: &[f64],
    chunk_embeddings: &[&[f64]],
    aggregator: Aggregator,
) -> Result<DifficultyScore, DifficultyError> {
    let similarities = chunk_embeddings
        .iter()
        .map(|c| similarity(question_embedding, c))
        .collect::<Result<Vec<f64>, _>>()?;
    let score = aggregate(&similarities, aggregator)?;
    Ok(DifficultyScore {
        qa_id: qa_id.to_string(),
        hop,
        aggregator: aggregator.label(),
        similarities,
        score,
        bin: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub query_ids: Vec<String>,
    pub count: usize,
    /// Filled by evaluation; null until then and for empty cells.
    pub error_rate: Option<f64>,
}

impl MatrixCell {
    fn empty() -> Self {
        MatrixCell {
            query_ids: Vec::new(),
            count: 0,
            error_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyMatrix {
    /// Row labels (hop counts).
    pub hops: Vec<usize>,
    /// True when quartiles were cut within each hop row rather than
    /// globally.
    pub per_hop: bool,
    pub aggregator: String,
    /// cells[row][bin].
    pub cells: Vec<Vec<MatrixCell>>,
}

impl DifficultyMatrix {
    pub fn bin_count(&self) -> usize {
        self.cells.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn total_count(&self) -> usize {
        self.cells
            .iter()
            .flat_map(|row| row.iter())
            .map(|c| c.count)
            .sum()
    }

    /// Collapses the four quartile bins into low (0+1) and high (2+3)
    /// halves. Error rates recombine as count-weighted means over the
    /// evaluated cells.
    pub fn collapse_to_low_high(&self) -> DifficultyMatrix {
        let cells = self
            .cells
            .iter()
            .map(|row| {
                row.chunks(2)
                    .map(|pair| {
                        let mut query_ids = Vec::new();
                        let mut count = 0;
                        let mut weighted = 0.0;
                        let mut weight = 0usize;
                        for cell in pair {
                            query_ids.extend(cell.query_ids.iter().cloned());
                            count += cell.count;
                            if let Some(e) = cell.error_rate {
                                weighted += e * cell.count as f64;
                                weight += cell.count;
                            }
                        }
                        MatrixCell {
                            query_ids,
                            count,
                            error_rate: (weight > 0).then(|| weighted / weight as f64),
                        }
                    })
                    .collect()
            })
            .collect();
        DifficultyMatrix {
            hops: self.hops.clone(),
            per_hop: self.per_hop,
            aggregator: self.aggregator.clone(),
            cells,
        }
    }
}

/// Balanced cut positions: the first n mod 4 bins get the extra element.
fn balanced_sizes(n: usize) -> [usize; QUARTILE_BINS] {
    let base = n / QUARTILE_BINS;
    let rem = n % QUARTILE_BINS;
    let mut sizes = [base; QUARTILE_BINS];
    for s in sizes.iter_mut().take(rem) {
        *s += 1;
    }
    sizes
}

/// Sorts scores by (score, qa_id) and cuts them into four contiguous bins,
/// within each hop row when `per_hop` is set (the default analysis) or
/// over the pooled score distribution otherwise. Assigns each score's
/// `bin` and returns the matrix with error rates unset.
pub fn bin_quartiles(scores: &mut [DifficultyScore], per_hop: bool) -> DifficultyMatrix {
    let aggregator = scores
        .first()
        .map(|s| s.aggregator.clone())
        .unwrap_or_default();
    let mut cells: Vec<Vec<MatrixCell>> = HOPS
        .iter()
        .map(|_| (0..QUARTILE_BINS).map(|_| MatrixCell::empty()).collect())
        .collect();

    let order = |scores: &[DifficultyScore], indices: &mut Vec<usize>| {
        indices.sort_by(|&a, &b| {
            scores[a]
                .score
                .partial_cmp(&scores[b].score)
                .expect("difficulty scores are finite")
                .then_with(|| scores[a].qa_id.cmp(&scores[b].qa_id))
        });
    };

    for s in scores.iter() {
        if !HOPS.contains(&s.hop) {
            log::warn!("score for {} has hop {} outside 2..=5; excluded", s.qa_id, s.hop);
        }
    }

    if per_hop {
        for (row, &hop) in HOPS.iter().enumerate() {
            let mut indices: Vec<usize> = (0..scores.len())
                .filter(|&i| scores[i].hop == hop)
                .collect();
            order(scores, &mut indices);
            if !indices.is_empty() && indices.len() < QUARTILE_BINS {
                log::warn!(
                    "hop {hop} has only {} queries; some quartile bins will be empty",
                    indices.len()
                );
            }
            let sizes = balanced_sizes(indices.len());
            let mut cursor = 0;
            for (bin, &size) in sizes.iter().enumerate() {
                for &i in &indices[cursor..cursor + size] {
                    scores[i].bin = Some(bin);
                    cells[row][bin].query_ids.push(scores[i].qa_id.clone());
                    cells[row][bin].count += 1;
                }
                cursor += size;
            }
        }
    } else {
        let mut indices: Vec<usize> = (0..scores.len())
            .filter(|&i| HOPS.contains(&scores[i].hop))
            .collect();
        order(scores, &mut indices);
        let sizes = balanced_sizes(indices.len());
        let mut cursor = 0;
        for (bin, &size) in sizes.iter().enumerate() {
            for &i in &indices[cursor..cursor + size] {
                scores[i].bin = Some(bin);
                let row = HOPS.iter().position(|&h| h == scores[i].hop).unwrap();
                cells[row][bin].query_ids.push(scores[i].qa_id.clone());
                cells[row][bin].count += 1;
            }
            cursor += size;
        }
    }

    DifficultyMatrix {
        hops: HOPS.to_vec(),
        per_hop,
        aggregator,
        cells,
    }
}
