//! Diagonal-covariance Gaussian mixture fitting for soft-clustering claim
//! embeddings. EM runs in log space; covariances are diagonal with a floor
//! because full covariance in embedding dimensions is ill-conditioned at
//! this scale.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Component responsibility mass below this triggers reinitialization.
pub const DEGENERATE_MASS: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum GmmError {
    #[error("component count must be at least 1")]
    ZeroComponents,
    #[error("{n} points cannot support {k} components")]
    TooFewPoints { n: usize, k: usize },
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("cannot fit a mixture to an empty point set")]
    Empty,
    #[error("assignment input count {got} does not match id count {expected}")]
    IdCountMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    /// Mixture weights; sum to 1 within 1e-9.
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Per-component diagonal variances, each entry >= VARIANCE_FLOOR.
    pub covariances: Vec<Vec<f64>>,
    /// Log-likelihood after each E-step since the last component
    /// reinitialization; non-decreasing within 1e-7.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub claim_id: String,
    /// Posterior over components; sums to 1 within 1e-9.
    pub responsibilities: Vec<f64>,
    /// Component ids with responsibility >= tau, argmax always included.
    pub memberships: Vec<usize>,
}

/// Default component count: one per 20 points, clamped to [2, 64].
pub fn default_component_count(n: usize) -> usize {
    n.div_ceil(20).clamp(2, 64)
}

fn check_points(points: &[Vec<f64>]) -> Result<usize, GmmError> {
    let Some(first) = points.first() else {
        return Err(GmmError::Empty);
    };
    let dim = first.len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(GmmError::DimensionMismatch {
                index: i,
                got: p.len(),
                expected: dim,
            });
        }
    }
    Ok(dim)
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-dimension variance of the whole point set, floored.
fn global_variance(points: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = points.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; dim];
    for p in points {
        for ((v, x), m) in var.iter_mut().zip(p).zip(&mean) {
            *v += (x - m) * (x - m) / n;
        }
    }
    for v in &mut var {
        *v = v.max(VARIANCE_FLOOR);
    }
    var
}

/// k-means++-style seeding: first center uniform, each next center drawn
/// with probability proportional to squared distance from the nearest
/// already-chosen center.
fn seed_means(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    means.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &means[0])).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All points coincide with existing centers.
            rng.gen_range(0..points.len())
        };
        means.push(points[next].clone());
        for (dist, p) in d2.iter_mut().zip(points) {
            *dist = dist.min(sq_dist(p, means.last().unwrap()));
        }
    }
    means
}

/// Log density of a diagonal Gaussian at `x`, plus the log mixture weight.
fn log_component_density(x: &[f64], weight: f64, mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = weight.ln();
    for ((xi, mi), vi) in x.iter().zip(mean).zip(var) {
        acc -= 0.5 * ((2.0 * std::f64::consts::PI * vi).ln() + (xi - mi) * (xi - mi) / vi);
    }
    acc
}

/// One E-step: responsibilities (row-stochastic) and total log-likelihood.
fn e_step(
    points: &[Vec<f64>],
    weights: &[f64],
    means: &[Vec<f64>],
    vars: &[Vec<f64>],
) -> (Vec<Vec<f64>>, f64) {
    let k = weights.len();
    let mut resp = Vec::with_capacity(points.len());
    let mut ll = 0.0;
    for p in points {
        let logs: Vec<f64> = (0..k)
            .map(|j| log_component_density(p, weights[j], &means[j], &vars[j]))
            .collect();
        let norm = logsumexp(&logs);
        ll += norm;
        resp.push(logs.iter().map(|l| (l - norm).exp()).collect());
    }
    (resp, ll)
}

/// Index of the point farthest (by squared distance) from its nearest mean.
fn farthest_point(points: &[Vec<f64>], means: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = means
            .iter()
            .map(|m| sq_dist(p, m))
            .fold(f64::INFINITY, f64::min);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Fits a diagonal-covariance GMM by EM with k-means++-style seeding.
/// Deterministic for a fixed seed. Components whose responsibility mass
/// collapses below `DEGENERATE_MASS` are reinitialized from the farthest
/// point; the likelihood trace restarts when that happens so the recorded
/// trace always reflects an uninterrupted EM ascent.
pub fn fit_gmm(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<GmmModel, GmmError> {
    if k == 0 {
        return Err(GmmError::ZeroComponents);
    }
    let dim = check_points(points)?;
    let n = points.len();
    if n < k {
        return Err(GmmError::TooFewPoints { n, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_var = global_variance(points, dim);
    let mut means = seed_means(points, k, &mut rng);
    let mut vars = vec![init_var.clone(); k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut trace: Vec<f64> = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iters {
        iterations = iter + 1;
        let (resp, ll) = e_step(points, &weights, &means, &vars);
        trace.push(ll);
        if prev_ll.is_finite() && (ll - prev_ll).abs() < tol {
            converged = true;
            break;
        }
        prev_ll = ll;

        // M-step with degeneracy repair.
        let masses: Vec<f64> = (0..k).map(|j| resp.iter().map(|r| r[j]).sum()).collect();
        let mut reinitialized = false;
        for j in 0..k {
            if masses[j] < DEGENERATE_MASS || !masses[j].is_finite() {
                let far = farthest_point(points, &means);
                log::warn!(
                    "gmm component {j} degenerated (mass {:.3e}); reinitializing from point {far}",
                    masses[j]
                );
                means[j] = points[far].clone();
                vars[j] = init_var.clone();
                weights[j] = 1.0 / n as f64;
                reinitialized = true;
                continue;
            }
            weights[j] = masses[j] / n as f64;
            let mut mean = vec![0.0; dim];
            for (r, p) in resp.iter().zip(points) {
                for (m, x) in mean.iter_mut().zip(p) {
                    *m += r[j] * x / masses[j];
                }
            }
            let mut var = vec![0.0; dim];
            for (r, p) in resp.iter().zip(points) {
                for ((v, x), m) in var.iter_mut().zip(p).zip(&mean) {
                    *v += r[j] * (x - m) * (x - m) / masses[j];
                }
            }
            for v in &mut var {
                *v = v.max(VARIANCE_FLOOR);
            }
            means[j] = mean;
            vars[j] = var;
        }
        if reinitialized {
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            trace.clear();
            prev_ll = f64::NEG_INFINITY;
        }
    }

    if trace.is_empty() {
        // A reinitialization on the final iteration cleared the trace;
        // record the likelihood of the parameters actually returned.
        let (_, ll) = e_step(points, &weights, &means, &vars);
        trace.push(ll);
    }

    Ok(GmmModel {
        k,
        dim,
        weights,
        means,
        covariances: vars,
        log_likelihood_trace: trace,
        iterations,
        converged,
        seed,
    })
}

/// E-step posteriors for `embeddings` under a fitted model, thresholded
/// into soft memberships: every component with responsibility >= `tau`,
/// and always the argmax component.
pub fn assign(
    model: &GmmModel,
    embeddings: &[Vec<f64>],
    claim_ids: &[String],
    tau: f64,
) -> Result<Vec<ClusterAssignment>, GmmError> {
    if embeddings.len() != claim_ids.len() {
        return Err(GmmError::IdCountMismatch {
            got: embeddings.len(),
            expected: claim_ids.len(),
        });
    }
    if embeddings.is_empty() {
        return Ok(Vec::new());
    }
    let dim = check_points(embeddings)?;
    if dim != model.dim {
        return Err(GmmError::DimensionMismatch {
            index: 0,
            got: dim,
            expected: model.dim,
        });
    }
    let (resp, _) = e_step(embeddings, &model.weights, &model.means, &model.covariances);
    Ok(resp
        .into_iter()
        .zip(claim_ids)
        .map(|(r, id)| {
            let argmax = r
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
                .map(|(i, _)| i)
                .unwrap();
            let mut memberships: Vec<usize> = (0..r.len())
                .filter(|&j| j == argmax || r[j] >= tau)
                .collect();
            memberships.sort_unstable();
            ClusterAssignment {
                claim_id: id.clone(),
                responsibilities: r,
                memberships,
            }
        })
        .collect())
}

/// Bayesian information criterion for a fitted model; lower is better.
pub fn bic(model: &GmmModel, n: usize) -> f64 {
    let ll = model.log_likelihood_trace.last().copied().unwrap_or(0.0);
    let params = (model.k - 1) + 2 * model.k * model.dim;
    -2.0 * ll + params as f64 * (n as f64).ln()
}

/// Sweeps a doubling ladder of component counts and returns the K with the
/// lowest BIC (ties to the smaller K), along with the scores.
pub fn select_k_bic(
    points: &[Vec<f64>],
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<(usize, Vec<(usize, f64)>), GmmError> {
    let n = points.len();
    let candidates: Vec<usize> = [2usize, 4, 8, 16, 32, 64]
        .into_iter()
        .filter(|&k| k <= n && k <= 64)
        .collect();
    if candidates.is_empty() {
        return Err(GmmError::TooFewPoints { n, k: 2 });
    }
    let mut scores = Vec::new();
    for &k in &candidates {
        let model = fit_gmm(points, k, seed, max_iters, tol)?;
        scores.push((k, bic(&model, n)));
    }
    let best = scores
        .iter()
        .copied()
        .min_by(|(ka, a), (kb, b)| a.partial_cmp(b).unwrap().then(ka.cmp(kb)))
        .unwrap()
        .0;
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn single_component_recovers_the_centroid() {
        let points = one_d(&[1.0, 2.0, 3.0, 6.0]);
        let model = fit_gmm(&points, 1, 7, 100, 1e-10).unwrap();
        assert_eq!(model.weights, vec![1.0]);
        assert!((model.means[0][0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn two_far_blobs_separate_for_most_seeds() {
        let points = one_d(&[0.0, 0.1, 10.0, 10.1]);
        let ids: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let mut good = 0;
        for seed in 0..10u64 {
            let model = fit_gmm(&points, 2, seed, 200, 1e-10).unwrap();
            let assignments = assign(&model, &points, &ids, 0.2).unwrap();
            let argmax = |a: &ClusterAssignment| -> usize {
                a.responsibilities
                    .iter()
                    .enumerate()
                    .max_by(|(_, x), (_, y)| x.partial_cmp(y).unwrap())
                    .unwrap()
                    .0
            };
            let low = argmax(&assignments[0]);
            if argmax(&assignments[1]) == low
                && argmax(&assignments[2]) != low
                && argmax(&assignments[2]) == argmax(&assignments[3])
            {
                good += 1;
            }
        }
        assert!(good >= 9, "only {good}/10 seeds separated the blobs");
    }

    #[test]
    fn likelihood_trace_is_non_decreasing() {
        let mut points = Vec::new();
        for i in 0..30 {
            let base = if i % 3 == 0 {
                0.0
            } else if i % 3 == 1 {
                5.0
            } else {
                20.0
            };
            points.push(vec![base + (i as f64) * 0.01, base - (i as f64) * 0.02]);
        }
        let model = fit_gmm(&points, 3, 42, 200, 1e-10).unwrap();
        for w in model.log_likelihood_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-7,
                "trace decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn responsibilities_are_row_stochastic() {
        let points = one_d(&[0.0, 1.0, 2.0, 9.0, 10.0, 11.0]);
        let ids: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
        let model = fit_gmm(&points, 2, 3, 200, 1e-9).unwrap();
        let assignments = assign(&model, &points, &ids, 0.2).unwrap();
        for a in &assignments {
            let sum: f64 = a.responsibilities.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(!a.memberships.is_empty());
        }
        let wsum: f64 = model.weights.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-9);
        for var in &model.covariances {
            assert!(var.iter().all(|&v| v >= VARIANCE_FLOOR));
        }
    }

    #[test]
    fn fixed_seed_is_bit_stable() {
        let points = one_d(&[0.0, 0.5, 4.0, 4.5, 9.0, 9.5]);
        let a = fit_gmm(&points, 3, 11, 150, 1e-9).unwrap();
        let b = fit_gmm(&points, 3, 11, 150, 1e-9).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn tau_of_one_keeps_only_the_argmax() {
        let points = one_d(&[0.0, 0.1, 10.0, 10.1]);
        let ids: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let model = fit_gmm(&points, 2, 0, 200, 1e-10).unwrap();
        for a in assign(&model, &points, &ids, 1.0).unwrap() {
            assert_eq!(a.memberships.len(), 1);
        }
    }

    #[test]
    fn point_at_a_separated_mean_gets_high_responsibility() {
        let points = one_d(&[0.0, 0.2, 0.1, 50.0, 50.1, 50.2]);
        let model = fit_gmm(&points, 2, 5, 200, 1e-10).unwrap();
        let probe = vec![model.means[0].clone()];
        let ids = vec!["probe".to_string()];
        let a = assign(&model, &probe, &ids, 0.2).unwrap();
        assert!(a[0].responsibilities[0] > 0.99);
    }

    #[test]
    fn farthest_point_is_found() {
        let points = one_d(&[0.0, 0.0, 0.0, 10.0]);
        assert_eq!(farthest_point(&points, &[vec![0.0]]), 3);
    }

    #[test]
    fn input_validation_errors() {
        assert!(matches!(
            fit_gmm(&one_d(&[1.0]), 0, 0, 10, 1e-8),
            Err(GmmError::ZeroComponents)
        ));
        assert!(matches!(
            fit_gmm(&one_d(&[1.0]), 2, 0, 10, 1e-8),
            Err(GmmError::TooFewPoints { n: 1, k: 2 })
        ));
        assert!(matches!(
            fit_gmm(&[], 1, 0, 10, 1e-8),
            Err(GmmError::Empty)
        ));
        assert!(matches!(
            fit_gmm(&[vec![1.0], vec![1.0, 2.0]], 1, 0, 10, 1e-8),
            Err(GmmError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn default_component_count_follows_the_ladder() {
        assert_eq!(default_component_count(1), 2);
        assert_eq!(default_component_count(40), 2);
        assert_eq!(default_component_count(41), 3);
        assert_eq!(default_component_count(100), 5);
        assert_eq!(default_component_count(2000), 64);
    }

    #[test]
    fn bic_prefers_the_true_component_count() {
        // Two Gaussian blobs via Box-Muller from a fixed stream.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut points = Vec::new();
        for i in 0..40 {
            let center = if i < 20 { 0.0 } else { 30.0 };
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            points.push(vec![center + 0.1 * z]);
        }
        let (best, scores) = select_k_bic(&points, 7, 200, 1e-8).unwrap();
        assert_eq!(best, 2, "scores: {scores:?}");
    }
}
