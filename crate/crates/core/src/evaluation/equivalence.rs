//! Matching components of two mixtures and testing each matched pair.

use std::sync::Arc;

use pathfinding::kuhn_munkres::kuhn_munkres_min;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::math::{mahalanobis_norm, Vector};
use crate::model::{CovarianceStructure, GaussianComponent, MixtureModel};
use crate::offline::em::{fit_best_of, fit_standard_em, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::registry::Registry;
use crate::stat_tests::{compare_components, PairTest};

pub const BATCH_RESTARTS: usize = 5;

/// Standard EM on all of `data` with k-means++ starts; the best of five
/// restarts is kept.
pub fn batch_gmm_fit(data: &[Vector], k: usize, seed: u64, structure: CovarianceStructure) -> Result<MixtureModel> {
    Ok(fit_best_of(data, k, seed, BATCH_RESTARTS, structure)?.model)
}

/// `batch_gmm_fit` with one more EM start from `previous` (a fit on a subset
/// of the same data); the higher likelihood wins.
pub fn batch_gmm_refit(data: &[Vector], k: usize, seed: u64, structure: CovarianceStructure, previous: Option<&MixtureModel>) -> Result<MixtureModel> {
    let fresh = fit_best_of(data, k, seed, BATCH_RESTARTS, structure)?;
    let Some(prev) = previous.filter(|m| m.k() == k) else {
        return Ok(fresh.model);
    };
    match fit_standard_em(data, &prev.components, structure, DEFAULT_MAX_ITERS, DEFAULT_TOL) {
        Ok(warm) if warm.log_likelihood > fresh.log_likelihood => Ok(warm.model),
        _ => Ok(fresh.model),
    }
}

/// Mahalanobis distance between means under the count-weighted pooled
/// covariance.
pub fn pooled_distance(a: &GaussianComponent, b: &GaussianComponent) -> f64 {
    let (na, nb) = (a.count.max(1.0), b.count.max(1.0));
    let pooled = (&a.covariance * na + &b.covariance * nb) / (na + nb);
    mahalanobis_norm(&(&a.mean - &b.mean), &pooled).unwrap_or(f64::INFINITY)
}

pub trait ClusterMatcher: Send + Sync {
    fn name(&self) -> &'static str;
    /// Pairs `(i, j)` of indices into `a` and `b`, one per matched component.
    fn assign(&self, a: &[GaussianComponent], b: &[GaussianComponent]) -> Vec<(usize, usize)>;
}

fn distance_table(a: &[GaussianComponent], b: &[GaussianComponent]) -> Vec<Vec<f64>> {
    a.iter().map(|x| b.iter().map(|y| pooled_distance(x, y)).collect()).collect()
}

/// Repeatedly takes the closest remaining pair.
pub struct GreedyMatcher;

impl ClusterMatcher for GreedyMatcher {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn assign(&self, a: &[GaussianComponent], b: &[GaussianComponent]) -> Vec<(usize, usize)> {
        let table = distance_table(a, b);
        let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(a.len() * b.len());
        for (i, row) in table.iter().enumerate() {
            for (j, &d) in row.iter().enumerate() {
                cand.push((d, i, j));
            }
        }
        cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let (mut used_a, mut used_b) = (vec![false; a.len()], vec![false; b.len()]);
        let mut pairs = Vec::new();
        for (_, i, j) in cand {
            if !used_a[i] && !used_b[j] {
                used_a[i] = true;
                used_b[j] = true;
                pairs.push((i, j));
            }
        }
        pairs.sort_unstable();
        pairs
    }
}

/// Minimum total distance assignment.
pub struct HungarianMatcher;

/// Distances are scaled to integers for the assignment solver.
const COST_SCALE: f64 = 1e6;
const COST_CAP: f64 = 1e9;

impl ClusterMatcher for HungarianMatcher {
    fn name(&self) -> &'static str {
        "hungarian"
    }

    fn assign(&self, a: &[GaussianComponent], b: &[GaussianComponent]) -> Vec<(usize, usize)> {
        if a.is_empty() || b.is_empty() {
            return Vec::new();
        }
        let table = distance_table(a, b);
        let transpose = a.len() > b.len();
        let (rows, cols) = if transpose { (b.len(), a.len()) } else { (a.len(), b.len()) };
        let cost = |r: usize, c: usize| {
            let d = if transpose { table[c][r] } else { table[r][c] };
            (d.min(COST_CAP) * COST_SCALE).round() as i64
        };
        let weights = pathfinding::matrix::Matrix::from_fn(rows, cols, |(r, c)| cost(r, c));
        let (_, assignment) = kuhn_munkres_min(&weights);
        let mut pairs: Vec<(usize, usize)> =
            assignment.into_iter().enumerate().map(|(r, c)| if transpose { (c, r) } else { (r, c) }).collect();
        pairs.sort_unstable();
        pairs
    }
}

pub fn matchers() -> Registry<dyn ClusterMatcher> {
    let mut r: Registry<dyn ClusterMatcher> = Registry::new("matcher");
    r.register("greedy", Arc::new(GreedyMatcher));
    r.register("hungarian", Arc::new(HungarianMatcher));
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub count_a: f64,
    pub count_b: f64,
    /// Absent when a count is too small for the tests.
    pub test: Option<PairTest>,
}

impl PairReport {
    pub fn mean_equal(&self) -> bool {
        self.test.as_ref().is_some_and(|t| t.mean.equal)
    }

    pub fn covariance_equal(&self) -> bool {
        self.test.as_ref().is_some_and(|t| t.covariance.equal)
    }

    pub fn equal(&self) -> bool {
        self.mean_equal() && self.covariance_equal()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub matcher: String,
    pub significance: f64,
    pub k_a: usize,
    pub k_b: usize,
    pub pairs: Vec<PairReport>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
    pub pass: bool,
}

impl EquivalenceReport {
    pub fn pairs_passing(&self) -> usize {
        self.pairs.iter().filter(|p| p.equal()).count()
    }

    pub fn mean_passing(&self) -> usize {
        self.pairs.iter().filter(|p| p.mean_equal()).count()
    }

    pub fn covariance_passing(&self) -> usize {
        self.pairs.iter().filter(|p| p.covariance_equal()).count()
    }

    pub fn failing_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().filter(|p| !p.equal()).map(|p| (p.a, p.b)).collect()
    }

    /// Largest T² and W over matched pairs.
    pub fn max_statistics(&self) -> (f64, f64) {
        self.pairs.iter().filter_map(|p| p.test.as_ref()).fold((0.0, 0.0), |(t, w), pt| (t.max(pt.mean.statistic), w.max(pt.covariance.statistic)))
    }

    /// Largest relative count difference over matched pairs, against `b`.
    pub fn max_relative_count_gap(&self) -> f64 {
        self.pairs.iter().map(|p| (p.count_a - p.count_b).abs() / p.count_b.max(1.0)).fold(0.0, f64::max)
    }
}

/// Pairs are tested under the models' covariance structure when both share
/// one, as full covariances otherwise.
pub fn equivalence_report(a: &MixtureModel, b: &MixtureModel, significance: f64, matcher: &dyn ClusterMatcher) -> Result<EquivalenceReport> {
    let structure = if a.structure == b.structure { a.structure } else { CovarianceStructure::Full };
    let pairs_idx = matcher.assign(&a.components, &b.components);
    let mut pairs = Vec::with_capacity(pairs_idx.len());
    for &(i, j) in &pairs_idx {
        let (ca, cb) = (&a.components[i], &b.components[j]);
        let test = match compare_components(ca, cb, structure, significance) {
            Ok(t) => Some(t),
            Err(crate::error::GmmError::InsufficientCount { .. }) => None,
            Err(e) => return Err(e),
        };
        pairs.push(PairReport { a: i, b: j, distance: pooled_distance(ca, cb), count_a: ca.count, count_b: cb.count, test });
    }
    let unmatched_a = (0..a.k()).filter(|i| !pairs_idx.iter().any(|p| p.0 == *i)).collect();
    let unmatched_b = (0..b.k()).filter(|j| !pairs_idx.iter().any(|p| p.1 == *j)).collect();
    let pass = a.k() == b.k() && pairs.iter().all(|p| p.equal());
    Ok(EquivalenceReport { matcher: matcher.name().to_string(), significance, k_a: a.k(), k_b: b.k(), pairs, unmatched_a, unmatched_b, pass })
}
