//! k-means++ seeding and Lloyd iterations, used to initialize EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GmmError, Result};
use crate::math::{sample_moments, Matrix, Vector};
use crate::model::GaussianComponent;

const MAX_LLOYD_ITERS: usize = 300;
const RIDGE_FRACTION: f64 = 1e-6;

fn sq_dist(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ridge added to every k-means covariance: `1e-6 * trace(global cov) / d`.
pub fn ridge_for(data: &[Vector]) -> f64 {
    let refs: Vec<&Vector> = data.iter().collect();
    let d = data[0].len() as f64;
    let trace = sample_moments(&refs).map(|(_, c)| c.trace()).unwrap_or(0.0);
    let r = RIDGE_FRACTION * trace / d;
    if r > 0.0 && r.is_finite() {
        r
    } else {
        RIDGE_FRACTION
    }
}

fn sample_index(d2: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut target = rng.random::<f64>() * total;
    let mut pick = d2.len() - 1;
    for (i, w) in d2.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        if target < *w {
            pick = i;
            break;
        }
        target -= w;
    }
    pick
}

/// Greedy k-means++: each step draws `2 + ln k` candidates and keeps the one
/// that lowers the potential most.
fn plus_plus_seeds(data: &[Vector], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let n = data.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![data[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    let mut chosen = vec![false; n];
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut best: Option<(f64, usize, Vec<f64>)> = None;
            for _ in 0..trials {
                let cand = sample_index(&d2, total, rng);
                let next: Vec<f64> = data.iter().zip(&d2).map(|(x, &d)| d.min(sq_dist(x, &data[cand]))).collect();
                let potential: f64 = next.iter().sum();
                if best.as_ref().is_none_or(|b| potential < b.0) {
                    best = Some((potential, cand, next));
                }
            }
            let (_, cand, next) = best.expect("at least one trial");
            d2 = next;
            cand
        } else {
            // every point coincides with a center already; take the next unused index
            let i = (0..n).find(|&i| !chosen[i]).unwrap_or(0);
            for (j, x) in data.iter().enumerate() {
                d2[j] = d2[j].min(sq_dist(x, &data[i]));
            }
            i
        };
        chosen[idx] = true;
        centers.push(data[idx].clone());
    }
    centers
}

fn assign(data: &[Vector], centers: &[Vector], labels: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, x) in data.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.iter().enumerate() {
            let d = sq_dist(x, center);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if labels[i] != best {
            labels[i] = best;
            changed = true;
        }
    }
    changed
}

fn cluster_sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

fn recompute_centers(data: &[Vector], labels: &[usize], centers: &mut [Vector]) {
    let k = centers.len();
    let d = data[0].len();
    let mut sums = vec![Vector::zeros(d); k];
    let sizes = cluster_sizes(labels, k);
    for (x, &l) in data.iter().zip(labels) {
        sums[l] += x;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            centers[c] = &sums[c] / sizes[c] as f64;
        }
    }
}

/// Hard k-means labels and centroids.
pub fn kmeans(data: &[Vector], k: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vector>)> {
    if k == 0 {
        return Err(GmmError::Config("K must be at least 1".into()));
    }
    if data.len() < k {
        return Err(GmmError::InsufficientData { needed: k, got: data.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seeds(data, k, &mut rng);
    let mut labels = vec![usize::MAX; data.len()];
    assign(data, &centers, &mut labels);
    for _ in 0..MAX_LLOYD_ITERS {
        recompute_centers(data, &labels, &mut centers);
        if !assign(data, &centers, &mut labels) {
            break;
        }
    }
    let sizes = cluster_sizes(&labels, k);
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        // re-seed at the point farthest from its own centroid, then reassign once
        let far = data
            .iter()
            .enumerate()
            .map(|(i, x)| (i, sq_dist(x, &centers[labels[i]])))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        centers[empty] = data[far].clone();
        assign(data, &centers, &mut labels);
        recompute_centers(data, &labels, &mut centers);
        let sizes = cluster_sizes(&labels, k);
        if let Some(still) = sizes.iter().position(|&s| s == 0) {
            return Err(GmmError::DegenerateK { k, cluster: still });
        }
    }
    Ok((labels, centers))
}

/// Initial mixture components from k-means: cluster fractions as weights,
/// centroids as means, per-cluster sample covariance plus a small ridge.
pub fn kmeans_init(data: &[Vector], k: usize, seed: u64) -> Result<Vec<GaussianComponent>> {
    let (labels, _) = kmeans(data, k, seed)?;
    let ridge = ridge_for(data);
    let n = data.len() as f64;
    let d = data[0].len();
    let mut members: Vec<Vec<&Vector>> = vec![Vec::new(); k];
    for (x, &l) in data.iter().zip(&labels) {
        members[l].push(x);
    }
    Ok(members
        .iter()
        .map(|pts| {
            let (mean, mut cov) = sample_moments(pts).expect("clusters are non-empty");
            cov += Matrix::identity(d, d) * ridge;
            GaussianComponent::new(pts.len() as f64 / n, mean, cov, pts.len() as f64)
        })
        .collect())
}
