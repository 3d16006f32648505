//! DBSCAN over stored outliers and the k-th neighbor epsilon heuristic.

use serde::{Deserialize, Serialize};

use crate::error::{GmmError, Result};
use crate::math::{euclidean, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(eps: f64, min_pts: usize) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(GmmError::Config(format!("eps must be positive and finite, got {eps}")));
        }
        if min_pts == 0 {
            return Err(GmmError::Config("min_pts must be at least 1".into()));
        }
        Ok(DbscanParams { eps, min_pts })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Cluster(usize),
    Noise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbscanLabeling {
    pub labels: Vec<Label>,
    pub core: Vec<bool>,
    pub n_clusters: usize,
}

impl DbscanLabeling {
    /// Point indices of each cluster, in cluster-id order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let Label::Cluster(c) = l {
                out[*c].push(i);
            }
        }
        out
    }

    pub fn noise(&self) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| **l == Label::Noise).map(|(i, _)| i).collect()
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
}

/// Distance from each point to its k-th nearest other point.
pub fn kth_neighbor_distances(points: &[Vector], k: usize) -> Result<Vec<f64>> {
    if k == 0 || points.len() <= k {
        return Err(GmmError::InsufficientData { needed: k + 1, got: points.len() });
    }
    let mut out = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        dists.clear();
        dists.extend(points.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| euclidean(p.as_slice(), q.as_slice())));
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        out.push(dists[k - 1]);
    }
    Ok(out)
}

/// `percentile` of the k-th neighbor distances of `points`.
pub fn epsilon_heuristic(points: &[Vector], k: usize, percentile_level: f64) -> Result<f64> {
    let mut d = kth_neighbor_distances(points, k)?;
    Ok(percentile(&mut d, percentile_level))
}

/// Median pairwise distance, used when too few clustered points exist.
pub fn median_pairwise_distance(points: &[Vector]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut d = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(euclidean(points[i].as_slice(), points[j].as_slice()));
        }
    }
    Some(percentile(&mut d, 0.5))
}

fn neighbors(points: &[Vector], i: usize, eps: f64) -> Vec<usize> {
    (0..points.len()).filter(|&j| euclidean(points[i].as_slice(), points[j].as_slice()) <= eps).collect()
}

/// Classic DBSCAN. Neighborhoods are closed balls and include the point
/// itself; clusters are grown from core points in index order.
pub fn dbscan(points: &[Vector], params: DbscanParams) -> DbscanLabeling {
    let n = points.len();
    let hoods: Vec<Vec<usize>> = (0..n).map(|i| neighbors(points, i, params.eps)).collect();
    let core: Vec<bool> = hoods.iter().map(|h| h.len() >= params.min_pts).collect();
    let mut labels = vec![Label::Noise; n];
    let mut assigned = vec![false; n];
    let mut n_clusters = 0;
    for seed in 0..n {
        if !core[seed] || assigned[seed] {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        let mut stack = vec![seed];
        assigned[seed] = true;
        labels[seed] = Label::Cluster(id);
        while let Some(p) = stack.pop() {
            for &q in &hoods[p] {
                if assigned[q] {
                    continue;
                }
                assigned[q] = true;
                labels[q] = Label::Cluster(id);
                if core[q] {
                    stack.push(q);
                }
            }
        }
    }
    DbscanLabeling { labels, core, n_clusters }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    /// Naive reference: full distance matrix, clusters are connected components
    /// of the core graph numbered by their lowest core index, and a border point
    /// joins the adjacent cluster with the lowest number.
    fn oracle(points: &[Vector], eps: f64, min_pts: usize) -> (Vec<bool>, Vec<Label>) {
        let n = points.len();
        let dm: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| euclidean(points[i].as_slice(), points[j].as_slice())).collect()).collect();
        let core: Vec<bool> = (0..n).map(|i| dm[i].iter().filter(|&&d| d <= eps).count() >= min_pts).collect();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if !core[s] || comp[s] != usize::MAX {
                continue;
            }
            // flood fill over the core graph
            let mut frontier = vec![s];
            comp[s] = next;
            while let Some(p) = frontier.pop() {
                for q in 0..n {
                    if core[q] && comp[q] == usize::MAX && dm[p][q] <= eps {
                        comp[q] = next;
                        frontier.push(q);
                    }
                }
            }
            next += 1;
        }
        let labels = (0..n)
            .map(|i| {
                if core[i] {
                    Label::Cluster(comp[i])
                } else {
                    (0..n).filter(|&j| core[j] && dm[i][j] <= eps).map(|j| comp[j]).min().map_or(Label::Noise, Label::Cluster)
                }
            })
            .collect();
        (core, labels)
    }

    fn check_against_oracle(points: &[Vector], eps: f64, min_pts: usize) {
        let got = dbscan(points, DbscanParams::new(eps, min_pts).unwrap());
        let (core, labels) = oracle(points, eps, min_pts);
        assert_eq!(got.core, core);
        assert_eq!(got.labels, labels);
    }

    #[test]
    fn collinear_fifth_neighbor() {
        let pts: Vec<Vector> = (0..6).map(|i| v(&[i as f64])).collect();
        let d = kth_neighbor_distances(&pts, 5).unwrap();
        assert_eq!(d, vec![5.0, 4.0, 3.0, 3.0, 4.0, 5.0]);
        assert_eq!(epsilon_heuristic(&pts, 5, 0.9).unwrap(), 5.0);
    }

    #[test]
    fn identical_points_give_zero_eps() {
        let pts = vec![v(&[1.0, 1.0]); 8];
        assert_eq!(epsilon_heuristic(&pts, 5, 0.9).unwrap(), 0.0);
        assert!(DbscanParams::new(0.0, 5).is_err());
        assert!(epsilon_heuristic(&pts[..5], 5, 0.9).is_err());
    }

    #[test]
    fn unit_grid_matches_bruteforce_knn() {
        let pts: Vec<Vector> = (0..100).map(|i| v(&[(i % 10) as f64, (i / 10) as f64])).collect();
        let got = kth_neighbor_distances(&pts, 5).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let mut all: Vec<f64> = pts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| (p - q).norm()).collect();
            all.sort_by(f64::total_cmp);
            assert_eq!(got[i], all[4]);
        }
        let mut sorted = got.clone();
        sorted.sort_by(f64::total_cmp);
        let pos = 0.9 * 99.0;
        let want = sorted[89] + (pos - 89.0) * (sorted[90] - sorted[89]);
        assert_eq!(epsilon_heuristic(&pts, 5, 0.9).unwrap(), want);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&mut [1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(percentile(&mut [7.0], 0.9), 7.0);
        assert_eq!(median_pairwise_distance(&[v(&[0.0]), v(&[1.0]), v(&[3.0])]), Some(2.0));
    }

    #[test]
    fn tight_blob_is_one_cluster() {
        let pts: Vec<Vector> = (0..10).map(|i| v(&[i as f64 * 0.01, 0.0])).collect();
        let l = dbscan(&pts, DbscanParams::new(1.0, 5).unwrap());
        assert_eq!(l.n_clusters, 1);
        assert!(l.noise().is_empty());
    }

    #[test]
    fn isolated_points_are_noise() {
        let pts: Vec<Vector> = (0..10).map(|i| v(&[i as f64 * 10.0, 0.0])).collect();
        let l = dbscan(&pts, DbscanParams::new(1.0, 5).unwrap());
        assert_eq!(l.n_clusters, 0);
        assert_eq!(l.noise().len(), 10);
    }

    #[test]
    fn two_blobs_and_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        for cx in [0.0, 20.0] {
            for _ in 0..30 {
                pts.push(v(&[cx + z.sample(&mut rng), z.sample(&mut rng)]));
            }
        }
        for p in [[10.0, 40.0], [-30.0, -30.0], [50.0, 5.0], [10.0, -40.0], [-40.0, 20.0]] {
            pts.push(v(&p));
        }
        let l = dbscan(&pts, DbscanParams::new(1.5, 5).unwrap());
        assert_eq!(l.n_clusters, 2);
        for i in 60..65 {
            assert_eq!(l.labels[i], Label::Noise);
        }
        check_against_oracle(&pts, 1.5, 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_oracle(raw in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..120), eps in 0.2f64..2.0, min_pts in 1usize..7) {
            let pts: Vec<Vector> = raw.iter().map(|(a, b)| v(&[*a, *b])).collect();
            check_against_oracle(&pts, eps, min_pts);
        }

        #[test]
        fn permutation_invariant(raw in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..80), shift in 1usize..79) {
            let pts: Vec<Vector> = raw.iter().map(|(a, b)| v(&[*a, *b])).collect();
            let n = pts.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let permuted: Vec<Vector> = perm.iter().map(|&i| pts[i].clone()).collect();
            let p = DbscanParams::new(1.0, 4).unwrap();
            let a = dbscan(&pts, p);
            let b = dbscan(&permuted, p);
            prop_assert_eq!(a.n_clusters, b.n_clusters);
            // core points are a partition invariant; compare their co-membership
            for i in 0..n {
                for j in 0..n {
                    if a.core[perm[i]] && a.core[perm[j]] {
                        prop_assert_eq!(a.labels[perm[i]] == a.labels[perm[j]], b.labels[i] == b.labels[j]);
                    }
                }
                prop_assert_eq!(a.labels[perm[i]] == Label::Noise, b.labels[i] == Label::Noise);
            }
        }
    }
}
