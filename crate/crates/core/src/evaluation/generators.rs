//! Synthetic designs: an unbalanced 2-D set, a well-separated 32-D set and an
//! overlapping 3-D set. Label 0 is always the cluster held out of the
//! offline data.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::math::{Matrix, Vector};
use crate::model::CovarianceStructure;
use crate::offline::KChoice;
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: Vec<Vector>,
    pub labels: Vec<usize>,
    pub design: String,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn n_labels(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// One Gaussian cluster of a design.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub size: usize,
    pub mean: Vector,
    pub covariance: Matrix,
}

/// Split parameters used with a design by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolDefaults {
    pub holdout_label: usize,
    pub holdout_offline_fraction: f64,
    pub other_offline_fraction: f64,
    pub n_online: usize,
    pub alpha: f64,
    pub offline_k: KChoice,
    /// Number of generating clusters.
    pub true_k: usize,
    pub covariance: CovarianceStructure,
}

pub trait DataGenerator: Send + Sync {
    fn name(&self) -> &'static str;
    fn clusters(&self) -> Vec<ClusterSpec>;
    fn protocol(&self) -> ProtocolDefaults;

    fn generate(&self, seed: u64) -> LabeledDataset {
        sample_clusters(self.name(), &self.clusters(), seed)
    }
}

/// Draws every cluster in label order from one seeded stream.
pub fn sample_clusters(design: &str, clusters: &[ClusterSpec], seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (label, c) in clusters.iter().enumerate() {
        let l = c.covariance.clone().cholesky().expect("cluster covariance is positive definite").l();
        let d = c.mean.len();
        for _ in 0..c.size {
            let z = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            points.push(&c.mean + &l * z);
            labels.push(label);
        }
    }
    LabeledDataset { points, labels, design: design.to_string(), seed }
}

fn cov2(a: f64, b: f64, c: f64) -> Matrix {
    Matrix::from_row_slice(2, 2, &[a, b, b, c])
}

/// Three dense clusters of 2000 points on the left, five sparse clusters of
/// 100 points on the right.
pub struct Unbalance;

impl DataGenerator for Unbalance {
    fn name(&self) -> &'static str {
        "unbalance"
    }

    fn clusters(&self) -> Vec<ClusterSpec> {
        let dense = [((-25.0, 18.0), cov2(4.0, 1.0, 3.0)), ((-35.0, -5.0), cov2(5.0, -1.2, 4.0)), ((-15.0, -12.0), cov2(3.5, 0.5, 5.0))];
        let sparse = [
            ((20.0, 15.0), cov2(9.0, 2.0, 7.0)),
            ((35.0, 5.0), cov2(8.0, -1.5, 9.0)),
            ((25.0, -10.0), cov2(9.0, 0.0, 8.0)),
            ((45.0, -15.0), cov2(7.0, 1.0, 9.0)),
            ((40.0, 22.0), cov2(8.0, 2.5, 8.0)),
        ];
        dense
            .into_iter()
            .map(|(m, c)| (2000, m, c))
            .chain(sparse.into_iter().map(|(m, c)| (100, m, c)))
            .map(|(size, (x, y), covariance)| ClusterSpec { size, mean: Vector::from_vec(vec![x, y]), covariance })
            .collect()
    }

    fn protocol(&self) -> ProtocolDefaults {
        ProtocolDefaults {
            holdout_label: 0,
            holdout_offline_fraction: 0.01,
            other_offline_fraction: 0.85,
            n_online: 5,
            alpha: 0.01,
            offline_k: KChoice::Bic { lo: 2, hi: 10 },
            true_k: 8,
            covariance: CovarianceStructure::Full,
        }
    }
}

/// Sixteen well-separated isotropic clusters of 64 points in 32 dimensions.
pub struct DimHigh;

/// Cluster centers do not depend on the sampling seed.
const DIM_HIGH_CENTER_SEED: u64 = 0x5EED_0032;

impl DataGenerator for DimHigh {
    fn name(&self) -> &'static str {
        "dimhigh"
    }

    fn clusters(&self) -> Vec<ClusterSpec> {
        let d = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(DIM_HIGH_CENTER_SEED);
        let coord = Uniform::new(0.0, 200.0).expect("valid range");
        (0..16)
            .map(|_| ClusterSpec { size: 64, mean: Vector::from_fn(d, |_, _| coord.sample(&mut rng)), covariance: Matrix::identity(d, d) * 100.0 })
            .collect()
    }

    fn protocol(&self) -> ProtocolDefaults {
        ProtocolDefaults {
            holdout_label: 0,
            holdout_offline_fraction: 0.10,
            other_offline_fraction: 0.85,
            n_online: 5,
            alpha: 0.01,
            offline_k: KChoice::Bic { lo: 10, hi: 20 },
            true_k: 16,
            covariance: CovarianceStructure::Diagonal,
        }
    }
}

/// Five overlapping 3-D clusters of 500, 600, 400, 300 and 200 points.
pub struct Overlap3d;

/// Covariance scale; nearest centers end up about 3.2 sd apart.
const OVERLAP_SCALE: f64 = 0.85;

impl DataGenerator for Overlap3d {
    fn name(&self) -> &'static str {
        "overlap3d"
    }

    fn clusters(&self) -> Vec<ClusterSpec> {
        let spec = [
            (500, [3.5, 3.5, 2.0], [1.0, 0.2, 0.0, 0.2, 1.1, 0.1, 0.0, 0.1, 0.9]),
            (600, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
            (400, [3.0, 0.0, 0.0], [0.9, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 1.1]),
            (300, [0.0, 3.0, 0.0], [1.1, 0.0, 0.1, 0.0, 0.9, 0.0, 0.1, 0.0, 1.0]),
            (200, [0.0, 0.0, 3.0], [1.0, -0.1, 0.0, -0.1, 1.0, 0.1, 0.0, 0.1, 1.0]),
        ];
        spec.iter()
            .map(|(size, m, c)| ClusterSpec { size: *size, mean: Vector::from_column_slice(m), covariance: Matrix::from_row_slice(3, 3, c) * OVERLAP_SCALE })
            .collect()
    }

    fn protocol(&self) -> ProtocolDefaults {
        ProtocolDefaults {
            holdout_label: 0,
            holdout_offline_fraction: 0.01,
            other_offline_fraction: 0.85,
            n_online: 5,
            alpha: 0.01,
            offline_k: KChoice::Bic { lo: 2, hi: 8 },
            true_k: 5,
            covariance: CovarianceStructure::Full,
        }
    }
}

pub fn generators() -> Registry<dyn DataGenerator> {
    let mut r: Registry<dyn DataGenerator> = Registry::new("design");
    r.register("unbalance", Arc::new(Unbalance));
    r.register("dimhigh", Arc::new(DimHigh));
    r.register("overlap3d", Arc::new(Overlap3d));
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sample_moments;

    fn moment_check(g: &dyn DataGenerator, seed: u64) {
        let data = g.generate(seed);
        for (label, c) in g.clusters().iter().enumerate() {
            let pts: Vec<&Vector> = data.points.iter().zip(&data.labels).filter(|(_, l)| **l == label).map(|(p, _)| p).collect();
            assert_eq!(pts.len(), c.size);
            let (mean, _) = sample_moments(&pts).unwrap();
            for j in 0..mean.len() {
                let se = (c.covariance[(j, j)] / c.size as f64).sqrt();
                assert!((mean[j] - c.mean[j]).abs() < 4.0 * se, "{} cluster {label} coord {j}", g.name());
            }
        }
    }

    #[test]
    fn sizes_and_dimensions() {
        let r = generators();
        let expect = [("unbalance", 6500, 2, 8), ("dimhigh", 1024, 32, 16), ("overlap3d", 2000, 3, 5)];
        for (name, n, d, k) in expect {
            let g = r.get(name).unwrap();
            let data = g.generate(1);
            assert_eq!(data.len(), n);
            assert_eq!(data.dim(), d);
            assert_eq!(data.n_labels(), k);
            assert_eq!(g.protocol().true_k, k);
        }
    }

    #[test]
    fn means_within_standard_errors() {
        for g in [&Unbalance as &dyn DataGenerator, &DimHigh, &Overlap3d] {
            moment_check(g, 7);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(Unbalance.generate(3), Unbalance.generate(3));
        assert_ne!(Unbalance.generate(3).points, Unbalance.generate(4).points);
        assert_eq!(DimHigh.clusters(), DimHigh.clusters());
    }

    #[test]
    fn overlap_design_is_tight() {
        let c = Overlap3d.clusters();
        let mut nearest = f64::INFINITY;
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                nearest = nearest.min((&c[i].mean - &c[j].mean).norm());
            }
        }
        // unit-scale covariances: nearest centers sit about 3 sd apart
        assert!((2.0..=3.5).contains(&nearest), "{nearest}");
    }
}
