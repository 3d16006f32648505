//! Vector assembly, z-score normalization and PCA.
//!
//! Statistics are fitted once on the offline set and frozen; online batches
//! are always transformed with the offline statistics.

use nalgebra::SymmetricEigen;

use crate::error::{GmmError, Result};
use crate::math::{Matrix, Vector};

/// Eigenvalues below this fraction of the largest are treated as zero.
const EIGEN_NOISE_FLOOR: f64 = 1e-12;

/// Concatenates `m` parameter series of `n` samples each, parameter-major:
/// `[x¹₁ … x¹ₙ, x²₁ … xᵐₙ]`.
pub fn assemble_vector(series: &[Vec<f64>], m: usize, n: usize) -> Result<Vector> {
    if series.len() != m {
        return Err(GmmError::Shape(format!("expected {m} parameters, got {}", series.len())));
    }
    let mut out = Vec::with_capacity(m * n);
    for (p, s) in series.iter().enumerate() {
        if s.len() != n {
            return Err(GmmError::Shape(format!("parameter {p} has {} samples, expected {n}", s.len())));
        }
        for (t, v) in s.iter().enumerate() {
            if !v.is_finite() {
                return Err(GmmError::NonFinite { parameter: p, sample: t });
            }
            out.push(*v);
        }
    }
    Ok(Vector::from_vec(out))
}

fn common_dim(data: &[Vector]) -> Result<usize> {
    let d = data[0].len();
    if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| v.len() != d) {
        return Err(GmmError::Shape(format!("vector {i} has {} entries, expected {d}", v.len())));
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub means: Vector,
    pub stddevs: Vector,
}

impl NormalizationStats {
    /// Per-dimension mean and standard deviation (denominator N). A
    /// zero-variance dimension gets stddev 1 and only gets centered.
    pub fn fit(data: &[Vector]) -> Result<Self> {
        if data.len() < 2 {
            return Err(GmmError::InsufficientData { needed: 2, got: data.len() });
        }
        let d = common_dim(data)?;
        let n = data.len() as f64;
        let mut means = Vector::zeros(d);
        for x in data {
            means += x;
        }
        means /= n;
        let mut var = Vector::zeros(d);
        for x in data {
            let diff = x - &means;
            var += diff.component_mul(&diff);
        }
        var /= n;
        let stddevs = var.map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        Ok(Self { means, stddevs })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.dim() {
            return Err(GmmError::Shape(format!("vector has {} entries, normalization expects {}", x.len(), self.dim())));
        }
        Ok((x - &self.means).component_div(&self.stddevs))
    }

    pub fn invert(&self, z: &Vector) -> Result<Vector> {
        if z.len() != self.dim() {
            return Err(GmmError::Shape(format!("vector has {} entries, normalization expects {}", z.len(), self.dim())));
        }
        Ok(z.component_mul(&self.stddevs) + &self.means)
    }

    pub fn apply_all(&self, data: &[Vector]) -> Result<Vec<Vector>> {
        data.iter().map(|x| self.apply(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// k × d, orthonormal rows.
    pub basis: Matrix,
    pub center: Vector,
    pub explained_fraction: f64,
}

impl PcaProjection {
    /// Keeps the smallest number of leading components whose eigenvalue mass
    /// reaches `explained` of the total.
    pub fn fit(data: &[Vector], explained: f64) -> Result<Self> {
        if !(explained > 0.0 && explained <= 1.0) {
            return Err(GmmError::Config(format!("explained fraction {explained} outside (0, 1]")));
        }
        if data.len() < 2 {
            return Err(GmmError::InsufficientData { needed: 2, got: data.len() });
        }
        let d = common_dim(data)?;
        let n = data.len() as f64;
        let mut center = Vector::zeros(d);
        for x in data {
            center += x;
        }
        center /= n;
        let mut cov = Matrix::zeros(d, d);
        for x in data {
            let diff = x - &center;
            cov.ger(1.0 / n, &diff, &diff, 1.0);
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let largest = eig.eigenvalues[order[0]].max(0.0);
        let floor = EIGEN_NOISE_FLOOR * largest;
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).map(|v| if v > floor { v } else { 0.0 }).collect();
        let total: f64 = values.iter().sum();

        let k = if total <= 0.0 {
            1
        } else {
            let mut acc = 0.0;
            let mut k = values.len();
            for (i, v) in values.iter().enumerate() {
                acc += v;
                if acc >= explained * total * (1.0 - 1e-12) {
                    k = i + 1;
                    break;
                }
            }
            k
        };
        let mut basis = Matrix::zeros(k, d);
        for (row, &idx) in order.iter().take(k).enumerate() {
            basis.set_row(row, &eig.eigenvectors.column(idx).transpose());
        }
        let kept: f64 = values.iter().take(k).sum();
        let explained_fraction = if total > 0.0 { kept / total } else { 1.0 };
        Ok(Self { basis, center, explained_fraction })
    }

    pub fn k(&self) -> usize {
        self.basis.nrows()
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.center.len() {
            return Err(GmmError::Shape(format!("vector has {} entries, projection expects {}", x.len(), self.center.len())));
        }
        Ok(&self.basis * (x - &self.center))
    }

    pub fn reconstruct(&self, z: &Vector) -> Result<Vector> {
        if z.len() != self.k() {
            return Err(GmmError::Shape(format!("score has {} entries, projection keeps {}", z.len(), self.k())));
        }
        Ok(self.basis.transpose() * z + &self.center)
    }

    pub fn apply_all(&self, data: &[Vector]) -> Result<Vec<Vector>> {
        data.iter().map(|x| self.apply(x)).collect()
    }
}

/// Frozen transform applied to every input: optional z-scoring followed by
/// an optional PCA projection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessing {
    pub normalization: Option<NormalizationStats>,
    pub pca: Option<PcaProjection>,
}

impl Preprocessing {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Fits z-scoring (when `normalize`) and then PCA on the normalized data
    /// (when `pca_explained` is set).
    pub fn fit(data: &[Vector], normalize: bool, pca_explained: Option<f64>) -> Result<Self> {
        let normalization = if normalize { Some(NormalizationStats::fit(data)?) } else { None };
        let pca = match pca_explained {
            Some(f) => {
                let z = match &normalization {
                    Some(n) => n.apply_all(data)?,
                    None => data.to_vec(),
                };
                Some(PcaProjection::fit(&z, f)?)
            }
            None => None,
        };
        Ok(Self { normalization, pca })
    }

    /// Input dimension, when any stage is present.
    pub fn input_dim(&self) -> Option<usize> {
        self.normalization.as_ref().map(NormalizationStats::dim).or_else(|| self.pca.as_ref().map(|p| p.center.len()))
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        let z = match &self.normalization {
            Some(n) => n.apply(x)?,
            None => x.clone(),
        };
        match &self.pca {
            Some(p) => p.apply(&z),
            None => Ok(z),
        }
    }

    pub fn apply_all(&self, data: &[Vector]) -> Result<Vec<Vector>> {
        data.iter().map(|x| self.apply(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    #[test]
    fn assemble_examples() {
        assert_eq!(assemble_vector(&[vec![1.0, 2.0, 3.0]], 1, 3).unwrap(), v(&[1.0, 2.0, 3.0]));
        assert_eq!(assemble_vector(&[vec![1.0, 2.0], vec![3.0, 4.0]], 2, 2).unwrap(), v(&[1.0, 2.0, 3.0, 4.0]));
        let takeoff: Vec<Vec<f64>> = (0..9).map(|p| (0..90).map(|t| (p * 90 + t) as f64).collect()).collect();
        let x = assemble_vector(&takeoff, 9, 90).unwrap();
        assert_eq!(x.len(), 810);
        assert_eq!(x[91], 91.0);
    }

    #[test]
    fn assemble_errors() {
        assert!(matches!(assemble_vector(&[vec![1.0], vec![1.0, 2.0]], 2, 2), Err(GmmError::Shape(_))));
        assert_eq!(
            assemble_vector(&[vec![1.0, 2.0], vec![3.0, f64::NAN]], 2, 2).unwrap_err(),
            GmmError::NonFinite { parameter: 1, sample: 1 }
        );
    }

    #[test]
    fn normalization_examples() {
        let s = NormalizationStats::fit(&[v(&[0.0]), v(&[2.0])]).unwrap();
        assert_eq!(s.means, v(&[1.0]));
        assert_eq!(s.stddevs, v(&[1.0]));
        let c = NormalizationStats::fit(&[v(&[5.0]), v(&[5.0]), v(&[5.0])]).unwrap();
        assert_eq!(c.stddevs, v(&[1.0]));
        assert!(matches!(NormalizationStats::fit(&[v(&[1.0])]), Err(GmmError::InsufficientData { .. })));
    }

    #[test]
    fn normalization_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<Vector> = (0..100).map(|_| Vector::from_fn(4, |i, _| rng.random::<f64>() * (i as f64 + 1.0) + i as f64)).collect();
        let s = NormalizationStats::fit(&data).unwrap();
        for j in 0..4 {
            let mean = data.iter().map(|x| x[j]).sum::<f64>() / 100.0;
            let var = data.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / 100.0;
            assert_abs_diff_eq!(s.means[j], mean, epsilon = 1e-12);
            assert_abs_diff_eq!(s.stddevs[j], var.sqrt(), epsilon = 1e-12);
        }
        // normalized fit set: mean 0, variance 1
        let z = s.apply_all(&data).unwrap();
        for j in 0..4 {
            let mean = z.iter().map(|x| x[j]).sum::<f64>() / 100.0;
            let var = z.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / 100.0;
            assert!(mean.abs() < 1e-8 && (var - 1.0).abs() < 1e-8);
        }
        // apply and invert
        let x = v(&[3.3, -1.0, 7.5, 0.25]);
        assert_eq!(s.apply(&s.means).unwrap(), Vector::zeros(4));
        let ones = s.apply(&(&s.means + &s.stddevs)).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let back = s.invert(&s.apply(&x).unwrap()).unwrap();
        assert!((back - x).amax() < 1e-12);
        assert!(s.apply(&v(&[1.0])).is_err());
    }

    #[test]
    fn pca_rank_one_line() {
        let data: Vec<Vector> = (0..20).map(|i| v(&[i as f64, 2.0 * i as f64, -(i as f64)])).collect();
        let p = PcaProjection::fit(&data, 0.99).unwrap();
        assert_eq!(p.k(), 1);
        assert_eq!(p.apply(&p.center).unwrap(), Vector::zeros(1));
    }

    #[test]
    fn pca_isotropic_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = rand_distr::StandardNormal;
        let data: Vec<Vector> = (0..400).map(|_| v(&[rng.sample(normal), rng.sample(normal)])).collect();
        let p = PcaProjection::fit(&data, 0.5).unwrap();
        // oracle: full eigendecomposition, largest eigenvalue alone exceeds half the trace
        let mut cov = Matrix::zeros(2, 2);
        for x in &data {
            let d = x - &p.center;
            cov += &d * d.transpose() / 400.0;
        }
        let eig = SymmetricEigen::new(cov.clone());
        let top = eig.eigenvalues.max();
        assert!(top >= 0.5 * cov.trace());
        assert_eq!(p.k(), 1);
        assert_abs_diff_eq!(p.explained_fraction, top / cov.trace(), epsilon = 1e-10);
    }

    #[test]
    fn pca_reconstruction_error_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = rand_distr::StandardNormal;
        let scales = [5.0, 3.0, 1.0, 0.5, 0.1, 0.05];
        let data: Vec<Vector> = (0..300).map(|_| Vector::from_fn(6, |i, _| scales[i] * rng.sample::<f64, _>(normal))).collect();
        let explained = 0.95;
        let p = PcaProjection::fit(&data, explained).unwrap();
        // orthonormal rows
        let gram = &p.basis * p.basis.transpose();
        assert!((gram - Matrix::identity(p.k(), p.k())).amax() < 1e-8);
        assert!(p.explained_fraction >= explained);
        let total: f64 = data.iter().map(|x| (x - &p.center).norm_squared()).sum::<f64>() / 300.0;
        let err: f64 = data
            .iter()
            .map(|x| (p.reconstruct(&p.apply(x).unwrap()).unwrap() - x).norm_squared())
            .sum::<f64>()
            / 300.0;
        assert!(err <= (1.0 - explained) * total + 1e-9, "{err} > {}", (1.0 - explained) * total);
        // identity basis recovers the centered vector
        let id = PcaProjection { basis: Matrix::identity(6, 6), center: p.center.clone(), explained_fraction: 1.0 };
        let x = &data[0];
        assert!((id.apply(x).unwrap() - (x - &p.center)).amax() < 1e-15);
    }

    #[test]
    fn pca_high_dim_bounded_by_sample_rank() {
        // 810-dim vectors from 9 smooth parameter curves, 60 records
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = rand_distr::StandardNormal;
        let data: Vec<Vector> = (0..60)
            .map(|_| {
                let amp: Vec<f64> = (0..9).map(|_| rng.sample::<f64, _>(normal)).collect();
                let series: Vec<Vec<f64>> = (0..9)
                    .map(|p| (0..90).map(|t| amp[p] * ((t as f64) / 15.0 + p as f64).sin() + 0.01 * rng.sample::<f64, _>(normal)).collect())
                    .collect();
                assemble_vector(&series, 9, 90).unwrap()
            })
            .collect();
        let p = PcaProjection::fit(&data, 0.99).unwrap();
        assert!(p.k() <= 59, "k = {}", p.k());
        assert!(p.k() >= 1);
    }

    #[test]
    fn pipeline_chains_normalization_and_pca() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<Vector> = (0..200).map(|_| Vector::from_fn(4, |i, _| (i as f64 + 1.0) * rng.random::<f64>() + 10.0)).collect();
        let pre = Preprocessing::fit(&data, true, Some(1.0)).unwrap();
        let n = NormalizationStats::fit(&data).unwrap();
        let pca = PcaProjection::fit(&n.apply_all(&data).unwrap(), 1.0).unwrap();
        assert_eq!(pre.input_dim(), Some(4));
        assert_eq!(pre.apply(&data[3]).unwrap(), pca.apply(&n.apply(&data[3]).unwrap()).unwrap());
        assert_eq!(Preprocessing::identity().apply(&data[0]).unwrap(), data[0]);
        assert_eq!(Preprocessing::identity().input_dim(), None);
    }
}
