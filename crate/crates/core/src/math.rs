//! Gaussian density primitives shared by every stage of the pipeline.
//!
//! All densities are handled in log space. Covariances are factorized with a
//! Cholesky decomposition; a matrix that fails factorization gets a single
//! ridge `1e-6 * trace / d` added to its diagonal before giving up.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{GmmError, Result};
use crate::model::MixtureModel;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// `ln(2π)`
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

const RIDGE_FRACTION: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-10;
const PSD_CLAMP_FRACTION: f64 = 1e-10;

/// Lower Cholesky factor of a covariance matrix, stored row-major so the
/// forward substitution walks contiguous memory.
#[derive(Debug, Clone)]
pub struct CovFactor {
    dim: usize,
    lower: Vec<f64>,
    log_det: f64,
    ridge: f64,
}

impl CovFactor {
    /// Factorizes `cov`, retrying once with a trace-scaled ridge.
    /// `component` is only used to label the error.
    pub fn new(cov: &Matrix, component: usize) -> Result<Self> {
        let d = cov.nrows();
        if d == 0 || cov.ncols() != d {
            return Err(GmmError::Shape(format!("covariance is {}x{}", cov.nrows(), cov.ncols())));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::SingularCovariance { component });
        }
        if let Some(f) = Self::try_factor(cov, 0.0) {
            return Ok(f);
        }
        let ridge = RIDGE_FRACTION * cov.trace() / d as f64;
        if !(ridge > 0.0 && ridge.is_finite()) {
            return Err(GmmError::SingularCovariance { component });
        }
        Self::try_factor(cov, ridge).ok_or(GmmError::SingularCovariance { component })
    }

    fn try_factor(cov: &Matrix, ridge: f64) -> Option<Self> {
        let d = cov.nrows();
        let mut m = cov.clone();
        // factor the symmetric part only
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = s;
                m[(j, i)] = s;
            }
            m[(i, i)] += ridge;
        }
        let chol = m.cholesky()?;
        let l = chol.l();
        let mut lower = vec![0.0; d * d];
        let mut log_det = 0.0;
        for i in 0..d {
            for j in 0..=i {
                lower[i * d + j] = l[(i, j)];
            }
            let diag = l[(i, i)];
            if !diag.is_finite() || diag <= 0.0 {
                return None;
            }
            log_det += 2.0 * diag.ln();
        }
        Some(Self { dim: d, lower, log_det, ridge })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Ridge that had to be added for the factorization to succeed (0 if none).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Solves `L y = v` in place.
    pub fn forward_solve(&self, v: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let mut s = v[i];
            for (lij, yj) in row.iter().zip(v[..i].iter()) {
                s -= lij * yj;
            }
            v[i] = s / self.lower[i * d + i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_solve(&self, v: &mut [f64]) {
        let d = self.dim;
        for i in (0..d).rev() {
            let mut s = v[i];
            for (j, vj) in v.iter().enumerate().skip(i + 1) {
                s -= self.lower[j * d + i] * vj;
            }
            v[i] = s / self.lower[i * d + i];
        }
    }

    /// `Lᵀ v`
    pub fn upper_mul(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d).map(|i| (i..d).map(|j| self.lower[j * d + i] * v[j]).sum()).collect()
    }

    /// `vᵀ Σ⁻¹ v`, using `scratch` (length d) as workspace.
    pub fn quad_form_with(&self, v: &[f64], scratch: &mut [f64]) -> f64 {
        scratch.copy_from_slice(v);
        self.forward_solve(scratch);
        scratch.iter().map(|y| y * y).sum()
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.dim];
        self.quad_form_with(v, &mut scratch)
    }

    /// `Σ⁻¹ v`
    pub fn solve(&self, v: &[f64]) -> Vector {
        let mut y = v.to_vec();
        self.forward_solve(&mut y);
        self.backward_solve(&mut y);
        Vector::from_vec(y)
    }

    pub fn precision(&self) -> Matrix {
        let d = self.dim;
        let mut out = Matrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for k in 0..d {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[k] = 1.0;
            let col = self.solve(&e);
            out.set_column(k, &col);
        }
        symmetrize(&mut out);
        out
    }

    /// Log density of a point whose offset from the mean is `diff`.
    pub fn log_density_of_offset(&self, diff: &[f64], scratch: &mut [f64]) -> f64 {
        -0.5 * (self.dim as f64 * LN_2PI + self.log_det + self.quad_form_with(diff, scratch))
    }
}

fn check_dims(x: &Vector, mean: &Vector, cov: &Matrix) -> Result<()> {
    if x.len() != mean.len() || cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(GmmError::Shape(format!(
            "x has {} entries, mean {}, covariance {}x{}",
            x.len(),
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    Ok(())
}

/// `ln N(x | mean, cov)`.
pub fn gaussian_log_density(x: &Vector, mean: &Vector, cov: &Matrix) -> Result<f64> {
    check_dims(x, mean, cov)?;
    let f = CovFactor::new(cov, 0)?;
    let diff: Vec<f64> = x.iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
    let mut scratch = vec![0.0; diff.len()];
    Ok(f.log_density_of_offset(&diff, &mut scratch))
}

/// `sqrt(vᵀ Σ⁻¹ v)`.
pub fn mahalanobis_norm(v: &Vector, cov: &Matrix) -> Result<f64> {
    if cov.nrows() != v.len() || cov.ncols() != v.len() {
        return Err(GmmError::Shape(format!("vector of {} vs covariance {}x{}", v.len(), cov.nrows(), cov.ncols())));
    }
    let f = CovFactor::new(cov, 0)?;
    Ok(f.quad_form(v.as_slice()).max(0.0).sqrt())
}

/// Numerically stable `ln Σ exp(v_i)`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln Σ_i ω_i N(x | μ_i, Σ_i)`.
pub fn mixture_log_likelihood(x: &Vector, model: &MixtureModel) -> Result<f64> {
    if model.components.is_empty() {
        return Err(GmmError::InvalidModel("mixture has no components".into()));
    }
    let sum: f64 = model.components.iter().map(|c| c.weight).sum();
    if (sum - 1.0).abs() > 1e-8 {
        return Err(GmmError::InvalidModel(format!("weights sum to {sum}")));
    }
    let prepared = model.prepare()?;
    prepared.log_likelihood(x.as_slice())
}

pub fn symmetrize(m: &mut Matrix) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Largest relative asymmetry `max |a_ij - a_ji| / max |a|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let d = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn is_symmetric(m: &Matrix) -> bool {
    m.is_square() && asymmetry(m) < SYMMETRY_TOL
}

/// Symmetrizes and clamps eigenvalues from below at `1e-10 * trace / d`.
pub fn repair_psd(cov: &Matrix) -> Matrix {
    let floor = PSD_CLAMP_FRACTION * cov.trace().abs() / cov.nrows() as f64;
    clamp_eigenvalues(cov, floor)
}

/// Symmetrized `cov` with every eigenvalue raised to at least `floor`.
pub fn clamp_eigenvalues(cov: &Matrix, floor: f64) -> Matrix {
    let mut m = cov.clone();
    symmetrize(&mut m);
    let floor = floor.max(f64::MIN_POSITIVE);
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return m;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let mut out = v * Matrix::from_diagonal(&clamped) * v.transpose();
    symmetrize(&mut out);
    out
}

pub fn min_eigenvalue(cov: &Matrix) -> f64 {
    let mut m = cov.clone();
    symmetrize(&mut m);
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Sample mean and covariance with denominator `n`.
pub fn sample_moments(points: &[&Vector]) -> Option<(Vector, Matrix)> {
    let n = points.len();
    if n == 0 {
        return None;
    }
    let d = points[0].len();
    let mut mean = Vector::zeros(d);
    for p in points {
        mean += *p;
    }
    mean /= n as f64;
    let mut cov = Matrix::zeros(d, d);
    for p in points {
        let diff = *p - &mean;
        cov.ger(1.0, &diff, &diff, 1.0);
    }
    cov /= n as f64;
    Some((mean, cov))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
