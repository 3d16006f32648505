//! Outlier-aware EM: block coordinate descent on
//! `-sum ln p(x_n - o_n) + pi * sum ||o_n||_{W_n}`.
//!
//! Each point's penalty metric `W_n` is frozen for the whole fit (and for a
//! whole pi sweep), so the objective is a fixed function and every block step
//! can only lower it.

use nalgebra::{Cholesky, SymmetricEigen};

use crate::error::{GmmError, Result};
use crate::math::{Matrix, Vector};
use crate::model::{CovarianceStructure, GaussianComponent, PreparedMixture};
use crate::offline::em::{e_step, finish_covariance, normalize, objective_scale};

/// Responsibilities below this are ignored in the outlier-vector step.
const ACTIVE_RESP: f64 = 1e-12;
const BISECTION_STEPS: usize = 200;
/// Consecutive objective increases (beyond `10 * tol`) that abort a fit.
const MAX_INCREASES: usize = 3;
/// Covariance eigenvalues never fall below this fraction of `trace/d` of the
/// starting covariance.
const EIGEN_FLOOR_FRACTION: f64 = 1e-6;

/// Per-point Cholesky factors of the penalty metric.
#[derive(Debug, Clone)]
pub struct PenaltyMetric {
    factors: Vec<Matrix>,
}

impl PenaltyMetric {
    /// `W_n = sum_i Pr(i | x_n) * inv(Sigma_i)` under the given components.
    pub fn from_components(components: &[GaussianComponent], data: &[Vector]) -> Result<Self> {
        let prepared = PreparedMixture::new(components)?;
        let precisions: Vec<Matrix> = (0..prepared.k()).map(|i| prepared.factor(i).precision()).collect();
        let d = prepared.dim();
        let mut ws = prepared.workspace();
        let mut post = vec![0.0; prepared.k()];
        let mut factors = Vec::with_capacity(data.len());
        for (n, x) in data.iter().enumerate() {
            prepared.posteriors_ws(x.as_slice(), None, &mut ws, &mut post);
            let mut w = Matrix::zeros(d, d);
            for (p, prec) in post.iter().zip(&precisions) {
                if *p > 0.0 {
                    w += prec * *p;
                }
            }
            let chol = Cholesky::new(w).ok_or_else(|| GmmError::InvalidModel(format!("penalty metric of point {n} is not positive definite")))?;
            factors.push(chol.l());
        }
        Ok(PenaltyMetric { factors })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// `||o||_{W_n}`.
    pub fn norm(&self, n: usize, o: &Vector) -> f64 {
        (self.factors[n].transpose() * o).norm()
    }

    /// `||inv(L_n) v||`, the dual norm of `v` under `W_n`.
    pub fn dual_norm(&self, n: usize, v: &Vector) -> f64 {
        self.factors[n].solve_lower_triangular(v).map(|q| q.norm()).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustFitReport {
    /// Regularized objective evaluated at the start of each iteration.
    pub objective_trace: Vec<f64>,
    pub pi: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RobustFit {
    pub components: Vec<GaussianComponent>,
    pub offsets: Vec<Option<Vector>>,
    pub report: RobustFitReport,
}

impl RobustFit {
    pub fn outlier_indices(&self) -> Vec<usize> {
        self.offsets.iter().enumerate().filter(|(_, o)| o.is_some()).map(|(i, _)| i).collect()
    }

    pub fn outlier_count(&self) -> usize {
        self.offsets.iter().filter(|o| o.is_some()).count()
    }
}

/// Minimizes `0.5 z'Bz - q'z + pi ||z||` given `||q|| > pi`, with `B = V diag(lambda) V'`.
fn group_prox(b: &Matrix, q: &Vector, pi: f64) -> Vector {
    let eig = SymmetricEigen::new(b.clone());
    let qt = eig.eigenvectors.transpose() * q;
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-300);
    let qnorm = q.norm();
    let residual = |t: f64| -> f64 { qt.iter().zip(eig.eigenvalues.iter()).map(|(qk, lk)| (qk / (lk * t + pi)).powi(2)).sum::<f64>() - 1.0 };
    let (mut lo, mut hi) = (0.0, (qnorm - pi) / lambda_min);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let zt = Vector::from_iterator(qt.len(), qt.iter().zip(eig.eigenvalues.iter()).map(|(qk, lk)| qk * t / (lk * t + pi)));
    eig.eigenvectors * zt
}

/// Exact minimizer over `o` of the surrogate with fixed responsibilities.
fn outlier_step(x: &Vector, resp: &[f64], means: &[Vector], precisions: &[Matrix], l: &Matrix, pi: f64) -> Option<Vector> {
    let d = x.len();
    let mut b = Vector::zeros(d);
    let mut a = Matrix::zeros(d, d);
    for (i, &r) in resp.iter().enumerate() {
        if r < ACTIVE_RESP {
            continue;
        }
        b.gemv(r, &precisions[i], &(x - &means[i]), 1.0);
        a += &precisions[i] * r;
    }
    let q = l.solve_lower_triangular(&b)?;
    if q.norm() <= pi {
        return None;
    }
    let x1 = l.solve_lower_triangular(&a)?;
    let mut bm = l.solve_lower_triangular(&x1.transpose())?;
    crate::math::symmetrize(&mut bm);
    let z = group_prox(&bm, &q, pi);
    let o = l.tr_solve_lower_triangular(&z)?;
    if o.iter().all(|v| *v == 0.0) {
        None
    } else {
        Some(o)
    }
}

fn objective(log_likelihood: f64, pi: f64, metric: &PenaltyMetric, offsets: &[Option<Vector>]) -> f64 {
    let penalty: f64 = offsets.iter().enumerate().filter_map(|(n, o)| o.as_ref().map(|o| metric.norm(n, o))).sum();
    -log_likelihood + if penalty > 0.0 { pi * penalty } else { 0.0 }
}

/// Robust fit with full covariances and `W_n` computed from `init`.
pub fn robust_em_fit(data: &[Vector], init: &[GaussianComponent], pi: f64, max_iters: usize, tol: f64) -> Result<RobustFit> {
    let metric = PenaltyMetric::from_components(init, data)?;
    robust_em_fit_with(data, init, pi, &metric, None, CovarianceStructure::Full, max_iters, tol)
}

/// Robust fit with an explicit penalty metric and optional warm-start offsets.
#[allow(clippy::too_many_arguments)]
pub fn robust_em_fit_with(
    data: &[Vector],
    init: &[GaussianComponent],
    pi: f64,
    metric: &PenaltyMetric,
    warm: Option<&[Option<Vector>]>,
    structure: CovarianceStructure,
    max_iters: usize,
    tol: f64,
) -> Result<RobustFit> {
    if init.is_empty() {
        return Err(GmmError::InvalidModel("no initial components".into()));
    }
    if pi.is_nan() || pi < 0.0 {
        return Err(GmmError::Config(format!("pi must be nonnegative, got {pi}")));
    }
    if metric.len() != data.len() {
        return Err(GmmError::Shape(format!("penalty metric covers {} points, data has {}", metric.len(), data.len())));
    }
    let d = init[0].dim();
    let mut comps = init.to_vec();
    for c in &mut comps {
        c.covariance = structure.project(c.covariance.clone());
    }
    normalize(&mut comps);

    if pi == 0.0 {
        // every residual can be absorbed for free; the model stays at init
        let prepared = PreparedMixture::new(&comps)?;
        let mut ws = prepared.workspace();
        let offsets: Vec<Option<Vector>> = data
            .iter()
            .map(|x| {
                prepared.log_likelihood_ws(x.as_slice(), &mut ws);
                Some(x - &comps[PreparedMixture::best_component(&ws)].mean)
            })
            .collect();
        let report = RobustFitReport { objective_trace: Vec::new(), pi, iterations: 0, converged: true };
        return Ok(RobustFit { components: comps, offsets, report });
    }

    let n = data.len() as f64;
    let k = comps.len();
    let floors: Vec<f64> = comps.iter().map(|c| EIGEN_FLOOR_FRACTION * c.covariance.trace() / d as f64).collect();
    let mut offsets: Vec<Option<Vector>> = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![None; data.len()]);
    let mut resp = Vec::new();
    let mut trace = Vec::new();
    let mut prepared = PreparedMixture::new(&comps)?;
    let mut converged = false;
    let mut increases = 0;
    let mut iterations = 0;
    loop {
        let ll = e_step(&prepared, data, Some(&offsets), &mut resp);
        let f = objective(ll, pi, metric, &offsets);
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if f > prev + 10.0 * tol * objective_scale(prev, data.len()) {
                increases += 1;
            } else {
                increases = 0;
            }
            trace.push(f);
            if increases >= MAX_INCREASES {
                break;
            }
            if (f - prev).abs() < tol * objective_scale(f, data.len()) {
                converged = true;
                break;
            }
        } else {
            trace.push(f);
        }
        if iterations >= max_iters {
            break;
        }

        let nk: Vec<f64> = (0..k).map(|i| (0..data.len()).map(|j| resp[j * k + i]).sum()).collect();
        for (i, c) in comps.iter_mut().enumerate() {
            c.weight = nk[i] / n;
            c.count = nk[i];
        }

        for (i, c) in comps.iter_mut().enumerate() {
            if nk[i] <= 1e-10 {
                continue;
            }
            let mut mean = Vector::zeros(d);
            for (j, x) in data.iter().enumerate() {
                let r = resp[j * k + i];
                if r <= 0.0 {
                    continue;
                }
                match &offsets[j] {
                    Some(o) => mean.axpy(r, &(x - o), 1.0),
                    None => mean.axpy(r, x, 1.0),
                }
            }
            c.mean = mean / nk[i];
        }

        let precisions: Vec<Matrix> = (0..k).map(|i| prepared.factor(i).precision()).collect();
        let means: Vec<Vector> = comps.iter().map(|c| c.mean.clone()).collect();
        for (j, x) in data.iter().enumerate() {
            offsets[j] = outlier_step(x, &resp[j * k..(j + 1) * k], &means, &precisions, &metric.factors[j], pi);
        }

        for (i, c) in comps.iter_mut().enumerate() {
            if nk[i] <= 1e-10 {
                continue;
            }
            let mut cov = Matrix::zeros(d, d);
            let mut diff = Vector::zeros(d);
            for (j, x) in data.iter().enumerate() {
                let r = resp[j * k + i];
                if r <= 0.0 {
                    continue;
                }
                diff.copy_from(x);
                diff -= &c.mean;
                if let Some(o) = &offsets[j] {
                    diff -= o;
                }
                cov.ger(r / nk[i], &diff, &diff, 1.0);
            }
            // the constrained minimizer clamps the spectrum
            c.covariance = finish_covariance(structure.project_floored(cov, floors[i]), i)?;
        }
        normalize(&mut comps);
        prepared = PreparedMixture::new(&comps)?;
        iterations += 1;
    }
    let report = RobustFitReport { objective_trace: trace, pi, iterations, converged };
    Ok(RobustFit { components: comps, offsets, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offline::em::fit_standard_em;
    use crate::offline::kmeans::kmeans_init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn contaminated(seed: u64) -> (Vec<Vector>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::new();
        for cx in [-6.0, 6.0] {
            for _ in 0..150 {
                out.push(Vector::from_vec(vec![cx + z.sample(&mut rng), z.sample(&mut rng)]));
            }
        }
        let planted = [(0.0, 12.0), (0.0, -12.0), (-6.0, 14.0), (6.0, -15.0), (20.0, 0.0)];
        let start = out.len();
        for (a, b) in planted {
            out.push(Vector::from_vec(vec![a, b]));
        }
        (out, (start..start + 5).collect())
    }

    fn standard_start(data: &[Vector]) -> Vec<GaussianComponent> {
        let init = kmeans_init(data, 2, 11).unwrap();
        fit_standard_em(data, &init, CovarianceStructure::Full, 500, 1e-10).unwrap().model.components
    }

    #[test]
    fn prox_matches_soft_threshold_when_b_is_identity() {
        let q = Vector::from_vec(vec![3.0, 4.0]);
        let z = group_prox(&Matrix::identity(2, 2), &q, 2.0);
        // soft threshold: (1 - 2/5) * q
        assert!((z - q * 0.6).amax() < 1e-12);
    }

    #[test]
    fn prox_satisfies_stationarity() {
        let b = Matrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let q = Vector::from_vec(vec![1.5, -2.0, 0.7]);
        let pi = 0.8;
        let z = group_prox(&b, &q, pi);
        let grad = &b * &z - &q + &z * (pi / z.norm());
        assert!(grad.amax() < 1e-9, "{grad}");
    }

    #[test]
    fn objective_is_monotone() {
        let (data, _) = contaminated(1);
        let init = standard_start(&data);
        for pi in [0.5, 3.0, 6.0] {
            let fit = robust_em_fit(&data, &init, pi, 300, 1e-12).unwrap();
            for w in fit.report.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-8, "pi={pi}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn huge_pi_equals_standard_em() {
        let (data, _) = contaminated(2);
        let init = kmeans_init(&data, 2, 5).unwrap();
        let std = fit_standard_em(&data, &init, CovarianceStructure::Full, 500, 1e-6).unwrap();
        let rob = robust_em_fit(&data, &init, 1e6, 500, 1e-6).unwrap();
        assert_eq!(rob.outlier_count(), 0);
        for (a, b) in std.model.components.iter().zip(&rob.components) {
            assert!((a.weight - b.weight).abs() < 1e-6);
            assert!((&a.mean - &b.mean).amax() < 1e-6);
            assert!((&a.covariance - &b.covariance).amax() < 1e-6);
        }
    }

    #[test]
    fn zero_pi_declares_everything() {
        let (data, _) = contaminated(3);
        let init = standard_start(&data);
        let fit = robust_em_fit(&data, &init, 0.0, 100, 1e-8).unwrap();
        assert_eq!(fit.outlier_count(), data.len());
        assert_eq!(fit.components, init);
    }

    #[test]
    fn planted_points_get_offsets() {
        let (data, planted) = contaminated(4);
        let init = standard_start(&data);
        let fit = robust_em_fit(&data, &init, 6.0, 500, 1e-8).unwrap();
        let found = fit.outlier_indices();
        eprintln!("{}", found.len());
        for p in &planted {
            assert!(found.contains(p), "planted {p} missed; found {found:?}");
        }
        assert!(found.len() < 20, "{} outliers", found.len());
    }
}
