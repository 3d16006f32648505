//! Standard (non-robust) EM for Gaussian mixtures.

use crate::error::{GmmError, Result};
use crate::math::{symmetrize, CovFactor, Matrix, Vector};
use crate::model::{CovarianceStructure, GaussianComponent, MixtureModel, PreparedMixture};
use crate::offline::kmeans::kmeans_init;

pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_RESTARTS: usize = 5;

/// Scale of an objective summed over `n` points: `max(|value|, n)`. Log
/// likelihoods near zero would otherwise make a relative test unreachable.
pub(crate) fn objective_scale(value: f64, n: usize) -> f64 {
    value.abs().max(n as f64)
}

/// Responsibilities below this are dropped from the M-step sums.
const NEGLIGIBLE_RESP: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: MixtureModel,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood_trace: Vec<f64>,
}

/// Hard counts: number of points whose maximal posterior is each component.
pub fn hard_counts(prepared: &PreparedMixture, data: &[Vector]) -> Vec<f64> {
    let mut ws = prepared.workspace();
    let mut counts = vec![0.0; prepared.k()];
    for x in data {
        prepared.log_likelihood_ws(x.as_slice(), &mut ws);
        counts[PreparedMixture::best_component(&ws)] += 1.0;
    }
    counts
}

/// Computes the n×K responsibility matrix (row-major) and the total log
/// likelihood. `shifts` optionally offsets each point before evaluation.
pub(crate) fn e_step(prepared: &PreparedMixture, data: &[Vector], shifts: Option<&[Option<Vector>]>, resp: &mut Vec<f64>) -> f64 {
    let k = prepared.k();
    resp.resize(data.len() * k, 0.0);
    let mut ws = prepared.workspace();
    let mut total = 0.0;
    for (n, x) in data.iter().enumerate() {
        let shift = shifts.and_then(|s| s[n].as_ref()).map(|o| o.as_slice());
        total += prepared.posteriors_ws(x.as_slice(), shift, &mut ws, &mut resp[n * k..(n + 1) * k]);
    }
    total
}

/// Weighted covariance around `mean`; a matrix that cannot be factorized is
/// replaced by its ridged version.
pub(crate) fn finish_covariance(mut cov: Matrix, component: usize) -> Result<Matrix> {
    symmetrize(&mut cov);
    let f = CovFactor::new(&cov, component)?;
    if f.ridge() > 0.0 {
        let d = cov.nrows();
        cov += Matrix::identity(d, d) * f.ridge();
    }
    Ok(cov)
}

/// M-step from responsibilities. Components whose total responsibility is
/// negligible keep their previous mean and covariance.
pub(crate) fn m_step(
    data: &[Vector],
    shifts: Option<&[Option<Vector>]>,
    resp: &[f64],
    prev: &[GaussianComponent],
    structure: CovarianceStructure,
) -> Result<Vec<GaussianComponent>> {
    let k = prev.len();
    let d = prev[0].dim();
    let n = data.len() as f64;
    let mut out = Vec::with_capacity(k);
    for (i, old) in prev.iter().enumerate() {
        let mut nk = 0.0;
        let mut mean = Vector::zeros(d);
        for (j, x) in data.iter().enumerate() {
            let r = resp[j * k + i];
            if r <= NEGLIGIBLE_RESP {
                continue;
            }
            nk += r;
            match shifts.and_then(|s| s[j].as_ref()) {
                Some(o) => mean.axpy(r, &(x - o), 1.0),
                None => mean.axpy(r, x, 1.0),
            }
        }
        if nk <= 1e-10 {
            out.push(GaussianComponent::new(nk / n, old.mean.clone(), old.covariance.clone(), nk));
            continue;
        }
        mean /= nk;
        let mut cov = Matrix::zeros(d, d);
        let mut diff = Vector::zeros(d);
        for (j, x) in data.iter().enumerate() {
            let r = resp[j * k + i];
            if r <= NEGLIGIBLE_RESP {
                continue;
            }
            diff.copy_from(x);
            diff -= &mean;
            if let Some(o) = shifts.and_then(|s| s[j].as_ref()) {
                diff -= o;
            }
            cov.ger(r / nk, &diff, &diff, 1.0);
        }
        out.push(GaussianComponent::new(nk / n, mean, finish_covariance(structure.project(cov), i)?, nk));
    }
    Ok(out)
}

/// Runs EM from `init` until the relative log-likelihood change drops below
/// `tol` or `max_iters` is reached. Counts on the returned model are hard
/// assignment counts.
pub fn fit_standard_em(data: &[Vector], init: &[GaussianComponent], structure: CovarianceStructure, max_iters: usize, tol: f64) -> Result<EmFit> {
    if init.is_empty() {
        return Err(GmmError::InvalidModel("no initial components".into()));
    }
    if data.len() < init.len() {
        return Err(GmmError::InsufficientData { needed: init.len(), got: data.len() });
    }
    let mut comps = init.to_vec();
    for c in &mut comps {
        c.covariance = structure.project(c.covariance.clone());
    }
    normalize(&mut comps);
    let mut resp = Vec::new();
    let mut trace = Vec::new();
    let mut prev_ll = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;
    let mut prepared = PreparedMixture::new(&comps)?;
    loop {
        let ll = e_step(&prepared, data, None, &mut resp);
        trace.push(ll);
        if prev_ll.is_finite() && (ll - prev_ll).abs() < tol * objective_scale(ll, data.len()) {
            converged = true;
            break;
        }
        if iterations >= max_iters {
            break;
        }
        prev_ll = ll;
        comps = m_step(data, None, &resp, &comps, structure)?;
        normalize(&mut comps);
        prepared = PreparedMixture::new(&comps)?;
        iterations += 1;
    }
    let counts = hard_counts(&prepared, data);
    for (c, n) in comps.iter_mut().zip(counts) {
        c.count = n;
    }
    let mut model = MixtureModel::new(comps)?.with_structure(structure);
    model.normalize_weights();
    Ok(EmFit { model, log_likelihood: *trace.last().unwrap(), iterations, converged, log_likelihood_trace: trace })
}

pub(crate) fn normalize(comps: &mut [GaussianComponent]) {
    let s: f64 = comps.iter().map(|c| c.weight).sum();
    if s > 0.0 {
        comps.iter_mut().for_each(|c| c.weight /= s);
    }
}

/// SplitMix64 step, used to derive per-restart seeds.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Best-of-`restarts` standard EM with k-means++ initialization.
pub fn fit_best_of(data: &[Vector], k: usize, seed: u64, restarts: usize, structure: CovarianceStructure) -> Result<EmFit> {
    let mut best: Option<EmFit> = None;
    let mut last_err = None;
    for r in 0..restarts.max(1) {
        let s = derive_seed(seed, k as u64, r as u64);
        let attempt = kmeans_init(data, k, s).and_then(|init| fit_standard_em(data, &init, structure, DEFAULT_MAX_ITERS, DEFAULT_TOL));
        match attempt {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(GmmError::InvalidModel("no EM restart succeeded".into())))
}
