//! Offline stage: K selection, outlier-aware fit, pi calibration and the
//! log-likelihood threshold.

pub mod em;
pub mod kmeans;
pub mod robust;

use serde::{Deserialize, Serialize};

use crate::error::{GmmError, Result};
use crate::math::{Matrix, Vector};
use crate::model::{Assignment, CovarianceStructure, GaussianComponent, MixtureModel, Origin, OutlierStore, PreparedMixture};
use em::{e_step, fit_best_of, m_step, normalize, objective_scale, EmFit, DEFAULT_MAX_ITERS, DEFAULT_RESTARTS, DEFAULT_TOL};
use robust::{robust_em_fit_with, PenaltyMetric, RobustFit, RobustFitReport};

pub use em::fit_standard_em;
pub use kmeans::kmeans_init;
pub use robust::robust_em_fit;

/// How K is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KChoice {
    Fixed(usize),
    Bic { lo: usize, hi: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub alpha: f64,
    pub k: KChoice,
    pub seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub pi_ratio: f64,
    pub pi_steps: usize,
    /// Drop start components holding no more points than the outlier budget.
    #[serde(default = "default_prune")]
    pub prune_small: bool,
    /// Start each pi step from the previous step's fit instead of the start
    /// model.
    #[serde(default)]
    pub pi_warm_start: bool,
    #[serde(default)]
    pub covariance: CovarianceStructure,
    /// Bisection steps between the last pi below the target count and the
    /// first one reaching it; 0 keeps the plain geometric sequence.
    #[serde(default = "default_refine")]
    pub pi_refine_steps: usize,
    /// Re-estimate components from the inliers once the outliers are fixed.
    #[serde(default = "default_refit")]
    pub refit_inliers: bool,
}

fn default_refit() -> bool {
    true
}

fn default_refine() -> usize {
    30
}

fn default_prune() -> bool {
    true
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            alpha: 0.01,
            k: KChoice::Bic { lo: 1, hi: 10 },
            seed: 0,
            restarts: DEFAULT_RESTARTS,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            pi_ratio: 0.85,
            pi_steps: 60,
            prune_small: true,
            pi_warm_start: false,
            covariance: CovarianceStructure::Full,
            pi_refine_steps: default_refine(),
            refit_inliers: true,
        }
    }
}

/// `K-1 + K d` plus `K` times the covariance parameters (`d(d+1)/2` when full).
pub fn free_parameters(k: usize, d: usize, structure: CovarianceStructure) -> usize {
    k - 1 + k * d + k * structure.parameters(d)
}

pub fn bic(log_likelihood: f64, k: usize, d: usize, n: usize, structure: CovarianceStructure) -> f64 {
    -2.0 * log_likelihood + free_parameters(k, d, structure) as f64 * (n as f64).ln()
}

#[derive(Debug, Clone)]
pub struct BicEntry {
    pub k: usize,
    pub bic: Option<f64>,
    pub fit: Option<EmFit>,
}

/// Standard-EM fit per K in `lo..=hi`; returns the K with the lowest BIC
/// (ties to the smaller K) and the per-K table. Failing K values are skipped.
pub fn select_k_bic(data: &[Vector], lo: usize, hi: usize, seed: u64, restarts: usize, structure: CovarianceStructure) -> Result<(usize, Vec<BicEntry>)> {
    if lo == 0 || lo > hi {
        return Err(GmmError::Config(format!("invalid K range {lo}..{hi}")));
    }
    if data.is_empty() {
        return Err(GmmError::InsufficientData { needed: hi, got: 0 });
    }
    let d = data[0].len();
    let mut table = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for k in lo..=hi {
        match fit_best_of(data, k, seed, restarts, structure) {
            Ok(fit) => {
                let b = bic(fit.log_likelihood, k, d, data.len(), structure);
                if best.is_none_or(|(_, bb)| b < bb) {
                    best = Some((k, b));
                }
                table.push(BicEntry { k, bic: Some(b), fit: Some(fit) });
            }
            Err(e) => {
                log::warn!("K={k} skipped in BIC selection: {e}");
                table.push(BicEntry { k, bic: None, fit: None });
            }
        }
    }
    match best {
        Some((k, _)) => Ok((k, table)),
        None => Err(GmmError::InsufficientData { needed: lo, got: data.len() }),
    }
}

/// Number of offline outliers targeted for fraction `alpha`.
pub fn target_count(alpha: f64, n: usize) -> usize {
    // guard against 0.01 * 300 = 3.0000000000000004
    let raw = alpha * n as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Data indices sorted by ascending log-likelihood, ties by index.
pub fn likelihood_order(model: &MixtureModel, data: &[Vector]) -> Result<Vec<(usize, f64)>> {
    let prepared = model.prepare()?;
    let mut ws = prepared.workspace();
    let mut scored = Vec::with_capacity(data.len());
    for (i, x) in data.iter().enumerate() {
        if x.len() != model.dimension {
            return Err(GmmError::Shape(format!("point {i} has dimension {}, model has {}", x.len(), model.dimension)));
        }
        scored.push((i, prepared.log_likelihood_ws(x.as_slice(), &mut ws)));
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

/// Log-likelihood of the `ceil(alpha N)`-th lowest point under the plain mixture.
pub fn compute_threshold(model: &MixtureModel, data: &[Vector], alpha: f64) -> Result<f64> {
    let m = target_count(alpha, data.len());
    if m == 0 {
        return Err(GmmError::Config(format!("alpha={alpha} selects no points out of {}", data.len())));
    }
    if m > data.len() {
        return Err(GmmError::InsufficientData { needed: m, got: data.len() });
    }
    Ok(likelihood_order(model, data)?[m - 1].1)
}

/// Offline rule: outlier when `ln p(x) <= r`, else the maximal-posterior component.
pub fn classify_point(prepared: &PreparedMixture, threshold: f64, x: &Vector) -> Result<Assignment> {
    if x.len() != prepared.dim() {
        return Err(GmmError::Shape(format!("point has dimension {}, model has {}", x.len(), prepared.dim())));
    }
    let mut ws = prepared.workspace();
    let ll = prepared.log_likelihood_ws(x.as_slice(), &mut ws);
    if ll <= threshold {
        Ok(Assignment::Outlier)
    } else {
        Ok(Assignment::Component(PreparedMixture::best_component(&ws)))
    }
}

/// Largest value of the statistic that decides whether `o_n` is zero, at the
/// given components (with `A = W`, the test reduces to `||inv(L_n) b_n||`).
fn max_zero_statistic(components: &[GaussianComponent], data: &[Vector], metric: &PenaltyMetric) -> Result<f64> {
    let prepared = PreparedMixture::new(components)?;
    let mut ws = prepared.workspace();
    let mut post = vec![0.0; prepared.k()];
    let mut best: f64 = 0.0;
    for (n, x) in data.iter().enumerate() {
        prepared.posteriors_ws(x.as_slice(), None, &mut ws, &mut post);
        let mut b = Vector::zeros(x.len());
        for (i, p) in post.iter().enumerate() {
            if *p > 0.0 {
                b += prepared.factor(i).solve((x - &components[i].mean).as_slice()) * *p;
            }
        }
        best = best.max(metric.dual_norm(n, &b));
    }
    Ok(best)
}

/// Starting value of the pi sequence.
pub fn initial_pi(data: &[Vector], start: &[GaussianComponent], metric: &PenaltyMetric) -> Result<f64> {
    let refs: Vec<&Vector> = data.iter().collect();
    let (mean, cov) = crate::math::sample_moments(&refs).ok_or(GmmError::InsufficientData { needed: 1, got: 0 })?;
    let factor = crate::math::CovFactor::new(&cov, 0)?;
    let spread = data.iter().map(|x| factor.quad_form((x - &mean).as_slice()).sqrt()).fold(0.0, f64::max);
    let zero_stat = max_zero_statistic(start, data, metric)?;
    Ok((10.0 * spread).max(1.5 * zero_stat))
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub pi: f64,
    pub steps: usize,
    pub fit: RobustFit,
    pub metric_source: Vec<GaussianComponent>,
}

/// Sweeps `pi_g = pi_0 * ratio^g` from a standard-EM fit, stopping at the
/// first fit with at least `ceil(alpha N)` nonzero offsets, then bisects
/// between that pi and the previous one for the largest pi still reaching
/// the target.
pub fn calibrate_pi(data: &[Vector], start: &[GaussianComponent], cfg: &OfflineConfig) -> Result<Calibration> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 0.5) {
        return Err(GmmError::Config(format!("alpha must lie in (0, 0.5), got {}", cfg.alpha)));
    }
    if !(cfg.pi_ratio > 0.0 && cfg.pi_ratio < 1.0) {
        return Err(GmmError::Config(format!("pi ratio must lie in (0, 1), got {}", cfg.pi_ratio)));
    }
    let target = target_count(cfg.alpha, data.len());
    let metric = PenaltyMetric::from_components(start, data)?;
    let pi0 = initial_pi(data, start, &metric)?;
    let mut comps = start.to_vec();
    let mut offsets: Option<Vec<Option<Vector>>> = None;
    let mut best = 0;
    for g in 0..=cfg.pi_steps {
        let pi = pi0 * cfg.pi_ratio.powi(g as i32);
        let fit = robust_em_fit_with(data, &comps, pi, &metric, offsets.as_deref(), cfg.covariance, cfg.max_iters, cfg.tol)?;
        let count = fit.outlier_count();
        log::debug!("pi step {g}: pi={pi:.6} outliers={count} iterations={}", fit.report.iterations);
        best = best.max(count);
        if count >= target {
            let (mut lo, mut fit) = (pi, fit);
            if g > 0 && count > target {
                let mut hi = pi / cfg.pi_ratio;
                for _ in 0..cfg.pi_refine_steps {
                    let mid = 0.5 * (lo + hi);
                    let (from, warm) = if cfg.pi_warm_start { (comps.as_slice(), offsets.as_deref()) } else { (start, None) };
                    let trial = robust_em_fit_with(data, from, mid, &metric, warm, cfg.covariance, cfg.max_iters, cfg.tol)?;
                    let n = trial.outlier_count();
                    log::debug!("pi refine: pi={mid:.6} outliers={n}");
                    if n >= target {
                        lo = mid;
                        fit = trial;
                        if n == target {
                            break;
                        }
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-6 * hi {
                        break;
                    }
                }
            }
            return Ok(Calibration { pi: lo, steps: g, fit, metric_source: start.to_vec() });
        }
        if cfg.pi_warm_start {
            comps = fit.components.clone();
            offsets = Some(fit.offsets);
        }
    }
    Err(GmmError::Calibration { steps: cfg.pi_steps, best, target })
}

#[derive(Debug, Clone)]
pub struct OfflineFit {
    pub model: MixtureModel,
    pub outliers: OutlierStore,
    pub outlier_indices: Vec<usize>,
    pub pi: f64,
    pub pi_steps: usize,
    pub report: RobustFitReport,
    pub bic_table: Vec<(usize, Option<f64>)>,
}

/// Removes components whose hard count is at most `budget`: the outlier
/// mechanism can absorb all of their points. Weights are renormalized; a
/// model is never pruned to nothing.
pub fn prune_small_components(components: &[GaussianComponent], budget: usize) -> Vec<GaussianComponent> {
    let mut kept: Vec<GaussianComponent> = components.iter().filter(|c| c.count > budget as f64).cloned().collect();
    if kept.is_empty() {
        return components.to_vec();
    }
    if kept.len() < components.len() {
        log::info!("pruned {} start components with at most {budget} points", components.len() - kept.len());
        normalize(&mut kept);
    }
    kept
}

const REFIT_MAX_ITERS: usize = 100;

/// Trimmed EM: the `target` lowest-likelihood points are set aside and the
/// components re-estimated from the rest, until the trimmed set stops changing
/// and the inlier log likelihood settles.
pub fn refit_on_inliers(model: &MixtureModel, data: &[Vector], target: usize, tol: f64) -> Result<MixtureModel> {
    let mut comps = model.components.clone();
    let mut trimmed: Vec<usize> = Vec::new();
    let mut prev_ll = f64::NAN;
    let mut resp = Vec::new();
    for _ in 0..REFIT_MAX_ITERS {
        let current = MixtureModel::new(comps.clone())?.with_structure(model.structure);
        let mut out: Vec<usize> = likelihood_order(&current, data)?[..target].iter().map(|(i, _)| *i).collect();
        out.sort_unstable();
        let mut is_out = vec![false; data.len()];
        for &i in &out {
            is_out[i] = true;
        }
        let inliers: Vec<Vector> = data.iter().zip(&is_out).filter(|(_, o)| !**o).map(|(x, _)| x.clone()).collect();
        let ll = e_step(&current.prepare()?, &inliers, None, &mut resp);
        let settled = out == trimmed && (ll - prev_ll).abs() <= tol * objective_scale(ll, data.len());
        if settled {
            break;
        }
        comps = m_step(&inliers, None, &resp, &comps, model.structure)?;
        normalize(&mut comps);
        trimmed = out;
        prev_ll = ll;
    }
    let mut refit = MixtureModel::new(comps)?.with_structure(model.structure);
    refit.normalize_weights();
    Ok(refit)
}

/// Full offline pipeline on already-preprocessed data.
pub fn fit_offline(data: &[Vector], cfg: &OfflineConfig) -> Result<OfflineFit> {
    if data.is_empty() {
        return Err(GmmError::InsufficientData { needed: 1, got: 0 });
    }
    let d = data[0].len();
    if let Some((i, x)) = data.iter().enumerate().find(|(_, x)| x.len() != d) {
        return Err(GmmError::Shape(format!("point {i} has dimension {}, expected {d}", x.len())));
    }
    let (start, bic_table) = match cfg.k {
        KChoice::Fixed(k) => (fit_best_of(data, k, cfg.seed, cfg.restarts, cfg.covariance)?, Vec::new()),
        KChoice::Bic { lo, hi } => {
            let (k, table) = select_k_bic(data, lo, hi, cfg.seed, cfg.restarts, cfg.covariance)?;
            let summary = table.iter().map(|e| (e.k, e.bic)).collect();
            let fit = table.into_iter().find(|e| e.k == k).and_then(|e| e.fit).expect("selected K has a fit");
            (fit, summary)
        }
    };
    let target = target_count(cfg.alpha, data.len());
    let start_components = if cfg.prune_small { prune_small_components(&start.model.components, target) } else { start.model.components.clone() };
    let (components, pi, pi_steps, report) = if target == 0 {
        let metric = PenaltyMetric::from_components(&start_components, data)?;
        let pi0 = initial_pi(data, &start_components, &metric)?;
        let fit = robust_em_fit_with(data, &start_components, pi0, &metric, None, cfg.covariance, cfg.max_iters, cfg.tol)?;
        (fit.components, pi0, 0, fit.report)
    } else {
        let cal = calibrate_pi(data, &start_components, cfg)?;
        (cal.fit.components, cal.pi, cal.steps, cal.fit.report)
    };
    let mut model = MixtureModel::new(components)?.with_structure(cfg.covariance);
    model.normalize_weights();
    if cfg.refit_inliers && target > 0 {
        model = refit_on_inliers(&model, data, target, cfg.tol)?;
    }
    // components left without any inlier carry no data; drop them and relabel
    let (threshold, outlier_indices) = loop {
        let order = likelihood_order(&model, data)?;
        let threshold = if target == 0 { order[0].1 - 1.0 } else { order[target - 1].1 };
        let mut outlier_indices: Vec<usize> = order[..target].iter().map(|(i, _)| *i).collect();
        outlier_indices.sort_unstable();
        let mut is_outlier = vec![false; data.len()];
        for &i in &outlier_indices {
            is_outlier[i] = true;
        }
        let prepared = model.prepare()?;
        let mut ws = prepared.workspace();
        let mut counts = vec![0.0; model.k()];
        for (x, _) in data.iter().zip(&is_outlier).filter(|(_, o)| !**o) {
            prepared.log_likelihood_ws(x.as_slice(), &mut ws);
            counts[PreparedMixture::best_component(&ws)] += 1.0;
        }
        for (c, n) in model.components.iter_mut().zip(&counts) {
            c.count = *n;
        }
        if model.k() > 1 && counts.contains(&0.0) {
            log::info!("dropping {} empty components after calibration", counts.iter().filter(|n| **n == 0.0).count());
            model.components.retain(|c| c.count > 0.0);
            model.normalize_weights();
            continue;
        }
        break (threshold, outlier_indices);
    };
    let mut outliers = OutlierStore::new();
    for &i in &outlier_indices {
        outliers.push(data[i].clone(), Origin { round: 0, index: i })?;
    }
    model = model.with_threshold(threshold);
    model.round = 0;
    Ok(OfflineFit { model, outliers, outlier_indices, pi, pi_steps, report, bic_table })
}

/// Identity-covariance helper used in tests and fixtures.
pub fn isotropic_component(weight: f64, mean: &[f64], variance: f64, count: f64) -> GaussianComponent {
    let d = mean.len();
    GaussianComponent::new(weight, Vector::from_column_slice(mean), Matrix::identity(d, d) * variance, count)
}
