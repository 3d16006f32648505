//! How far the incremental model drifts from a full refit as online data
//! accumulates relative to the offline data.

use serde::Serialize;

use super::equivalence::{batch_gmm_refit, equivalence_report, ClusterMatcher};
use super::generators::{DataGenerator, LabeledDataset};
use super::pipeline::offline_config_for;
use super::split::random_split;
use crate::error::Result;
use crate::math::Vector;
use crate::offline::{fit_offline, OfflineConfig};
use crate::online::{OnlineConfig, OnlineEngine, OnlineState};

pub const DEFAULT_N_ONLINE: usize = 15;
pub const DEFAULT_ONLINE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergencePoint {
    /// Online points ingested so far over the offline size.
    pub ratio: f64,
    pub max_t2: f64,
    pub max_w: f64,
    pub min_p_mean: f64,
    pub min_p_covariance: f64,
    pub k_incremental: usize,
    pub k_retrain: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceCurve {
    pub design: String,
    pub seed: u64,
    pub points: Vec<DivergencePoint>,
}

/// Share of consecutive steps along which `values` does not decrease.
pub fn nondecreasing_share(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 1.0;
    }
    let ok = values.windows(2).filter(|w| w[1] >= w[0]).count();
    ok as f64 / (values.len() - 1) as f64
}

/// Average per-step change over steps ending at or below `pivot`, and over
/// steps ending above it.
pub fn slopes_around(ratios: &[f64], values: &[f64], pivot: f64) -> (f64, f64) {
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for i in 1..values.len().min(ratios.len()) {
        let step = values[i] - values[i - 1];
        if ratios[i] <= pivot + 1e-9 {
            before.push(step);
        } else {
            after.push(step);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    (mean(&before), mean(&after))
}

impl DivergenceCurve {
    pub fn ratios(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.ratio).collect()
    }

    pub fn t2(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.max_t2).collect()
    }

    pub fn w(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.max_w).collect()
    }
}

/// Pointwise mean of curves sharing the same ratio grid.
pub fn mean_curve(curves: &[DivergenceCurve]) -> Option<DivergenceCurve> {
    let first = curves.first()?;
    let n = curves.len() as f64;
    let points = (0..first.points.len())
        .map(|i| {
            let avg = |f: &dyn Fn(&DivergencePoint) -> f64| curves.iter().map(|c| f(&c.points[i])).sum::<f64>() / n;
            DivergencePoint {
                ratio: avg(&|p| p.ratio),
                max_t2: avg(&|p| p.max_t2),
                max_w: avg(&|p| p.max_w),
                min_p_mean: avg(&|p| p.min_p_mean),
                min_p_covariance: avg(&|p| p.min_p_covariance),
                k_incremental: first.points[i].k_incremental,
                k_retrain: first.points[i].k_retrain,
            }
        })
        .collect();
    Some(DivergenceCurve { design: first.design.clone(), seed: first.seed, points })
}

/// Random split into offline data and `n_online` sets of
/// `online_fraction * offline size`; after each set the incremental model is
/// compared with a batch refit (same K) on everything seen so far, which also
/// tries the previous refit as a start. The first point compares the offline
/// model with itself.
#[allow(clippy::too_many_arguments)]
pub fn divergence_experiment(
    data: &LabeledDataset,
    offline: &OfflineConfig,
    online: &OnlineConfig,
    matcher: &dyn ClusterMatcher,
    n_online: usize,
    online_fraction: f64,
    seed: u64,
) -> Result<DivergenceCurve> {
    let split = random_split(data, n_online, online_fraction, seed)?;
    let offline_pts = &split.offline.points;
    let n_off = offline_pts.len() as f64;
    let fit = fit_offline(offline_pts, offline)?;
    let structure = fit.model.structure;
    let engine = OnlineEngine::new(online.clone())?;
    let mut state = OnlineState::from_offline(&fit, offline_pts, online.eps_neighbor, online.eps_percentile);

    let point = |ratio: f64, report: &super::equivalence::EquivalenceReport| {
        let (max_t2, max_w) = report.max_statistics();
        let tests = report.pairs.iter().filter_map(|p| p.test.as_ref());
        DivergencePoint {
            ratio,
            max_t2,
            max_w,
            min_p_mean: tests.clone().map(|t| t.mean.p_value).fold(1.0, f64::min),
            min_p_covariance: tests.map(|t| t.covariance.p_value).fold(1.0, f64::min),
            k_incremental: report.k_a,
            k_retrain: report.k_b,
        }
    };
    let mut points = vec![point(0.0, &equivalence_report(&state.model, &state.model, online.significance, matcher)?)];
    let mut cumulative: Vec<Vector> = offline_pts.clone();
    let mut previous = None;
    for set in &split.online_sets {
        state = engine.step(&state, &set.points)?.state;
        cumulative.extend(set.points.iter().cloned());
        let retrain = batch_gmm_refit(&cumulative, state.model.k(), seed, structure, previous.as_ref())?;
        let report = equivalence_report(&state.model, &retrain, online.significance, matcher)?;
        previous = Some(retrain);
        points.push(point((cumulative.len() as f64 - n_off) / n_off, &report));
    }
    Ok(DivergenceCurve { design: data.design.clone(), seed, points })
}

/// `divergence_experiment` on a freshly generated design with its protocol
/// settings.
pub fn divergence_for_design(g: &dyn DataGenerator, seed: u64, online: &OnlineConfig, matcher: &dyn ClusterMatcher) -> Result<DivergenceCurve> {
    let data = g.generate(seed);
    divergence_experiment(&data, &offline_config_for(g, seed), online, matcher, DEFAULT_N_ONLINE, DEFAULT_ONLINE_FRACTION, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nondecreasing_share_counts_steps() {
        assert_eq!(nondecreasing_share(&[0.0, 1.0, 1.0, 0.5, 2.0]), 0.75);
        assert_eq!(nondecreasing_share(&[3.0]), 1.0);
    }

    #[test]
    fn slopes_split_at_pivot() {
        let r = [0.0, 0.5, 1.0, 1.5, 2.0];
        let v = [0.0, 1.0, 2.0, 5.0, 8.0];
        assert_eq!(slopes_around(&r, &v, 1.0), (1.0, 3.0));
    }
}
