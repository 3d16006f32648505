//! Time and memory of the incremental update against retraining on all data
//! seen so far.

use std::time::Instant;

use serde::Serialize;

use super::alloc::measure;
use super::equivalence::batch_gmm_fit;
use super::generators::DataGenerator;
use super::pipeline::offline_config_for;
use super::split::split_protocol;
use crate::error::Result;
use crate::math::Vector;
use crate::offline::fit_offline;
use crate::online::{OnlineConfig, OnlineEngine, OnlineState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageCost {
    pub stage: String,
    pub seconds: f64,
    /// Allocation high-water mark above the stage's starting level; `None`
    /// when no tracking allocator is installed.
    pub peak_bytes: Option<u64>,
    pub input_points: usize,
}

fn timed<T>(stage: &str, input_points: usize, f: impl FnOnce() -> T) -> (T, StageCost) {
    let t = Instant::now();
    let (out, peak_bytes) = measure(f);
    let seconds = t.elapsed().as_secs_f64();
    (out, StageCost { stage: stage.to_string(), seconds, peak_bytes, input_points })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundCost {
    pub round: u64,
    pub cumulative_points: usize,
    pub k: usize,
    pub online: StageCost,
    pub retrain: StageCost,
}

impl RoundCost {
    pub fn time_ratio(&self) -> f64 {
        self.online.seconds / self.retrain.seconds
    }
}

/// Memory figures are an allocation high-water mark of the working set; the
/// raw data held by the harness is not counted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub design: String,
    pub seed: u64,
    pub memory_proxy: &'static str,
    pub offline_incremental: StageCost,
    pub offline_retrain: StageCost,
    pub rounds: Vec<RoundCost>,
}

impl CostReport {
    pub fn memory_tracked(&self) -> bool {
        self.offline_incremental.peak_bytes.is_some()
    }

    pub fn median_time_ratio(&self) -> f64 {
        let mut r: Vec<f64> = self.rounds.iter().map(RoundCost::time_ratio).collect();
        r.sort_by(f64::total_cmp);
        match r.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => r[n / 2],
            n => 0.5 * (r[n / 2 - 1] + r[n / 2]),
        }
    }

    /// `(max - min) / min` of the online peak bytes over all rounds.
    pub fn online_memory_spread(&self) -> Option<f64> {
        let bytes: Option<Vec<u64>> = self.rounds.iter().map(|r| r.online.peak_bytes).collect();
        let bytes = bytes?;
        let (lo, hi) = (*bytes.iter().min()?, *bytes.iter().max()?);
        (lo > 0).then(|| (hi - lo) as f64 / lo as f64)
    }

    /// Retrain peak bytes, round by round.
    pub fn retrain_memory(&self) -> Option<Vec<u64>> {
        self.rounds.iter().map(|r| r.retrain.peak_bytes).collect()
    }

    /// `|t_a - t_b| / max(t_a, t_b)` of the two offline stages.
    pub fn offline_time_gap(&self) -> f64 {
        let (a, b) = (self.offline_incremental.seconds, self.offline_retrain.seconds);
        (a - b).abs() / a.max(b)
    }
}

/// Splits the design into offline data and `n_online` sets, runs the
/// offline stage once per method, then per round times one incremental
/// update against a batch refit on all data so far with the same K.
pub fn cost_benchmark(g: &dyn DataGenerator, seed: u64, n_online: usize, online: &OnlineConfig) -> Result<CostReport> {
    let p = g.protocol();
    let data = g.generate(seed);
    let split = split_protocol(&data, p.holdout_label, p.holdout_offline_fraction, p.other_offline_fraction, n_online, seed)?;
    let cfg = offline_config_for(g, seed);
    let offline_pts = &split.offline.points;

    let (fit, offline_incremental) = timed("offline (incremental)", offline_pts.len(), || fit_offline(offline_pts, &cfg));
    let fit = fit?;
    let (again, offline_retrain) = timed("offline (retrain)", offline_pts.len(), || fit_offline(offline_pts, &cfg));
    again?;

    let engine = OnlineEngine::new(online.clone())?;
    let mut state = OnlineState::from_offline(&fit, offline_pts, online.eps_neighbor, online.eps_percentile);
    let mut cumulative: Vec<Vector> = offline_pts.clone();
    let mut rounds = Vec::with_capacity(split.online_sets.len());
    for set in &split.online_sets {
        let (res, online_cost) = timed("online round", set.len(), || engine.step(&state, &set.points));
        state = res?.state;
        cumulative.extend(set.points.iter().cloned());
        let k = state.model.k();
        let (refit, retrain) = timed("retrain", cumulative.len(), || batch_gmm_fit(&cumulative, k, seed, p.covariance));
        refit?;
        rounds.push(RoundCost { round: state.model.round, cumulative_points: cumulative.len(), k, online: online_cost, retrain });
    }
    Ok(CostReport {
        design: g.name().to_string(),
        seed,
        memory_proxy: "allocation high-water mark above stage entry",
        offline_incremental,
        offline_retrain,
        rounds,
    })
}
