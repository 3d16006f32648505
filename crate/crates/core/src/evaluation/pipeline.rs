//! One end-to-end run of a design: split, offline fit, online rounds and a
//! comparison against a batch fit on all data.

use std::time::Instant;

use serde::Serialize;

use super::equivalence::{batch_gmm_fit, equivalence_report, ClusterMatcher, EquivalenceReport};
use super::generators::{ClusterSpec, DataGenerator, LabeledDataset};
use super::split::{split_protocol, DatasetSplit};
use crate::error::Result;
use crate::math::{mahalanobis_norm, Vector};
use crate::model::MixtureModel;
use crate::offline::{fit_offline, OfflineConfig, OfflineFit};
use crate::online::{OnlineConfig, OnlineEngine, OnlineState};

/// A component represents a generating cluster when its mean sits within
/// this Mahalanobis radius of the cluster mean and it holds at least
/// `DISCOVERY_SHARE` of the cluster's points.
pub const DISCOVERY_RADIUS: f64 = 1.0;
pub const DISCOVERY_SHARE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundSummary {
    pub round: u64,
    pub batch_size: usize,
    pub batch_outliers: usize,
    pub emerging: usize,
    pub merged_pairs: usize,
    pub k: usize,
    pub outliers_after: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct DesignRun {
    pub data: LabeledDataset,
    pub split: DatasetSplit,
    pub offline: OfflineFit,
    pub offline_seconds: f64,
    pub rounds: Vec<RoundSummary>,
    pub state: OnlineState,
    /// First round after which the held-out cluster has a component; 0 when
    /// the offline model already has one.
    pub holdout_discovered: Option<u64>,
    pub batch: MixtureModel,
    pub report: EquivalenceReport,
}

pub fn has_component_for(model: &MixtureModel, cluster: &ClusterSpec) -> bool {
    model.components.iter().any(|c| {
        c.count >= DISCOVERY_SHARE * cluster.size as f64
            && mahalanobis_norm(&(&c.mean - &cluster.mean), &cluster.covariance).is_ok_and(|m| m < DISCOVERY_RADIUS)
    })
}

pub fn offline_config_for(g: &dyn DataGenerator, seed: u64) -> OfflineConfig {
    let p = g.protocol();
    OfflineConfig { alpha: p.alpha, k: p.offline_k, seed, covariance: p.covariance, ..OfflineConfig::default() }
}

pub fn run_design(g: &dyn DataGenerator, seed: u64, online: &OnlineConfig, matcher: &dyn ClusterMatcher) -> Result<DesignRun> {
    let p = g.protocol();
    let data = g.generate(seed);
    let split = split_protocol(&data, p.holdout_label, p.holdout_offline_fraction, p.other_offline_fraction, p.n_online, seed)?;
    let holdout = &g.clusters()[p.holdout_label];

    let t0 = Instant::now();
    let offline = fit_offline(&split.offline.points, &offline_config_for(g, seed))?;
    let offline_seconds = t0.elapsed().as_secs_f64();

    let engine = OnlineEngine::new(online.clone())?;
    let mut state = OnlineState::from_offline(&offline, &split.offline.points, online.eps_neighbor, online.eps_percentile);
    let mut holdout_discovered = has_component_for(&state.model, holdout).then_some(0);
    let mut rounds = Vec::with_capacity(split.online_sets.len());
    for set in &split.online_sets {
        let t = Instant::now();
        let res = engine.step(&state, &set.points)?;
        let seconds = t.elapsed().as_secs_f64();
        state = res.state;
        rounds.push(RoundSummary {
            round: state.model.round,
            batch_size: set.len(),
            batch_outliers: res.initial.outliers.len(),
            emerging: res.emerging_cluster_count,
            merged_pairs: res.merged_pairs.len(),
            k: state.model.k(),
            outliers_after: state.outliers.len(),
            seconds,
        });
        if holdout_discovered.is_none() && has_component_for(&state.model, holdout) {
            holdout_discovered = Some(state.model.round);
        }
    }

    let batch = batch_gmm_fit(&data.points, p.true_k, seed, p.covariance)?;
    let report = equivalence_report(&state.model, &batch, online.significance, matcher)?;
    Ok(DesignRun { data, split, offline, offline_seconds, rounds, state, holdout_discovered, batch, report })
}

/// Points of `data` not used anywhere, drawn from the same generator with a
/// different seed.
pub fn fresh_points(g: &dyn DataGenerator, seed: u64) -> Vec<Vector> {
    g.generate(seed ^ 0xA5A5_A5A5_A5A5_A5A5).points
}
