//! One online round: classify a batch, grow emerging clusters out of the
//! accumulated outliers, blend new-data statistics into every component,
//! merge statistically equal components.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dbscan::{dbscan, epsilon_heuristic, median_pairwise_distance, DbscanParams};
use crate::error::{GmmError, Result};
use crate::math::{repair_psd, sample_moments, Matrix, Vector};
use crate::model::{Assignment, CovarianceStructure, GaussianComponent, MixtureModel, Origin, OutlierStore, PreparedMixture};
use crate::offline::em::{fit_standard_em, finish_covariance};
use crate::offline::OfflineFit;
use crate::registry::Registry;
use crate::stat_tests::components_equal;

/// How two merged components' covariances combine.
pub trait CovarianceMerge: Send + Sync {
    fn name(&self) -> &'static str;
    fn merge(&self, a: &GaussianComponent, b: &GaussianComponent, merged_mean: &Vector) -> Matrix;
}

/// Weighted second moments about the merged mean.
pub struct MomentMatching;

impl CovarianceMerge for MomentMatching {
    fn name(&self) -> &'static str {
        "moment-matching"
    }

    fn merge(&self, a: &GaussianComponent, b: &GaussianComponent, m: &Vector) -> Matrix {
        let s = a.weight + b.weight;
        let (wa, wb) = (a.weight / s, b.weight / s);
        &a.covariance * wa + &b.covariance * wb + &a.mean * a.mean.transpose() * wa + &b.mean * b.mean.transpose() * wb - m * m.transpose()
    }
}

/// Weighted covariances plus the cross products of the two means; not
/// guaranteed positive semidefinite, so the result is repaired afterwards.
pub struct CrossTerm;

impl CovarianceMerge for CrossTerm {
    fn name(&self) -> &'static str {
        "cross-term"
    }

    fn merge(&self, a: &GaussianComponent, b: &GaussianComponent, _m: &Vector) -> Matrix {
        let s = a.weight + b.weight;
        (&a.covariance * a.weight + &b.covariance * b.weight + &a.mean * b.mean.transpose() * a.weight + &b.mean * a.mean.transpose() * b.weight) / s
    }
}

pub fn covariance_merges() -> Registry<dyn CovarianceMerge> {
    let mut r: Registry<dyn CovarianceMerge> = Registry::new("covariance merge");
    r.register("moment-matching", Arc::new(MomentMatching));
    r.register("cross-term", Arc::new(CrossTerm));
    r
}

pub struct EpsilonContext<'a> {
    /// Normal points of the current batch.
    pub clustered: &'a [Vector],
    /// All outliers handed to DBSCAN this round.
    pub outliers: &'a [Vector],
    /// Value computed from the offline clustered points, if kept.
    pub reference: Option<f64>,
    pub neighbor: usize,
    pub percentile: f64,
}

/// Chooses the DBSCAN radius for a round. `None` skips cluster discovery.
pub trait EpsilonPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    fn epsilon(&self, ctx: &EpsilonContext) -> Option<f64>;
}

fn fallback_epsilon(ctx: &EpsilonContext) -> Option<f64> {
    median_pairwise_distance(ctx.outliers)
}

/// Radius fixed from the offline clustered points.
pub struct OfflineFrozen;

impl EpsilonPolicy for OfflineFrozen {
    fn name(&self) -> &'static str {
        "offline-frozen"
    }

    fn epsilon(&self, ctx: &EpsilonContext) -> Option<f64> {
        ctx.reference.or_else(|| PerRound.epsilon(ctx))
    }
}

/// Radius recomputed from the batch's normal points every round.
pub struct PerRound;

impl EpsilonPolicy for PerRound {
    fn name(&self) -> &'static str {
        "per-round"
    }

    fn epsilon(&self, ctx: &EpsilonContext) -> Option<f64> {
        epsilon_heuristic(ctx.clustered, ctx.neighbor, ctx.percentile).ok().filter(|e| *e > 0.0).or_else(|| fallback_epsilon(ctx))
    }
}

pub fn epsilon_policies() -> Registry<dyn EpsilonPolicy> {
    let mut r: Registry<dyn EpsilonPolicy> = Registry::new("epsilon policy");
    r.register("offline-frozen", Arc::new(OfflineFrozen));
    r.register("per-round", Arc::new(PerRound));
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub significance: f64,
    pub min_pts: usize,
    pub eps_neighbor: usize,
    pub eps_percentile: f64,
    pub epsilon_policy: String,
    pub covariance_merge: String,
    pub em_max_iters: usize,
    pub em_tol: f64,
    /// Upper bound on reclassify/update passes per round. Each pass blends
    /// the pre-round components with statistics taken under the previous
    /// pass's model; passes stop once assignments repeat. 1 gives the single
    /// pass update.
    #[serde(default = "default_update_passes")]
    pub update_passes: usize,
}

fn default_update_passes() -> usize {
    20
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            significance: 0.05,
            min_pts: 5,
            eps_neighbor: 5,
            eps_percentile: 0.9,
            epsilon_policy: "offline-frozen".into(),
            covariance_merge: "moment-matching".into(),
            em_max_iters: 500,
            em_tol: 1e-6,
            update_passes: default_update_passes(),
        }
    }
}

/// Everything the online stage keeps between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineState {
    pub model: MixtureModel,
    pub outliers: OutlierStore,
    /// Total number of points ever ingested, offline included.
    pub ingested: u64,
    pub epsilon_reference: Option<f64>,
}

impl OnlineState {
    /// Starts from an offline fit; `offline` are the points it was fit on.
    pub fn from_offline(fit: &OfflineFit, offline: &[Vector], neighbor: usize, percentile: f64) -> Self {
        let mut keep = vec![true; offline.len()];
        for &i in &fit.outlier_indices {
            keep[i] = false;
        }
        let clustered: Vec<Vector> = offline.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| x.clone()).collect();
        let epsilon_reference = epsilon_heuristic(&clustered, neighbor, percentile).ok().filter(|e| *e > 0.0);
        OnlineState { model: fit.model.clone(), outliers: fit.outliers.clone(), ingested: offline.len() as u64, epsilon_reference }
    }

    /// `sum N_i + |O| - ingested`; zero whenever the state is consistent.
    pub fn conservation_gap(&self) -> f64 {
        self.model.total_count() + self.outliers.len() as f64 - self.ingested as f64
    }
}

#[derive(Debug, Clone)]
pub struct ClassifiedBatch {
    pub assignments: Vec<Assignment>,
    pub log_likelihoods: Vec<f64>,
    pub outliers: Vec<usize>,
    pub counts: Vec<f64>,
}

/// Online rule: outlier when `ln p(x) < r`, else the maximal-posterior component.
pub fn classify_batch(model: &MixtureModel, batch: &[Vector]) -> Result<ClassifiedBatch> {
    let r = model.threshold()?;
    let prepared = model.prepare()?;
    let mut ws = prepared.workspace();
    let mut out = ClassifiedBatch { assignments: Vec::with_capacity(batch.len()), log_likelihoods: Vec::with_capacity(batch.len()), outliers: Vec::new(), counts: vec![0.0; model.k()] };
    for (i, x) in batch.iter().enumerate() {
        if x.len() != model.dimension {
            return Err(GmmError::Shape(format!("batch point {i} has dimension {}, model has {}", x.len(), model.dimension)));
        }
        let ll = prepared.log_likelihood_ws(x.as_slice(), &mut ws);
        out.log_likelihoods.push(ll);
        if ll < r {
            out.assignments.push(Assignment::Outlier);
            out.outliers.push(i);
        } else {
            let c = PreparedMixture::best_component(&ws);
            out.counts[c] += 1.0;
            out.assignments.push(Assignment::Component(c));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmergingClusterSet {
    /// Adjusted weights; `internal_weights` sum to one.
    pub components: Vec<GaussianComponent>,
    pub internal_weights: Vec<f64>,
    pub members: Vec<Vec<usize>>,
    pub epsilon: Option<f64>,
}

impl EmergingClusterSet {
    pub fn empty() -> Self {
        EmergingClusterSet { components: Vec::new(), internal_weights: Vec::new(), members: Vec::new(), epsilon: None }
    }

    pub fn member_count(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }
}

fn cluster_component(points: &[&Vector], weight: f64, ridge_scale: f64, structure: CovarianceStructure) -> Result<GaussianComponent> {
    let (mean, cov) = sample_moments(points).ok_or(GmmError::InsufficientData { needed: 1, got: 0 })?;
    let mut cov = structure.project(cov);
    let d = mean.len();
    if cov.trace() <= 0.0 {
        cov += Matrix::identity(d, d) * ridge_scale;
    }
    Ok(GaussianComponent::new(weight, mean, finish_covariance(cov, 0)?, points.len() as f64))
}

/// DBSCAN over the outliers, sample moments per cluster, a joint EM pass over
/// all members, then weights scaled by `N_em / (prev_total + N_em)`.
#[allow(clippy::too_many_arguments)]
pub fn find_emerging(
    outliers: &[Vector],
    epsilon: Option<f64>,
    min_pts: usize,
    prev_total: f64,
    structure: CovarianceStructure,
    em_max_iters: usize,
    em_tol: f64,
) -> Result<EmergingClusterSet> {
    let Some(eps) = epsilon.filter(|e| *e > 0.0 && e.is_finite()) else {
        return Ok(EmergingClusterSet::empty());
    };
    if outliers.len() < min_pts {
        return Ok(EmergingClusterSet { epsilon: Some(eps), ..EmergingClusterSet::empty() });
    }
    let labels = dbscan(outliers, DbscanParams::new(eps, min_pts)?);
    let members = labels.members();
    if members.is_empty() {
        return Ok(EmergingClusterSet { epsilon: Some(eps), ..EmergingClusterSet::empty() });
    }
    let n_em: usize = members.iter().map(Vec::len).sum();
    let all: Vec<Vector> = members.iter().flatten().map(|&i| outliers[i].clone()).collect();
    let ridge_scale = crate::offline::kmeans::ridge_for(outliers).max(1e-12);
    let init: Vec<GaussianComponent> = members
        .iter()
        .map(|m| {
            let pts: Vec<&Vector> = m.iter().map(|&i| &outliers[i]).collect();
            cluster_component(&pts, m.len() as f64 / n_em as f64, ridge_scale, structure)
        })
        .collect::<Result<_>>()?;
    let refined = match fit_standard_em(&all, &init, structure, em_max_iters, em_tol) {
        Ok(fit) => fit.model.components,
        Err(e) => {
            log::warn!("emerging-cluster EM failed ({e}); keeping cluster moments");
            init
        }
    };
    let scale = n_em as f64 / (prev_total + n_em as f64);
    let internal_weights: Vec<f64> = refined.iter().map(|c| c.weight).collect();
    let components = refined
        .into_iter()
        .map(|mut c| {
            c.weight *= scale;
            c
        })
        .collect();
    Ok(EmergingClusterSet { components, internal_weights, members, epsilon: Some(eps) })
}

/// Previous components scaled by `prev_total / (prev_total + N_em)`, then the
/// emerging ones.
pub fn extend_model(prev: &[GaussianComponent], emerging: &EmergingClusterSet) -> Vec<GaussianComponent> {
    if emerging.components.is_empty() {
        return prev.to_vec();
    }
    let prev_total: f64 = prev.iter().map(|c| c.count).sum();
    let n_em = emerging.member_count() as f64;
    let scale = prev_total / (prev_total + n_em);
    let mut out: Vec<GaussianComponent> = prev
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.weight *= scale;
            c
        })
        .collect();
    for c in &emerging.components {
        let mut c = c.clone();
        c.count = 0.0;
        out.push(c);
    }
    out
}

/// Sufficient statistics of one component over the round's normal points.
#[derive(Debug, Clone, PartialEq)]
pub struct NewDataSummary {
    /// Hard count.
    pub count: f64,
    pub weight: f64,
    pub mean: Vector,
    pub covariance: Matrix,
}

/// Blends `prev` with a new-data summary using `w = n_new / (n_prev + n_new)`.
pub fn blend(prev: &GaussianComponent, new: &NewDataSummary) -> GaussianComponent {
    if new.count <= 0.0 {
        return prev.clone();
    }
    let w = new.count / (prev.count + new.count);
    let mean = &prev.mean * (1.0 - w) + &new.mean * w;
    let cov = &prev.covariance * (1.0 - w) + &new.covariance * w + &prev.mean * prev.mean.transpose() * (1.0 - w) + &new.mean * new.mean.transpose() * w
        - &mean * mean.transpose();
    GaussianComponent::new((1.0 - w) * prev.weight + w * new.weight, mean, repair_psd(&cov), prev.count + new.count)
}

#[derive(Debug, Clone)]
pub struct Reclassified {
    /// Assignment of every point in the round, against the extended model.
    pub assignments: Vec<Assignment>,
    pub summaries: Vec<NewDataSummary>,
}

/// Reclassifies the round's points and computes per-component new-data
/// statistics: hard counts, posterior-weighted weight, mean and covariance
/// over every normal point.
pub fn reclassify(extended: &[GaussianComponent], threshold: f64, points: &[Vector]) -> Result<Reclassified> {
    let prepared = PreparedMixture::new(extended)?;
    let k = extended.len();
    let d = prepared.dim();
    let mut ws = prepared.workspace();
    let mut post = vec![0.0; k];
    let mut assignments = Vec::with_capacity(points.len());
    let mut resp: Vec<f64> = Vec::new();
    let mut normal: Vec<usize> = Vec::new();
    let mut counts = vec![0.0; k];
    for (j, x) in points.iter().enumerate() {
        let ll = prepared.posteriors_ws(x.as_slice(), None, &mut ws, &mut post);
        if ll < threshold {
            assignments.push(Assignment::Outlier);
            continue;
        }
        let c = crate::model::argmax(&post);
        counts[c] += 1.0;
        assignments.push(Assignment::Component(c));
        normal.push(j);
        resp.extend_from_slice(&post);
    }
    let n_normal = normal.len() as f64;
    let mut summaries = Vec::with_capacity(k);
    for i in 0..k {
        let mut sw = 0.0;
        let mut mean = Vector::zeros(d);
        for (row, &j) in normal.iter().enumerate() {
            let r = resp[row * k + i];
            sw += r;
            mean.axpy(r, &points[j], 1.0);
        }
        if counts[i] == 0.0 || sw <= 0.0 {
            summaries.push(NewDataSummary { count: 0.0, weight: 0.0, mean: extended[i].mean.clone(), covariance: extended[i].covariance.clone() });
            continue;
        }
        mean /= sw;
        let mut cov = Matrix::zeros(d, d);
        let mut diff = Vector::zeros(d);
        for (row, &j) in normal.iter().enumerate() {
            let r = resp[row * k + i];
            if r > 0.0 {
                diff.copy_from(&points[j]);
                diff -= &mean;
                cov.ger(r / sw, &diff, &diff, 1.0);
            }
        }
        summaries.push(NewDataSummary { count: counts[i], weight: sw / n_normal, mean, covariance: cov });
    }
    Ok(Reclassified { assignments, summaries })
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub merged: Vec<GaussianComponent>,
    pub unique: Vec<GaussianComponent>,
    /// Input index pairs that were merged, in merge order.
    pub pairs: Vec<(usize, usize)>,
    /// Input index -> index in `[merged; unique]`.
    pub index_map: Vec<usize>,
}

pub fn merge_pair(a: &GaussianComponent, b: &GaussianComponent, rule: &dyn CovarianceMerge) -> GaussianComponent {
    let weight = a.weight + b.weight;
    let mean = (&a.mean * a.weight + &b.mean * b.weight) / weight;
    let cov = repair_psd(&rule.merge(a, b, &mean));
    GaussianComponent::new(weight, mean, cov, a.count + b.count)
}

/// One greedy pass over pairs by descending combined count; each component is
/// merged at most once.
pub fn merge_components(components: &[GaussianComponent], structure: CovarianceStructure, significance: f64, rule: &dyn CovarianceMerge) -> Result<MergeOutcome> {
    let k = components.len();
    let mut pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| {
        let ca = components[a.0].count + components[a.1].count;
        let cb = components[b.0].count + components[b.1].count;
        cb.total_cmp(&ca).then(a.cmp(b))
    });
    let mut used = vec![false; k];
    let mut merged_pairs = Vec::new();
    for (i, j) in pairs {
        if used[i] || used[j] {
            continue;
        }
        if components_equal(&components[i], &components[j], structure, significance)? {
            used[i] = true;
            used[j] = true;
            merged_pairs.push((i, j));
        }
    }
    let mut index_map = vec![usize::MAX; k];
    let mut merged = Vec::with_capacity(merged_pairs.len());
    for (m, &(i, j)) in merged_pairs.iter().enumerate() {
        merged.push(merge_pair(&components[i], &components[j], rule));
        index_map[i] = m;
        index_map[j] = m;
    }
    let mut unique = Vec::new();
    for i in 0..k {
        if !used[i] {
            index_map[i] = merged.len() + unique.len();
            unique.push(components[i].clone());
        }
    }
    Ok(MergeOutcome { merged, unique, pairs: merged_pairs, index_map })
}

/// `[merged; unique]` with weights renormalized, the round advanced and the
/// threshold carried over.
pub fn consolidate(prev: &MixtureModel, merged: Vec<GaussianComponent>, unique: Vec<GaussianComponent>) -> Result<MixtureModel> {
    let mut components = merged;
    components.extend(unique);
    if components.is_empty() {
        return Err(GmmError::InvalidModel("consolidation produced no components".into()));
    }
    let sum: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= sum;
    }
    for c in &mut components {
        c.covariance = prev.structure.project(c.covariance.clone());
    }
    let mut model = MixtureModel::new(components)?.with_structure(prev.structure);
    model.threshold = prev.threshold;
    model.round = prev.round + 1;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Final assignment of every batch point, indexed into `state.model`.
    pub assignments: Vec<Assignment>,
    /// First-pass classification against the previous model.
    pub initial: ClassifiedBatch,
    pub emerging_cluster_count: usize,
    pub epsilon: Option<f64>,
    /// Merged pairs as (i, j) of the updated model and the resulting index.
    pub merged_pairs: Vec<(usize, usize, usize)>,
    pub state: OnlineState,
}

impl BatchResult {
    pub fn counts(&self) -> Vec<f64> {
        self.state.model.counts()
    }
}

/// Online engine with its strategies resolved.
#[derive(Clone)]
pub struct OnlineEngine {
    pub config: OnlineConfig,
    merge_rule: Arc<dyn CovarianceMerge>,
    epsilon_policy: Arc<dyn EpsilonPolicy>,
}

impl std::fmt::Debug for OnlineEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnlineEngine").field("config", &self.config).finish()
    }
}

impl OnlineEngine {
    pub fn new(config: OnlineConfig) -> Result<Self> {
        if !(config.significance > 0.0 && config.significance < 1.0) {
            return Err(GmmError::Config(format!("significance must lie in (0, 1), got {}", config.significance)));
        }
        if config.min_pts == 0 || config.eps_neighbor == 0 {
            return Err(GmmError::Config("min_pts and eps_neighbor must be positive".into()));
        }
        let merge_rule = covariance_merges().get(&config.covariance_merge)?;
        let epsilon_policy = epsilon_policies().get(&config.epsilon_policy)?;
        log::debug!("online engine: covariance merge '{}', epsilon policy '{}'", merge_rule.name(), epsilon_policy.name());
        Ok(OnlineEngine { config, merge_rule, epsilon_policy })
    }

    pub fn with_strategies(config: OnlineConfig, merge_rule: Arc<dyn CovarianceMerge>, epsilon_policy: Arc<dyn EpsilonPolicy>) -> Self {
        OnlineEngine { config, merge_rule, epsilon_policy }
    }

    /// Runs one round. The input state is never modified.
    pub fn step(&self, state: &OnlineState, batch: &[Vector]) -> Result<BatchResult> {
        let cfg = &self.config;
        let model = &state.model;
        let threshold = model.threshold()?;
        let round = model.round + 1;
        let initial = classify_batch(model, batch)?;
        if batch.is_empty() {
            let mut next = state.clone();
            next.model.round = round;
            return Ok(BatchResult { assignments: Vec::new(), initial, emerging_cluster_count: 0, epsilon: None, merged_pairs: Vec::new(), state: next });
        }

        // previous outliers first, then the new ones; batch points keep their index
        let mut round_points: Vec<Vector> = state.outliers.points().cloned().collect();
        let mut origins: Vec<Origin> = state.outliers.records().iter().map(|r| r.origin).collect();
        let n_prev_outliers = round_points.len();
        for &i in &initial.outliers {
            round_points.push(batch[i].clone());
            origins.push(Origin { round, index: i });
        }
        let clustered: Vec<Vector> = batch.iter().zip(&initial.assignments).filter(|(_, a)| !a.is_outlier()).map(|(x, _)| x.clone()).collect();
        let ctx = EpsilonContext { clustered: &clustered, outliers: &round_points, reference: state.epsilon_reference, neighbor: cfg.eps_neighbor, percentile: cfg.eps_percentile };
        let epsilon = self.epsilon_policy.epsilon(&ctx);
        let prev_total = model.total_count();
        let structure = model.structure;
        let emerging = find_emerging(&round_points, epsilon, cfg.min_pts, prev_total, structure, cfg.em_max_iters, cfg.em_tol)?;
        let extended = extend_model(&model.components, &emerging);

        // reclassify the previous outliers and the whole batch
        let batch_base = round_points.len();
        for (i, x) in batch.iter().enumerate() {
            if !initial.assignments[i].is_outlier() {
                round_points.push(x.clone());
                origins.push(Origin { round, index: i });
            }
        }
        let blend_all = |summaries: &[NewDataSummary]| -> Vec<GaussianComponent> {
            extended
                .iter()
                .zip(summaries)
                .map(|(c, s)| {
                    let mut b = blend(c, s);
                    b.covariance = structure.project(b.covariance);
                    b
                })
                .collect()
        };
        let mut re = reclassify(&extended, threshold, &round_points)?;
        let mut updated = blend_all(&re.summaries);
        for _ in 1..cfg.update_passes {
            let next = reclassify(&updated, threshold, &round_points)?;
            let settled = next.assignments == re.assignments;
            updated = blend_all(&next.summaries);
            re = next;
            if settled {
                break;
            }
        }
        // emerging components that kept no members carry no data
        let mut keep: Vec<usize> = (0..updated.len()).filter(|&i| updated[i].count > 0.0 || i < model.k()).collect();
        if keep.len() < updated.len() {
            updated = keep.iter().map(|&i| updated[i].clone()).collect();
        } else {
            keep = (0..updated.len()).collect();
        }
        let mut position = vec![usize::MAX; extended.len()];
        for (new, &old) in keep.iter().enumerate() {
            position[old] = new;
        }
        for c in &mut updated {
            c.covariance = finish_covariance(c.covariance.clone(), 0)?;
        }

        let outcome = merge_components(&updated, structure, cfg.significance, self.merge_rule.as_ref())?;
        let merged_pairs = outcome.pairs.iter().map(|&(i, j)| (i, j, outcome.index_map[i])).collect();
        let next_model = consolidate(model, outcome.merged, outcome.unique)?;

        let mut outliers = OutlierStore::new();
        for (p, a) in re.assignments.iter().enumerate() {
            if a.is_outlier() {
                outliers.push(round_points[p].clone(), origins[p])?;
            }
        }

        let final_of = |a: Assignment| match a {
            Assignment::Outlier => Assignment::Outlier,
            Assignment::Component(c) => Assignment::Component(outcome.index_map[position[c]]),
        };
        let mut assignments = vec![Assignment::Outlier; batch.len()];
        for (p, a) in re.assignments.iter().enumerate() {
            if p >= n_prev_outliers {
                let idx = origins[p].index;
                assignments[idx] = final_of(*a);
            }
        }
        debug_assert!(batch_base >= n_prev_outliers);

        let next = OnlineState { model: next_model, outliers, ingested: state.ingested + batch.len() as u64, epsilon_reference: state.epsilon_reference };
        Ok(BatchResult { assignments, initial, emerging_cluster_count: emerging.components.len(), epsilon: emerging.epsilon, merged_pairs, state: next })
    }
}

/// Runs one round with strategies named in `config`.
pub fn online_step(state: &OnlineState, batch: &[Vector], config: &OnlineConfig) -> Result<BatchResult> {
    OnlineEngine::new(config.clone())?.step(state, batch)
}
