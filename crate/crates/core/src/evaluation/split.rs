//! Stratified offline/online split and the random split used by the
//! divergence experiment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::generators::LabeledDataset;
use crate::error::{GmmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub offline: LabeledDataset,
    pub online_sets: Vec<LabeledDataset>,
    /// Source indices of the offline subset, then of each online set.
    pub offline_indices: Vec<usize>,
    pub online_indices: Vec<Vec<usize>>,
}

impl DatasetSplit {
    pub fn online_sizes(&self) -> Vec<usize> {
        self.online_sets.iter().map(|s| s.len()).collect()
    }
}

fn subset(data: &LabeledDataset, idx: &[usize]) -> LabeledDataset {
    LabeledDataset {
        points: idx.iter().map(|&i| data.points[i].clone()).collect(),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
        design: data.design.clone(),
        seed: data.seed,
    }
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(GmmError::Config(format!("{name} must lie in [0, 1], got {f}")))
    }
}

/// Deals shuffled indices round-robin into `n` sets whose sizes differ by at
/// most one.
fn deal(rest: &[usize], n: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::with_capacity(rest.len() / n + 1); n];
    for (j, &i) in rest.iter().enumerate() {
        sets[j % n].push(i);
    }
    sets
}

fn assemble(data: &LabeledDataset, offline: Vec<usize>, online: Vec<Vec<usize>>) -> Result<DatasetSplit> {
    if offline.is_empty() {
        return Err(GmmError::InsufficientData { needed: 1, got: 0 });
    }
    Ok(DatasetSplit {
        offline: subset(data, &offline),
        online_sets: online.iter().map(|s| subset(data, s)).collect(),
        offline_indices: offline,
        online_indices: online,
    })
}

/// Takes `round(fraction * size)` random points of every cluster offline
/// (the held-out label uses its own fraction) and spreads the rest evenly
/// over `n_online` sets.
pub fn split_protocol(
    data: &LabeledDataset,
    holdout_label: usize,
    holdout_offline_fraction: f64,
    other_offline_fraction: f64,
    n_online: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    check_fraction("holdout_offline_fraction", holdout_offline_fraction)?;
    check_fraction("other_offline_fraction", other_offline_fraction)?;
    if n_online == 0 {
        return Err(GmmError::Config("n_online must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offline = Vec::new();
    let mut rest = Vec::new();
    for label in 0..data.n_labels() {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == label).collect();
        members.shuffle(&mut rng);
        let f = if label == holdout_label { holdout_offline_fraction } else { other_offline_fraction };
        let take = (f * members.len() as f64).round() as usize;
        offline.extend_from_slice(&members[..take]);
        rest.extend_from_slice(&members[take..]);
    }
    offline.sort_unstable();
    rest.shuffle(&mut rng);
    assemble(data, offline, deal(&rest, n_online))
}

/// Unstratified split: a random offline share, then `n_online` sets of
/// `online_fraction_of_offline` times the offline size each. Leftover points
/// are dropped.
pub fn random_split(data: &LabeledDataset, n_online: usize, online_fraction_of_offline: f64, seed: u64) -> Result<DatasetSplit> {
    if n_online == 0 || online_fraction_of_offline <= 0.0 {
        return Err(GmmError::Config("need at least one online set of positive size".into()));
    }
    let n = data.len();
    let n_off = (n as f64 / (1.0 + n_online as f64 * online_fraction_of_offline)).floor() as usize;
    let per_set = (online_fraction_of_offline * n_off as f64).floor() as usize;
    if per_set == 0 {
        return Err(GmmError::InsufficientData { needed: n_online, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let offline = idx[..n_off].to_vec();
    let online = (0..n_online).map(|s| idx[n_off + s * per_set..n_off + (s + 1) * per_set].to_vec()).collect();
    assemble(data, offline, online)
}
