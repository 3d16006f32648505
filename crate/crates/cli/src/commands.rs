use std::path::Path;

use gmmstream::error::{GmmError, Result};
use gmmstream::evaluation::divergence::{mean_curve, nondecreasing_share, slopes_around};
use gmmstream::evaluation::pipeline::offline_config_for;
use gmmstream::evaluation::{
    batch_gmm_fit, cost_benchmark, divergence_experiment, equivalence_report, generators, matchers, split_protocol, DataGenerator, DivergenceCurve,
};
use gmmstream::io::{default_header, load_csv, load_model, save_csv, save_model, write_json, ConfigEcho, CsvData, SavedModel};
use gmmstream::model::{CovarianceStructure, OutlierStore};
use gmmstream::offline::{fit_offline, target_count, KChoice, OfflineConfig};
use gmmstream::online::{classify_batch, OnlineConfig, OnlineEngine, OnlineState};
use gmmstream::preprocess::Preprocessing;
use serde::Serialize;

use crate::{Command, OnlineFlags};

impl OnlineFlags {
    fn apply(&self, mut cfg: OnlineConfig) -> OnlineConfig {
        if let Some(v) = self.significance {
            cfg.significance = v;
        }
        if let Some(v) = self.min_pts {
            cfg.min_pts = v;
        }
        if let Some(v) = &self.epsilon_policy {
            cfg.epsilon_policy = v.clone();
        }
        if let Some(v) = &self.covariance_merge {
            cfg.covariance_merge = v.clone();
        }
        if let Some(v) = self.update_passes {
            cfg.update_passes = v;
        }
        cfg
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::FitOffline { data, alpha, k, k_range, seed, covariance, no_normalize, pca, online, out, report } => {
            let k = match (k, k_range) {
                (Some(k), _) => KChoice::Fixed(k),
                (None, Some(r)) => parse_range(&r)?,
                (None, None) => KChoice::Bic { lo: 1, hi: 10 },
            };
            let cfg = OfflineConfig { alpha, k, seed, covariance: CovarianceStructure::parse(&covariance)?, ..OfflineConfig::default() };
            fit_offline_cmd(&data, cfg, !no_normalize, pca, online.apply(OnlineConfig::default()), &out, report.as_deref())
        }
        Command::Update { model, batch, online, out, report } => update_cmd(&model, &batch, &online, &out, report.as_deref()),
        Command::Detect { model, data, out } => detect_cmd(&model, &data, &out),
        Command::BatchFit { data, k, seed, covariance, like, out } => batch_fit_cmd(&data, k, seed, CovarianceStructure::parse(&covariance)?, like.as_deref(), &out),
        Command::Simulate { design, seed, out } => simulate_cmd(&design, seed, &out),
        Command::Compare { model_a, model_b, significance, matcher, out } => {
            let a = load_model(&model_a)?;
            let b = load_model(&model_b)?;
            let report = equivalence_report(&a.state.model, &b.state.model, significance, matchers().get(&matcher)?.as_ref())?;
            write_json(&out, &report)?;
            println!("{}", serde_json::json!({ "pass": report.pass, "k_a": report.k_a, "k_b": report.k_b, "pairs_passing": report.pairs_passing() }));
            Ok(())
        }
        Command::Bench { design, seed, rounds, online, out } => {
            let g = generators().get(&design)?;
            let online = online.apply(OnlineConfig::default());
            let report = cost_benchmark(g.as_ref(), seed, rounds, &online)?;
            write_json(&out, &report)?;
            println!(
                "{}",
                serde_json::json!({ "median_time_ratio": report.median_time_ratio(), "online_memory_spread": report.online_memory_spread(), "rounds": report.rounds.len() })
            );
            Ok(())
        }
        Command::Diverge { design, seeds, sets, fraction, matcher, online, out } => {
            diverge_cmd(&design, &seeds, sets, fraction, &matcher, &online.apply(OnlineConfig::default()), &out)
        }
    }
}

fn parse_range(s: &str) -> Result<KChoice> {
    let bad = || GmmError::Config(format!("k range '{s}' is not of the form LO..HI"));
    let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(GmmError::Config(format!("k range {lo}..{hi} is empty or starts at 0")));
    }
    Ok(KChoice::Bic { lo, hi })
}

fn non_empty(table: &CsvData, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        log::error!("{} has no data rows", path.display());
        return Err(GmmError::InsufficientData { needed: 1, got: 0 });
    }
    Ok(())
}

fn check_columns(saved: &SavedModel, table: &CsvData) -> Result<()> {
    if table.dim() != saved.columns.len() {
        return Err(GmmError::Shape(format!("data has {} columns, model expects {} ({})", table.dim(), saved.columns.len(), saved.columns.join(","))));
    }
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    n: usize,
    input_dimension: usize,
    model_dimension: usize,
    k: usize,
    bic: Vec<(usize, Option<f64>)>,
    pi: f64,
    pi_steps: usize,
    target_outliers: usize,
    outliers: usize,
    threshold: Option<f64>,
    iterations: usize,
    converged: bool,
    weights: Vec<f64>,
    counts: Vec<f64>,
}

fn fit_offline_cmd(data: &Path, cfg: OfflineConfig, normalize: bool, pca: Option<f64>, online: OnlineConfig, out: &Path, report: Option<&Path>) -> Result<()> {
    OnlineEngine::new(online.clone())?;
    let table = load_csv(data)?;
    non_empty(&table, data)?;
    let pre = Preprocessing::fit(&table.rows, normalize, pca)?;
    let points = pre.apply_all(&table.rows)?;
    let fit = fit_offline(&points, &cfg)?;
    let summary = FitReport {
        n: points.len(),
        input_dimension: table.dim(),
        model_dimension: fit.model.dimension,
        k: fit.model.k(),
        bic: fit.bic_table.clone(),
        pi: fit.pi,
        pi_steps: fit.pi_steps,
        target_outliers: target_count(cfg.alpha, points.len()),
        outliers: fit.outliers.len(),
        threshold: fit.model.threshold,
        iterations: fit.report.iterations,
        converged: fit.report.converged,
        weights: fit.model.components.iter().map(|c| c.weight).collect(),
        counts: fit.model.counts(),
    };
    let state = OnlineState::from_offline(&fit, &points, online.eps_neighbor, online.eps_percentile);
    let saved = SavedModel { state, preprocessing: pre, columns: table.header, config: ConfigEcho { offline: cfg, online } };
    if let Some(r) = report {
        write_json(r, &summary)?;
    }
    save_model(out, &saved)?;
    println!("{}", serde_json::json!({ "k": summary.k, "outliers": summary.outliers, "threshold": summary.threshold }));
    Ok(())
}

#[derive(Serialize)]
struct UpdateReport {
    round: u64,
    batch_size: usize,
    initial_outliers: usize,
    emerging_clusters: usize,
    epsilon: Option<f64>,
    merged_pairs: Vec<(usize, usize, usize)>,
    k: usize,
    counts: Vec<f64>,
    outliers_stored: usize,
    /// Final component of each batch point; `null` marks an outlier.
    assignments: Vec<Option<usize>>,
}

fn update_cmd(model: &Path, batch: &Path, flags: &OnlineFlags, out: &Path, report: Option<&Path>) -> Result<()> {
    let mut saved = load_model(model)?;
    let table = load_csv(batch)?;
    check_columns(&saved, &table)?;
    let points = saved.preprocessing.apply_all(&table.rows)?;
    let online = flags.apply(saved.config.online.clone());
    let res = OnlineEngine::new(online.clone())?.step(&saved.state, &points)?;
    let summary = UpdateReport {
        round: res.state.model.round,
        batch_size: points.len(),
        initial_outliers: res.initial.outliers.len(),
        emerging_clusters: res.emerging_cluster_count,
        epsilon: res.epsilon,
        merged_pairs: res.merged_pairs.clone(),
        k: res.state.model.k(),
        counts: res.state.model.counts(),
        outliers_stored: res.state.outliers.len(),
        assignments: res.assignments.iter().map(|a| a.component()).collect(),
    };
    saved.state = res.state;
    saved.config.online = online;
    if let Some(r) = report {
        write_json(r, &summary)?;
    }
    save_model(out, &saved)?;
    println!("{}", serde_json::json!({ "round": summary.round, "k": summary.k, "emerging_clusters": summary.emerging_clusters }));
    Ok(())
}

#[derive(Serialize)]
struct PointRecord {
    index: usize,
    log_likelihood: f64,
    component: Option<usize>,
}

#[derive(Serialize)]
struct DetectReport {
    threshold: f64,
    n: usize,
    outliers: usize,
    counts: Vec<f64>,
    points: Vec<PointRecord>,
}

fn detect_cmd(model: &Path, data: &Path, out: &Path) -> Result<()> {
    let saved = load_model(model)?;
    let table = load_csv(data)?;
    check_columns(&saved, &table)?;
    let points = saved.preprocessing.apply_all(&table.rows)?;
    let c = classify_batch(&saved.state.model, &points)?;
    let report = DetectReport {
        threshold: saved.state.model.threshold()?,
        n: points.len(),
        outliers: c.outliers.len(),
        counts: c.counts.clone(),
        points: c
            .assignments
            .iter()
            .zip(&c.log_likelihoods)
            .enumerate()
            .map(|(index, (a, ll))| PointRecord { index, log_likelihood: *ll, component: a.component() })
            .collect(),
    };
    write_json(out, &report)?;
    println!("{}", serde_json::json!({ "n": report.n, "outliers": report.outliers }));
    Ok(())
}

fn batch_fit_cmd(data: &Path, k: usize, seed: u64, structure: CovarianceStructure, like: Option<&Path>, out: &Path) -> Result<()> {
    let table = load_csv(data)?;
    non_empty(&table, data)?;
    let preprocessing = match like {
        Some(p) => {
            let reference = load_model(p)?;
            check_columns(&reference, &table)?;
            reference.preprocessing
        }
        None => Preprocessing::identity(),
    };
    let points = preprocessing.apply_all(&table.rows)?;
    let model = batch_gmm_fit(&points, k, seed, structure)?;
    let state = OnlineState { model, outliers: OutlierStore::new(), ingested: points.len() as u64, epsilon_reference: None };
    let config = ConfigEcho { offline: OfflineConfig { k: KChoice::Fixed(k), seed, covariance: structure, ..OfflineConfig::default() }, online: OnlineConfig::default() };
    save_model(out, &SavedModel { state, preprocessing, columns: table.header, config })?;
    println!("{}", serde_json::json!({ "k": k }));
    Ok(())
}

#[derive(Serialize)]
struct ManifestFile {
    path: String,
    rows: usize,
    labels: Vec<usize>,
}

/// Batches in ingestion order; `sequence` is a logical timestamp.
#[derive(Serialize)]
struct ManifestBatch {
    sequence: usize,
    path: String,
}

#[derive(Serialize)]
struct Manifest {
    design: String,
    seed: u64,
    protocol: gmmstream::evaluation::generators::ProtocolDefaults,
    full: ManifestFile,
    offline: ManifestFile,
    batches: Vec<ManifestBatch>,
    online: Vec<ManifestFile>,
}

fn simulate_cmd(design: &str, seed: u64, out: &Path) -> Result<()> {
    let g = generators().get(design)?;
    let p = g.protocol();
    let data = g.generate(seed);
    let split = split_protocol(&data, p.holdout_label, p.holdout_offline_fraction, p.other_offline_fraction, p.n_online, seed)?;
    std::fs::create_dir_all(out)?;
    let header = default_header(data.dim());
    let write = |name: &str, points: &[gmmstream::Vector], labels: &[usize]| -> Result<ManifestFile> {
        save_csv(&out.join(name), &header, points)?;
        Ok(ManifestFile { path: name.to_string(), rows: points.len(), labels: labels.to_vec() })
    };
    let full = write("full.csv", &data.points, &data.labels)?;
    let offline = write("offline.csv", &split.offline.points, &split.offline.labels)?;
    let online = split
        .online_sets
        .iter()
        .enumerate()
        .map(|(i, s)| write(&format!("online_{:02}.csv", i + 1), &s.points, &s.labels))
        .collect::<Result<Vec<_>>>()?;
    let batches = online.iter().enumerate().map(|(i, f)| ManifestBatch { sequence: i + 1, path: f.path.clone() }).collect();
    let manifest = Manifest { design: g.name().to_string(), seed, protocol: p, full, offline, batches, online };
    write_json(&out.join("manifest.json"), &manifest)?;
    println!("{}", serde_json::json!({ "offline": manifest.offline.rows, "online_sets": manifest.online.len() }));
    Ok(())
}

#[derive(Serialize)]
struct CurveSummary {
    nondecreasing_share_t2: f64,
    nondecreasing_share_w: f64,
    /// Mean per-step change up to ratio 1 and beyond it.
    slopes_t2: (f64, f64),
    slopes_w: (f64, f64),
}

impl CurveSummary {
    fn of(c: &DivergenceCurve) -> Self {
        let r = c.ratios();
        CurveSummary {
            nondecreasing_share_t2: nondecreasing_share(&c.t2()),
            nondecreasing_share_w: nondecreasing_share(&c.w()),
            slopes_t2: slopes_around(&r, &c.t2(), 1.0),
            slopes_w: slopes_around(&r, &c.w(), 1.0),
        }
    }
}

#[derive(Serialize)]
struct DivergenceReport {
    design: String,
    sets: usize,
    fraction: f64,
    curves: Vec<DivergenceCurve>,
    mean: Option<DivergenceCurve>,
    summary: Option<CurveSummary>,
}

fn diverge_cmd(design: &str, seeds: &str, sets: usize, fraction: f64, matcher: &str, online: &OnlineConfig, out: &Path) -> Result<()> {
    let g = generators().get(design)?;
    let matcher = matchers().get(matcher)?;
    let seeds = seeds
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| GmmError::Config(format!("bad seed '{s}'"))))
        .collect::<Result<Vec<_>>>()?;
    let curves = seeds
        .iter()
        .map(|&seed| divergence_experiment(&g.generate(seed), &offline_config_for(g.as_ref() as &dyn DataGenerator, seed), online, matcher.as_ref(), sets, fraction, seed))
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_curve(&curves);
    let summary = mean.as_ref().map(CurveSummary::of);
    let report = DivergenceReport { design: g.name().to_string(), sets, fraction, curves, mean, summary };
    write_json(out, &report)?;
    if let Some(s) = &report.summary {
        println!("{}", serde_json::to_string(s).map_err(|e| GmmError::Io(e.to_string()))?);
    }
    Ok(())
}
