use std::process::ExitCode;
use std::time::Instant;

use gmmstream::dbscan::{dbscan, DbscanParams, Label};
use gmmstream::evaluation::divergence::{mean_curve, nondecreasing_share, slopes_around};
use gmmstream::evaluation::pipeline::fresh_points;
use gmmstream::evaluation::split::split_protocol;
use gmmstream::evaluation::{cost_benchmark, divergence_for_design, generators, run_design, DesignRun, GreedyMatcher, TrackingAllocator};
use gmmstream::io::{model_from_str, model_to_string, ConfigEcho, SavedModel};
use gmmstream::math::{euclidean, gaussian_log_density, log_sum_exp, mixture_log_likelihood};
use gmmstream::model::CovarianceStructure;
use gmmstream::offline::{fit_offline, fit_standard_em, kmeans_init, robust_em_fit, target_count};
use gmmstream::online::{classify_batch, merge_pair, MomentMatching, OnlineConfig, OnlineEngine, OnlineState};
use gmmstream::preprocess::Preprocessing;
use gmmstream::stat_tests::{covariance_w_test, hotelling_t2};
use gmmstream::{GaussianComponent, Matrix, MixtureModel, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const SIGNIFICANCE: f64 = 0.05;
const RUNTIME_LIMIT_S: f64 = 30.0;
const COUNT_GAP: f64 = 0.03;
const FRESH_FLAG_FACTOR: f64 = 2.0;
const TIME_RATIO: f64 = 0.2;
const MEMORY_SPREAD: f64 = 0.10;
const COST_ROUNDS: usize = 10;
const DIVERGENCE_SEEDS: [u64; 3] = [1, 2, 3];
const NONDECREASING_SHARE: f64 = 0.8;
const DESIGNS_NEEDED: usize = 2;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct DesignRuns {
    name: &'static str,
    runs: Vec<(DesignRun, f64)>,
    errors: Vec<String>,
}

fn run_all(name: &'static str) -> DesignRuns {
    let g = generators().get(name).expect("registered design");
    let online = OnlineConfig::default();
    let mut runs = Vec::new();
    let mut errors = Vec::new();
    for seed in SEEDS {
        let t = Instant::now();
        match run_design(g.as_ref(), seed, &online, &GreedyMatcher) {
            Ok(r) => runs.push((r, t.elapsed().as_secs_f64())),
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }
    DesignRuns { name, runs, errors }
}

/// Final K, pairs passing and count gap per seed, judged on medians.
fn equivalence_criterion(d: &DesignRuns, true_k: usize, min_pairs: usize, count_gap: Option<f64>, extra: impl Fn(&DesignRuns) -> (bool, String)) -> Outcome {
    if !d.errors.is_empty() {
        return Outcome::new(false, format!("{}: {}", d.name, d.errors.join("; ")));
    }
    let ks: Vec<f64> = d.runs.iter().map(|(r, _)| r.state.model.k() as f64).collect();
    let pairs: Vec<f64> = d.runs.iter().map(|(r, _)| r.report.pairs_passing() as f64).collect();
    let means: Vec<f64> = d.runs.iter().map(|(r, _)| r.report.mean_passing() as f64).collect();
    let covs: Vec<f64> = d.runs.iter().map(|(r, _)| r.report.covariance_passing() as f64).collect();
    let gaps: Vec<f64> = d.runs.iter().map(|(r, _)| r.report.max_relative_count_gap()).collect();
    let mut pass = median(ks.clone()) == true_k as f64 && median(pairs.clone()) >= min_pairs as f64 && median(means.clone()) >= min_pairs as f64 && median(covs.clone()) >= min_pairs as f64;
    let mut detail = format!("K per seed {ks:?}, pairs passing {pairs:?} (need median >= {min_pairs}/{true_k})");
    if let Some(limit) = count_gap {
        pass &= median(gaps.clone()) <= limit;
        detail.push_str(&format!(", count gap median {:.4} (<= {limit}) per seed {:?}", median(gaps.clone()), gaps.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>()));
    }
    let (ok, more) = extra(d);
    detail.push_str(&more);
    Outcome::new(pass && ok, detail)
}

fn criterion_1(d: &DesignRuns) -> Outcome {
    equivalence_criterion(d, 8, 8, None, |d| {
        let rounds: Vec<f64> = d.runs.iter().map(|(r, _)| r.holdout_discovered.map_or(f64::INFINITY, |x| x as f64)).collect();
        let secs: Vec<f64> = d.runs.iter().map(|(_, s)| *s).collect();
        let ok = median(rounds.clone()) == 1.0 && median(secs.clone()) < RUNTIME_LIMIT_S;
        (ok, format!(", discovery round {rounds:?}, runtime median {:.1}s (< {RUNTIME_LIMIT_S}s)", median(secs)))
    })
}

fn criterion_2(d: &DesignRuns) -> Outcome {
    equivalence_criterion(d, 16, 15, Some(COUNT_GAP), |_| (true, String::new()))
}

fn criterion_3(d: &DesignRuns) -> Outcome {
    equivalence_criterion(d, 5, 5, None, |_| (true, String::new()))
}

fn criterion_4(all: &[&DesignRuns]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for d in all {
        if !d.errors.is_empty() {
            pass = false;
            parts.push(format!("{}: errors", d.name));
            continue;
        }
        let g = generators().get(d.name).unwrap();
        let alpha = g.protocol().alpha;
        let exact = d.runs.iter().all(|(r, _)| r.offline.outliers.len() == target_count(alpha, r.split.offline.len()));
        let mut rates = Vec::new();
        for (seed, (r, _)) in SEEDS.iter().zip(&d.runs) {
            let fresh = fresh_points(g.as_ref(), *seed);
            match classify_batch(&r.state.model, &fresh) {
                Ok(c) => rates.push(c.outliers.len() as f64 / fresh.len() as f64),
                Err(_) => rates.push(f64::INFINITY),
            }
        }
        let rate = median(rates);
        let ok = exact && rate <= FRESH_FLAG_FACTOR * alpha;
        pass &= ok;
        parts.push(format!("{}: exact {exact}, fresh flag rate median {rate:.4} (<= {:.3})", d.name, FRESH_FLAG_FACTOR * alpha));
    }
    Outcome::new(pass, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let g = generators().get("dimhigh").unwrap();
    match cost_benchmark(g.as_ref(), 1, COST_ROUNDS, &OnlineConfig::default()) {
        Err(e) => Outcome::new(false, format!("error {e}")),
        Ok(rep) => {
            let ratio = rep.median_time_ratio();
            let spread = rep.online_memory_spread();
            let retrain = rep.retrain_memory();
            let growing = retrain.as_ref().is_some_and(|m| m.len() >= 2 && m.last() > m.first());
            let pass = rep.memory_tracked() && ratio <= TIME_RATIO && spread.is_some_and(|s| s <= MEMORY_SPREAD) && growing;
            Outcome::new(
                pass,
                format!(
                    "median online/retrain time {ratio:.4} (<= {TIME_RATIO}), online memory spread {:?} (<= {MEMORY_SPREAD}), retrain peak bytes first {:?} last {:?}",
                    spread.map(|s| (s * 1e4).round() / 1e4),
                    retrain.as_ref().and_then(|m| m.first().copied()),
                    retrain.as_ref().and_then(|m| m.last().copied())
                ),
            )
        }
    }
}

fn criterion_6() -> Outcome {
    let mut good = 0;
    let mut parts = Vec::new();
    for name in ["unbalance", "dimhigh", "overlap3d"] {
        let g = generators().get(name).unwrap();
        let curves: Result<Vec<_>, _> = DIVERGENCE_SEEDS.iter().map(|&s| divergence_for_design(g.as_ref(), s, &OnlineConfig::default(), &GreedyMatcher)).collect();
        let curves = match curves {
            Ok(c) => c,
            Err(e) => {
                parts.push(format!("{name}: error {e}"));
                continue;
            }
        };
        let m = mean_curve(&curves).unwrap();
        let r = m.ratios();
        let mut ok = true;
        let mut stats = Vec::new();
        for (label, v) in [("T2", m.t2()), ("W", m.w())] {
            let share = nondecreasing_share(&v);
            let (before, after) = slopes_around(&r, &v, 1.0);
            ok &= share >= NONDECREASING_SHARE && after > before;
            stats.push(format!("{label} share {share:.2} slope {before:.3}->{after:.3}"));
        }
        good += ok as usize;
        parts.push(format!("{name} {} [{}]", if ok { "ok" } else { "no" }, stats.join(", ")));
    }
    Outcome::new(good >= DESIGNS_NEEDED, format!("{good}/3 designs (need {DESIGNS_NEEDED}): {}", parts.join("; ")))
}

// property checks

fn blobs(rng: &mut ChaCha8Rng, centers: &[(f64, f64)], per: usize, contaminate: usize) -> Vec<Vector> {
    let mut out = Vec::new();
    for &(x, y) in centers {
        for _ in 0..per {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            out.push(Vector::from_vec(vec![x + a, y + 0.5 * a + 0.8 * b]));
        }
    }
    for _ in 0..contaminate {
        out.push(Vector::from_vec(vec![rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)]));
    }
    out
}

fn close(a: &GaussianComponent, b: &GaussianComponent, tol: f64) -> bool {
    (a.weight - b.weight).abs() <= tol && (&a.mean - &b.mean).amax() <= tol && (&a.covariance - &b.covariance).amax() <= tol
}

fn prop_objective_monotone() -> Result<String, String> {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = blobs(&mut rng, &[(0.0, 0.0), (8.0, 3.0), (-6.0, 7.0)], 150, 12);
        let init = kmeans_init(&data, 3, seed).map_err(|e| e.to_string())?;
        for pi in [2.0, 5.0, 15.0] {
            let fit = robust_em_fit(&data, &init, pi, 300, 1e-10).map_err(|e| e.to_string())?;
            for w in fit.report.objective_trace.windows(2) {
                let rise = (w[1] - w[0]) / w[0].abs().max(1.0);
                worst = worst.max(rise);
                if rise > 1e-8 {
                    return Err(format!("objective rose by {rise:e} (seed {seed}, pi {pi})"));
                }
            }
        }
    }
    Ok(format!("max relative step {worst:.1e}"))
}

fn prop_responsibilities() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data = blobs(&mut rng, &[(0.0, 0.0), (5.0, 5.0), (-5.0, 4.0), (2.0, -6.0)], 100, 20);
    let init = kmeans_init(&data, 4, 1).map_err(|e| e.to_string())?;
    let model = MixtureModel::new(init).map_err(|e| e.to_string())?;
    let prepared = model.prepare().map_err(|e| e.to_string())?;
    let mut probes = data.clone();
    probes.push(Vector::from_vec(vec![1e3, -1e3]));
    probes.push(Vector::from_vec(vec![-250.0, 400.0]));
    let mut worst: f64 = 0.0;
    for x in &probes {
        let (post, _) = prepared.posteriors(x.as_slice()).map_err(|e| e.to_string())?;
        worst = worst.max((post.iter().sum::<f64>() - 1.0).abs());
    }
    if worst <= 1e-10 {
        Ok(format!("max deviation {worst:.1e}"))
    } else {
        Err(format!("max deviation {worst:e}"))
    }
}

fn prop_large_pi() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data = blobs(&mut rng, &[(0.0, 0.0), (9.0, 1.0), (3.0, 8.0)], 200, 0);
    let init = kmeans_init(&data, 3, 2).map_err(|e| e.to_string())?;
    let standard = fit_standard_em(&data, &init, CovarianceStructure::Full, 1000, 1e-12).map_err(|e| e.to_string())?;
    let robust = robust_em_fit(&data, &init, 1e6, 1000, 1e-12).map_err(|e| e.to_string())?;
    let same = standard.model.components.len() == robust.components.len() && standard.model.components.iter().zip(&robust.components).all(|(a, b)| close(a, b, 1e-6));
    if same && robust.outlier_count() == 0 {
        Ok("parameters agree within 1e-6".into())
    } else {
        Err("large-penalty fit differs from standard EM".into())
    }
}

fn prop_conservation() -> Result<String, String> {
    let g = generators().get("unbalance").unwrap();
    let p = g.protocol();
    let online = OnlineConfig::default();
    let mut rounds = 0;
    for seed in [1, 2] {
        let data = g.generate(seed);
        let split = split_protocol(&data, p.holdout_label, p.holdout_offline_fraction, p.other_offline_fraction, p.n_online, seed).map_err(|e| e.to_string())?;
        let fit = fit_offline(&split.offline.points, &gmmstream::evaluation::pipeline::offline_config_for(g.as_ref(), seed)).map_err(|e| e.to_string())?;
        let engine = OnlineEngine::new(online.clone()).map_err(|e| e.to_string())?;
        let mut state = OnlineState::from_offline(&fit, &split.offline.points, online.eps_neighbor, online.eps_percentile);
        if state.conservation_gap() != 0.0 {
            return Err(format!("offline gap {}", state.conservation_gap()));
        }
        for set in &split.online_sets {
            state = engine.step(&state, &set.points).map_err(|e| e.to_string())?.state;
            rounds += 1;
            if state.conservation_gap() != 0.0 {
                return Err(format!("gap {} after round {}", state.conservation_gap(), state.model.round));
            }
        }
    }
    Ok(format!("exact over {rounds} rounds"))
}

fn oracle_labels(points: &[Vector], eps: f64, min_pts: usize) -> (Vec<bool>, Vec<Label>) {
    let n = points.len();
    let near = |i: usize, j: usize| euclidean(points[i].as_slice(), points[j].as_slice()) <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    // components of the core graph, numbered by their lowest index
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if core[s] && comp[s] == usize::MAX {
            let mut changed = true;
            comp[s] = next;
            while changed {
                changed = false;
                for p in 0..n {
                    if comp[p] != next {
                        continue;
                    }
                    for q in 0..n {
                        if core[q] && comp[q] == usize::MAX && near(p, q) {
                            comp[q] = next;
                            changed = true;
                        }
                    }
                }
            }
            next += 1;
        }
    }
    let labels = (0..n)
        .map(|i| {
            if core[i] {
                Label::Cluster(comp[i])
            } else {
                (0..n).filter(|&j| core[j] && near(i, j)).map(|j| comp[j]).min().map_or(Label::Noise, Label::Cluster)
            }
        })
        .collect();
    (core, labels)
}

fn prop_dbscan() -> Result<String, String> {
    let mut instances = 0;
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(5..=500);
        let dim = rng.random_range(1..=3);
        let centers: Vec<Vec<f64>> = (0..rng.random_range(1..5)).map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        let spread = Normal::new(0.0, rng.random_range(0.3..2.0)).unwrap();
        let points: Vec<Vector> = (0..n)
            .map(|i| {
                let c = &centers[i % centers.len()];
                // a grid snap now and then puts points exactly at distance eps
                let v: Vec<f64> = c.iter().map(|x| x + spread.sample(&mut rng)).collect();
                Vector::from_vec(if i % 7 == 0 { v.iter().map(|x| x.round()).collect() } else { v })
            })
            .collect();
        for (eps, min_pts) in [(1.0, 5), (0.5, 3), (2.0, 10), (1.0, 1)] {
            let got = dbscan(&points, DbscanParams::new(eps, min_pts).map_err(|e| e.to_string())?);
            let (core, labels) = oracle_labels(&points, eps, min_pts);
            if got.core != core || got.labels != labels {
                return Err(format!("mismatch on instance seed {seed}, n {n}, eps {eps}, min_pts {min_pts}"));
            }
            instances += 1;
        }
    }
    Ok(format!("{instances} instances identical"))
}

fn sample_moments(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vector, Matrix) {
    let pts: Vec<Vector> = (0..n).map(|_| Vector::from_fn(d, |_, _| StandardNormal.sample(rng))).collect();
    let mean = pts.iter().fold(Vector::zeros(d), |acc, p| acc + p) / n as f64;
    let cov = pts.iter().fold(Matrix::zeros(d, d), |acc, p| acc + (p - &mean) * (p - &mean).transpose()) / n as f64;
    (mean, cov)
}

fn null_rates(seed: u64, trials: usize) -> Result<(f64, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut t2_rejects, mut w_rejects) = (0, 0);
    for _ in 0..trials {
        let (ma, ca) = sample_moments(&mut rng, 400, 3);
        let (mb, cb) = sample_moments(&mut rng, 400, 3);
        t2_rejects += (hotelling_t2(&ma, &ca, 400.0, &mb, &cb, 400.0, SIGNIFICANCE).map_err(|e| e.to_string())?.p_value <= SIGNIFICANCE) as usize;
        w_rejects += (covariance_w_test(&ca, 400.0, &cb, 400.0, SIGNIFICANCE).map_err(|e| e.to_string())?.p_value <= SIGNIFICANCE) as usize;
    }
    Ok((t2_rejects as f64 / trials as f64, w_rejects as f64 / trials as f64))
}

/// Rejection rate of 200 null trials, median over independent batches.
fn prop_null_calibration() -> Result<String, String> {
    let trials = 200;
    let rates = SEEDS.iter().map(|&s| null_rates(s, trials)).collect::<Result<Vec<_>, _>>()?;
    let rt = median(rates.iter().map(|r| r.0).collect());
    let rw = median(rates.iter().map(|r| r.1).collect());
    let msg = format!("median rejection rates T2 {rt:.3}, W {rw:.3} over batches of {trials} trials {rates:?}");
    if (rt - SIGNIFICANCE).abs() <= 0.03 && (rw - SIGNIFICANCE).abs() <= 0.03 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn prop_self_merge() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..6);
        let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose() + Matrix::identity(d, d) * 0.2;
        let mean = Vector::from_fn(d, |_, _| rng.random_range(-10.0..10.0));
        let weight = rng.random_range(0.05..0.9);
        let count = rng.random_range(10..5000) as f64 * 2.0;
        let original = GaussianComponent::new(weight, mean, cov, count);
        let half = GaussianComponent { weight: weight / 2.0, count: count / 2.0, ..original.clone() };
        let merged = merge_pair(&half, &half, &MomentMatching);
        let scale = original.covariance.amax().max(original.mean.amax()).max(1.0);
        let gap = (merged.weight - original.weight).abs().max((&merged.mean - &original.mean).amax()).max((&merged.covariance - &original.covariance).amax()) / scale;
        worst = worst.max(gap);
        if merged.count != original.count || gap > 1e-10 {
            return Err(format!("merge differs by {gap:e}"));
        }
    }
    Ok(format!("max relative gap {worst:.1e}"))
}

fn prop_model_roundtrip() -> Result<String, String> {
    let g = generators().get("overlap3d").unwrap();
    let data = g.generate(4);
    let fit = fit_offline(&data.points, &gmmstream::evaluation::pipeline::offline_config_for(g.as_ref(), 4)).map_err(|e| e.to_string())?;
    let online = OnlineConfig::default();
    let state = OnlineState::from_offline(&fit, &data.points, online.eps_neighbor, online.eps_percentile);
    let prep = Preprocessing::fit(&data.points, true, Some(0.99)).map_err(|e| e.to_string())?;
    let mut saved = SavedModel { state, preprocessing: prep, columns: vec!["a".into(), "b".into(), "c".into()], config: ConfigEcho::default() };
    saved.state.outliers = Default::default();
    let text = model_to_string(&saved).map_err(|e| e.to_string())?;
    let back = model_from_str(&text).map_err(|e| e.to_string())?;
    if back == saved && model_to_string(&back).map_err(|e| e.to_string())? == text {
        Ok(format!("{} bytes, identical after reload", text.len()))
    } else {
        Err("reloaded model differs".into())
    }
}

fn naive_log_density(x: &Vector, mean: &Vector, cov: &Matrix) -> f64 {
    let d = x.len() as f64;
    let inv = cov.clone().try_inverse().unwrap();
    let diff = x - mean;
    let q = (diff.transpose() * inv * &diff)[(0, 0)];
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + q)
}

fn prop_density_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(1..5);
        let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose() + Matrix::identity(d, d) * 0.5;
        let mean = Vector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
        let x = Vector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
        let got = gaussian_log_density(&x, &mean, &cov).map_err(|e| e.to_string())?;
        worst = worst.max(rel(got, naive_log_density(&x, &mean, &cov)));

        let logs: Vec<f64> = (0..rng.random_range(1..12)).map(|_| rng.random_range(-30.0..30.0)).collect();
        worst = worst.max(rel(log_sum_exp(&logs), logs.iter().map(|v| v.exp()).sum::<f64>().ln()));

        let comps: Vec<GaussianComponent> = (0..3)
            .map(|k| {
                let b = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                GaussianComponent::new([0.2, 0.3, 0.5][k], Vector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)), &b * b.transpose() + Matrix::identity(d, d), 10.0)
            })
            .collect();
        let naive = comps.iter().map(|c| c.weight * naive_log_density(&x, &c.mean, &c.covariance).exp()).sum::<f64>().ln();
        let model = MixtureModel::new(comps).map_err(|e| e.to_string())?;
        worst = worst.max(rel(mixture_log_likelihood(&x, &model).map_err(|e| e.to_string())?, naive));
    }
    if worst <= 1e-10 {
        Ok(format!("max relative error {worst:.1e}"))
    } else {
        Err(format!("max relative error {worst:e}"))
    }
}

fn criterion_7() -> Outcome {
    type Check = fn() -> Result<String, String>;
    let checks: [(&str, Check); 9] = [
        ("objective monotone", prop_objective_monotone),
        ("responsibilities", prop_responsibilities),
        ("large penalty = standard EM", prop_large_pi),
        ("count conservation", prop_conservation),
        ("dbscan oracle", prop_dbscan),
        ("null calibration", prop_null_calibration),
        ("self merge", prop_self_merge),
        ("model round trip", prop_model_roundtrip),
        ("density oracle", prop_density_oracle),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, f) in checks {
        match f() {
            Ok(msg) => parts.push(format!("{name}: ok ({msg})")),
            Err(msg) => {
                pass = false;
                parts.push(format!("{name}: FAILED ({msg})"));
            }
        }
    }
    Outcome::new(pass, parts.join("; "))
}

fn report(id: usize, title: &str, started: Instant, o: &Outcome) {
    println!("[{}] criterion {id} {title} ({:.1}s): {}", if o.pass { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64(), o.detail);
}

fn main() -> ExitCode {
    let mut results = Vec::new();

    let t = Instant::now();
    let c7 = criterion_7();
    report(7, "property suites", t, &c7);
    results.push(c7.pass);

    let t = Instant::now();
    let unbalance = run_all("unbalance");
    let c1 = criterion_1(&unbalance);
    report(1, "unbalance design", t, &c1);
    results.push(c1.pass);

    let t = Instant::now();
    let dimhigh = run_all("dimhigh");
    let c2 = criterion_2(&dimhigh);
    report(2, "high-dimensional design", t, &c2);
    results.push(c2.pass);

    let t = Instant::now();
    let overlap = run_all("overlap3d");
    let c3 = criterion_3(&overlap);
    report(3, "overlapping design", t, &c3);
    results.push(c3.pass);

    let t = Instant::now();
    let c4 = criterion_4(&[&unbalance, &dimhigh, &overlap]);
    report(4, "outlier calibration", t, &c4);
    results.push(c4.pass);

    let t = Instant::now();
    let c5 = criterion_5();
    report(5, "cost trend", t, &c5);
    results.push(c5.pass);

    let t = Instant::now();
    let c6 = criterion_6();
    report(6, "divergence growth", t, &c6);
    results.push(c6.pass);

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    // FAIL lines are informational unless ACCEPTANCE_STRICT is set
    if passed < results.len() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
