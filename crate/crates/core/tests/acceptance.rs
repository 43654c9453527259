//! Acceptance criteria, one printed PASS/FAIL line each.
//!
//! The Part I runs share a fit cache under the cargo target directory, so
//! only the first invocation pays for sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use multiverse_filter::cv::{brute_force_loo, integrated_loglik, pointwise_loglik, psis_loo};
use multiverse_filter::diagnostics::{ess_basic, ess_bulk, rhat};
use multiverse_filter::model::Model;
use multiverse_filter::multiverse::{Family, ModelSpec, PriorScheme};
use multiverse_filter::pipeline::{
    fit_model, load_draws, run_filter, summarise_qoi, FitCache, ModelStatus, PipelineConfig, RunOutput,
};
use multiverse_filter::ppc::{self, ecdf_band, ppc_verdict, PpcConfig, PpcVerdict};
use multiverse_filter::psis::{fit_gpd, khat_threshold, min_sample_size};
use multiverse_filter::sampler::{sample, SamplerConfig};
use multiverse_filter::{Dataset, Draws, ModelId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};

/// Criteria that cannot be met by this implementation; each has an entry in
/// the decisions ledger. They are still run and reported.
const LEDGERED_FAILURES: &[u32] = &[3];

const PART1_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn part1_config() -> PipelineConfig {
    PipelineConfig::load(&configs().join("epilepsy_part1.toml")).unwrap()
}

const PART1_FORMULAS: [&str; 6] =
    ["zBase * Trt", "Trt", "Trt + zBase", "zBase * Trt + zAge", "Trt + zAge", "Trt + zBase + zAge"];

/// Model number in the published table: blocks of four per formula, family
/// alternating fastest, then prior.
fn table_model(number: usize) -> ModelId {
    let i = number - 1;
    let formula = PART1_FORMULAS[i / 4];
    let family = if (i % 4) % 2 == 0 { Family::Poisson } else { Family::NegativeBinomial };
    let prior = if (i % 4) < 2 { PriorScheme::Default } else { PriorScheme::Rhs { df: 3 } };
    ModelSpec::new(family).with_formula(formula).unwrap().with_prior(prior).canonical().id()
}

fn grey_models() -> BTreeSet<ModelId> {
    [2, 4, 10, 12, 16, 22, 24].into_iter().map(table_model).collect()
}

fn part1_runs(cache: &FitCache) -> Vec<(u64, RunOutput)> {
    let base = part1_config();
    let data = base.load_data().unwrap();
    PART1_SEEDS
        .iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.sampler.seed = seed;
            let mv = cfg.expand().unwrap();
            (seed, run_filter(&mv, &data, &cfg, cache).unwrap())
        })
        .collect()
}

fn mean_and_mcse(draws: &Draws, name: &str) -> (f64, f64) {
    let chains = draws.param(name).unwrap();
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / ess_bulk(&chains)).sqrt())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mv = part1_config().expand().unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let got: BTreeSet<ModelId> = mv.ids().into_iter().collect();
    let want: BTreeSet<ModelId> = (1..=24).map(table_model).collect();
    outcome(
        got == want && mv.len() == 24 && elapsed < 1.0,
        format!("{} models, {} match the table, {elapsed:.3}s", mv.len(), got.intersection(&want).count()),
    )
}

fn criterion_2(runs: &[(u64, RunOutput)]) -> Outcome {
    let grey = grey_models();
    let mut exact = 0;
    let mut worst = 0;
    let mut parts = Vec::new();
    for (seed, run) in runs {
        let got: BTreeSet<ModelId> = run.report.filtered_set.iter().cloned().collect();
        let diff = got.symmetric_difference(&grey).count();
        exact += usize::from(diff == 0);
        worst = worst.max(diff);
        parts.push(format!("seed {seed}: {} retained, {diff} differ", got.len()));
    }
    outcome(exact * 2 > runs.len() && worst <= 1, parts.join("; "))
}

fn criterion_3(runs: &[(u64, RunOutput)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (seed, run) in runs {
        let high: BTreeSet<&ModelId> = run
            .report
            .models
            .iter()
            .filter(|m| m.cv.as_ref().is_some_and(|c| c.max_khat_direct > 0.7))
            .map(|m| &m.model_id)
            .collect();
        let family = |id: &ModelId| run.report.model(id).unwrap().choices["family"].clone();
        let non_poisson = high.iter().filter(|id| family(id) != "poisson").count();
        let baseline_poisson: Vec<&ModelId> = run
            .report
            .models
            .iter()
            .filter(|m| m.choices["family"] == "poisson" && m.choices["formula"].contains("zBase"))
            .map(|m| &m.model_id)
            .collect();
        let missed = baseline_poisson.iter().filter(|id| !high.contains(*id)).count();
        pass &= non_poisson == 0 && missed == 0;
        parts.push(format!(
            "seed {seed}: {} flagged, {non_poisson} not Poisson, {missed}/{} baseline Poisson unflagged",
            high.len(),
            baseline_poisson.len()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let t = khat_threshold(236);
    let ss = min_sample_size(0.58);
    outcome(
        (t - 0.579).abs() < 1e-3 && (t * 100.0).round() / 100.0 == 0.58 && ss > 236.0,
        format!("threshold {t:.4}, min sample size at 0.58 {ss:.1}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 30;
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = x.iter().map(|xi| 1.0 + 0.5 * xi + 0.8 * rng.sample::<f64, _>(StandardNormal)).collect();
    let labels: Vec<String> = (0..n).map(|i| format!("o{i}")).collect();
    let data = Dataset::builder("y").column("y", y.clone()).column("x", x).factor_labels("obs", &labels).build().unwrap();
    let spec = ModelSpec::new(Family::Normal).with_formula("x").unwrap().with_groups(&["obs"]).canonical();
    let model = Model::with_default_priors(&spec, &data).unwrap();
    let draws = sample(&model, &SamplerConfig { chains: 2, warmup_iters: 200, sampling_iters: 100, ..Default::default() })
        .unwrap();
    let integrated = integrated_loglik(&model, &draws, 30).unwrap();
    let g = model.observation_group().unwrap();
    let mut max_err: f64 = 0.0;
    for (d, values) in draws.iter_draws().enumerate() {
        let pv = model.params_from_values(values).unwrap();
        let eta = model.linear_predictor_excluding(&pv, Some(g)).unwrap();
        let sigma = pv.dispersion.unwrap();
        let sd = (sigma * sigma + pv.group_sds[g] * pv.group_sds[g]).sqrt();
        for i in 0..n {
            let z = (y[i] - eta[i]) / sd;
            let log_pdf = -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            max_err = max_err.max((integrated.by_obs[i][d] - log_pdf).abs());
        }
    }

    let epi = Dataset::epilepsy();
    let spec = ModelSpec::new(Family::Poisson).with_formula("zBase * Trt").unwrap().with_groups(&["obs"]).canonical();
    let model = Model::with_default_priors(&spec, &epi).unwrap();
    let draws = sample(&model, &SamplerConfig { seed: 1, ..Default::default() }).unwrap();
    let direct = psis_loo(&pointwise_loglik(&model, &draws).unwrap()).unwrap().high_khat(0.7).len();
    let repaired = psis_loo(&integrated_loglik(&model, &draws, 30).unwrap()).unwrap().high_khat(0.7).len();
    outcome(
        max_err < 1e-8 && repaired < direct,
        format!("max |integrated - analytic| {max_err:.2e}; epilepsy khat > 0.7: direct {direct}, integrated {repaired}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 40;
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = x.iter().map(|xi| Poisson::new((1.0 + 0.3 * xi).exp()).unwrap().sample(&mut rng)).collect();
    let data = Dataset::builder("y").column("y", y).column("x", x).build().unwrap();
    let spec = ModelSpec::new(Family::Poisson).with_formula("x").unwrap().canonical();
    let model = Model::with_default_priors(&spec, &data).unwrap();
    let cfg = SamplerConfig { seed: 5, ..Default::default() };
    let draws = sample(&model, &cfg).unwrap();
    let loo = psis_loo(&pointwise_loglik(&model, &draws).unwrap()).unwrap();
    let obs: Vec<usize> = (0..n).collect();
    let bf = brute_force_loo(&model, &data, &cfg, &obs, |i| 1000 + i as u64).unwrap();
    let mut agree = 0;
    for b in &bf {
        let (elpd, se) = b.outcome.clone().unwrap();
        let tol = 3.0 * (se * se + loo.mcse[b.obs] * loo.mcse[b.obs]).sqrt();
        agree += usize::from((elpd - loo.pointwise[b.obs]).abs() <= tol);
    }
    let max_khat = loo.max_khat();
    outcome(
        max_khat < 0.5 && agree as f64 >= 0.95 * n as f64,
        format!("max khat {max_khat:.2}; {agree}/{n} within 3 combined MC se"),
    )
}

fn criterion_7() -> Outcome {
    let k = 0.3;
    let mut estimates: Vec<f64> = (0..50)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..1000).map(|_| ((1.0 - rng.random::<f64>()).powf(-k) - 1.0) / k).collect();
            fit_gpd(&x).unwrap().khat
        })
        .collect();
    estimates.sort_by(f64::total_cmp);
    let median = 0.5 * (estimates[24] + estimates[25]);
    outcome((median - k).abs() <= 0.1, format!("median khat {median:.3}"))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let iid: Vec<Vec<f64>> = (0..4).map(|_| (0..1000).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let s = 4000.0;
    let (r, ess) = (rhat(&iid), ess_bulk(&iid));
    let mut shifted = iid.clone();
    shifted[0].iter_mut().for_each(|v| *v += 3.0);
    let r_shift = rhat(&shifted);
    let rho: f64 = 0.9;
    let ar: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let mut v = rng.sample::<f64, _>(StandardNormal) / (1.0 - rho * rho).sqrt();
            (0..5000)
                .map(|_| {
                    v = rho * v + rng.sample::<f64, _>(StandardNormal);
                    v
                })
                .collect()
        })
        .collect();
    let analytic = 20000.0 * (1.0 - rho) / (1.0 + rho);
    let ar_ess = ess_basic(&ar);
    let ratio = (ar_ess / analytic).max(analytic / ar_ess);
    outcome(
        (0.999..=1.01).contains(&r) && (0.8 * s..=1.3 * s).contains(&ess) && r_shift > 1.2 && ratio <= 1.5,
        format!("iid rhat {r:.4}, ess_bulk {ess:.0}; shifted rhat {r_shift:.2}; AR(1) ess {ar_ess:.0} vs {analytic:.0}"),
    )
}

fn criterion_9() -> Outcome {
    let mut cfg = PipelineConfig::load(&configs().join("eight_schools.toml")).unwrap();
    let data = cfg.load_data().unwrap();
    let (mut diverging, mut repaired) = (0, 0);
    let (mut leap_first, mut leap_kept) = (0.0, 0.0);
    // Per parameter: summed means and squared MC se over seeds, for the
    // ladder's fit and for a non-centred reference at a high target.
    let mut sums: BTreeMap<String, [f64; 4]> = BTreeMap::new();
    let seeds = 10;
    for seed in 1..=seeds {
        cfg.sampler.seed = seed;
        let mv = cfg.expand().unwrap();
        let fitted = fit_model(&mv.models[0], &data, &cfg, &FitCache::in_memory()).unwrap();
        let rec = &fitted.fit.record;
        let first = &rec.attempts[0];
        diverging += usize::from(first.target_accept == 0.8 && first.divergences > 0);
        let kept = fitted.diagnostics.as_ref().unwrap();
        repaired += usize::from(kept.divergence_count == 0 && rec.lambdas.values().any(|l| *l != 1.0));
        leap_first += first.mean_leapfrog;
        let draws = fitted.draws().unwrap();
        leap_kept += draws.mean_leapfrog();
        let non_centred = fitted.model.as_ref().unwrap().with_parameterisation(&[("school".into(), 0.0)]).unwrap();
        let reference =
            sample(&non_centred, &SamplerConfig { target_accept: 0.99, seed: 1000 + seed, ..rec.sampler }).unwrap();
        for name in draws.names.iter().filter(|n| n.starts_with("b_") || n.starts_with("r_") || n.starts_with("sd_")) {
            let (m1, s1) = mean_and_mcse(draws, name);
            let (m2, s2) = mean_and_mcse(&reference, name);
            let acc = sums.entry(name.clone()).or_default();
            acc[0] += m1;
            acc[1] += s1 * s1;
            acc[2] += m2;
            acc[3] += s2 * s2;
        }
    }
    let worst_z = sums.values().map(|a| (a[0] - a[2]).abs() / (a[1] + a[3]).sqrt()).fold(0.0, f64::max);
    let n = seeds as usize;
    outcome(
        diverging == n && repaired >= 8 && worst_z <= 3.0 && leap_kept < leap_first,
        format!(
            "{diverging}/{n} centred fits diverge; {repaired}/{n} repaired; max seed-pooled mean gap {worst_z:.2} MC se; \
             mean leapfrog {:.1} -> {:.1}",
            leap_first / n as f64,
            leap_kept / n as f64
        ),
    )
}

fn criterion_10() -> Outcome {
    let n = 236;
    let band = ecdf_band(n, 0.05, 10_000, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let reps = 2000;
    let exits = (0..reps)
        .filter(|_| {
            let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            ppc_verdict(&u, &band).0 == PpcVerdict::Fail
        })
        .count();
    let rate = exits as f64 / reps as f64;

    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|xi| {
            let mu = (1.5 + 0.4 * xi).exp();
            let lambda = Gamma::new(1.5, mu / 1.5).unwrap().sample(&mut rng);
            Poisson::new(lambda).unwrap().sample(&mut rng)
        })
        .collect();
    let data = Dataset::builder("y").column("y", y).column("x", x).build().unwrap();
    let verdict = |family| {
        let spec = ModelSpec::new(family).with_formula("x").unwrap().canonical();
        let model = Model::with_default_priors(&spec, &data).unwrap();
        let draws = sample(&model, &SamplerConfig { seed: 2, ..Default::default() }).unwrap();
        ppc::check(&model, &draws, &PpcConfig::default()).unwrap().verdict
    };
    let (pois, nb) = (verdict(Family::Poisson), verdict(Family::NegativeBinomial));
    outcome(
        (rate - 0.05).abs() <= 0.02 && pois == PpcVerdict::Fail && nb == PpcVerdict::Pass,
        format!("uniform exit rate {rate:.3}; over-dispersed data: Poisson {}, NB {}", pois.as_str(), nb.as_str()),
    )
}

fn criterion_11(runs: &[(u64, RunOutput)], cache: &FitCache) -> Outcome {
    let (_, run) = &runs[0];
    let draws = load_draws(&run.report, cache).unwrap();
    let rows = summarise_qoi(&run.report, &draws, "b_Trt");
    let range = |keep: &dyn Fn(bool) -> bool| {
        let meds: Vec<f64> = rows.iter().filter(|r| keep(r.retained)).filter_map(|r| r.quantiles.map(|q| q[2])).collect();
        meds.iter().copied().fold(f64::NEG_INFINITY, f64::max) - meds.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let (all, kept) = (range(&|_| true), range(&|r| r));
    outcome(kept < all, format!("median treatment coefficient range: retained {kept:.3}, all {all:.3}"))
}

/// Twenty models on over-dispersed counts with a few extreme values; half
/// carry an observation-level intercept.
fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 80;
    let mut csv = String::from("y,x1,x2,x3,id\n");
    for i in 0..n {
        let x: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let mu = (1.0 + 0.6 * x[0] + 0.3 * x[1]).exp();
        let lambda = Gamma::new(2.0, mu / 2.0).unwrap().sample(&mut rng);
        let mut y: f64 = Poisson::new(lambda).unwrap().sample(&mut rng);
        if i % 20 == 0 {
            y += 40.0;
        }
        csv.push_str(&format!("{y},{},{},{},{i}\n", x[0], x[1], x[2]));
    }
    std::fs::write(dir.path().join("counts.csv"), csv).unwrap();
    let toml = r#"
schema_version = 1
[data]
path = "counts.csv"
response = "y"
covariates = ["x1", "x2", "x3"]
factors = ["id"]
[[axes]]
name = "family"
options = ["poisson", "negative_binomial"]
[[axes]]
name = "formula"
options = ["x1", "x2", "x1 + x2", "x1 + x3", "x1 + x2 + x3"]
[[axes]]
name = "groups"
options = [{ label = "none", value = "" }, { label = "id", value = "id" }]
[sampler]
chains = 4
warmup_iters = 500
sampling_iters = 500
seed = 1
"#;
    let path = dir.path().join("synthetic.toml");
    std::fs::write(&path, toml).unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    let mv = cfg.expand().unwrap();
    let data = cfg.load_data().unwrap();
    let out = run_filter(&mv, &data, &cfg, &FitCache::in_memory()).unwrap();
    let repaired: BTreeSet<&ModelId> = out.report.filtered_set.iter().collect();
    let naive: BTreeSet<&ModelId> = out.report.naive_set.iter().collect();
    outcome(
        mv.len() == 20 && repaired != naive,
        format!("{} models; repaired set {} models, unrepaired set {} models", mv.len(), repaired.len(), naive.len()),
    )
}

#[test]
fn acceptance_criteria() {
    let cache_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-part1");
    let cache = FitCache::at(&cache_dir).unwrap();
    let runs = part1_runs(&cache);
    let statuses: BTreeMap<ModelStatus, usize> = runs[0].1.report.status_counts();
    println!("part I seed 1 statuses: {statuses:?}");

    let results = [
        (1, criterion_1()),
        (2, criterion_2(&runs)),
        (3, criterion_3(&runs)),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
        (7, criterion_7()),
        (8, criterion_8()),
        (9, criterion_9()),
        (10, criterion_10()),
        (11, criterion_11(&runs, &cache)),
        (12, criterion_12()),
    ];
    let mut unexpected = Vec::new();
    for (n, o) in &results {
        println!("criterion {n:>2}: {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && !LEDGERED_FAILURES.contains(n) {
            unexpected.push(*n);
        }
    }
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}
