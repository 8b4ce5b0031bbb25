//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; the process fails if any
//! criterion does.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use qkd_keysupply::analytics::{self, fit_normal, lambda_table, AutocovarianceSeries};
use qkd_keysupply::controllers::{Observation, Phase, Quiks, QuiksParams};
use qkd_keysupply::model::{DelayDistribution, PmfBuffer, SlotIndex};
use qkd_keysupply::oracle::{self, direct_lambda};
use qkd_keysupply::scenario::{self, write_buffer_trace, write_requests, RunResult, ScenarioConfig};

/// Probe finalization may spend at most this many operations per K².
const FINALIZE_OPS_PER_K2: f64 = 40.0;
/// Upper bound on operations of one stable-phase slot.
const STABLE_STEP_OPS: u64 = 4;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(rel: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenarios_dir().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn run_file(rel: &str) -> RunResult {
    let path = scenarios_dir().join(rel);
    let config = load(rel);
    scenario::run_config(&config, path.parent()).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn sigma_delta_matrix() -> Verdict {
    let seed = 7;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (i, case) in oracle::randomized_matrix(seed, 50).iter().enumerate() {
        let delays = case.delays.distribution().unwrap();
        let analytic = case.analytic_sigma().unwrap();
        let gap = oracle::DEFAULT_GAP_FACTOR * delays.max_delay();
        let est = oracle::mc_sigma_delta(&case.process, &delays, gap, 100_000, seed + i as u64);
        let rel = (est.sd - analytic).abs() / analytic;
        worst = worst.max(rel);
        if rel > 0.05 || est.mean.abs() > 3.0 * est.mean_stderr() {
            failures.push(format!(
                "{} {} rel {rel:.4} mean {:+.4}",
                case.process, case.delays, est.mean
            ));
        }
    }
    verdict(
        failures.is_empty(),
        format!("50 cases, worst relative error {worst:.4}; {}", failures.join(", ")),
    )
}

/// Autocovariance of a moving average with positive coefficients, or of an
/// AR(1) with positive correlation; every lag is non-negative so relative
/// error is well defined.
fn random_covariance(rng: &mut ChaCha8Rng, lags: usize) -> Vec<f64> {
    if rng.random_bool(0.5) {
        let q = rng.random_range(1..=lags + 1);
        let b: Vec<f64> = (0..q).map(|_| rng.random_range(0.1..3.0)).collect();
        (0..=lags).map(|h| (h..q).map(|i| b[i] * b[i - h]).sum()).collect()
    } else {
        let rho: f64 = rng.random_range(0.0..0.95);
        let var = rng.random_range(0.5..50.0);
        (0..=lags).map(|h| var * rho.powi(h as i32)).collect()
    }
}

fn lambda_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(1..=12);
        let cov = random_covariance(&mut rng, k);
        let table = lambda_table(&AutocovarianceSeries::from_values(cov.clone(), 0.0), k).unwrap();
        for j in 1..=k {
            for l in 1..=k {
                let want = direct_lambda(&cov, j, l);
                let rel = (table.get(j, l) - want).abs() / want.abs();
                worst = worst.max(rel);
            }
        }
    }
    verdict(
        worst <= 1e-9,
        format!("200 vectors, worst relative difference {worst:.2e}"),
    )
}

fn sizing_quantile() -> Verdict {
    let l = analytics::required_buffer(1.0, 1e-6).unwrap();
    verdict(
        (4.7525..=4.7545).contains(&l),
        format!("required_buffer(1, 1e-6) = {l:.6}"),
    )
}

fn long_single_app(seed: u64) -> RunResult {
    let mut config = load("single_app_poisson_400ms.toml");
    config.seed = seed;
    config.horizon_slots = 21_000;
    config.apps[0].demand_blocks = 50_000;
    config.check = None;
    scenario::run_config(&config, None).unwrap()
}

fn longest_episode(result: &RunResult) -> Option<&scenario::StableEpisode> {
    result.stable_episodes.iter().flatten().max_by_key(|e| e.levels.len())
}

fn stable_normality() -> Verdict {
    let result = long_single_app(1);
    let Some(ep) = longest_episode(&result) else {
        return verdict(false, "no stable episode");
    };
    if ep.levels.len() < 10_000 {
        return verdict(false, format!("longest stable episode only {} slots", ep.levels.len()));
    }
    let samples: Vec<f64> = ep.levels.iter().map(|&l| l as f64).collect();
    let fit = fit_normal(&samples, 40).unwrap();
    let dev = (fit.fitted_sigma - fit.sigma).abs() / fit.sigma;
    verdict(
        fit.r_squared >= 0.95 && dev <= 0.05,
        format!(
            "{} stable slots, R² {:.4}, fitted sigma {:.3} vs sample {:.3} ({:.2}%)",
            ep.levels.len(),
            fit.r_squared,
            fit.fitted_sigma,
            fit.sigma,
            100.0 * dev
        ),
    )
}

fn estimator_bias() -> Verdict {
    let mut above = 0;
    let mut lines = Vec::new();
    for seed in 1..=20 {
        let result = long_single_app(seed);
        match longest_episode(&result) {
            Some(ep) => {
                let (_, std) = ep.mean_std();
                if ep.sigma_hat >= std {
                    above += 1;
                }
                lines.push(format!("{:.2}/{:.2}", ep.sigma_hat, std));
            }
            None => lines.push("none".into()),
        }
    }
    verdict(
        above >= 16,
        format!(
            "estimate >= sample in {above}/20 runs (estimate/sample: {})",
            lines.join(" ")
        ),
    )
}

fn stable_mean_bytes(result: &RunResult) -> Option<f64> {
    let (sum, n) = result
        .stable_episodes
        .iter()
        .flatten()
        .flat_map(|e| e.levels.iter())
        .fold((0u128, 0u64), |(s, n), &l| (s + u128::from(l), n + 1));
    (n > 0).then(|| sum as f64 / n as f64 * result.block_bytes as f64)
}

fn buffer_dominance() -> Verdict {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for process in ["poisson", "ppbp"] {
        for delay in (100..=700).step_by(100) {
            let stem = format!("replication/single_{process}_{delay}ms");
            let quiks = run_file(&format!("{stem}_quiks.toml"));
            let dt = run_file(&format!("{stem}_dtvqkp.toml")).summary();
            let ratio = match stable_mean_bytes(&quiks) {
                Some(q) => q / dt.mean_buffer_bytes,
                None => f64::INFINITY,
            };
            worst = worst.max(ratio);
            if ratio > 0.10 {
                failures.push(format!("{process} {delay} ms: {:.1}%", 100.0 * ratio));
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "14 scenarios, largest QuIKS/DT-VQKP mean buffer {:.2}%; {}",
            100.0 * worst,
            failures.join(", ")
        ),
    )
}

fn instant_supply() -> Verdict {
    let single = run_file("single_app_poisson_400ms.toml").summary();
    let multi = run_file("multi_app/multi_app_quiks.toml").summary();
    let ok = single.post_warmup_instant_ratio >= 0.95 && multi.post_warmup_instant_ratio >= 0.97;
    verdict(
        ok,
        format!(
            "post-warmup instant ratio single-app {:.4} (>= 0.95), three-app {:.4} (>= 0.97)",
            single.post_warmup_instant_ratio, multi.post_warmup_instant_ratio
        ),
    )
}

fn key_limited() -> Verdict {
    let quiks = run_file("key_limited/key_limited_20apps_quiks.toml").summary();
    let kaas = run_file("key_limited/key_limited_20apps_kaas120.toml").summary();
    let ok =
        quiks.completion_ratio == 1.0 && quiks.instant_ratio >= 0.97 && kaas.completion_ratio < quiks.completion_ratio;
    verdict(
        ok,
        format!(
            "QuIKS completion {:.3} instant {:.4}; KaaS-120 completion {:.3}",
            quiks.completion_ratio, quiks.instant_ratio, kaas.completion_ratio
        ),
    )
}

/// Drives QuIKS over a deterministic delay of `k` slots until it has spent
/// a while in the stable phase; returns finalize and worst stable-step ops.
fn ops_for_delay(k: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
    let arrivals = Poisson::new(5.0).unwrap();
    let mut unit = PmfBuffer::new(DelayDistribution::deterministic(k), 0);
    let mut q = Quiks::new(QuiksParams::default(), SlotIndex(0));
    let mut stable_ops = 0;
    let mut stable_slots = 0;
    for _ in 0..(20 * k + 400) {
        let n = arrivals.sample(&mut rng) as u64;
        let slot = unit.slot;
        unit.step(n, &mut rng, |n, deliveries, prev| {
            let obs = Observation {
                slot,
                arrivals: n,
                deliveries,
                buffer_level: prev.key_blocks,
                app_active: true,
            };
            let was_stable = q.phase() == Phase::Stable;
            let r = q.step(&obs).relay_requests;
            if was_stable && q.phase() == Phase::Stable {
                stable_ops = stable_ops.max(q.stats().last_stable_step_ops);
                stable_slots += 1;
            }
            r
        });
    }
    assert!(stable_slots > 0, "K = {k}: never stable");
    (q.stats().last_finalize_ops, stable_ops)
}

fn complexity() -> Verdict {
    let mut worst_ratio = 0.0f64;
    let mut worst_stable = 0;
    for k in 2..=50 {
        let (finalize, stable) = ops_for_delay(k);
        worst_ratio = worst_ratio.max(finalize as f64 / (k * k) as f64);
        worst_stable = worst_stable.max(stable);
    }
    verdict(
        worst_ratio <= FINALIZE_OPS_PER_K2 && worst_stable <= STABLE_STEP_OPS,
        format!(
            "K in 2..=50: finalize ops/K² <= {worst_ratio:.2} (bound {FINALIZE_OPS_PER_K2}), stable step ops <= {worst_stable} (bound {STABLE_STEP_OPS})"
        ),
    )
}

fn csv_bytes(result: &RunResult) -> (Vec<u8>, Vec<u8>) {
    let mut requests = Vec::new();
    let mut buffer = Vec::new();
    write_requests(&mut requests, result).unwrap();
    write_buffer_trace(&mut buffer, result).unwrap();
    (requests, buffer)
}

fn bundled_scenarios(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            bundled_scenarios(&path, out);
        } else if path.extension().is_some_and(|x| x == "toml") {
            out.push(path);
        }
    }
}

fn determinism() -> Verdict {
    let mut files = Vec::new();
    bundled_scenarios(&scenarios_dir(), &mut files);
    files.sort();
    let mut differing = Vec::new();
    for path in &files {
        let config = ScenarioConfig::load(path).unwrap();
        let a = csv_bytes(&scenario::run_config(&config, path.parent()).unwrap());
        let b = csv_bytes(&scenario::run_config(&config, path.parent()).unwrap());
        if a != b {
            differing.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    verdict(
        differing.is_empty() && !files.is_empty(),
        format!(
            "{} bundled scenarios run twice, {} with differing CSV output; {}",
            files.len(),
            differing.len(),
            differing.join(", ")
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            "sigma-delta vs Monte Carlo",
            sigma_delta_matrix,
            Duration::from_secs(300),
        ),
        ("lambda DP equivalence", lambda_equivalence, Duration::from_secs(10)),
        ("sizing quantile", sizing_quantile, Duration::from_secs(1)),
        ("stable buffer normality", stable_normality, Duration::from_secs(60)),
        ("estimator bias direction", estimator_bias, Duration::from_secs(600)),
        (
            "buffer dominance over DT-VQKP",
            buffer_dominance,
            Duration::from_secs(300),
        ),
        ("instant supply", instant_supply, Duration::from_secs(600)),
        ("key-limited NSFnet", key_limited, Duration::from_secs(600)),
        ("complexity bounds", complexity, Duration::from_secs(600)),
        ("determinism", determinism, Duration::from_secs(600)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let pass = v.pass && elapsed <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<32} {} ({:.1} s) {}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            v.detail.trim_end_matches("; ")
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
