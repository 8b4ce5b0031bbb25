//! Brute-force reference computations for the buffer-sizing analytics.
//!
//! [`mc_sigma_delta`] runs the raw buffer recursion under the reactive
//! strategy and measures the buffer change over long windows directly.
//! [`direct_lambda`] evaluates the covariance double sum literally, and
//! [`exact_delta_variance_bernoulli`] enumerates every request sequence of a
//! tiny instance.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{self, AnalyticsError, AutocovarianceSeries};
use crate::model::DelayDistribution;

/// Stationary per-slot request processes with known autocovariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RequestProcess {
    /// Independent Poisson counts.
    IidPoisson { lambda: f64 },
    /// Sum of three consecutive independent Poisson(λ) draws.
    MovingSum { lambda: f64 },
    /// Gaussian AR(1) around `mean` with innovation sd `sd`.
    Ar1 { mean: f64, rho: f64, sd: f64 },
}

impl RequestProcess {
    pub fn mean(&self) -> f64 {
        match *self {
            RequestProcess::IidPoisson { lambda } => lambda,
            RequestProcess::MovingSum { lambda } => 3.0 * lambda,
            RequestProcess::Ar1 { mean, .. } => mean,
        }
    }

    /// True `C(0..lags)`.
    pub fn autocovariance(&self, lags: usize) -> AutocovarianceSeries {
        let cov = (0..lags.max(1))
            .map(|x| match *self {
                RequestProcess::IidPoisson { lambda } => {
                    if x == 0 {
                        lambda
                    } else {
                        0.0
                    }
                }
                RequestProcess::MovingSum { lambda } => (3.0 - x as f64).max(0.0) * lambda,
                RequestProcess::Ar1 { rho, sd, .. } => sd * sd / (1.0 - rho * rho) * rho.powi(x as i32),
            })
            .collect();
        AutocovarianceSeries::from_values(cov, self.mean())
    }

    /// Fills `out` with a stationary sample path.
    pub fn fill<R: Rng + ?Sized>(&self, out: &mut [f64], rng: &mut R) {
        match *self {
            RequestProcess::IidPoisson { lambda } => {
                let p = Poisson::new(lambda).expect("positive rate");
                for v in out.iter_mut() {
                    *v = p.sample(rng);
                }
            }
            RequestProcess::MovingSum { lambda } => {
                let p = Poisson::new(lambda).expect("positive rate");
                let (mut e1, mut e2): (f64, f64) = (p.sample(rng), p.sample(rng));
                for v in out.iter_mut() {
                    let e0: f64 = p.sample(rng);
                    *v = e0 + e1 + e2;
                    e2 = e1;
                    e1 = e0;
                }
            }
            RequestProcess::Ar1 { mean, rho, sd } => {
                let innovation = Normal::new(0.0, sd).expect("finite sd");
                let stationary = Normal::new(0.0, sd / (1.0 - rho * rho).sqrt()).expect("|rho| < 1");
                let mut x: f64 = stationary.sample(rng);
                for v in out.iter_mut() {
                    *v = mean + x;
                    x = rho * x + innovation.sample(rng);
                }
            }
        }
    }
}

impl fmt::Display for RequestProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RequestProcess::IidPoisson { lambda } => write!(f, "poisson:{lambda}"),
            RequestProcess::MovingSum { lambda } => write!(f, "moving-sum:{lambda}"),
            RequestProcess::Ar1 { mean, rho, sd } => write!(f, "ar1:{mean},{rho},{sd}"),
        }
    }
}

/// Parses `poisson:λ`, `moving-sum:λ` or `ar1:mean,rho,sd`.
impl FromStr for RequestProcess {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| format!("expected kind:args, got {s:?}"))?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|e| format!("{a:?}: {e}")))
            .collect::<Result<_, _>>()?;
        let positive = |v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(format!("{v} must be positive"))
            }
        };
        match (kind, nums.as_slice()) {
            ("poisson", &[l]) => Ok(RequestProcess::IidPoisson { lambda: positive(l)? }),
            ("moving-sum", &[l]) => Ok(RequestProcess::MovingSum { lambda: positive(l)? }),
            ("ar1", &[mean, rho, sd]) if rho.abs() < 1.0 => Ok(RequestProcess::Ar1 {
                mean,
                rho,
                sd: positive(sd)?,
            }),
            ("ar1", &[_, rho, _]) => Err(format!("|rho| must be below 1, got {rho}")),
            _ => Err(format!("unknown process {s:?}")),
        }
    }
}

/// Delay pmf families used by the randomized matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayShape {
    Deterministic {
        k: usize,
    },
    Uniform {
        k: usize,
    },
    /// Weights `K, K-1, ..., 1`: short delays are likelier.
    Triangular {
        k: usize,
    },
    Weights {
        weights: Vec<f64>,
    },
}

impl DelayShape {
    pub fn distribution(&self) -> Result<DelayDistribution, String> {
        let check = |k: usize| {
            if k >= 1 {
                Ok(k)
            } else {
                Err("K must be at least 1".to_string())
            }
        };
        match self {
            DelayShape::Deterministic { k } => Ok(DelayDistribution::deterministic(check(*k)?)),
            DelayShape::Uniform { k } => Ok(DelayDistribution::uniform(check(*k)?)),
            DelayShape::Triangular { k } => {
                let k = check(*k)?;
                let w: Vec<f64> = (0..k).map(|i| (k - i) as f64).collect();
                DelayDistribution::from_weights(&w).map_err(|e| e.to_string())
            }
            DelayShape::Weights { weights } => DelayDistribution::from_weights(weights).map_err(|e| e.to_string()),
        }
    }
}

impl fmt::Display for DelayShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayShape::Deterministic { k } => write!(f, "deterministic:{k}"),
            DelayShape::Uniform { k } => write!(f, "uniform:{k}"),
            DelayShape::Triangular { k } => write!(f, "triangular:{k}"),
            DelayShape::Weights { weights } => {
                let parts: Vec<String> = weights.iter().map(f64::to_string).collect();
                write!(f, "weights:{}", parts.join(","))
            }
        }
    }
}

/// Parses `deterministic:K`, `uniform:K`, `triangular:K` or `weights:w1,w2,...`.
impl FromStr for DelayShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| format!("expected kind:args, got {s:?}"))?;
        let k = || args.trim().parse::<usize>().map_err(|e| format!("{args:?}: {e}"));
        let shape = match kind {
            "deterministic" => DelayShape::Deterministic { k: k()? },
            "uniform" => DelayShape::Uniform { k: k()? },
            "triangular" => DelayShape::Triangular { k: k()? },
            "weights" => DelayShape::Weights {
                weights: args
                    .split(',')
                    .map(|a| a.trim().parse::<f64>().map_err(|e| format!("{a:?}: {e}")))
                    .collect::<Result<_, _>>()?,
            },
            _ => return Err(format!("unknown delay shape {s:?}")),
        };
        shape.distribution()?;
        Ok(shape)
    }
}

/// Sample statistics of the buffer change over independent windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub sd: f64,
    pub trials: u64,
}

impl McEstimate {
    /// Standard error of `mean`.
    pub fn mean_stderr(&self) -> f64 {
        self.sd / (self.trials as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments {
            n: self.n + o.n,
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
        }
    }
}

pub const DEFAULT_GAP_FACTOR: usize = 50;
const TRIALS_PER_CHUNK: u64 = 4096;

/// Monte Carlo standard deviation of `m_{x+gap} - m_x` under `r_i = n_i`.
///
/// Each trial starts the process from its stationary law, runs `K` lead-in
/// slots so relays are in flight, then applies `m_i = m_{i-1} - n_i + c_i`
/// for `window_gap` slots with `c_i = sum_j omega_j r_{i-j}`. Trials are
/// independent; results depend only on `seed`, not on the thread count.
pub fn mc_sigma_delta(
    process: &RequestProcess,
    delays: &DelayDistribution,
    window_gap: usize,
    trials: u64,
    seed: u64,
) -> McEstimate {
    let k = delays.max_delay();
    let omega = delays.probabilities();
    let chunks = trials.div_ceil(TRIALS_PER_CHUNK);
    let moments = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let count = TRIALS_PER_CHUNK.min(trials - chunk * TRIALS_PER_CHUNK);
            let mut n = vec![0.0; k + window_gap];
            let mut acc = Moments::default();
            for _ in 0..count {
                process.fill(&mut n, &mut rng);
                let mut m = 0.0;
                for i in k..n.len() {
                    let c: f64 = omega.iter().enumerate().map(|(j, w)| w * n[i - 1 - j]).sum();
                    m += c - n[i];
                }
                acc.push(m);
            }
            acc
        })
        .reduce(Moments::default, Moments::merge);
    let t = moments.n as f64;
    let mean = moments.sum / t;
    McEstimate {
        mean,
        sd: (moments.sum_sq / t - mean * mean).max(0.0).sqrt(),
        trials: moments.n,
    }
}

/// Literal `sum_{p=1..j} sum_{q=1..k} C(p - q)`; lags past the series are zero.
pub fn direct_lambda(cov: &[f64], j: usize, k: usize) -> f64 {
    let c = |lag: usize| cov.get(lag).copied().unwrap_or(0.0);
    let mut acc = 0.0;
    for p in 1..=j {
        for q in 1..=k {
            acc += c(p.abs_diff(q));
        }
    }
    acc
}

/// `sqrt(2 sum_j sum_k omega_j omega_k Lambda(j, k))` by the literal double sum.
pub fn direct_sigma_delta(cov: &[f64], delays: &DelayDistribution) -> f64 {
    let omega = delays.probabilities();
    let mut acc = 0.0;
    for (j, wj) in omega.iter().enumerate() {
        for (k, wk) in omega.iter().enumerate() {
            acc += wj * wk * direct_lambda(cov, j + 1, k + 1);
        }
    }
    (2.0 * acc).max(0.0).sqrt()
}

/// Exact variance of the buffer change over `gap` slots when each slot
/// carries one request with probability `p`, by enumerating all
/// `2^(K + gap)` request sequences through the raw recursion.
pub fn exact_delta_variance_bernoulli(p: f64, delays: &DelayDistribution, gap: usize) -> f64 {
    let k = delays.max_delay();
    let len = k + gap;
    assert!(len <= 22, "enumeration is exponential in K + gap");
    let omega = delays.probabilities();
    let (mut mean, mut second) = (0.0, 0.0);
    for bits in 0u32..(1 << len) {
        let ones = bits.count_ones() as i32;
        let prob = p.powi(ones) * (1.0 - p).powi(len as i32 - ones);
        let n = |i: usize| f64::from((bits >> i) & 1);
        let mut m = 0.0;
        for i in k..len {
            let c: f64 = omega.iter().enumerate().map(|(j, w)| w * n(i - 1 - j)).sum();
            m += c - n(i);
        }
        mean += prob * m;
        second += prob * m * m;
    }
    second - mean * mean
}

/// One case of the randomized agreement matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCase {
    pub process: RequestProcess,
    pub delays: DelayShape,
}

impl OracleCase {
    pub fn analytic_sigma(&self) -> Result<f64, AnalyticsError> {
        let delays = self.delays.distribution().expect("matrix shapes are valid");
        let cov = self.process.autocovariance(delays.max_delay());
        analytics::sigma_delta(&cov, &delays)
    }
}

/// Seeded matrix of `cases` cases covering three request processes and
/// three delay shapes with `K` in `1..=8`.
pub fn randomized_matrix(seed: u64, cases: usize) -> Vec<OracleCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|i| {
            let k = rng.random_range(1..=8);
            let process = match i % 3 {
                0 => RequestProcess::IidPoisson {
                    lambda: rng.random_range(1.0..10.0),
                },
                1 => RequestProcess::MovingSum {
                    lambda: rng.random_range(0.5..4.0),
                },
                _ => RequestProcess::Ar1 {
                    mean: rng.random_range(10.0..30.0),
                    rho: 0.5,
                    sd: rng.random_range(1.0..4.0),
                },
            };
            let delays = match (i / 3) % 3 {
                0 => DelayShape::Deterministic { k },
                1 => DelayShape::Uniform { k },
                _ => DelayShape::Triangular { k },
            };
            OracleCase { process, delays }
        })
        .collect()
}
