use serde::Serialize;

use super::normal::standard_normal_cdf;
use super::AnalyticsError;

const MIN_SAMPLES: usize = 100;

/// Goodness of a normal approximation to a sample histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalFit {
    /// Sample mean.
    pub mu: f64,
    /// Sample standard deviation (1/N).
    pub sigma: f64,
    /// Mean of the least-squares normal curve fitted to the histogram.
    pub fitted_mu: f64,
    /// Standard deviation of the least-squares fitted curve.
    pub fitted_sigma: f64,
    /// `1 - SS_res / SS_tot` of bin counts against the moment-matched normal.
    pub r_squared: f64,
    /// Pearson chi-square over bins expecting at least 5 samples, divided by
    /// `bins - 3`. NaN when fewer than four such bins exist.
    pub chi2_reduced: f64,
    pub bins: usize,
}

struct Histogram {
    start: f64,
    width: f64,
    counts: Vec<f64>,
}

impl Histogram {
    fn edges(&self, i: usize) -> (f64, f64) {
        let lo = self.start + i as f64 * self.width;
        (lo, lo + self.width)
    }

    fn expected(&self, total: f64, mu: f64, sigma: f64) -> Vec<f64> {
        (0..self.counts.len())
            .map(|i| {
                let (lo, hi) = self.edges(i);
                total * (standard_normal_cdf((hi - mu) / sigma) - standard_normal_cdf((lo - mu) / sigma))
            })
            .collect()
    }

    fn residual(&self, total: f64, mu: f64, sigma: f64) -> f64 {
        self.expected(total, mu, sigma)
            .iter()
            .zip(&self.counts)
            .map(|(e, o)| (o - e).powi(2))
            .sum()
    }
}

/// Equal-width histogram. Integer-valued data get bins centred on integers
/// with an integral width so that no bin straddles a partial value; that can
/// leave fewer than `bin_count` bins.
fn histogram(samples: &[f64], bin_count: usize) -> Histogram {
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let integral = samples.iter().all(|s| s.fract() == 0.0);
    let (start, width, bins) = if integral {
        let span = max - min + 1.0;
        let width = (span / bin_count as f64).ceil().max(1.0);
        (min - 0.5, width, (span / width).ceil() as usize)
    } else {
        let width = (max - min) / bin_count as f64;
        (min, width, bin_count)
    };
    let mut counts = vec![0.0; bins];
    for &s in samples {
        let idx = (((s - start) / width) as usize).min(bins - 1);
        counts[idx] += 1.0;
    }
    Histogram { start, width, counts }
}

/// Gauss-Newton least squares on `(mu, sigma)` of a binned normal curve.
fn least_squares(h: &Histogram, total: f64, mu0: f64, sigma0: f64) -> (f64, f64) {
    let (mut mu, mut sigma) = (mu0, sigma0);
    let mut cost = h.residual(total, mu, sigma);
    for _ in 0..50 {
        let base = h.expected(total, mu, sigma);
        let dm = 1e-6 * sigma;
        let ds = 1e-6 * sigma;
        let em = h.expected(total, mu + dm, sigma);
        let es = h.expected(total, mu, sigma + ds);
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..base.len() {
            let jm = (em[i] - base[i]) / dm;
            let js = (es[i] - base[i]) / ds;
            let r = h.counts[i] - base[i];
            a11 += jm * jm;
            a12 += jm * js;
            a22 += js * js;
            g1 += jm * r;
            g2 += js * r;
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() < 1e-300 {
            break;
        }
        let step_m = (a22 * g1 - a12 * g2) / det;
        let step_s = (a11 * g2 - a12 * g1) / det;
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-4 {
            let (m, s) = (mu + t * step_m, sigma + t * step_s);
            if s > 0.0 {
                let c = h.residual(total, m, s);
                if c < cost {
                    mu = m;
                    sigma = s;
                    improved = (cost - c) > 1e-12 * cost.max(1e-300);
                    cost = c;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (mu, sigma)
}

pub fn fit_normal(samples: &[f64], bin_count: usize) -> Result<NormalFit, AnalyticsError> {
    if bin_count == 0 {
        return Err(AnalyticsError::InvalidBinCount);
    }
    if samples.len() < MIN_SAMPLES {
        return Err(AnalyticsError::InsufficientSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    let total = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / total;
    let sigma = (samples.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / total).sqrt();
    if !(sigma > 0.0) {
        return Err(AnalyticsError::DegenerateDistribution);
    }

    let h = histogram(samples, bin_count);
    let expected = h.expected(total, mu, sigma);
    let mean_count = total / h.counts.len() as f64;
    let ss_tot: f64 = h.counts.iter().map(|o| (o - mean_count).powi(2)).sum();
    let ss_res: f64 = h.counts.iter().zip(&expected).map(|(o, e)| (o - e).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };

    let (chi2, used) = h
        .counts
        .iter()
        .zip(&expected)
        .filter(|(_, e)| **e >= 5.0)
        .fold((0.0, 0usize), |(acc, n), (o, e)| (acc + (o - e).powi(2) / e, n + 1));
    let chi2_reduced = if used > 3 { chi2 / (used - 3) as f64 } else { f64::NAN };

    let (fitted_mu, fitted_sigma) = least_squares(&h, total, mu, sigma);

    Ok(NormalFit {
        mu,
        sigma,
        fitted_mu,
        fitted_sigma,
        r_squared,
        chi2_reduced,
        bins: h.counts.len(),
    })
}
