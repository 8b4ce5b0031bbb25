use super::{AnalyticsError, OpCount};
use crate::model::DelayDistribution;

/// Estimated autocovariance `C(0..max_lag-1)` of a per-slot count series.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocovarianceSeries {
    cov: Vec<f64>,
    mean: f64,
    sample_count: usize,
}

impl AutocovarianceSeries {
    /// Builds a series from known values, e.g. the true autocovariance of a
    /// model process.
    pub fn from_values(cov: Vec<f64>, mean: f64) -> Self {
        assert!(!cov.is_empty(), "autocovariance needs lag 0");
        Self {
            cov,
            mean,
            sample_count: usize::MAX,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn len(&self) -> usize {
        self.cov.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cov.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.cov
    }

    /// `C(lag)` with even symmetry for negative lags.
    pub fn at(&self, lag: i64) -> f64 {
        self.cov[lag.unsigned_abs() as usize]
    }
}

/// Biased (1/N) autocovariance estimate for lags `0..max_lag`.
pub fn estimate_autocovariance(samples: &[f64], max_lag: usize) -> Result<AutocovarianceSeries, AnalyticsError> {
    estimate_autocovariance_counted(samples, max_lag, &mut OpCount::default())
}

pub(crate) fn estimate_autocovariance_counted(
    samples: &[f64],
    max_lag: usize,
    ops: &mut OpCount,
) -> Result<AutocovarianceSeries, AnalyticsError> {
    if max_lag == 0 {
        return Err(AnalyticsError::InvalidLag);
    }
    let n = samples.len();
    if n < 2 * max_lag {
        return Err(AnalyticsError::InsufficientSamples {
            needed: 2 * max_lag,
            got: n,
        });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    ops.add(n as u64);
    let centered: Vec<f64> = samples.iter().map(|s| s - mean).collect();
    ops.add(n as u64);
    let cov = (0..max_lag)
        .map(|lag| {
            ops.add((n - lag) as u64);
            centered[..n - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok(AutocovarianceSeries {
        cov,
        mean,
        sample_count: n,
    })
}

/// `Lambda(j, k)` for `1 <= j, k <= K`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTable {
    k: usize,
    data: Vec<f64>,
}

impl LambdaTable {
    pub fn size(&self) -> usize {
        self.k
    }

    /// One-based lookup.
    pub fn get(&self, j: usize, k: usize) -> f64 {
        assert!(j >= 1 && k >= 1 && j <= self.k && k <= self.k);
        self.data[(j - 1) * self.k + (k - 1)]
    }
}

/// Fills the table with the inclusion-exclusion recurrence
/// `L(j,k) = L(j-1,k) + L(j,k-1) - L(j-1,k-1) + C(j-k)` in `O(K^2)`.
pub fn lambda_table(cov: &AutocovarianceSeries, k: usize) -> Result<LambdaTable, AnalyticsError> {
    lambda_table_counted(cov, k, &mut OpCount::default())
}

fn lambda_table_counted(
    cov: &AutocovarianceSeries,
    k: usize,
    ops: &mut OpCount,
) -> Result<LambdaTable, AnalyticsError> {
    if k == 0 {
        return Err(AnalyticsError::InvalidLag);
    }
    if cov.len() < k {
        return Err(AnalyticsError::LagRangeExceeded {
            needed: k,
            available: cov.len(),
        });
    }
    // One row and column of zero padding for the j = 0 and k = 0 boundary.
    let w = k + 1;
    let mut padded = vec![0.0; w * w];
    for j in 1..=k {
        for q in 1..=k {
            padded[j * w + q] = padded[(j - 1) * w + q] + padded[j * w + q - 1] - padded[(j - 1) * w + q - 1]
                + cov.at(j as i64 - q as i64);
        }
    }
    ops.add((k * k) as u64);
    let data = (1..=k)
        .flat_map(|j| padded[j * w + 1..(j + 1) * w].iter().copied())
        .collect();
    Ok(LambdaTable { k, data })
}

/// Standard deviation of the buffer-level change under the reactive strategy.
///
/// Negative variance estimates caused by noisy autocovariances clamp to 0.
pub fn sigma_delta(cov: &AutocovarianceSeries, delays: &DelayDistribution) -> Result<f64, AnalyticsError> {
    sigma_delta_counted(cov, delays, &mut OpCount::default())
}

pub(crate) fn sigma_delta_counted(
    cov: &AutocovarianceSeries,
    delays: &DelayDistribution,
    ops: &mut OpCount,
) -> Result<f64, AnalyticsError> {
    let k = delays.max_delay();
    let table = lambda_table_counted(cov, k, ops)?;
    let omega = delays.probabilities();
    let mut acc = 0.0;
    for (j, wj) in omega.iter().enumerate() {
        for (q, wk) in omega.iter().enumerate() {
            acc += wj * wk * table.data[j * k + q];
        }
    }
    ops.add((k * k) as u64);
    let var = 2.0 * acc;
    if var < 0.0 {
        log::warn!("negative sigma_delta^2 estimate {var:.4e}; clamping to 0");
        return Ok(0.0);
    }
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    /// Literal double sum, kept separate from the recurrence.
    fn brute_lambda(cov: &[f64], j: usize, k: usize) -> f64 {
        let mut s = 0.0;
        for p in 1..=j as i64 {
            for q in 1..=k as i64 {
                s += cov[(p - q).unsigned_abs() as usize];
            }
        }
        s
    }

    #[test]
    fn constant_series_has_zero_covariance() {
        let c = estimate_autocovariance(&[5.0, 5.0, 5.0, 5.0], 2).unwrap();
        assert_eq!(c.values(), &[0.0, 0.0]);
        assert_eq!(c.mean(), 5.0);
    }

    #[test]
    fn alternating_series_exact() {
        let s: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.0 } else { 10.0 }).collect();
        let c = estimate_autocovariance(&s, 2).unwrap();
        assert_eq!(c.mean(), 5.0);
        assert!((c.values()[0] - 25.0).abs() < 1e-12);
        // 1/N normalization over N - 1 products.
        assert!((c.values()[1] + 25.0 * 999.0 / 1000.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert_eq!(
            estimate_autocovariance(&[1.0, 2.0, 3.0], 2),
            Err(AnalyticsError::InsufficientSamples { needed: 4, got: 3 })
        );
    }

    #[test]
    fn poisson_autocovariance_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = Poisson::new(5.0).unwrap();
        let s: Vec<f64> = (0..1_000_000).map(|_| p.sample(&mut rng)).collect();
        let c = estimate_autocovariance(&s, 4).unwrap();
        assert!((c.values()[0] - 5.0).abs() / 5.0 <= 0.02, "{:?}", c.values());
        for lag in 1..4 {
            assert!(c.values()[lag].abs() <= 0.1, "lag {lag}: {}", c.values()[lag]);
        }
    }

    #[test]
    fn lambda_iid_is_min() {
        let c = AutocovarianceSeries::from_values(vec![3.0, 0.0, 0.0, 0.0, 0.0], 1.0);
        let t = lambda_table(&c, 5).unwrap();
        for j in 1..=5 {
            for k in 1..=5 {
                assert_eq!(t.get(j, k), 3.0 * j.min(k) as f64);
            }
        }
    }

    #[test]
    fn lambda_alternating_by_hand() {
        let c = AutocovarianceSeries::from_values(vec![25.0, -25.0], 5.0);
        let t = lambda_table(&c, 2).unwrap();
        assert_eq!(
            [t.get(1, 1), t.get(1, 2), t.get(2, 1), t.get(2, 2)],
            [25.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn lambda_needs_enough_lags() {
        let c = AutocovarianceSeries::from_values(vec![1.0, 0.5], 0.0);
        assert_eq!(
            lambda_table(&c, 3),
            Err(AnalyticsError::LagRangeExceeded {
                needed: 3,
                available: 2
            })
        );
    }

    #[test]
    fn lambda_random_k6_matches_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        use rand::Rng;
        let cov: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..4.0)).collect();
        let t = lambda_table(&AutocovarianceSeries::from_values(cov.clone(), 0.0), 6).unwrap();
        for j in 1..=6 {
            for k in 1..=6 {
                let b = brute_lambda(&cov, j, k);
                assert!((t.get(j, k) - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn sigma_delta_unit_delay() {
        let c = AutocovarianceSeries::from_values(vec![4.5, 1.0, -0.3], 2.0);
        let s = sigma_delta(&c, &DelayDistribution::deterministic(1)).unwrap();
        assert!((s * s - 9.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_delta_deterministic_delay_iid() {
        let var = 2.5;
        let c = AutocovarianceSeries::from_values(vec![var, 0.0, 0.0, 0.0], 2.5);
        let s = sigma_delta(&c, &DelayDistribution::deterministic(4)).unwrap();
        assert!((s * s - 2.0 * 4.0 * var).abs() < 1e-12);
    }

    #[test]
    fn negative_variance_clamps() {
        let c = AutocovarianceSeries::from_values(vec![-1.0, 0.0], 0.0);
        assert_eq!(sigma_delta(&c, &DelayDistribution::uniform(2)).unwrap(), 0.0);
    }

    #[test]
    fn counted_work_is_quadratic() {
        let k = 10;
        let samples: Vec<f64> = (0..3 * k).map(|i| (i % 7) as f64).collect();
        let mut ops = OpCount::default();
        let c = estimate_autocovariance_counted(&samples, k, &mut ops).unwrap();
        sigma_delta_counted(&c, &DelayDistribution::uniform(k), &mut ops).unwrap();
        assert!(ops.0 <= 6 * (k * k) as u64, "{}", ops.0);
    }

    proptest! {
        #[test]
        fn estimate_respects_cauchy_schwarz(samples in proptest::collection::vec(0u32..50, 8..200)) {
            let s: Vec<f64> = samples.iter().map(|&v| f64::from(v)).collect();
            let c = estimate_autocovariance(&s, 4).unwrap();
            prop_assert!(c.values()[0] >= 0.0);
            for &v in c.values() {
                prop_assert!(v.abs() <= c.values()[0] + 1e-9);
            }
        }

        #[test]
        fn lambda_is_symmetric(cov in proptest::collection::vec(-5.0f64..5.0, 1..10)) {
            let k = cov.len();
            let t = lambda_table(&AutocovarianceSeries::from_values(cov.clone(), 0.0), k).unwrap();
            prop_assert_eq!(t.get(1, 1), cov[0]);
            for j in 1..=k {
                for q in 1..=k {
                    prop_assert!((t.get(j, q) - t.get(q, j)).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn iid_sigma_matches_closed_form(
            var in 0.1f64..20.0,
            weights in proptest::collection::vec(0.0f64..1.0, 1..10),
        ) {
            prop_assume!(*weights.last().unwrap() > 0.01);
            let d = DelayDistribution::from_weights(&weights).unwrap();
            let k = d.max_delay();
            let mut cov = vec![0.0; k];
            cov[0] = var;
            let s = sigma_delta(&AutocovarianceSeries::from_values(cov, 1.0), &d).unwrap();
            let w = d.probabilities();
            let mut closed = 0.0;
            for j in 0..k {
                for q in 0..k {
                    closed += w[j] * w[q] * (j.min(q) + 1) as f64;
                }
            }
            let closed = (2.0 * var * closed).sqrt();
            prop_assert!((s - closed).abs() <= 1e-9 * closed.max(1.0));
        }

        #[test]
        fn sigma_invariant_under_renormalization(
            cov in proptest::collection::vec(-1.0f64..3.0, 6),
            weights in proptest::collection::vec(0.01f64..1.0, 1..6),
        ) {
            let mut cov = cov;
            cov[0] = cov[0].abs() + 3.0;
            let c = AutocovarianceSeries::from_values(cov, 0.0);
            let d = DelayDistribution::from_weights(&weights).unwrap();
            let again = DelayDistribution::from_weights(d.probabilities()).unwrap();
            let a = sigma_delta(&c, &d).unwrap();
            let b = sigma_delta(&c, &again).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
