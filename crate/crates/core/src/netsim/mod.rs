//! Multi-hop trusted-relay network: topology, routing, per-hop delays and
//! link key pools.

mod relay;
mod routing;
mod topology;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use relay::{DeliveredJob, JobState, LinkKeyPool, RelayEngine, RelayJob, MICROS_PER_SECOND};
pub use routing::{route, Path};
pub use topology::{Link, Topology, TopologyError, DEFAULT_KEY_RATE_BPS};

pub type NodeId = u32;
pub type LinkId = usize;

/// Per-hop delay standard deviation relative to the mean.
pub const DELAY_SD_FRACTION: f64 = 0.1;
/// Sampled delays are clamped below at this fraction of the mean.
pub const DELAY_FLOOR_FRACTION: f64 = 0.01;

/// Draws one hop delay in microseconds from a normal around `mean_s`.
pub fn sample_hop_delay_us<R: Rng + ?Sized>(mean_s: f64, rng: &mut R) -> u64 {
    let mean_us = mean_s * MICROS_PER_SECOND;
    let normal = Normal::new(mean_us, mean_us * DELAY_SD_FRACTION).expect("finite positive mean");
    let x = normal.sample(rng).max(mean_us * DELAY_FLOOR_FRACTION);
    (x.round() as u64).max(1)
}

/// How much key material each link holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum KeyBudget {
    /// Pools never run dry.
    Abundant,
    /// Each link gets `headroom` times the relay demand routed over it. A
    /// fraction is present at the start; the rest accrues evenly over the
    /// horizon.
    Limited {
        #[serde(default = "default_headroom")]
        headroom: f64,
        #[serde(default = "default_initial_fraction")]
        initial_fraction: f64,
    },
    /// Pools start at `initial_blocks` and replenish at each link's key rate.
    LinkRates {
        #[serde(default)]
        initial_blocks: u64,
    },
}

fn default_headroom() -> f64 {
    1.1
}

fn default_initial_fraction() -> f64 {
    0.8
}

pub const KEY_BLOCK_BITS: f64 = 256.0;

impl KeyBudget {
    pub fn build_pools(&self, topo: &Topology, requirement: &[u64], horizon_s: f64) -> Vec<LinkKeyPool> {
        match *self {
            KeyBudget::Abundant => vec![LinkKeyPool::unlimited(); topo.links().len()],
            KeyBudget::Limited {
                headroom,
                initial_fraction,
            } => requirement
                .iter()
                .map(|&req| {
                    let total = headroom * req as f64;
                    let initial = (total * initial_fraction).floor();
                    let rate = if horizon_s > 0.0 {
                        (total - initial) / horizon_s
                    } else {
                        0.0
                    };
                    LinkKeyPool::limited(initial as u64, rate)
                })
                .collect(),
            KeyBudget::LinkRates { initial_blocks } => topo
                .links()
                .iter()
                .map(|l| LinkKeyPool::limited(initial_blocks, l.key_rate_bps / KEY_BLOCK_BITS))
                .collect(),
        }
    }
}

/// Total demand routed over each link, given each application's path.
pub fn min_key_requirement<'a>(link_count: usize, routed: impl IntoIterator<Item = (&'a Path, u64)>) -> Vec<u64> {
    let mut req = vec![0u64; link_count];
    for (path, demand) in routed {
        for &l in &path.links {
            req[l] += demand;
        }
    }
    req
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hop_delay_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| sample_hop_delay_us(0.2, &mut rng) as f64)
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((mean - 200_000.0).abs() < 200.0, "mean {mean}");
        assert!((sd - 20_000.0).abs() < 400.0, "sd {sd}");
        assert!(xs.iter().all(|&x| x >= 2_000.0));
    }

    #[test]
    fn requirement_sums_routed_demand() {
        let t = Topology::nsfnet();
        let a = route(&t, 3, 7).unwrap();
        let b = route(&t, 4, 7).unwrap();
        let req = min_key_requirement(t.links().len(), [(&a, 100), (&b, 10)]);
        let l46 = t.link_between(4, 6).unwrap();
        let l34 = t.link_between(3, 4).unwrap();
        assert_eq!(req[l46], 110);
        assert_eq!(req[l34], 100);
        assert_eq!(req.iter().sum::<u64>(), 100 * 3 + 10 * 2);
    }

    #[test]
    fn limited_budget_splits_initial_and_accrual() {
        let t = Topology::nsfnet();
        let mut req = vec![0; t.links().len()];
        req[0] = 1000;
        let pools = KeyBudget::Limited {
            headroom: 1.1,
            initial_fraction: 0.8,
        }
        .build_pools(&t, &req, 100.0);
        assert_eq!(pools[0].available(), 880);
        assert!((pools[0].replenish_rate() - 2.2).abs() < 1e-9);
        assert_eq!(pools[1].available(), 0);
    }
}
