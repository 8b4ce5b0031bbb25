//! Slot-level buffer mechanics shared by every controller and the simulator.
//!
//! Time is divided into slots of fixed length. Within a slot the order is:
//! relayed keys are delivered, then application requests arrive and are
//! served first-in first-out from the key buffer, then the controller emits
//! relay requests. Keys delivered in a slot can therefore serve requests
//! arriving in that same slot.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slot count since scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SlotIndex(pub u64);

impl SlotIndex {
    pub fn next(self) -> SlotIndex {
        SlotIndex(self.0 + 1)
    }

    /// Slots elapsed since `earlier`. Saturates at zero.
    pub fn since(self, earlier: SlotIndex) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl std::fmt::Display for SlotIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Relay requests issued in one slot that have not all been delivered yet.
///
/// Each request carries its realized delay, sampled when it was sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlightBatch {
    pub send_slot: SlotIndex,
    pub delays: Vec<u32>,
}

impl InFlightBatch {
    pub fn count(&self) -> u64 {
        self.delays.len() as u64
    }
}

/// State of one end-to-end buffering unit at a slot boundary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BufferState {
    pub key_blocks: u64,
    pub backlog: u64,
    pub in_flight: Vec<InFlightBatch>,
}

impl BufferState {
    /// Key blocks minus queued requests.
    pub fn signed_level(&self) -> i64 {
        self.key_blocks as i64 - self.backlog as i64
    }

    pub fn in_flight_count(&self) -> u64 {
        self.in_flight.iter().map(InFlightBatch::count).sum()
    }
}

/// Per-slot counts: requests arriving, keys delivered, relay requests sent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotEvents {
    pub n: u64,
    pub c: u64,
    pub r: u64,
}

/// Result of applying one slot to a buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotOutcome {
    /// Requests served this slot, oldest first.
    pub served: u64,
}

/// Applies deliveries and arrivals for one slot. `in_flight` is left alone.
pub fn apply_slot(state: &BufferState, events: SlotEvents) -> (BufferState, SlotOutcome) {
    let keys = state.key_blocks + events.c;
    let demand = state.backlog + events.n;
    let served = keys.min(demand);
    let next = BufferState {
        key_blocks: keys - served,
        backlog: demand - served,
        in_flight: state.in_flight.clone(),
    };
    (next, SlotOutcome { served })
}

/// Keys that reached the buffer in one slot, grouped by the slot they were
/// requested in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub send_slot: SlotIndex,
    pub delay: u32,
    pub count: u64,
}

/// Removes every in-flight request whose `send_slot + delay == current` and
/// returns the delivered groups. Emptied batches are dropped.
pub fn deliveries_for_slot(in_flight: &mut Vec<InFlightBatch>, current: SlotIndex) -> Vec<Delivery> {
    let mut out = Vec::new();
    for batch in in_flight.iter_mut() {
        let Some(due) = current.0.checked_sub(batch.send_slot.0) else {
            continue;
        };
        let before = batch.delays.len();
        batch.delays.retain(|&d| u64::from(d) != due);
        let delivered = (before - batch.delays.len()) as u64;
        if delivered > 0 {
            out.push(Delivery {
                send_slot: batch.send_slot,
                delay: due as u32,
                count: delivered,
            });
        }
    }
    in_flight.retain(|b| !b.delays.is_empty());
    out
}

pub fn delivered_total(deliveries: &[Delivery]) -> u64 {
    deliveries.iter().map(|d| d.count).sum()
}

#[derive(Debug, Error, PartialEq)]
pub enum DelayError {
    #[error("delay distribution is empty")]
    Empty,
    #[error("probability at delay {delay} is {value}, outside [0, 1]")]
    OutOfRange { delay: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("probability at the maximum delay must be positive")]
    LooseSupport,
}

/// Relay-delay pmf over slots `1..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayDistribution {
    /// `omega[j - 1]` is the probability of a `j`-slot delay.
    omega: Vec<f64>,
}

impl DelayDistribution {
    pub fn new(omega: Vec<f64>) -> Result<Self, DelayError> {
        if omega.is_empty() {
            return Err(DelayError::Empty);
        }
        for (i, &p) in omega.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(DelayError::OutOfRange { delay: i + 1, value: p });
            }
        }
        let total: f64 = omega.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DelayError::NotNormalized(total));
        }
        if *omega.last().unwrap() <= 0.0 {
            return Err(DelayError::LooseSupport);
        }
        Ok(Self { omega })
    }

    /// Normalizes non-negative weights and trims trailing zeros.
    pub fn from_weights(weights: &[f64]) -> Result<Self, DelayError> {
        let last = weights.iter().rposition(|&w| w > 0.0).ok_or(DelayError::Empty)?;
        let trimmed = &weights[..=last];
        if let Some((i, &w)) = trimmed.iter().enumerate().find(|(_, w)| !(**w >= 0.0)) {
            return Err(DelayError::OutOfRange { delay: i + 1, value: w });
        }
        let total: f64 = trimmed.iter().sum();
        Self::new(trimmed.iter().map(|w| w / total).collect())
    }

    pub fn deterministic(delay: usize) -> Self {
        assert!(delay >= 1, "delays start at one slot");
        let mut omega = vec![0.0; delay];
        omega[delay - 1] = 1.0;
        Self { omega }
    }

    pub fn uniform(max_delay: usize) -> Self {
        assert!(max_delay >= 1, "delays start at one slot");
        Self {
            omega: vec![1.0 / max_delay as f64; max_delay],
        }
    }

    pub fn max_delay(&self) -> usize {
        self.omega.len()
    }

    /// Probability of a `delay`-slot delay; zero outside `1..=K`.
    pub fn prob(&self, delay: usize) -> f64 {
        if delay == 0 {
            return 0.0;
        }
        self.omega.get(delay - 1).copied().unwrap_or(0.0)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.omega
    }

    pub fn mean(&self) -> f64 {
        self.omega.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }

    /// Draws one delay in slots by inversion.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.omega.iter().enumerate() {
            acc += p;
            if u < acc {
                return (i + 1) as u32;
            }
        }
        self.omega.len() as u32
    }
}

/// A single buffering unit driven directly by a delay pmf, without a network.
///
/// Used for model-level experiments where relay delays are drawn per request
/// from a [`DelayDistribution`].
#[derive(Debug, Clone)]
pub struct PmfBuffer {
    pub state: BufferState,
    pub slot: SlotIndex,
    delays: DelayDistribution,
    sent: u64,
    delivered: u64,
}

impl PmfBuffer {
    pub fn new(delays: DelayDistribution, initial_keys: u64) -> Self {
        Self {
            state: BufferState {
                key_blocks: initial_keys,
                ..BufferState::default()
            },
            slot: SlotIndex(0),
            delays,
            sent: 0,
            delivered: 0,
        }
    }

    /// Runs one slot with `n` arrivals. The controller sees the arrivals and
    /// the delivered groups and returns the number of relay requests to send.
    pub fn step<R, F>(&mut self, n: u64, rng: &mut R, mut controller: F) -> (SlotEvents, Vec<Delivery>)
    where
        R: Rng + ?Sized,
        F: FnMut(u64, &[Delivery], &BufferState) -> u64,
    {
        let deliveries = deliveries_for_slot(&mut self.state.in_flight, self.slot);
        let c = delivered_total(&deliveries);
        self.delivered += c;
        let prev = self.state.clone();
        let (next, _) = apply_slot(&self.state, SlotEvents { n, c, r: 0 });
        self.state = next;
        let r = controller(n, &deliveries, &prev);
        if r > 0 {
            let delays = (0..r).map(|_| self.delays.sample(rng)).collect();
            self.state.in_flight.push(InFlightBatch {
                send_slot: self.slot,
                delays,
            });
            self.sent += r;
        }
        self.slot = self.slot.next();
        (SlotEvents { n, c, r }, deliveries)
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn state(k: u64, b: u64) -> BufferState {
        BufferState {
            key_blocks: k,
            backlog: b,
            in_flight: Vec::new(),
        }
    }

    #[test]
    fn apply_slot_examples() {
        let (s, _) = apply_slot(&state(10, 0), SlotEvents { n: 3, c: 2, r: 0 });
        assert_eq!((s.key_blocks, s.backlog), (9, 0));
        let (s, _) = apply_slot(&state(0, 0), SlotEvents { n: 5, c: 0, r: 0 });
        assert_eq!((s.key_blocks, s.backlog), (0, 5));
        let (s, out) = apply_slot(&state(2, 0), SlotEvents { n: 5, c: 1, r: 0 });
        assert_eq!((s.key_blocks, s.backlog), (0, 2));
        assert_eq!(out.served, 3);
    }

    #[test]
    fn deliveries_examples() {
        let mut in_flight = vec![InFlightBatch {
            send_slot: SlotIndex(4),
            delays: vec![2, 2, 3],
        }];
        let d = deliveries_for_slot(&mut in_flight, SlotIndex(6));
        assert_eq!(delivered_total(&d), 2);
        assert_eq!(in_flight[0].delays, vec![3]);

        let mut empty = Vec::new();
        assert!(deliveries_for_slot(&mut empty, SlotIndex(99)).is_empty());

        let mut unit = vec![InFlightBatch {
            send_slot: SlotIndex(10),
            delays: vec![1; 7],
        }];
        let d = deliveries_for_slot(&mut unit, SlotIndex(11));
        assert_eq!(delivered_total(&d), 7);
        assert!(unit.is_empty());
    }

    #[test]
    fn deliveries_ignore_future_batches() {
        let mut in_flight = vec![InFlightBatch {
            send_slot: SlotIndex(8),
            delays: vec![1],
        }];
        assert!(deliveries_for_slot(&mut in_flight, SlotIndex(5)).is_empty());
        assert_eq!(in_flight.len(), 1);
    }

    #[test]
    fn delay_distribution_validation() {
        assert_eq!(DelayDistribution::new(vec![]), Err(DelayError::Empty));
        assert!(matches!(
            DelayDistribution::new(vec![0.5, 0.4]),
            Err(DelayError::NotNormalized(_))
        ));
        assert_eq!(DelayDistribution::new(vec![1.0, 0.0]), Err(DelayError::LooseSupport));
        assert!(matches!(
            DelayDistribution::new(vec![1.5, -0.5]),
            Err(DelayError::OutOfRange { delay: 1, .. })
        ));
        let d = DelayDistribution::from_weights(&[0.0, 3.0, 1.0, 0.0]).unwrap();
        assert_eq!(d.max_delay(), 3);
        assert_eq!(d.probabilities(), &[0.0, 0.75, 0.25]);
    }

    #[test]
    fn sampling_follows_pmf() {
        let d = DelayDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hist = [0u32; 4];
        for _ in 0..100_000 {
            hist[d.sample(&mut rng) as usize] += 1;
        }
        assert_eq!(hist[0], 0);
        for (j, p) in [0.2, 0.3, 0.5].iter().enumerate() {
            let f = f64::from(hist[j + 1]) / 100_000.0;
            assert!((f - p).abs() < 0.01, "delay {} freq {f}", j + 1);
        }
    }

    #[test]
    fn reactive_rate_matching() {
        let delays = DelayDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let k = delays.max_delay() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let poisson = Poisson::new(4.0).unwrap();
        for horizon in [1_000u64, 10_000, 50_000] {
            let mut unit = PmfBuffer::new(delays.clone(), 0);
            let (mut sum_n, mut sum_c, mut max_n) = (0u64, 0u64, 0u64);
            for _ in 0..horizon {
                let n = poisson.sample(&mut rng) as u64;
                let (ev, _) = unit.step(n, &mut rng, |n, _, _| n);
                sum_n += ev.n;
                sum_c += ev.c;
                max_n = max_n.max(n);
            }
            let gap = (sum_c as f64 - sum_n as f64).abs() / horizon as f64;
            assert!(gap <= k * max_n as f64 / horizon as f64, "horizon {horizon}: {gap}");
        }
    }

    proptest! {
        #[test]
        fn slot_invariants_hold(
            seed in any::<u64>(),
            initial in 0u64..20,
            arrivals in proptest::collection::vec(0u64..12, 1..200),
            extra in 0u64..3,
        ) {
            let delays = DelayDistribution::new(vec![0.25, 0.25, 0.5]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut unit = PmfBuffer::new(delays, initial);
            let mut sum_c = 0;
            for n in arrivals {
                let before = unit.state.signed_level();
                let (ev, _) = unit.step(n, &mut rng, |n, _, _| n + extra);
                sum_c += ev.c;
                let s = &unit.state;
                prop_assert_eq!(s.signed_level(), before - ev.n as i64 + ev.c as i64);
                prop_assert_eq!(s.key_blocks * s.backlog, 0);
                prop_assert_eq!(sum_c, unit.sent() - s.in_flight_count());
                prop_assert_eq!(sum_c, unit.delivered());
            }
        }
    }
}
