//! Seeded per-slot application request generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("pareto shape must exceed 1 for a finite mean, got {0}")]
    InvalidShape(f64),
    #[error("pareto scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("source and destination are both node {0}")]
    SameEndpoints(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalProcess {
    Poisson,
    /// Poisson-timed events each carrying a Pareto-sized batch. Without a
    /// `scale` the batch scale is chosen so the mean matches the app rate.
    Ppbp {
        event_rate: f64,
        shape: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub source: NodeId,
    pub destination: NodeId,
    /// Seconds after scenario start.
    #[serde(default)]
    pub start_s: f64,
    pub rate_rps: f64,
    #[serde(default = "default_process")]
    pub process: ArrivalProcess,
    pub demand_blocks: u64,
}

fn default_process() -> ArrivalProcess {
    ArrivalProcess::Poisson
}

impl AppSpec {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.source == self.destination {
            return Err(TrafficError::SameEndpoints(self.source));
        }
        if !(self.rate_rps > 0.0) {
            return Err(TrafficError::NonPositive {
                field: "rate_rps",
                value: self.rate_rps,
            });
        }
        if self.demand_blocks == 0 {
            return Err(TrafficError::NonPositive {
                field: "demand_blocks",
                value: 0.0,
            });
        }
        if !(self.start_s >= 0.0) {
            return Err(TrafficError::NonPositive {
                field: "start_s",
                value: self.start_s,
            });
        }
        if let ArrivalProcess::Ppbp {
            event_rate,
            shape,
            scale,
        } = self.process
        {
            if !(event_rate > 0.0) {
                return Err(TrafficError::NonPositive {
                    field: "event_rate",
                    value: event_rate,
                });
            }
            if !(shape > 1.0) {
                return Err(TrafficError::InvalidShape(shape));
            }
            if let Some(s) = scale {
                if !(s > 0.0) {
                    return Err(TrafficError::InvalidScale(s));
                }
            }
        }
        Ok(())
    }

    /// Pareto scale giving a batch mean of `rate / event_rate`.
    pub fn ppbp_scale(&self) -> Option<f64> {
        match self.process {
            ArrivalProcess::Ppbp { scale: Some(s), .. } => Some(s),
            ArrivalProcess::Ppbp {
                event_rate,
                shape,
                scale: None,
            } => Some(self.rate_rps / event_rate * (shape - 1.0) / shape),
            ArrivalProcess::Poisson => None,
        }
    }

    pub fn start_slot(&self, slot_seconds: f64) -> u64 {
        (self.start_s / slot_seconds).round() as u64
    }
}

/// One slot of a Poisson request stream.
pub fn gen_poisson<R: Rng + ?Sized>(rate: f64, slot_seconds: f64, rng: &mut R) -> u64 {
    let mean = rate * slot_seconds;
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Rounds a Pareto draw half-up, with at least one request per event.
fn batch_size(x: f64) -> u64 {
    ((x + 0.5).floor() as u64).max(1)
}

/// One slot of a Poisson-Pareto burst stream.
pub fn gen_ppbp<R: Rng + ?Sized>(
    event_rate: f64,
    shape: f64,
    scale: f64,
    slot_seconds: f64,
    rng: &mut R,
) -> Result<u64, TrafficError> {
    if !(shape > 1.0) {
        return Err(TrafficError::InvalidShape(shape));
    }
    if !(scale > 0.0) {
        return Err(TrafficError::InvalidScale(scale));
    }
    let events = gen_poisson(event_rate, slot_seconds, rng);
    if events == 0 {
        return Ok(0);
    }
    let pareto = Pareto::new(scale, shape).map_err(|_| TrafficError::InvalidShape(shape))?;
    Ok((0..events).map(|_| batch_size(pareto.sample(rng))).sum())
}

/// Request stream of one application, truncated at its demand.
#[derive(Debug, Clone)]
pub struct RequestGenerator {
    spec: AppSpec,
    slot_seconds: f64,
    rng: ChaCha8Rng,
    remaining: u64,
}

impl RequestGenerator {
    pub fn new(spec: AppSpec, slot_seconds: f64, seed: u64) -> Result<Self, TrafficError> {
        spec.validate()?;
        Ok(Self {
            remaining: spec.demand_blocks,
            spec,
            slot_seconds,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn spec(&self) -> &AppSpec {
        &self.spec
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    pub fn exhausted(&self) -> bool {
        self.remaining == 0
    }

    pub fn next_slot(&mut self) -> u64 {
        if self.remaining == 0 {
            return 0;
        }
        let n = match self.spec.process {
            ArrivalProcess::Poisson => gen_poisson(self.spec.rate_rps, self.slot_seconds, &mut self.rng),
            ArrivalProcess::Ppbp { event_rate, shape, .. } => {
                let scale = self.spec.ppbp_scale().expect("ppbp has a scale");
                gen_ppbp(event_rate, shape, scale, self.slot_seconds, &mut self.rng).expect("validated at construction")
            }
        };
        let n = n.min(self.remaining);
        self.remaining -= n;
        n
    }
}

/// Per-slot counts of one application from its first slot until its demand
/// is exhausted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestTrace {
    pub counts: Vec<u64>,
    /// Slot offset at which the last request was generated.
    pub completion_slot: Option<u64>,
}

impl RequestTrace {
    pub fn generate(spec: AppSpec, slot_seconds: f64, seed: u64, max_slots: u64) -> Result<Self, TrafficError> {
        let mut generator = RequestGenerator::new(spec, slot_seconds, seed)?;
        let mut counts = Vec::new();
        let mut completion_slot = None;
        for slot in 0..max_slots {
            counts.push(generator.next_slot());
            if generator.exhausted() {
                completion_slot = Some(slot);
                break;
            }
        }
        Ok(Self {
            counts,
            completion_slot,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[u64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<u64>() as f64 / n;
        let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn poisson_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<u64> = (0..1_000_000).map(|_| gen_poisson(50.0, 0.05, &mut rng)).collect();
        let (m, v) = moments(&xs);
        assert!((m - 2.5).abs() / 2.5 < 0.02, "mean {m}");
        assert!((v - 2.5).abs() / 2.5 < 0.02, "var {v}");
    }

    #[test]
    fn zero_rate_is_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| gen_poisson(0.0, 0.05, &mut rng) == 0));
        assert!((0..1000).all(|_| gen_ppbp(0.0, 2.0, 25.0, 0.05, &mut rng).unwrap() == 0));
    }

    #[test]
    fn ppbp_mean_rate_and_burstiness() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<u64> = (0..1_000_000)
            .map(|_| gen_ppbp(1.0, 2.0, 25.0, 0.05, &mut rng).unwrap())
            .collect();
        let (m, v) = moments(&xs);
        let rate = m / 0.05;
        assert!((rate - 50.0).abs() / 50.0 <= 0.03, "rate {rate}");

        let ys: Vec<u64> = (0..1_000_000).map(|_| gen_poisson(50.0, 0.05, &mut rng)).collect();
        assert!(v > moments(&ys).1);
    }

    #[test]
    fn ppbp_rejects_infinite_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            gen_ppbp(1.0, 1.0, 25.0, 0.05, &mut rng),
            Err(TrafficError::InvalidShape(1.0))
        );
    }

    #[test]
    fn derived_scale_matches_rate() {
        let spec = AppSpec {
            source: 0,
            destination: 1,
            start_s: 0.0,
            rate_rps: 50.0,
            process: ArrivalProcess::Ppbp {
                event_rate: 1.0,
                shape: 2.0,
                scale: None,
            },
            demand_blocks: 10,
        };
        assert_eq!(spec.ppbp_scale(), Some(25.0));
    }

    #[test]
    fn trace_stops_exactly_at_demand() {
        for (i, process) in [
            ArrivalProcess::Poisson,
            ArrivalProcess::Ppbp {
                event_rate: 1.0,
                shape: 2.0,
                scale: None,
            },
        ]
        .into_iter()
        .enumerate()
        {
            let spec = AppSpec {
                source: 0,
                destination: 1,
                start_s: 0.0,
                rate_rps: 50.0,
                process,
                demand_blocks: 1234,
            };
            let t = RequestTrace::generate(spec.clone(), 0.05, 9 + i as u64, 1_000_000).unwrap();
            assert_eq!(t.counts.iter().sum::<u64>(), 1234);
            assert_eq!(t.completion_slot, Some(t.counts.len() as u64 - 1));
            let again = RequestTrace::generate(spec, 0.05, 9 + i as u64, 1_000_000).unwrap();
            assert_eq!(t, again);
        }
    }

    #[test]
    fn validation() {
        let mut spec = AppSpec {
            source: 3,
            destination: 3,
            start_s: 0.0,
            rate_rps: 10.0,
            process: ArrivalProcess::Poisson,
            demand_blocks: 5,
        };
        assert_eq!(spec.validate(), Err(TrafficError::SameEndpoints(3)));
        spec.destination = 4;
        spec.rate_rps = 0.0;
        assert!(spec.validate().is_err());
    }
}
