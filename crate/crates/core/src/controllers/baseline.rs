//! Comparison policies: no buffering, fixed-rate pre-filling, a rate
//! multiplier, and a threshold/refill heuristic.

use serde::{Deserialize, Serialize};

use super::{ControllerDecision, Observation, RelayController};

/// Tunables of the threshold/refill heuristic. The defaults are choices of
/// this crate: refill bursts are a large multiple of the request rate times
/// the relay delay, as the heuristic is described.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtVqkpParams {
    /// Burst size multiplier on `rate * delay`.
    pub factor: f64,
    /// Refill when buffered plus in-flight keys drop below `rate * watermark_slots`.
    pub watermark_slots: f64,
    /// Weight of the newest sample in the rate and delay moving averages.
    pub smoothing: f64,
    /// Delay assumed before the first delivery is observed.
    pub initial_delay_slots: f64,
}

impl Default for DtVqkpParams {
    fn default() -> Self {
        Self {
            factor: 200.0,
            watermark_slots: 1.0,
            smoothing: 0.1,
            initial_delay_slots: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineScheme {
    NoBuffer,
    KaasFixed { rate_rps: f64 },
    StVqkp { multiplier: f64 },
    DtVqkp(DtVqkpParams),
}

#[derive(Debug, Clone)]
pub struct Baseline {
    scheme: BaselineScheme,
    slot_seconds: f64,
    /// Fractional requests carried to the next slot.
    carry: f64,
    rate_avg: f64,
    delay_avg: Option<f64>,
    outstanding: u64,
}

impl Baseline {
    pub fn new(scheme: BaselineScheme, slot_seconds: f64) -> Self {
        Self {
            scheme,
            slot_seconds,
            carry: 0.0,
            rate_avg: 0.0,
            delay_avg: None,
            outstanding: 0,
        }
    }

    pub fn scheme(&self) -> &BaselineScheme {
        &self.scheme
    }

    fn emit_fraction(&mut self, amount: f64) -> u64 {
        self.carry += amount;
        let whole = self.carry.floor();
        self.carry -= whole;
        whole as u64
    }

    fn dt_vqkp(&mut self, p: DtVqkpParams, obs: &Observation<'_>) -> u64 {
        let a = p.smoothing;
        self.rate_avg = (1.0 - a) * self.rate_avg + a * obs.arrivals as f64;
        for d in obs.deliveries {
            let delay = f64::from(d.delay);
            self.delay_avg = Some(match self.delay_avg {
                Some(avg) => (1.0 - a) * avg + a * delay,
                None => delay,
            });
            self.outstanding = self.outstanding.saturating_sub(d.count);
        }
        let watermark = self.rate_avg * p.watermark_slots;
        if ((obs.buffer_level + self.outstanding) as f64) < watermark {
            let delay = self.delay_avg.unwrap_or(p.initial_delay_slots);
            let burst = (self.rate_avg * delay * p.factor).ceil() as u64;
            self.outstanding += burst;
            burst
        } else {
            0
        }
    }
}

impl RelayController for Baseline {
    fn decide(&mut self, obs: &Observation<'_>) -> ControllerDecision {
        let r = match self.scheme.clone() {
            BaselineScheme::NoBuffer => obs.arrivals,
            BaselineScheme::KaasFixed { rate_rps } => self.emit_fraction(rate_rps * self.slot_seconds),
            BaselineScheme::StVqkp { multiplier } => {
                if obs.app_active || obs.arrivals > 0 {
                    self.emit_fraction(multiplier * obs.arrivals as f64)
                } else {
                    0
                }
            }
            BaselineScheme::DtVqkp(p) => self.dt_vqkp(p, obs),
        };
        ControllerDecision { relay_requests: r }
    }

    fn phase_label(&self) -> &'static str {
        match self.scheme {
            BaselineScheme::NoBuffer => "nobuffer",
            BaselineScheme::KaasFixed { .. } => "kaas",
            BaselineScheme::StVqkp { .. } => "st-vqkp",
            BaselineScheme::DtVqkp(_) => "dt-vqkp",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Delivery, SlotIndex};

    fn obs(n: u64, m: u64, deliveries: &[Delivery], active: bool) -> Observation<'_> {
        Observation {
            slot: SlotIndex(0),
            arrivals: n,
            deliveries,
            buffer_level: m,
            app_active: active,
        }
    }

    #[test]
    fn kaas_120_rps_is_six_per_slot() {
        let mut b = Baseline::new(BaselineScheme::KaasFixed { rate_rps: 120.0 }, 0.05);
        for n in [0, 3, 40] {
            assert_eq!(b.decide(&obs(n, 0, &[], false)).relay_requests, 6);
        }
    }

    #[test]
    fn kaas_fractional_rate_accumulates() {
        let mut b = Baseline::new(BaselineScheme::KaasFixed { rate_rps: 30.0 }, 0.05);
        let total: u64 = (0..100).map(|_| b.decide(&obs(0, 0, &[], true)).relay_requests).sum();
        assert_eq!(total, 150);
    }

    #[test]
    fn st_vqkp_doubles_and_stops() {
        let mut b = Baseline::new(BaselineScheme::StVqkp { multiplier: 2.0 }, 0.05);
        assert_eq!(b.decide(&obs(7, 0, &[], true)).relay_requests, 14);
        assert_eq!(b.decide(&obs(0, 30, &[], false)).relay_requests, 0);
    }

    #[test]
    fn no_buffer_mirrors_arrivals() {
        let mut b = Baseline::new(BaselineScheme::NoBuffer, 0.05);
        assert_eq!(b.decide(&obs(0, 0, &[], true)).relay_requests, 0);
        assert_eq!(b.decide(&obs(5, 0, &[], true)).relay_requests, 5);
    }

    #[test]
    fn dt_vqkp_bursts_once_until_delivery() {
        let params = DtVqkpParams {
            smoothing: 1.0,
            ..DtVqkpParams::default()
        };
        let mut b = Baseline::new(BaselineScheme::DtVqkp(params), 0.05);
        let first = b.decide(&obs(2, 0, &[], true)).relay_requests;
        assert_eq!(first, (2.0 * 1.0 * params.factor) as u64);
        // Outstanding keys keep it quiet.
        assert_eq!(b.decide(&obs(2, 0, &[], true)).relay_requests, 0);
        let d = [Delivery {
            send_slot: SlotIndex(0),
            delay: 8,
            count: first,
        }];
        assert_eq!(b.decide(&obs(2, first, &d, true)).relay_requests, 0);
        // Drained: next burst uses the measured delay.
        assert_eq!(
            b.decide(&obs(2, 1, &[], true)).relay_requests,
            (2.0 * 8.0 * params.factor) as u64
        );
    }
}
