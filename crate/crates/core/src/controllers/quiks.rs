//! Two-phase adaptive buffer control.
//!
//! *Probing*: for `(alpha + 1) K` slots record per-slot request counts and the
//! delay of every delivered key, sending `beta` extra requests per arrival
//! during the first `alpha K` slots so the delay histogram fills quickly. `K`
//! (the largest delay) starts unknown and is raised every time the histogram
//! grows once some send slot has been fully satisfied.
//!
//! *Adjusting*: size the buffer to `round(5 sigma)` blocks and close the gap
//! `d` by over- or under-sending.
//!
//! *Stable*: send exactly as many requests as arrived. Re-probe as soon as the
//! buffer falls below `sigma`.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::{ControllerDecision, Observation, RelayController};
use crate::analytics::{
    estimate_autocovariance_counted, sigma_delta_counted, standard_normal_cdf, AnalyticsError, OpCount,
};
use crate::model::{DelayDistribution, SlotIndex};

/// Buffer target in units of sigma.
pub const TARGET_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuiksParams {
    pub alpha: u32,
    pub beta: u32,
    /// Largest delay, in slots, a probe may discover before it is abandoned.
    pub k_cap: u32,
}

impl Default for QuiksParams {
    fn default() -> Self {
        Self {
            alpha: 2,
            beta: 2,
            k_cap: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    ProbingParameters,
    AdjustingBuffer,
    Stable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KEstimate {
    Undetermined,
    Slots(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizingResult {
    pub sigma_delta: f64,
    pub target_level: u64,
    /// Smallest integer level that is not below `sigma_delta`.
    pub reprobe_threshold: u64,
    /// Lagged-supply probability implied by the target.
    pub epsilon: f64,
}

impl SizingResult {
    pub fn from_sigma(sigma: f64) -> Self {
        let target = ((TARGET_SIGMAS * sigma + 0.5).floor() as u64).max(1);
        Self {
            sigma_delta: sigma,
            target_level: target,
            reprobe_threshold: sigma.ceil() as u64,
            epsilon: standard_normal_cdf(-TARGET_SIGMAS),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("no keys were delivered during the probe")]
    EmptyProbe,
    #[error("maximum delay is still undetermined")]
    Undetermined,
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

#[derive(Debug, Clone)]
pub struct QuiksState {
    pub phase: Phase,
    pub params: QuiksParams,
    /// Requests per slot since the probe started.
    pub n_record: Vec<u64>,
    /// Delivered keys indexed by delay in slots (index 0 unused).
    pub w_record: Vec<u64>,
    pub k_est: KEstimate,
    pub sigma_hat: f64,
    pub sizing: Option<SizingResult>,
    pub pending_adjust: i64,
    pub probe_start: SlotIndex,
    /// Requests still owed per probe send slot.
    outstanding: BTreeMap<u64, u64>,
    any_satisfied: bool,
}

impl QuiksState {
    pub fn new(params: QuiksParams, start: SlotIndex) -> Self {
        Self {
            phase: Phase::ProbingParameters,
            params,
            n_record: Vec::new(),
            w_record: Vec::new(),
            k_est: KEstimate::Undetermined,
            sigma_hat: 0.0,
            sizing: None,
            pending_adjust: 0,
            probe_start: start,
            outstanding: BTreeMap::new(),
            any_satisfied: false,
        }
    }

    fn restart_probe(&mut self, slot: SlotIndex) {
        self.phase = Phase::ProbingParameters;
        self.n_record.clear();
        self.w_record.clear();
        self.outstanding.clear();
        self.any_satisfied = false;
        self.k_est = KEstimate::Undetermined;
        self.probe_start = slot;
    }

    fn release_records(&mut self) {
        self.n_record = Vec::new();
        self.w_record = Vec::new();
        self.outstanding = BTreeMap::new();
    }

    /// Number of entries currently held in the probe records.
    pub fn record_footprint(&self) -> usize {
        self.n_record.len() + self.w_record.len() + self.outstanding.len()
    }

    /// Computes sigma and the buffer target from the probe records.
    pub fn finalize_probe(&self) -> Result<SizingResult, ProbeError> {
        self.finalize_probe_counted(&mut OpCount::default())
    }

    fn finalize_probe_counted(&self, ops: &mut OpCount) -> Result<SizingResult, ProbeError> {
        let KEstimate::Slots(k) = self.k_est else {
            return Err(ProbeError::Undetermined);
        };
        let k = k as usize;
        let weights: Vec<f64> = (1..=k)
            .map(|j| self.w_record.get(j).copied().unwrap_or(0) as f64)
            .collect();
        ops.add(k as u64);
        let omega = DelayDistribution::from_weights(&weights).map_err(|_| ProbeError::EmptyProbe)?;
        let samples: Vec<f64> = self.n_record.iter().map(|&n| n as f64).collect();
        ops.add(samples.len() as u64);
        let cov = estimate_autocovariance_counted(&samples, omega.max_delay(), ops)?;
        let sigma = sigma_delta_counted(&cov, &omega, ops)?;
        Ok(SizingResult::from_sigma(sigma))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QuiksStats {
    pub probes_completed: u64,
    pub probes_abandoned: u64,
    /// Arithmetic steps of the most recent probe finalization.
    pub last_finalize_ops: u64,
    /// Steps spent in the most recent stable-phase slot.
    pub last_stable_step_ops: u64,
    pub first_stable_slot: Option<SlotIndex>,
    /// Sigma estimate of every completed probe, in order.
    pub sigma_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Quiks {
    state: QuiksState,
    stats: QuiksStats,
}

impl Quiks {
    pub fn new(params: QuiksParams, start: SlotIndex) -> Self {
        Self {
            state: QuiksState::new(params, start),
            stats: QuiksStats::default(),
        }
    }

    /// Resumes from an explicit state, e.g. in tests.
    pub fn from_state(state: QuiksState) -> Self {
        Self {
            state,
            stats: QuiksStats::default(),
        }
    }

    pub fn state(&self) -> &QuiksState {
        &self.state
    }

    pub fn stats(&self) -> &QuiksStats {
        &self.stats
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn step(&mut self, obs: &Observation<'_>) -> ControllerDecision {
        let mut ops = OpCount::default();
        let r = loop {
            match self.state.phase {
                Phase::ProbingParameters => {
                    if let Some(r) = self.probe_step(obs) {
                        break r;
                    }
                }
                Phase::AdjustingBuffer => break self.adjust_step(obs),
                Phase::Stable => {
                    ops.add(1);
                    if (obs.buffer_level as f64) < self.state.sigma_hat {
                        log::debug!(
                            "slot {}: buffer {} below sigma {:.3}, re-probing",
                            obs.slot,
                            obs.buffer_level,
                            self.state.sigma_hat
                        );
                        self.state.restart_probe(obs.slot);
                        continue;
                    }
                    ops.add(1);
                    self.stats.last_stable_step_ops = ops.0;
                    break obs.arrivals;
                }
            }
        };
        ControllerDecision { relay_requests: r }
    }

    /// Returns `None` when the probe ended at the top of this slot and the
    /// slot belongs to the next phase.
    fn probe_step(&mut self, obs: &Observation<'_>) -> Option<u64> {
        let p = self.state.params;
        let elapsed = obs.slot.since(self.state.probe_start);

        match self.state.k_est {
            KEstimate::Slots(k) if k > p.k_cap => {
                self.abandon_probe(obs.slot, "maximum delay exceeds cap");
            }
            KEstimate::Undetermined if elapsed >= u64::from(p.k_cap) => {
                self.abandon_probe(obs.slot, "no send slot fully satisfied");
            }
            KEstimate::Slots(k) if elapsed >= u64::from(p.alpha + 1) * u64::from(k) => {
                self.finish_probe(obs);
                return None;
            }
            _ => {}
        }
        let elapsed = obs.slot.since(self.state.probe_start);

        let n = obs.arrivals;
        self.state.n_record.push(n);
        let oversend = match self.state.k_est {
            KEstimate::Undetermined => true,
            KEstimate::Slots(k) => elapsed < u64::from(p.alpha) * u64::from(k),
        };
        let r = if oversend { n + u64::from(p.beta) * n } else { n };
        if r > 0 {
            self.state.outstanding.insert(obs.slot.0, r);
        }

        for d in obs.deliveries {
            let delay = d.delay as usize;
            if self.state.w_record.len() <= delay {
                self.state.w_record.resize(delay + 1, 0);
            }
            self.state.w_record[delay] += d.count;
            if let Some(left) = self.state.outstanding.get_mut(&d.send_slot.0) {
                *left = left.saturating_sub(d.count);
                if *left == 0 {
                    self.state.outstanding.remove(&d.send_slot.0);
                    self.state.any_satisfied = true;
                }
            }
        }
        if self.state.any_satisfied {
            if let Some(max) = self.state.w_record.iter().rposition(|&w| w > 0) {
                let max = max as u32;
                self.state.k_est = match self.state.k_est {
                    KEstimate::Slots(k) if k >= max => KEstimate::Slots(k),
                    _ => KEstimate::Slots(max),
                };
            }
        }
        Some(r)
    }

    fn abandon_probe(&mut self, slot: SlotIndex, why: &str) {
        let level = if self.state.n_record.iter().any(|&n| n > 0) {
            log::Level::Warn
        } else {
            log::Level::Debug
        };
        log::log!(
            level,
            "slot {slot}: probe started at {} abandoned ({why}); restarting",
            self.state.probe_start
        );
        self.stats.probes_abandoned += 1;
        self.state.restart_probe(slot);
    }

    fn finish_probe(&mut self, obs: &Observation<'_>) {
        let mut ops = OpCount::default();
        match self.state.finalize_probe_counted(&mut ops) {
            Ok(sizing) => {
                self.stats.last_finalize_ops = ops.0;
                self.stats.probes_completed += 1;
                self.stats.sigma_history.push(sizing.sigma_delta);
                self.state.sigma_hat = sizing.sigma_delta;
                self.state.pending_adjust = sizing.target_level as i64 - obs.buffer_level as i64;
                self.state.sizing = Some(sizing);
                self.state.phase = Phase::AdjustingBuffer;
                self.state.release_records();
            }
            Err(e) => self.abandon_probe(obs.slot, &e.to_string()),
        }
    }

    fn adjust_step(&mut self, obs: &Observation<'_>) -> u64 {
        let n = obs.arrivals as i64;
        let d = self.state.pending_adjust;
        if d == 0 {
            self.enter_stable(obs.slot);
            return obs.arrivals;
        }
        let r = (n + d).max(0);
        self.state.pending_adjust = d + n - r;
        if self.state.pending_adjust == 0 {
            self.enter_stable(obs.slot.next());
        }
        r as u64
    }

    fn enter_stable(&mut self, slot: SlotIndex) {
        self.state.phase = Phase::Stable;
        if self.stats.first_stable_slot.is_none() {
            self.stats.first_stable_slot = Some(slot);
        }
    }
}

impl RelayController for Quiks {
    fn decide(&mut self, obs: &Observation<'_>) -> ControllerDecision {
        self.step(obs)
    }

    fn phase_label(&self) -> &'static str {
        match self.state.phase {
            Phase::ProbingParameters => "probing",
            Phase::AdjustingBuffer => "adjusting",
            Phase::Stable => "stable",
        }
    }

    fn in_warmup(&self) -> bool {
        self.stats.first_stable_slot.is_none()
    }

    fn is_stable(&self) -> bool {
        self.state.phase == Phase::Stable
    }
}
