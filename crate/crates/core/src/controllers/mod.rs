//! Relay-request policies for one end-to-end buffering unit.
//!
//! Every policy is called once per slot, after that slot's deliveries and
//! arrivals, and returns how many key blocks to request from the network.

mod baseline;
mod quiks;

pub use baseline::{Baseline, BaselineScheme, DtVqkpParams};
pub use quiks::{KEstimate, Phase, ProbeError, Quiks, QuiksParams, QuiksState, QuiksStats, SizingResult};

use crate::model::{Delivery, SlotIndex};

/// What a controller sees in one slot.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub slot: SlotIndex,
    /// Application requests that arrived this slot.
    pub arrivals: u64,
    /// Keys that reached the buffer this slot.
    pub deliveries: &'a [Delivery],
    /// Buffered key blocks at the end of the previous slot.
    pub buffer_level: u64,
    /// Whether any application on this pair still has demand left.
    pub app_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ControllerDecision {
    pub relay_requests: u64,
}

pub trait RelayController: Send {
    fn decide(&mut self, obs: &Observation<'_>) -> ControllerDecision;

    /// Short label of the current control phase, for traces.
    fn phase_label(&self) -> &'static str;

    /// True until the controller first reaches its steady regime.
    fn in_warmup(&self) -> bool {
        false
    }

    /// True while the controller runs its steady regime.
    fn is_stable(&self) -> bool {
        true
    }
}

/// Any of the supported policies.
#[derive(Debug, Clone)]
pub enum Controller {
    Quiks(Quiks),
    Baseline(Baseline),
}

impl Controller {
    pub fn as_quiks(&self) -> Option<&Quiks> {
        match self {
            Controller::Quiks(q) => Some(q),
            Controller::Baseline(_) => None,
        }
    }
}

impl RelayController for Controller {
    fn decide(&mut self, obs: &Observation<'_>) -> ControllerDecision {
        match self {
            Controller::Quiks(q) => q.decide(obs),
            Controller::Baseline(b) => b.decide(obs),
        }
    }

    fn phase_label(&self) -> &'static str {
        match self {
            Controller::Quiks(q) => q.phase_label(),
            Controller::Baseline(b) => b.phase_label(),
        }
    }

    fn in_warmup(&self) -> bool {
        match self {
            Controller::Quiks(q) => q.in_warmup(),
            Controller::Baseline(b) => b.in_warmup(),
        }
    }

    fn is_stable(&self) -> bool {
        match self {
            Controller::Quiks(q) => q.is_stable(),
            Controller::Baseline(b) => b.is_stable(),
        }
    }
}
