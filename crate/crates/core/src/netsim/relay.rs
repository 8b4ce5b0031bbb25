use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use super::LinkId;

pub const MICROS_PER_SECOND: f64 = 1e6;

/// Key material of one link, shared by both directions.
///
/// Replenishment is continuous in time: the pool holds every whole block
/// generated since it was created, minus what has been debited.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkKeyPool {
    initial: u64,
    /// Blocks per second.
    replenish_rate: f64,
    unlimited: bool,
    available: u64,
    accrued: u64,
    consumed: u64,
    accrued_until_us: u64,
}

impl LinkKeyPool {
    pub fn unlimited() -> Self {
        Self {
            initial: 0,
            replenish_rate: 0.0,
            unlimited: true,
            available: 0,
            accrued: 0,
            consumed: 0,
            accrued_until_us: 0,
        }
    }

    pub fn limited(initial: u64, replenish_rate: f64) -> Self {
        Self {
            initial,
            replenish_rate: replenish_rate.max(0.0),
            unlimited: false,
            available: initial,
            accrued: 0,
            consumed: 0,
            accrued_until_us: 0,
        }
    }

    pub fn is_unlimited(&self) -> bool {
        self.unlimited
    }

    pub fn available(&self) -> u64 {
        self.available
    }

    pub fn initial(&self) -> u64 {
        self.initial
    }

    pub fn accrued(&self) -> u64 {
        self.accrued
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn replenish_rate(&self) -> f64 {
        self.replenish_rate
    }

    /// Credits whole blocks generated up to `t_us`. Time never runs backwards.
    pub fn advance_to(&mut self, t_us: u64) {
        if self.unlimited || t_us <= self.accrued_until_us {
            return;
        }
        self.accrued_until_us = t_us;
        let exact = self.replenish_rate * t_us as f64 / MICROS_PER_SECOND;
        let whole = (exact + 1e-9).floor() as u64;
        if whole > self.accrued {
            self.available += whole - self.accrued;
            self.accrued = whole;
        }
    }

    pub fn try_debit(&mut self, blocks: u64) -> bool {
        if self.unlimited {
            self.consumed += blocks;
            return true;
        }
        if self.available >= blocks {
            self.available -= blocks;
            self.consumed += blocks;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobState {
    /// Ready to enter hop `h` once keys are available.
    AtHop(usize),
    /// Queued at hop `h` behind other jobs or for key material.
    Waiting(usize),
    /// Crossing hop `h`.
    InTransit(usize),
}

/// One batch of relay requests crossing a multi-hop path.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayJob {
    pub id: u64,
    pub pair: usize,
    pub links: Vec<LinkId>,
    pub blocks: u64,
    pub send_slot: u64,
    pub hop_delays_us: Vec<u64>,
    pub state: JobState,
    pub ready_at_us: u64,
    pub waited_us: u64,
    wait_started_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveredJob {
    pub id: u64,
    pub pair: usize,
    pub blocks: u64,
    pub send_slot: u64,
    /// Slots from sending to delivery, at least 1.
    pub delay_slots: u32,
    pub transit_us: u64,
    pub waited_us: u64,
}

/// Moves relay jobs through hops in integer microseconds.
///
/// A job sent in slot `s` leaves at the end of that slot. It enters each hop
/// as soon as the link's wait queue is empty and its pool covers the batch.
/// A job whose last hop finishes inside slot `k`'s window is delivered in
/// slot `k`.
#[derive(Debug, Clone)]
pub struct RelayEngine {
    slot_us: u64,
    pools: Vec<LinkKeyPool>,
    jobs: BTreeMap<u64, RelayJob>,
    timeline: BinaryHeap<Reverse<(u64, u64)>>,
    queues: Vec<VecDeque<u64>>,
    next_id: u64,
    delivered_jobs: u64,
    max_waiting: usize,
}

impl RelayEngine {
    pub fn new(slot_seconds: f64, pools: Vec<LinkKeyPool>) -> Self {
        let queues = vec![VecDeque::new(); pools.len()];
        Self {
            slot_us: (slot_seconds * MICROS_PER_SECOND).round() as u64,
            pools,
            jobs: BTreeMap::new(),
            timeline: BinaryHeap::new(),
            queues,
            next_id: 0,
            delivered_jobs: 0,
            max_waiting: 0,
        }
    }

    pub fn pools(&self) -> &[LinkKeyPool] {
        &self.pools
    }

    pub fn active_jobs(&self) -> usize {
        self.jobs.len()
    }

    pub fn job(&self, id: u64) -> Option<&RelayJob> {
        self.jobs.get(&id)
    }

    pub fn delivered_jobs(&self) -> u64 {
        self.delivered_jobs
    }

    pub fn waiting_jobs(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    /// Largest number of jobs ever queued for keys at once.
    pub fn max_waiting(&self) -> usize {
        self.max_waiting
    }

    /// Submits a batch sent during `send_slot`. Returns its job id.
    pub fn submit(
        &mut self,
        pair: usize,
        links: Vec<LinkId>,
        blocks: u64,
        send_slot: u64,
        hop_delays_us: Vec<u64>,
    ) -> u64 {
        assert_eq!(links.len(), hop_delays_us.len(), "one delay per hop");
        assert!(!links.is_empty(), "a relay path has at least one hop");
        let id = self.next_id;
        self.next_id += 1;
        let ready_at_us = (send_slot + 1) * self.slot_us;
        self.jobs.insert(
            id,
            RelayJob {
                id,
                pair,
                links,
                blocks,
                send_slot,
                hop_delays_us,
                state: JobState::AtHop(0),
                ready_at_us,
                waited_us: 0,
                wait_started_us: 0,
            },
        );
        self.timeline.push(Reverse((ready_at_us, id)));
        id
    }

    fn try_enter(&mut self, id: u64, hop: usize, t_us: u64) -> bool {
        let job = self.jobs.get_mut(&id).expect("job exists");
        let link = job.links[hop];
        let pool = &mut self.pools[link];
        pool.advance_to(t_us);
        if !pool.try_debit(job.blocks) {
            return false;
        }
        job.state = JobState::InTransit(hop);
        job.ready_at_us = t_us + job.hop_delays_us[hop];
        self.timeline.push(Reverse((job.ready_at_us, id)));
        true
    }

    fn arrive_at_hop(&mut self, id: u64, hop: usize, t_us: u64) {
        let link = self.jobs[&id].links[hop];
        if self.queues[link].is_empty() && self.try_enter(id, hop, t_us) {
            return;
        }
        let job = self.jobs.get_mut(&id).expect("job exists");
        job.state = JobState::Waiting(hop);
        job.wait_started_us = t_us;
        self.queues[link].push_back(id);
        self.max_waiting = self.max_waiting.max(self.waiting_jobs());
    }

    /// Processes everything that happens during `slot` and returns the jobs
    /// delivered in it, in completion order.
    pub fn advance(&mut self, slot: u64) -> Vec<DeliveredJob> {
        let window_end = (slot + 1) * self.slot_us;
        let mut delivered = Vec::new();
        while let Some(&Reverse((t, id))) = self.timeline.peek() {
            if t > window_end {
                break;
            }
            self.timeline.pop();
            match self.jobs[&id].state {
                JobState::AtHop(h) => self.arrive_at_hop(id, h, t),
                JobState::InTransit(h) => {
                    let hops = self.jobs[&id].links.len();
                    if h + 1 < hops {
                        self.arrive_at_hop(id, h + 1, t);
                    } else {
                        let job = self.jobs.remove(&id).expect("job exists");
                        self.delivered_jobs += 1;
                        let sent_at = (job.send_slot + 1) * self.slot_us;
                        delivered.push(DeliveredJob {
                            id,
                            pair: job.pair,
                            blocks: job.blocks,
                            send_slot: job.send_slot,
                            delay_slots: u32::try_from((slot - job.send_slot).max(1)).unwrap_or(u32::MAX),
                            transit_us: t - sent_at,
                            waited_us: job.waited_us,
                        });
                    }
                }
                JobState::Waiting(_) => unreachable!("waiting jobs are not on the timeline"),
            }
        }
        // Queued jobs are re-checked against the pool at the window end.
        for link in 0..self.queues.len() {
            while let Some(&id) = self.queues[link].front() {
                let JobState::Waiting(h) = self.jobs[&id].state else {
                    unreachable!("queued jobs are waiting")
                };
                if !self.try_enter(id, h, window_end) {
                    break;
                }
                self.queues[link].pop_front();
                let job = self.jobs.get_mut(&id).expect("job exists");
                job.waited_us += window_end - job.wait_started_us;
            }
        }
        delivered
    }
}
