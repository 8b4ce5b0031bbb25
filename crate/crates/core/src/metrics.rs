//! Per-run metrics: key supply latency, instant supply ratio, application
//! completion ratio, buffer size and link key consumption.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Bytes per 256-bit key block, the default block size.
pub const BLOCK_BYTES: u64 = 32;

/// Mergeable run totals. Every field is an integer count, so merging is
/// exactly associative and commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Served requests by latency in slots.
    pub latency_histogram: BTreeMap<u64, u64>,
    pub requests_total: u64,
    pub requests_served: u64,
    pub requests_instant: u64,
    /// Requests that arrived after the controller's warm-up.
    pub post_warmup_requests: u64,
    pub post_warmup_instant: u64,
    pub apps_total: u64,
    pub apps_completed: u64,
    pub buffer_samples: u64,
    pub buffer_sum: u64,
    pub buffer_sum_sq: u128,
    pub buffer_max: u64,
    pub relay_requests_sent: u64,
    pub key_blocks_delivered: u64,
    /// Link key blocks consumed, indexed by link.
    pub link_consumption: Vec<u64>,
}

impl RunMetrics {
    /// Latency of one request in slots; instant iff zero.
    pub fn record_request(&mut self, arrival_slot: u64, served_slot: u64, post_warmup: bool) -> u64 {
        self.record_requests(arrival_slot, served_slot, 1, post_warmup)
    }

    /// Records `count` requests that arrived together and were served together.
    pub fn record_requests(&mut self, arrival_slot: u64, served_slot: u64, count: u64, post_warmup: bool) -> u64 {
        assert!(served_slot >= arrival_slot, "served before arrival");
        let latency = served_slot - arrival_slot;
        *self.latency_histogram.entry(latency).or_default() += count;
        self.requests_served += count;
        if latency == 0 {
            self.requests_instant += count;
            if post_warmup {
                self.post_warmup_instant += count;
            }
        }
        latency
    }

    /// Counts arrivals; unserved requests stay in the denominators.
    pub fn record_arrivals(&mut self, count: u64, post_warmup: bool) {
        self.requests_total += count;
        if post_warmup {
            self.post_warmup_requests += count;
        }
    }

    pub fn record_buffer(&mut self, key_blocks: u64) {
        self.buffer_samples += 1;
        self.buffer_sum += key_blocks;
        self.buffer_sum_sq += u128::from(key_blocks) * u128::from(key_blocks);
        self.buffer_max = self.buffer_max.max(key_blocks);
    }

    pub fn merge(&mut self, other: &RunMetrics) {
        for (&lat, &c) in &other.latency_histogram {
            *self.latency_histogram.entry(lat).or_default() += c;
        }
        self.requests_total += other.requests_total;
        self.requests_served += other.requests_served;
        self.requests_instant += other.requests_instant;
        self.post_warmup_requests += other.post_warmup_requests;
        self.post_warmup_instant += other.post_warmup_instant;
        self.apps_total += other.apps_total;
        self.apps_completed += other.apps_completed;
        self.buffer_samples += other.buffer_samples;
        self.buffer_sum += other.buffer_sum;
        self.buffer_sum_sq += other.buffer_sum_sq;
        self.buffer_max = self.buffer_max.max(other.buffer_max);
        self.relay_requests_sent += other.relay_requests_sent;
        self.key_blocks_delivered += other.key_blocks_delivered;
        if self.link_consumption.len() < other.link_consumption.len() {
            self.link_consumption.resize(other.link_consumption.len(), 0);
        }
        for (a, b) in self.link_consumption.iter_mut().zip(&other.link_consumption) {
            *a += b;
        }
    }

    fn ratio(num: u64, den: u64) -> f64 {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    }

    /// Instant requests over all requests, unserved ones included.
    pub fn instant_ratio(&self) -> f64 {
        Self::ratio(self.requests_instant, self.requests_total)
    }

    pub fn post_warmup_instant_ratio(&self) -> f64 {
        Self::ratio(self.post_warmup_instant, self.post_warmup_requests)
    }

    pub fn completion_ratio(&self) -> f64 {
        Self::ratio(self.apps_completed, self.apps_total)
    }

    /// Instant ratio recounted from the latency histogram.
    pub fn instant_ratio_from_histogram(&self) -> f64 {
        let instant = self.latency_histogram.get(&0).copied().unwrap_or(0);
        Self::ratio(instant, self.requests_total)
    }

    pub fn mean_latency_slots(&self) -> f64 {
        if self.requests_served == 0 {
            return 0.0;
        }
        let total: u64 = self.latency_histogram.iter().map(|(l, c)| l * c).sum();
        total as f64 / self.requests_served as f64
    }

    /// Smallest latency with at least `q` of served requests at or below it.
    pub fn latency_quantile_slots(&self, q: f64) -> Option<u64> {
        if self.requests_served == 0 {
            return None;
        }
        let target = (q * self.requests_served as f64).ceil().max(1.0) as u64;
        let mut seen = 0;
        for (&lat, &c) in &self.latency_histogram {
            seen += c;
            if seen >= target {
                return Some(lat);
            }
        }
        self.latency_histogram.keys().next_back().copied()
    }

    pub fn mean_buffer_blocks(&self) -> f64 {
        if self.buffer_samples == 0 {
            0.0
        } else {
            self.buffer_sum as f64 / self.buffer_samples as f64
        }
    }

    pub fn buffer_std_blocks(&self) -> f64 {
        if self.buffer_samples == 0 {
            return 0.0;
        }
        let n = self.buffer_samples as f64;
        let mean = self.buffer_sum as f64 / n;
        (self.buffer_sum_sq as f64 / n - mean * mean).max(0.0).sqrt()
    }

    pub fn mean_buffer_bytes(&self, block_bytes: u64) -> f64 {
        self.mean_buffer_blocks() * block_bytes as f64
    }

    pub fn max_buffer_bytes(&self, block_bytes: u64) -> u64 {
        self.buffer_max * block_bytes
    }

    pub fn total_key_consumption(&self) -> u64 {
        self.link_consumption.iter().sum()
    }

    pub fn summary(&self, slot_seconds: f64, block_bytes: u64) -> MetricsSummary {
        MetricsSummary {
            requests_total: self.requests_total,
            requests_served: self.requests_served,
            instant_ratio: self.instant_ratio(),
            post_warmup_instant_ratio: self.post_warmup_instant_ratio(),
            completion_ratio: self.completion_ratio(),
            mean_latency_s: self.mean_latency_slots() * slot_seconds,
            median_latency_s: self.latency_quantile_slots(0.5).map(|l| l as f64 * slot_seconds),
            p95_latency_s: self.latency_quantile_slots(0.95).map(|l| l as f64 * slot_seconds),
            max_latency_s: self
                .latency_histogram
                .keys()
                .next_back()
                .map(|&l| l as f64 * slot_seconds),
            mean_buffer_bytes: self.mean_buffer_bytes(block_bytes),
            max_buffer_bytes: self.max_buffer_bytes(block_bytes),
            mean_buffer_blocks: self.mean_buffer_blocks(),
            buffer_std_blocks: self.buffer_std_blocks(),
            relay_requests_sent: self.relay_requests_sent,
            key_blocks_delivered: self.key_blocks_delivered,
            total_key_consumption: self.total_key_consumption(),
        }
    }
}

/// Derived figures written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub requests_total: u64,
    pub requests_served: u64,
    pub instant_ratio: f64,
    pub post_warmup_instant_ratio: f64,
    pub completion_ratio: f64,
    pub mean_latency_s: f64,
    pub median_latency_s: Option<f64>,
    pub p95_latency_s: Option<f64>,
    pub max_latency_s: Option<f64>,
    pub mean_buffer_bytes: f64,
    pub max_buffer_bytes: u64,
    pub mean_buffer_blocks: f64,
    pub buffer_std_blocks: f64,
    pub relay_requests_sent: u64,
    pub key_blocks_delivered: u64,
    pub total_key_consumption: u64,
}

/// Requests of one application that arrived in the same slot and were served
/// in the same slot. `served_slot` is `None` if they were never served.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestGroup {
    pub app: usize,
    pub arrival_slot: u64,
    pub served_slot: Option<u64>,
    pub count: u64,
}

/// One row of `buffer.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferRow {
    pub slot: u64,
    pub source: u32,
    pub destination: u32,
    pub key_blocks: u64,
    pub backlog: u64,
    pub phase: String,
}

/// One row of `requests.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRow {
    pub request: u64,
    pub app: usize,
    pub source: u32,
    pub destination: u32,
    pub arrival_slot: u64,
    pub served_slot: Option<u64>,
    pub latency_s: Option<f64>,
}
