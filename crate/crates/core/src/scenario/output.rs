use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::config::{CheckBounds, ScenarioConfig};
use super::sim::{AppSummary, PairSummary, RunResult};
use crate::metrics::{MetricsSummary, RequestRow};

pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REQUESTS_FILE: &str = "requests.csv";
pub const BUFFER_FILE: &str = "buffer.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub passed: bool,
    pub violations: Vec<String>,
}

impl CheckOutcome {
    pub fn evaluate(bounds: &CheckBounds, s: &MetricsSummary) -> Self {
        let mut violations = Vec::new();
        let mut min = |name: &str, bound: Option<f64>, value: f64| {
            if let Some(b) = bound {
                if value < b {
                    violations.push(format!("{name} {value:.4} below {b}"));
                }
            }
        };
        min("instant_ratio", bounds.min_instant_ratio, s.instant_ratio);
        min(
            "post_warmup_instant_ratio",
            bounds.min_post_warmup_instant_ratio,
            s.post_warmup_instant_ratio,
        );
        min("completion_ratio", bounds.min_completion_ratio, s.completion_ratio);
        if let Some(b) = bounds.max_mean_buffer_bytes {
            if s.mean_buffer_bytes > b {
                violations.push(format!("mean_buffer_bytes {:.1} above {b}", s.mean_buffer_bytes));
            }
        }
        Self {
            passed: violations.is_empty(),
            violations,
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub scheme: String,
    pub slot_seconds: f64,
    pub horizon_slots: u64,
    pub metrics: MetricsSummary,
    pub link_consumption: Vec<u64>,
    pub link_requirement: Vec<u64>,
    pub delivered_jobs: u64,
    pub pairs: Vec<PairSummary>,
    pub apps: Vec<AppSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckOutcome>,
}

impl RunSummary {
    pub fn new(config: &ScenarioConfig, result: &RunResult) -> Self {
        let metrics = result.summary();
        Self {
            name: result.name.clone(),
            seed: result.seed,
            scheme: config.controller.label(),
            slot_seconds: result.slot_seconds,
            horizon_slots: result.slots,
            check: config.check.as_ref().map(|b| CheckOutcome::evaluate(b, &metrics)),
            metrics,
            link_consumption: result.metrics.link_consumption.clone(),
            link_requirement: result.link_requirement.clone(),
            delivered_jobs: result.delivered_jobs,
            pairs: result.pairs.clone(),
            apps: result.apps.clone(),
        }
    }
}

fn csv_error(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// One row per request, served or not, ordered by arrival.
pub fn write_requests<W: io::Write>(w: W, result: &RunResult) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut id = 0;
    for g in &result.requests {
        let app = &result.apps[g.app];
        let latency_s = g.served_slot.map(|s| {
            let secs = (s - g.arrival_slot) as f64 * result.slot_seconds;
            (secs * 1e6).round() / 1e6
        });
        for _ in 0..g.count {
            out.serialize(RequestRow {
                request: id,
                app: g.app,
                source: app.source,
                destination: app.destination,
                arrival_slot: g.arrival_slot,
                served_slot: g.served_slot,
                latency_s,
            })
            .map_err(csv_error)?;
            id += 1;
        }
    }
    out.flush()
}

/// One row per slot per active buffering unit.
pub fn write_buffer_trace<W: io::Write>(w: W, result: &RunResult) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in &result.buffer_rows {
        out.serialize(row).map_err(csv_error)?;
    }
    out.flush()
}

/// Writes exactly the config snapshot, summary, request and buffer files.
pub fn write_run_dir(dir: &Path, config: &ScenarioConfig, result: &RunResult) -> io::Result<RunSummary> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml())?;
    let summary = RunSummary::new(config, result);
    let json = serde_json::to_string_pretty(&summary).map_err(io::Error::other)?;
    fs::write(dir.join(SUMMARY_FILE), json + "\n")?;
    write_requests(io::BufWriter::new(fs::File::create(dir.join(REQUESTS_FILE))?), result)?;
    write_buffer_trace(io::BufWriter::new(fs::File::create(dir.join(BUFFER_FILE))?), result)?;
    Ok(summary)
}
