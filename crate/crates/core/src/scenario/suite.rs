use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{run_config, write_run_dir, ScenarioError};

pub const SUITE_TABLE: &str = "suite.csv";

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub file: String,
    pub name: String,
    pub scheme: String,
    pub status: String,
    pub instant_ratio: Option<f64>,
    pub post_warmup_instant_ratio: Option<f64>,
    pub completion_ratio: Option<f64>,
    pub mean_buffer_bytes: Option<f64>,
    pub max_buffer_bytes: Option<u64>,
    pub mean_latency_s: Option<f64>,
    pub total_key_consumption: Option<u64>,
    pub check: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }

    /// Rows whose pinned bounds were violated.
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.check == "fail").count()
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub out_root: PathBuf,
    pub jobs: usize,
    pub seed: Option<u64>,
}

/// Scenario files of a directory, sorted by name.
pub fn scenario_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

fn run_one(path: &Path, opts: &SuiteOptions) -> SuiteRow {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = path
        .file_stem()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let outcome = (|| -> Result<_, ScenarioError> {
        let mut config = super::ScenarioConfig::load(path)?;
        if let Some(seed) = opts.seed {
            config.seed = seed;
        }
        let result = run_config(&config, path.parent())?;
        let summary = write_run_dir(&opts.out_root.join(&stem), &config, &result)?;
        Ok(summary)
    })();
    match outcome {
        Ok(s) => SuiteRow {
            file,
            name: s.name,
            scheme: s.scheme,
            status: "ok".into(),
            instant_ratio: Some(s.metrics.instant_ratio),
            post_warmup_instant_ratio: Some(s.metrics.post_warmup_instant_ratio),
            completion_ratio: Some(s.metrics.completion_ratio),
            mean_buffer_bytes: Some(s.metrics.mean_buffer_bytes),
            max_buffer_bytes: Some(s.metrics.max_buffer_bytes),
            mean_latency_s: Some(s.metrics.mean_latency_s),
            total_key_consumption: Some(s.metrics.total_key_consumption),
            check: match &s.check {
                None => String::new(),
                Some(c) if c.passed => "pass".into(),
                Some(_) => "fail".into(),
            },
            error: s.check.map(|c| c.violations.join("; ")).unwrap_or_default(),
        },
        Err(e) => {
            log::error!("{file}: {e}");
            SuiteRow {
                file,
                name: stem,
                scheme: String::new(),
                status: "failed".into(),
                instant_ratio: None,
                post_warmup_instant_ratio: None,
                completion_ratio: None,
                mean_buffer_bytes: None,
                max_buffer_bytes: None,
                mean_latency_s: None,
                total_key_consumption: None,
                check: String::new(),
                error: e.to_string(),
            }
        }
    }
}

/// Runs every scenario of `dir` on a pool of `opts.jobs` workers and writes
/// the comparison table. A failing scenario becomes a failed row.
pub fn run_suite(dir: &Path, opts: &SuiteOptions) -> Result<SuiteReport, ScenarioError> {
    let files = scenario_files(dir).map_err(|source| ScenarioError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    if files.is_empty() {
        log::warn!("no scenario files in {}", dir.display());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| ScenarioError::Io {
            path: dir.to_path_buf(),
            source: io::Error::other(e),
        })?;
    let rows: Vec<SuiteRow> = pool.install(|| files.par_iter().map(|f| run_one(f, opts)).collect());
    let report = SuiteReport { rows };

    fs::create_dir_all(&opts.out_root).map_err(|source| ScenarioError::Io {
        path: opts.out_root.clone(),
        source,
    })?;
    let table = opts.out_root.join(SUITE_TABLE);
    let write = || -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(&table)?;
        if report.rows.is_empty() {
            w.write_record([
                "file",
                "name",
                "scheme",
                "status",
                "instant_ratio",
                "post_warmup_instant_ratio",
                "completion_ratio",
                "mean_buffer_bytes",
                "max_buffer_bytes",
                "mean_latency_s",
                "total_key_consumption",
                "check",
                "error",
            ])?;
        }
        for row in &report.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| ScenarioError::Io {
        path: table.clone(),
        source: io::Error::other(e),
    })?;
    Ok(report)
}
