use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qkd_keysupply::analytics;
use qkd_keysupply::netsim::{route, Topology};
use qkd_keysupply::oracle::{self, DelayShape, OracleCase, RequestProcess};
use qkd_keysupply::scenario::{self, ScenarioConfig, SuiteOptions};

#[derive(Parser)]
#[command(name = "keysupply", version, about = "Buffered end-to-end key supply simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutputArgs {
    /// Output root; run directories are created beneath it.
    #[arg(long, short, env = "KEYSUPPLY_OUT", default_value = "runs")]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run every scenario file of a directory.
    Suite {
        dir: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        /// Worker threads.
        #[arg(long, short, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Brute-force cross-checks of the analytics.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Topology utilities.
    Topology {
        #[command(subcommand)]
        command: TopologyCommand,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Compare the closed-form sigma with a Monte Carlo estimate.
    SigmaDelta {
        /// poisson:L, moving-sum:L or ar1:MEAN,RHO,SD
        #[arg(long, default_value = "poisson:5")]
        process: RequestProcess,
        /// deterministic:K, uniform:K, triangular:K or weights:W1,W2,...
        #[arg(long, default_value = "deterministic:2")]
        delays: DelayShape,
        /// Window length in slots; defaults to 50 K.
        #[arg(long)]
        gap: Option<usize>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run a seeded randomized matrix of this many cases instead.
        #[arg(long)]
        matrix: Option<usize>,
    },
}

#[derive(Subcommand)]
enum TopologyCommand {
    /// Parse and validate an edge-list file.
    Check {
        file: PathBuf,
        /// Also print the route between two nodes.
        #[arg(long, num_args = 2, value_names = ["SOURCE", "DESTINATION"])]
        route: Option<Vec<u32>>,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn run(config_path: &Path, output: &OutputArgs) -> Result<bool, String> {
    let mut config = ScenarioConfig::load(config_path).map_err(|e| e.to_string())?;
    if let Some(seed) = output.seed {
        config.seed = seed;
    }
    let result = scenario::run_config(&config, config_path.parent()).map_err(|e| e.to_string())?;
    let dir = output.out.join(&config.name);
    let summary = scenario::write_run_dir(&dir, &config, &result).map_err(|e| format!("{}: {e}", dir.display()))?;
    let m = &summary.metrics;
    println!(
        "{} [{}] seed {}: instant {:.4} (post-warmup {:.4}), completion {:.3}, mean buffer {:.1} B, max buffer {} B -> {}",
        summary.name,
        summary.scheme,
        summary.seed,
        m.instant_ratio,
        m.post_warmup_instant_ratio,
        m.completion_ratio,
        m.mean_buffer_bytes,
        m.max_buffer_bytes,
        dir.display()
    );
    match summary.check {
        Some(c) if !c.passed => {
            for v in &c.violations {
                eprintln!("check failed: {v}");
            }
            Ok(false)
        }
        _ => Ok(true),
    }
}

fn suite(dir: &Path, output: &OutputArgs, jobs: usize) -> Result<bool, String> {
    let opts = SuiteOptions {
        out_root: output.out.clone(),
        jobs,
        seed: output.seed,
    };
    let report = scenario::run_suite(dir, &opts).map_err(|e| e.to_string())?;
    println!(
        "{:<44} {:<10} {:>8} {:>8} {:>8} {:>12} {:>6}",
        "scenario", "scheme", "instant", "post-wu", "complete", "mean_buf_B", "check"
    );
    for r in &report.rows {
        if r.status == "ok" {
            println!(
                "{:<44} {:<10} {:>8.4} {:>8.4} {:>8.3} {:>12.1} {:>6}",
                r.name,
                r.scheme,
                r.instant_ratio.unwrap_or(0.0),
                r.post_warmup_instant_ratio.unwrap_or(0.0),
                r.completion_ratio.unwrap_or(0.0),
                r.mean_buffer_bytes.unwrap_or(0.0),
                r.check
            );
        } else {
            println!("{:<44} FAILED: {}", r.name, r.error);
        }
    }
    if report.rows.is_empty() {
        eprintln!("warning: no scenario files in {}", dir.display());
    }
    println!(
        "{} scenarios, {} failed, {} bound violations; table in {}",
        report.rows.len(),
        report.failed(),
        report.violations(),
        output.out.join(scenario::SUITE_TABLE).display()
    );
    Ok(report.violations() == 0)
}

fn sigma_delta_line(case: &OracleCase, gap: Option<usize>, trials: u64, seed: u64) -> Result<bool, String> {
    let delays = case.delays.distribution()?;
    let analytic = case.analytic_sigma().map_err(|e| e.to_string())?;
    let gap = gap.unwrap_or(oracle::DEFAULT_GAP_FACTOR * delays.max_delay());
    let est = oracle::mc_sigma_delta(&case.process, &delays, gap, trials, seed);
    let rel = (est.sd - analytic).abs() / analytic;
    let mean_ok = est.mean.abs() <= 3.0 * est.mean_stderr();
    let ok = rel <= 0.05 && mean_ok;
    println!(
        "{:<22} {:<16} analytic {:>9.4}  monte-carlo {:>9.4}  rel {:>6.4}  mean {:>+8.4}  {}",
        case.process.to_string(),
        case.delays.to_string(),
        analytic,
        est.sd,
        rel,
        est.mean,
        if ok { "ok" } else { "MISMATCH" }
    );
    Ok(ok)
}

fn oracle_cmd(cmd: &OracleCommand) -> Result<bool, String> {
    let OracleCommand::SigmaDelta {
        process,
        delays,
        gap,
        trials,
        seed,
        matrix,
    } = cmd;
    if let Some(n) = matrix {
        let mut all = true;
        for (i, case) in oracle::randomized_matrix(*seed, *n).iter().enumerate() {
            all &= sigma_delta_line(case, *gap, *trials, seed.wrapping_add(i as u64))?;
        }
        return Ok(all);
    }
    let case = OracleCase {
        process: *process,
        delays: delays.clone(),
    };
    let ok = sigma_delta_line(&case, *gap, *trials, *seed)?;
    let l = analytics::required_buffer(case.analytic_sigma().map_err(|e| e.to_string())?, 1e-6)
        .map_err(|e| e.to_string())?;
    println!("buffer for a 1e-6 shortfall probability: {l:.4} blocks");
    Ok(ok)
}

fn topology_cmd(cmd: &TopologyCommand) -> Result<bool, String> {
    let TopologyCommand::Check { file, route: pair } = cmd;
    let text = std::fs::read_to_string(file).map_err(|e| format!("{}: {e}", file.display()))?;
    let topo = Topology::parse_edge_list(&text).map_err(|e| format!("{}: {e}", file.display()))?;
    println!(
        "{}: {} nodes, {} links, connected",
        file.display(),
        topo.nodes().count(),
        topo.links().len()
    );
    if let Some(p) = pair {
        let path = route(&topo, p[0], p[1]).map_err(|e| e.to_string())?;
        let nodes: Vec<String> = path.nodes.iter().map(u32::to_string).collect();
        println!("route {} -> {}: {} (cost {})", p[0], p[1], nodes.join("-"), path.cost);
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, output } => run(config, output),
        Command::Suite { dir, output, jobs } => suite(dir, output, *jobs),
        Command::Oracle { command } => oracle_cmd(command),
        Command::Topology { command } => topology_cmd(command),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
