//! Command-line parsing and the subcommands.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};

use swarmfield_core::bus::TcpBus;
use swarmfield_core::clock::OffsetClock;
use swarmfield_core::config::load_config;
use swarmfield_core::logging::read_trajectory;
use swarmfield_core::metrics::{compute_metrics, MetricsWindow};
use swarmfield_core::process::run_wall_loop;

use crate::orchestrator::{self, ChildSpec, ExitReport, LaunchOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Grace period children get after the stop flag before being forced.
const SHUTDOWN_TIMEOUT: Duration = Duration::from_secs(3);

#[derive(Debug, Parser)]
#[command(name = "swarmfield", version, about = "Field-modulation swarm experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment until the duration elapses or Ctrl-C.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many seconds; runs until interrupted otherwise.
        #[arg(long)]
        duration_s: Option<f64>,
        /// Advance a simulated clock instead of sleeping. Needs a duration.
        #[arg(long, requires = "duration_s")]
        sim_clock: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Start every agent, logger and environment as its own OS process.
        #[arg(long, conflicts_with = "sim_clock")]
        processes: bool,
    },
    /// Print metrics of a trajectory file as JSON.
    Metrics {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        from_s: Option<f64>,
        #[arg(long)]
        to_s: Option<f64>,
    },
    /// Check a config file and exit.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Internal: one child of a multi-process run.
    #[command(hide = true)]
    Child {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        role: String,
        #[arg(long)]
        bus: String,
        #[arg(long, default_value_t = 0)]
        offset_ms: u64,
    },
}

fn seconds_to_ms(s: f64) -> Option<u64> {
    (s.is_finite() && s >= 0.0).then(|| (s * 1000.0).round() as u64)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I, interrupted: Arc<AtomicBool>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Validate { config } => match load_config(&config) {
            Ok(_) => {
                println!("{}: ok", config.display());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_USAGE
            }
        },
        Command::Metrics {
            trajectory,
            config,
            from_s,
            to_s,
        } => metrics(trajectory, config, from_s, to_s),
        Command::Run {
            config,
            duration_s,
            sim_clock,
            seed,
            output_dir,
            processes,
        } => run(config, duration_s, sim_clock, seed, output_dir, processes, &interrupted),
        Command::Child {
            run_dir,
            role,
            bus,
            offset_ms,
        } => child(run_dir, &role, &bus, offset_ms),
    }
}

fn metrics(trajectory: PathBuf, config: PathBuf, from_s: Option<f64>, to_s: Option<f64>) -> i32 {
    let config = match load_config(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut bounds = [None, None];
    for (slot, s) in bounds.iter_mut().zip([from_s, to_s]) {
        if let Some(s) = s {
            let Some(ms) = seconds_to_ms(s) else {
                eprintln!("error: window bounds must be non-negative seconds");
                return EXIT_USAGE;
            };
            *slot = Some(ms);
        }
    }
    print_metrics(&trajectory, &config, MetricsWindow::new(bounds[0], bounds[1]))
}

fn print_metrics(trajectory: &std::path::Path, config: &swarmfield_core::ExperimentConfig, window: MetricsWindow) -> i32 {
    match read_trajectory(trajectory) {
        Ok(records) => {
            let report = compute_metrics(&records, config, window);
            // A closed pipe (e.g. `| head`) is not an error worth a panic.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn summarize(report: &ExitReport) -> i32 {
    for c in &report.children {
        tracing::info!(child = %c.name, ticks = c.ticks, status = ?c.status, "child exited");
    }
    println!("{}", report.run_dir.display());
    if report.all_clean() {
        EXIT_OK
    } else {
        eprintln!("error: not every child exited cleanly, see {}", report.run_dir.join(orchestrator::EXIT_REPORT_FILE).display());
        EXIT_RUNTIME
    }
}

fn run(
    config: PathBuf,
    duration_s: Option<f64>,
    sim_clock: bool,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    processes: bool,
    interrupted: &AtomicBool,
) -> i32 {
    let config = match load_config(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let duration_ms = match duration_s.map(seconds_to_ms) {
        Some(None) => {
            eprintln!("error: --duration-s must be non-negative");
            return EXIT_USAGE;
        }
        Some(Some(ms)) => Some(ms),
        None => None,
    };
    let opts = LaunchOptions {
        seed,
        output_dir,
        duration_ms,
        processes,
        ..LaunchOptions::default()
    };

    if sim_clock {
        return match orchestrator::run_simulated(&config, &opts) {
            Ok(report) => summarize(&report),
            Err(e) => launch_failure(&e),
        };
    }

    let mut handle = match orchestrator::launch(&config, &opts) {
        Ok(h) => h,
        Err(e) => return launch_failure(&e),
    };
    tracing::info!(run_id = %handle.run_id, dir = %handle.run_dir.display(), "run started");
    let deadline = duration_ms.map(|ms| handle.started + Duration::from_millis(ms));
    loop {
        if interrupted.load(Ordering::SeqCst) {
            tracing::info!("interrupted, stopping");
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) || handle.stop_requested() {
            break;
        }
        thread::sleep(Duration::from_millis(20));
    }
    let report = orchestrator::shutdown(&mut handle, SHUTDOWN_TIMEOUT);
    summarize(&report)
}

fn launch_failure(e: &orchestrator::LaunchError) -> i32 {
    eprintln!("error: {e}");
    if e.is_config_error() {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

fn child(run_dir: PathBuf, role: &str, bus_addr: &str, offset_ms: u64) -> i32 {
    let Some(spec) = ChildSpec::parse(role) else {
        eprintln!("error: unknown role {role:?}");
        return EXIT_USAGE;
    };
    let manifest = match orchestrator::read_manifest(&run_dir) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    let mut process = match orchestrator::build_child(&manifest.config, spec, &run_dir, &manifest.initial_positions) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    let bus = match TcpBus::connect(bus_addr) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: bus {bus_addr}: {e}");
            return EXIT_RUNTIME;
        }
    };
    let clock = OffsetClock::new(offset_ms);
    let summary = run_wall_loop(process.as_mut(), &bus, &clock);
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string(&summary).expect("summary serializes"));
    let _ = out.flush();
    if summary.is_clean() {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    }
}
