//! App processes and the two ways of driving them.
//!
//! Every agent, environment and logger is an [`AppProcess`]: a unit of work
//! executed once per `delay_ms`. [`run_wall_loop`] drives one process on its
//! own thread in real time. [`SimScheduler`] drives many processes in
//! simulated time, deterministically, on the calling thread.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bus::Bus;
use crate::clock::{Clock, SimClock};

/// Consecutive failed stop checks after which a wall loop gives up.
const MAX_STOP_CHECK_FAILURES: u32 = 50;
/// Longest sleep between stop checks in the wall-clock loop.
const STOP_POLL: Duration = Duration::from_millis(20);

/// Ordering class within one simulated instant: environments publish first,
/// agents act on fresh environment state, loggers record the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Environment,
    Agent,
    Logger,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProcessError {
    /// The process cannot continue; the run is stopped.
    #[error("{0}")]
    Fatal(String),
}

pub trait AppProcess: Send {
    fn name(&self) -> &str;
    fn role(&self) -> Role;
    fn delay_ms(&self) -> u64;

    /// One loop iteration at run time `now_ms`.
    fn step(&mut self, bus: &dyn Bus, now_ms: u64) -> Result<(), ProcessError>;

    /// Called once after the loop ends, before the process reports its exit.
    fn finish(&mut self, _bus: &dyn Bus) -> Result<(), ProcessError> {
        Ok(())
    }

    /// Completed iterations.
    fn ticks(&self) -> u64;

    /// Extra information attached to the exit report.
    fn exit_detail(&self) -> Option<Value> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExitStatus {
    Clean,
    Failed { reason: String },
    /// Did not stop in time and was abandoned or killed.
    Forced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitSummary {
    pub name: String,
    pub ticks: u64,
    #[serde(flatten)]
    pub status: ExitStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ExitSummary {
    fn of(process: &dyn AppProcess, status: ExitStatus) -> Self {
        ExitSummary {
            name: process.name().to_owned(),
            ticks: process.ticks(),
            status,
            detail: process.exit_detail(),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.status == ExitStatus::Clean
    }
}

fn finish(process: &mut dyn AppProcess, bus: &dyn Bus, status: ExitStatus) -> ExitSummary {
    let status = match (process.finish(bus), status) {
        (Err(ProcessError::Fatal(reason)), ExitStatus::Clean) => ExitStatus::Failed { reason },
        (_, s) => s,
    };
    ExitSummary::of(process, status)
}

/// Runs `process` every `delay_ms` of wall time until the stop flag is
/// raised. A fatal step error raises the stop flag for everyone.
pub fn run_wall_loop(process: &mut dyn AppProcess, bus: &dyn Bus, clock: &dyn Clock) -> ExitSummary {
    let delay = Duration::from_millis(process.delay_ms());
    let mut next = Instant::now();
    let mut failed_checks = 0;
    loop {
        match bus.stop_requested() {
            Ok(true) => break,
            Ok(false) => failed_checks = 0,
            Err(e) => {
                failed_checks += 1;
                tracing::debug!(process = process.name(), error = %e, "stop check failed");
                if failed_checks >= MAX_STOP_CHECK_FAILURES {
                    let reason = format!("bus unreachable: {e}");
                    return finish(process, bus, ExitStatus::Failed { reason });
                }
            }
        }
        if let Err(ProcessError::Fatal(reason)) = process.step(bus, clock.now_ms()) {
            tracing::error!(process = process.name(), %reason, "process failed, stopping run");
            let _ = bus.raise_stop();
            return finish(process, bus, ExitStatus::Failed { reason });
        }
        next += delay;
        let now = Instant::now();
        if next <= now {
            // Overran; do not try to catch up with a burst of iterations.
            next = now;
        }
        // Sleep in slices so a long delay does not hold up shutdown.
        loop {
            let now = Instant::now();
            if now >= next {
                break;
            }
            thread::sleep((next - now).min(STOP_POLL));
            if next > Instant::now() && matches!(bus.stop_requested(), Ok(true)) {
                return finish(process, bus, ExitStatus::Clean);
            }
        }
    }
    finish(process, bus, ExitStatus::Clean)
}

/// Deterministic lockstep driver over simulated time.
///
/// At each instant the due processes run in role order (environment, agents,
/// loggers), and within a role in insertion order. A process with delay `d`
/// runs at `0, d, 2d, ...`; with a duration `D` it runs exactly `floor(D / d)`
/// times.
pub struct SimScheduler {
    clock: Arc<SimClock>,
    children: Vec<Box<dyn AppProcess>>,
}

impl SimScheduler {
    pub fn new(clock: Arc<SimClock>) -> Self {
        SimScheduler {
            clock,
            children: Vec::new(),
        }
    }

    pub fn clock(&self) -> &Arc<SimClock> {
        &self.clock
    }

    pub fn add(&mut self, process: Box<dyn AppProcess>) {
        self.children.push(process);
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    /// Runs until the stop flag is raised or, when given, `duration_ms` of
    /// simulated time has elapsed. Returns one summary per process, in
    /// insertion order.
    pub fn run(mut self, bus: &dyn Bus, duration_ms: Option<u64>) -> Vec<ExitSummary> {
        let n = self.children.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (self.children[i].role(), i));
        let delays: Vec<u64> = self.children.iter().map(|c| c.delay_ms().max(1)).collect();
        let mut next_due = vec![0u64; n];
        let mut status: Vec<Option<ExitStatus>> = vec![None; n];

        let active = |i: usize, next_due: &[u64], status: &[Option<ExitStatus>]| {
            status[i].is_none()
                && duration_ms.is_none_or(|d| next_due[i].saturating_add(delays[i]) <= d)
        };

        while let Some(now) = (0..n)
            .filter(|&i| active(i, &next_due, &status))
            .map(|i| next_due[i])
            .min()
        {
            self.clock.set(now);
            if bus.stop_requested().unwrap_or(false) {
                break;
            }
            for &i in &order {
                if next_due[i] != now || !active(i, &next_due, &status) {
                    continue;
                }
                if let Err(ProcessError::Fatal(reason)) = self.children[i].step(bus, now) {
                    tracing::error!(process = self.children[i].name(), %reason, "process failed, stopping run");
                    let _ = bus.raise_stop();
                    status[i] = Some(ExitStatus::Failed { reason });
                }
                next_due[i] += delays[i];
            }
        }

        self.children
            .iter_mut()
            .zip(status)
            .map(|(child, st)| finish(child.as_mut(), bus, st.unwrap_or(ExitStatus::Clean)))
            .collect()
    }
}
