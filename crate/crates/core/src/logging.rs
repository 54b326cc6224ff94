//! Loggers: processes that watch the bus and write what they see to disk.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bus::{Bus, TopicKey};
use crate::model::{Action, AgentState, FieldMap};
use crate::process::{AppProcess, ProcessError, Role};

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub t_ms: u64,
    pub agent_id: String,
    pub x: f64,
    pub y: f64,
    pub action: Action,
}

impl From<&AgentState> for TrajectoryRecord {
    fn from(s: &AgentState) -> Self {
        TrajectoryRecord {
            t_ms: s.timestamp,
            agent_id: s.agent_id.clone(),
            x: s.position.x,
            y: s.position.y,
            action: s.last_action,
        }
    }
}

/// One line of a field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRecord {
    pub t_ms: u64,
    pub agent_id: String,
    pub size: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogReadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Reads a line-delimited JSON file, skipping blank lines.
pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, LogReadError> {
    let io = |source| LogReadError::Io { path: path.to_owned(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| LogReadError::Parse {
            path: path.to_owned(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>, LogReadError> {
    read_records(path)
}

/// Newline-delimited JSON sink, flushed after every cycle.
#[derive(Debug)]
struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(JsonLines {
            path: path.to_owned(),
            out: BufWriter::new(File::create(path)?),
        })
    }

    fn write<T: Serialize>(&mut self, rec: &T) -> Result<(), ProcessError> {
        serde_json::to_writer(&mut self.out, rec)
            .map_err(std::io::Error::from)
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| self.fail(e))
    }

    fn flush(&mut self) -> Result<(), ProcessError> {
        self.out.flush().map_err(|e| self.fail(e))
    }

    fn fail(&self, e: std::io::Error) -> ProcessError {
        ProcessError::Fatal(format!("write to {} failed: {e}", self.path.display()))
    }
}

/// Appends one [`TrajectoryRecord`] per agent state seen on each cycle.
#[derive(Debug)]
pub struct PositionLogger {
    sink: JsonLines,
    delay_ms: u64,
    ticks: u64,
    records: u64,
}

impl PositionLogger {
    pub fn create(path: &Path, delay_ms: u64) -> std::io::Result<Self> {
        Ok(PositionLogger {
            sink: JsonLines::create(path)?,
            delay_ms,
            ticks: 0,
            records: 0,
        })
    }
}

impl AppProcess for PositionLogger {
    fn name(&self) -> &str {
        "position_logger"
    }
    fn role(&self) -> Role {
        Role::Logger
    }
    fn delay_ms(&self) -> u64 {
        self.delay_ms
    }

    fn step(&mut self, bus: &dyn Bus, _now_ms: u64) -> Result<(), ProcessError> {
        self.ticks += 1;
        let envs = match bus.scan_suffix("agent/", "/state") {
            Ok(envs) => envs,
            Err(e) => {
                tracing::debug!(error = %e, "position logger skipped a cycle");
                return Ok(());
            }
        };
        for env in &envs {
            if let Ok(state) = env.decode::<AgentState>() {
                self.sink.write(&TrajectoryRecord::from(&state))?;
                self.records += 1;
            }
        }
        self.sink.flush()
    }

    fn finish(&mut self, _bus: &dyn Bus) -> Result<(), ProcessError> {
        self.sink.flush()
    }

    fn ticks(&self) -> u64 {
        self.ticks
    }

    fn exit_detail(&self) -> Option<serde_json::Value> {
        Some(serde_json::json!({ "records": self.records }))
    }
}

/// Records every new field published by one agent.
#[derive(Debug)]
pub struct FieldLogger {
    sink: JsonLines,
    target: String,
    key: TopicKey,
    delay_ms: u64,
    ticks: u64,
    last_seq: u64,
}

impl FieldLogger {
    pub fn create(path: &Path, target: &str, delay_ms: u64) -> std::io::Result<Self> {
        let key = TopicKey::agent_field(target)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
        Ok(FieldLogger {
            sink: JsonLines::create(path)?,
            target: target.to_owned(),
            key,
            delay_ms,
            ticks: 0,
            last_seq: 0,
        })
    }
}

impl AppProcess for FieldLogger {
    fn name(&self) -> &str {
        "field_logger"
    }
    fn role(&self) -> Role {
        Role::Logger
    }
    fn delay_ms(&self) -> u64 {
        self.delay_ms
    }

    fn step(&mut self, bus: &dyn Bus, _now_ms: u64) -> Result<(), ProcessError> {
        self.ticks += 1;
        let Ok(Some(env)) = bus.read(&self.key) else {
            return Ok(());
        };
        if env.seq <= self.last_seq {
            return Ok(());
        }
        self.last_seq = env.seq;
        if let Ok(map) = env.decode::<FieldMap>() {
            self.sink.write(&FieldRecord {
                t_ms: env.published_at,
                agent_id: self.target.clone(),
                size: map.size,
                values: map.values,
            })?;
            self.sink.flush()?;
        }
        Ok(())
    }

    fn finish(&mut self, _bus: &dyn Bus) -> Result<(), ProcessError> {
        self.sink.flush()
    }

    fn ticks(&self) -> u64 {
        self.ticks
    }
}

/// Closest approach observed by [`ProximityMonitor`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProximitySummary {
    pub samples: u64,
    pub min_distance: Option<f64>,
    pub at_ms: Option<u64>,
    pub pair: Option<(String, String)>,
}

/// Watches agent states on the bus and tracks the smallest pairwise
/// distance among states published at the same instant. Writes a JSON
/// summary on exit.
#[derive(Debug)]
pub struct ProximityMonitor {
    path: PathBuf,
    delay_ms: u64,
    from_ms: u64,
    ticks: u64,
    summary: ProximitySummary,
}

impl ProximityMonitor {
    /// Samples taken before `from_ms` are ignored.
    pub fn create(path: &Path, delay_ms: u64, from_ms: u64) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        File::create(path)?;
        Ok(ProximityMonitor {
            path: path.to_owned(),
            delay_ms,
            from_ms,
            ticks: 0,
            summary: ProximitySummary::default(),
        })
    }

    pub fn summary(&self) -> &ProximitySummary {
        &self.summary
    }
}

impl AppProcess for ProximityMonitor {
    fn name(&self) -> &str {
        "proximity_monitor"
    }
    fn role(&self) -> Role {
        Role::Logger
    }
    fn delay_ms(&self) -> u64 {
        self.delay_ms
    }

    fn step(&mut self, bus: &dyn Bus, _now_ms: u64) -> Result<(), ProcessError> {
        self.ticks += 1;
        let Ok(envs) = bus.scan_suffix("agent/", "/state") else {
            return Ok(());
        };
        let states: Vec<AgentState> = envs
            .iter()
            .filter_map(|e| e.decode().ok())
            .collect();
        for (i, a) in states.iter().enumerate() {
            for b in &states[i + 1..] {
                if a.timestamp != b.timestamp || a.timestamp < self.from_ms {
                    continue;
                }
                let d = a.position.distance(&b.position);
                self.summary.samples += 1;
                if self.summary.min_distance.is_none_or(|m| d < m) {
                    self.summary.min_distance = Some(d);
                    self.summary.at_ms = Some(a.timestamp);
                    self.summary.pair = Some((a.agent_id.clone(), b.agent_id.clone()));
                }
            }
        }
        Ok(())
    }

    fn finish(&mut self, _bus: &dyn Bus) -> Result<(), ProcessError> {
        let text = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        std::fs::write(&self.path, text)
            .map_err(|e| ProcessError::Fatal(format!("write to {} failed: {e}", self.path.display())))
    }

    fn ticks(&self) -> u64 {
        self.ticks
    }

    fn exit_detail(&self) -> Option<serde_json::Value> {
        serde_json::to_value(&self.summary).ok()
    }
}
