//! The hello-world experiment: agents and environment greet each other
//! through the bus and a logger records what the environment says.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bus::{Bus, BusExt, TopicKey};
use crate::process::{AppProcess, ProcessError, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloMessage {
    pub message: String,
}

#[derive(Debug, Default, Clone)]
pub struct HelloWorldController {
    count: u64,
}

impl HelloWorldController {
    pub fn say(&mut self) -> String {
        self.count += 1;
        format!("[HelloWorldController says hello {}]", self.count)
    }
}

#[derive(Debug, Clone)]
pub struct HelloWorldAgent {
    agent_id: String,
    delay_ms: u64,
    controller: HelloWorldController,
    count: u64,
    key: TopicKey,
}

impl HelloWorldAgent {
    pub fn new(agent_id: impl Into<String>, delay_ms: u64) -> Result<Self, crate::bus::BusError> {
        let agent_id = agent_id.into();
        let key = TopicKey::agent_message(&agent_id)?;
        Ok(HelloWorldAgent {
            agent_id,
            delay_ms,
            controller: HelloWorldController::default(),
            count: 0,
            key,
        })
    }
}

impl AppProcess for HelloWorldAgent {
    fn name(&self) -> &str {
        &self.agent_id
    }
    fn role(&self) -> Role {
        Role::Agent
    }
    fn delay_ms(&self) -> u64 {
        self.delay_ms
    }

    fn step(&mut self, bus: &dyn Bus, _now_ms: u64) -> Result<(), ProcessError> {
        let said = self.controller.say();
        self.count += 1;
        let message = format!("[{said} | [HelloWorldAgent says hello {}]]", self.count);
        if let Err(e) = bus.publish_as(&self.key, &HelloMessage { message }) {
            tracing::debug!(agent_id = %self.agent_id, error = %e, "hello not delivered");
        }
        Ok(())
    }

    fn ticks(&self) -> u64 {
        self.count
    }
}

#[derive(Debug, Clone)]
pub struct HelloWorldEnvironment {
    delay_ms: u64,
    count: u64,
}

impl HelloWorldEnvironment {
    pub fn new(delay_ms: u64) -> Self {
        HelloWorldEnvironment { delay_ms, count: 0 }
    }
}

impl AppProcess for HelloWorldEnvironment {
    fn name(&self) -> &str {
        "environment"
    }
    fn role(&self) -> Role {
        Role::Environment
    }
    fn delay_ms(&self) -> u64 {
        self.delay_ms
    }

    fn step(&mut self, bus: &dyn Bus, _now_ms: u64) -> Result<(), ProcessError> {
        self.count += 1;
        let mut parts: Vec<String> = match bus.scan_suffix("agent/", "/message") {
            Ok(envs) => envs
                .iter()
                .filter_map(|e| e.decode::<HelloMessage>().ok())
                .map(|m| m.message)
                .collect(),
            Err(_) => Vec::new(),
        };
        parts.push(format!("[HelloWorldEnvironment says hello {}]", self.count));
        let message = parts.join(" | ");
        if let Err(e) = bus.publish_as(&TopicKey::env_message(), &HelloMessage { message }) {
            tracing::debug!(error = %e, "environment hello not delivered");
        }
        Ok(())
    }

    fn ticks(&self) -> u64 {
        self.count
    }
}

/// Prints each new environment message and appends it to a text file.
#[derive(Debug)]
pub struct HelloWorldLogger {
    out: BufWriter<File>,
    last_seq: u64,
    ticks: u64,
    delay_ms: u64,
}

impl HelloWorldLogger {
    pub fn create(path: &Path, delay_ms: u64) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(HelloWorldLogger {
            out: BufWriter::new(File::create(path)?),
            last_seq: 0,
            ticks: 0,
            delay_ms,
        })
    }
}

impl AppProcess for HelloWorldLogger {
    fn name(&self) -> &str {
        "hello_world_logger"
    }
    fn role(&self) -> Role {
        Role::Logger
    }
    fn delay_ms(&self) -> u64 {
        self.delay_ms
    }

    fn step(&mut self, bus: &dyn Bus, _now_ms: u64) -> Result<(), ProcessError> {
        self.ticks += 1;
        let Ok(Some(env)) = bus.read(&TopicKey::env_message()) else {
            return Ok(());
        };
        if env.seq <= self.last_seq {
            return Ok(());
        }
        self.last_seq = env.seq;
        if let Ok(m) = env.decode::<HelloMessage>() {
            tracing::info!("{}", m.message);
            writeln!(self.out, "{}", m.message)
                .and_then(|_| self.out.flush())
                .map_err(|e| ProcessError::Fatal(format!("hello log write failed: {e}")))?;
        }
        Ok(())
    }

    fn finish(&mut self, _bus: &dyn Bus) -> Result<(), ProcessError> {
        self.out
            .flush()
            .map_err(|e| ProcessError::Fatal(format!("hello log flush failed: {e}")))
    }

    fn ticks(&self) -> u64 {
        self.ticks
    }
}
