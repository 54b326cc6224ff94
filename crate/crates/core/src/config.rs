//! Declarative experiment description.
//!
//! One JSON document describes a whole run: bus transport, environment,
//! agents with their controllers, loggers and the optional UI gateway.
//! Unknown keys are rejected; every error names the offending key path.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bus::TopicKey;
use crate::controllers::{ControllerSpec, RewardRegistry};
use crate::field::ModulationParams;
use crate::model::{Position2D, SpaceLimits};

pub const DEFAULT_FIELD_SIZE: usize = 84;
pub const DEFAULT_CLIP_FACTOR: f64 = 2.0;
pub const DEFAULT_VICINITY: f64 = 0.5;
pub const DEFAULT_VELOCITY: f64 = 0.35;
pub const DEFAULT_HEIGHT: f64 = 0.55;
pub const DEFAULT_SNAPSHOT_HZ: f64 = 10.0;
pub const BUS_ADDR_ENV: &str = "SWARMFIELD_BUS_ADDR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed config at `{path}`: {message}")]
    Malformed { path: String, message: String },
    #[error("invalid config at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Key path of the offending entry, if any.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Malformed { path, .. } | ConfigError::Invalid { path, .. } => Some(path),
            ConfigError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bus: BusSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentConfig>,
    #[serde(default)]
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub loggers: Vec<LoggerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway: Option<GatewayConfig>,
    /// Root under which each run gets its own directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case", deny_unknown_fields)]
pub enum BusSpec {
    #[default]
    Memory,
    Tcp {
        /// `host:port` to listen on; falls back to `SWARMFIELD_BUS_ADDR`,
        /// then `127.0.0.1:0`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        address: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentConfig {
    FieldModulation(FieldEnvironmentConfig),
    HelloWorld(HelloEnvironmentConfig),
}

impl EnvironmentConfig {
    pub fn delay_ms(&self) -> u64 {
        match self {
            EnvironmentConfig::FieldModulation(c) => c.delay_ms,
            EnvironmentConfig::HelloWorld(c) => c.delay_ms,
        }
    }

    pub fn limits(&self) -> Option<SpaceLimits> {
        match self {
            EnvironmentConfig::FieldModulation(c) => Some(c.limits),
            EnvironmentConfig::HelloWorld(_) => None,
        }
    }

    pub fn as_field_modulation(&self) -> Option<&FieldEnvironmentConfig> {
        match self {
            EnvironmentConfig::FieldModulation(c) => Some(c),
            EnvironmentConfig::HelloWorld(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEnvironmentConfig {
    pub delay_ms: u64,
    pub limits: SpaceLimits,
    #[serde(default)]
    pub modulation_points: Vec<Position2D>,
    pub rotation_center: Position2D,
    /// Counter-clockwise rotation applied every tick.
    #[serde(default)]
    pub theta_degrees: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloEnvironmentConfig {
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentConfig {
    #[serde(rename = "virtual_drone_2d")]
    VirtualDrone2D(DroneConfig),
    HelloWorld(HelloAgentConfig),
}

impl AgentConfig {
    pub fn agent_id(&self) -> &str {
        match self {
            AgentConfig::VirtualDrone2D(c) => &c.agent_id,
            AgentConfig::HelloWorld(c) => &c.agent_id,
        }
    }

    pub fn delay_ms(&self) -> u64 {
        match self {
            AgentConfig::VirtualDrone2D(c) => c.delay_ms,
            AgentConfig::HelloWorld(c) => c.delay_ms,
        }
    }

    pub fn as_drone(&self) -> Option<&DroneConfig> {
        match self {
            AgentConfig::VirtualDrone2D(c) => Some(c),
            AgentConfig::HelloWorld(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneConfig {
    pub agent_id: String,
    pub delay_ms: u64,
    pub initial_position: InitialPosition,
    pub controller: ControllerSpec,
    /// Half-side of the perception window, meters.
    #[serde(default = "default_vicinity")]
    pub vicinity: f64,
    #[serde(default = "default_field_size")]
    pub field_size: usize,
    #[serde(default = "default_clip_factor")]
    pub clip_factor: f64,
    /// Meters per second.
    #[serde(default = "default_velocity")]
    pub velocity: f64,
    /// Flight altitude, carried as metadata only.
    #[serde(default = "default_height")]
    pub default_height: f64,
    /// Clamp positions to the arena limits after each move.
    #[serde(default)]
    pub safety_clamp: bool,
}

fn default_vicinity() -> f64 {
    DEFAULT_VICINITY
}
fn default_field_size() -> usize {
    DEFAULT_FIELD_SIZE
}
fn default_clip_factor() -> f64 {
    DEFAULT_CLIP_FACTOR
}
fn default_velocity() -> f64 {
    DEFAULT_VELOCITY
}
fn default_height() -> f64 {
    DEFAULT_HEIGHT
}

impl DroneConfig {
    pub fn new(agent_id: impl Into<String>, initial_position: InitialPosition, controller: ControllerSpec) -> Self {
        DroneConfig {
            agent_id: agent_id.into(),
            delay_ms: 100,
            initial_position,
            controller,
            vicinity: DEFAULT_VICINITY,
            field_size: DEFAULT_FIELD_SIZE,
            clip_factor: DEFAULT_CLIP_FACTOR,
            velocity: DEFAULT_VELOCITY,
            default_height: DEFAULT_HEIGHT,
            safety_clamp: false,
        }
    }

    pub fn modulation_params(&self) -> ModulationParams {
        ModulationParams {
            vicinity: self.vicinity,
            field_size: self.field_size,
            clip_factor: self.clip_factor,
            ..ModulationParams::default()
        }
    }
}

/// Where a drone starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialPosition {
    At(Position2D),
    /// Uniform draw inside a region.
    RandomIn { random_in: SpaceLimits },
    /// Uniform draw inside the environment limits.
    Random(RandomKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomKeyword {
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloAgentConfig {
    pub agent_id: String,
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoggerConfig {
    Position(PositionLoggerConfig),
    Field(FieldLoggerConfig),
    HelloWorld(HelloLoggerConfig),
    Proximity(ProximityLoggerConfig),
}

impl LoggerConfig {
    pub fn delay_ms(&self) -> u64 {
        match self {
            LoggerConfig::Position(c) => c.delay_ms,
            LoggerConfig::Field(c) => c.delay_ms,
            LoggerConfig::HelloWorld(c) => c.delay_ms,
            LoggerConfig::Proximity(c) => c.delay_ms,
        }
    }

    pub fn output(&self) -> &Path {
        match self {
            LoggerConfig::Position(c) => &c.output,
            LoggerConfig::Field(c) => &c.output,
            LoggerConfig::HelloWorld(c) => &c.output,
            LoggerConfig::Proximity(c) => &c.output,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LoggerConfig::Position(_) => "position",
            LoggerConfig::Field(_) => "field",
            LoggerConfig::HelloWorld(_) => "hello_world",
            LoggerConfig::Proximity(_) => "proximity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionLoggerConfig {
    pub delay_ms: u64,
    /// Relative to the run directory.
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldLoggerConfig {
    pub delay_ms: u64,
    /// Agent whose field is recorded.
    pub target: String,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloLoggerConfig {
    pub delay_ms: u64,
    pub output: PathBuf,
}

/// Online closest-approach checker; writes a JSON summary on exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProximityLoggerConfig {
    pub delay_ms: u64,
    pub output: PathBuf,
    /// Samples before this run time are ignored.
    #[serde(default)]
    pub from_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen: String,
    #[serde(default = "default_snapshot_hz")]
    pub snapshot_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_agent: Option<String>,
    /// Built control panel assets served at `/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
}

fn default_snapshot_hz() -> f64 {
    DEFAULT_SNAPSHOT_HZ
}

/// Parses and validates an experiment document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig =
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Malformed {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    config.validate()?;
    Ok(config)
}

/// Pretty-printed JSON; [`parse_config`] reads it back unchanged.
pub fn serialize_config(config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_config(&text)
}

fn check_delay(path: String, delay_ms: u64) -> Result<(), ConfigError> {
    if delay_ms == 0 {
        return Err(ConfigError::invalid(path, "delay must be positive"));
    }
    Ok(())
}

fn check_finite(path: String, values: &[f64]) -> Result<(), ConfigError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ConfigError::invalid(path, "values must be finite"));
    }
    Ok(())
}

fn check_limits(path: String, limits: &SpaceLimits) -> Result<(), ConfigError> {
    if !limits.is_valid() {
        return Err(ConfigError::invalid(path, "limits need finite x_min < x_max and y_min < y_max"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let env_limits = self.environment.as_ref().and_then(EnvironmentConfig::limits);
        if let Some(env) = &self.environment {
            check_delay("environment.delay_ms".into(), env.delay_ms())?;
            if let EnvironmentConfig::FieldModulation(fm) = env {
                check_limits("environment.limits".into(), &fm.limits)?;
                for (i, p) in fm.modulation_points.iter().enumerate() {
                    check_finite(format!("environment.modulation_points[{i}]"), &[p.x, p.y])?;
                }
                check_finite("environment.rotation_center".into(), &[fm.rotation_center.x, fm.rotation_center.y])?;
                check_finite("environment.theta_degrees".into(), &[fm.theta_degrees])?;
            }
        }

        let registry = RewardRegistry::default();
        let mut seen = BTreeSet::new();
        for (i, agent) in self.agents.iter().enumerate() {
            let id = agent.agent_id();
            if !TopicKey::is_valid_segment(id) {
                return Err(ConfigError::invalid(
                    format!("agents[{i}].agent_id"),
                    format!("{id:?} must be non-empty without whitespace or '/'"),
                ));
            }
            if !seen.insert(id) {
                return Err(ConfigError::invalid(
                    format!("agents[{i}].agent_id"),
                    format!("duplicate agent_id {id:?}"),
                ));
            }
            check_delay(format!("agents[{i}].delay_ms"), agent.delay_ms())?;
            if let AgentConfig::VirtualDrone2D(d) = agent {
                self.validate_drone(i, d, env_limits.as_ref(), &registry)?;
            }
        }

        for (i, logger) in self.loggers.iter().enumerate() {
            check_delay(format!("loggers[{i}].delay_ms"), logger.delay_ms())?;
            if logger.output().as_os_str().is_empty() {
                return Err(ConfigError::invalid(format!("loggers[{i}].output"), "output path is empty"));
            }
            if let LoggerConfig::Field(f) = logger {
                if !self.drones().any(|d| d.agent_id == f.target) {
                    return Err(ConfigError::invalid(
                        format!("loggers[{i}].target"),
                        format!("no drone named {:?}", f.target),
                    ));
                }
            }
        }

        if let Some(gw) = &self.gateway {
            if !(gw.snapshot_hz.is_finite() && gw.snapshot_hz > 0.0) {
                return Err(ConfigError::invalid("gateway.snapshot_hz", "must be positive"));
            }
            if let Some(id) = &gw.field_agent {
                if !self.drones().any(|d| &d.agent_id == id) {
                    return Err(ConfigError::invalid("gateway.field_agent", format!("no drone named {id:?}")));
                }
            }
        }
        Ok(())
    }

    fn validate_drone(
        &self,
        i: usize,
        d: &DroneConfig,
        env_limits: Option<&SpaceLimits>,
        registry: &RewardRegistry,
    ) -> Result<(), ConfigError> {
        let at = |field: &str| format!("agents[{i}].{field}");
        if d.field_size == 0 || !d.field_size.is_multiple_of(3) {
            return Err(ConfigError::invalid(at("field_size"), format!("{} is not a positive multiple of 3", d.field_size)));
        }
        if !(d.vicinity.is_finite() && d.vicinity > 0.0) {
            return Err(ConfigError::invalid(at("vicinity"), "must be positive"));
        }
        if !(d.clip_factor.is_finite() && d.clip_factor >= 1.0) {
            return Err(ConfigError::invalid(at("clip_factor"), "must be >= 1"));
        }
        if !(d.velocity.is_finite() && d.velocity >= 0.0) {
            return Err(ConfigError::invalid(at("velocity"), "must be >= 0"));
        }
        check_finite(at("default_height"), &[d.default_height])?;
        match &d.initial_position {
            InitialPosition::At(p) => check_finite(at("initial_position"), &[p.x, p.y])?,
            InitialPosition::RandomIn { random_in } => check_limits(at("initial_position.random_in"), random_in)?,
            InitialPosition::Random(_) => {
                if env_limits.is_none() {
                    return Err(ConfigError::invalid(
                        at("initial_position"),
                        "\"random\" needs a field_modulation environment to take limits from",
                    ));
                }
            }
        }
        d.controller
            .validate(registry)
            .map_err(|e| ConfigError::invalid(at("controller"), e.to_string()))?;
        if let Some(t) = d.controller.target {
            check_finite(at("controller.target"), &[t.x, t.y])?;
        }
        Ok(())
    }

    pub fn drones(&self) -> impl Iterator<Item = &DroneConfig> {
        self.agents.iter().filter_map(AgentConfig::as_drone)
    }

    pub fn field_environment(&self) -> Option<&FieldEnvironmentConfig> {
        self.environment.as_ref().and_then(EnvironmentConfig::as_field_modulation)
    }

    /// Starting position of every drone, drawing random ones from a stream
    /// seeded by `seed` and the agent id.
    pub fn resolve_initial_positions(&self, seed: u64) -> Vec<(String, Position2D)> {
        let env_limits = self.environment.as_ref().and_then(EnvironmentConfig::limits);
        self.drones()
            .map(|d| {
                let region = match &d.initial_position {
                    InitialPosition::At(p) => return (d.agent_id.clone(), *p),
                    InitialPosition::RandomIn { random_in } => *random_in,
                    InitialPosition::Random(_) => env_limits.expect("validated: random needs limits"),
                };
                let mut rng = ChaCha8Rng::seed_from_u64(agent_seed(seed, &d.agent_id));
                let x = rng.random_range(region.x_min..region.x_max);
                let y = rng.random_range(region.y_min..region.y_max);
                (d.agent_id.clone(), Position2D::new(x, y))
            })
            .collect()
    }

    /// Largest agent loop delay, used as the timestamp alignment tolerance.
    pub fn max_agent_delay_ms(&self) -> Option<u64> {
        self.agents.iter().map(AgentConfig::delay_ms).max()
    }
}

/// Per-agent seed derived from the run seed and the agent id.
pub fn agent_seed(run_seed: u64, agent_id: &str) -> u64 {
    // FNV-1a over the id, folded into the seed, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in agent_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = run_seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
