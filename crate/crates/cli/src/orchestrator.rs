//! Launching, supervising and stopping a run.

use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use swarmfield_core::agent::{AgentError, VirtualDrone2D};
use swarmfield_core::bus::{Bus, BusError, BusServer, MemoryBus, TcpBus};
use swarmfield_core::clock::{Clock, SimClock, WallClock};
use swarmfield_core::config::{
    AgentConfig, BusSpec, ConfigError, EnvironmentConfig, ExperimentConfig, LoggerConfig, BUS_ADDR_ENV,
};
use swarmfield_core::controllers::RewardRegistry;
use swarmfield_core::environment::FieldModulationEnvironment;
use swarmfield_core::hello::{HelloWorldAgent, HelloWorldEnvironment, HelloWorldLogger};
use swarmfield_core::logging::{FieldLogger, PositionLogger, ProximityMonitor};
use swarmfield_core::model::Position2D;
use swarmfield_core::process::{run_wall_loop, AppProcess, ExitStatus, ExitSummary, SimScheduler};
use swarmfield_gateway::{spawn_gateway, GatewayError, GatewayHandle, GatewayOptions};

pub const MANIFEST_FILE: &str = "run.json";
pub const EXIT_REPORT_FILE: &str = "exit.json";
const ENV_READY_TIMEOUT: Duration = Duration::from_secs(10);
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, thiserror::Error)]
pub enum LaunchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulated clock needs a duration")]
    SimNeedsDuration,
    #[error("bus: cannot listen on {addr}: {source}")]
    BusBind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bus: {0}")]
    Bus(#[from] BusError),
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{what}: {source}")]
    Io {
        what: String,
        #[source]
        source: std::io::Error,
    },
    #[error("environment published nothing within {0:?}")]
    EnvironmentTimeout(Duration),
    #[error("child {name} exited during startup")]
    ChildDied { name: String },
}

impl LaunchError {
    fn io(what: impl Into<String>) -> impl FnOnce(std::io::Error) -> LaunchError {
        let what = what.into();
        move |source| LaunchError::Io { what, source }
    }

    /// Whether the failure is the user's config rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, LaunchError::Config(_) | LaunchError::SimNeedsDuration)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LaunchOptions {
    /// Overrides the config seed.
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    pub output_dir: Option<PathBuf>,
    pub duration_ms: Option<u64>,
    /// Run every child as an OS process talking to the bus over TCP.
    pub processes: bool,
    /// Executable used for child processes; defaults to the current one.
    pub child_exe: Option<PathBuf>,
    /// Fixed run id instead of timestamp and seed.
    pub run_id: Option<String>,
}

/// Written to `run.json` in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub sim_clock: bool,
    pub duration_ms: Option<u64>,
    pub started_at: String,
    pub bus_address: Option<String>,
    pub initial_positions: Vec<(String, Position2D)>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitReport {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub children: Vec<ExitSummary>,
}

impl ExitReport {
    pub fn all_clean(&self) -> bool {
        self.children.iter().all(ExitSummary::is_clean)
    }

    pub fn child(&self, name: &str) -> Option<&ExitSummary> {
        self.children.iter().find(|c| c.name == name)
    }
}

/// One child of the run, as the orchestrator starts it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildSpec {
    Environment,
    Logger(usize),
    Agent(usize),
}

impl ChildSpec {
    pub fn to_arg(self) -> String {
        match self {
            ChildSpec::Environment => "environment".into(),
            ChildSpec::Logger(i) => format!("logger:{i}"),
            ChildSpec::Agent(i) => format!("agent:{i}"),
        }
    }

    pub fn parse(arg: &str) -> Option<Self> {
        if arg == "environment" {
            return Some(ChildSpec::Environment);
        }
        let (kind, idx) = arg.split_once(':')?;
        let idx = idx.parse().ok()?;
        match kind {
            "logger" => Some(ChildSpec::Logger(idx)),
            "agent" => Some(ChildSpec::Agent(idx)),
            _ => None,
        }
    }

    /// Startup order: environment, loggers, agents.
    fn all(config: &ExperimentConfig) -> Vec<ChildSpec> {
        let mut v = Vec::new();
        if config.environment.is_some() {
            v.push(ChildSpec::Environment);
        }
        v.extend((0..config.loggers.len()).map(ChildSpec::Logger));
        v.extend((0..config.agents.len()).map(ChildSpec::Agent));
        v
    }

    fn name(self, config: &ExperimentConfig) -> String {
        match self {
            ChildSpec::Environment => "environment".into(),
            ChildSpec::Logger(i) => format!("logger[{i}]:{}", config.loggers[i].kind_name()),
            ChildSpec::Agent(i) => config.agents[i].agent_id().to_owned(),
        }
    }
}

/// Instantiates one child process object. Logger files are created here.
pub fn build_child(
    config: &ExperimentConfig,
    spec: ChildSpec,
    run_dir: &Path,
    positions: &[(String, Position2D)],
) -> Result<Box<dyn AppProcess>, LaunchError> {
    Ok(match spec {
        ChildSpec::Environment => match config.environment.as_ref().expect("environment configured") {
            EnvironmentConfig::FieldModulation(c) => Box::new(FieldModulationEnvironment::new(c.clone())),
            EnvironmentConfig::HelloWorld(c) => Box::new(HelloWorldEnvironment::new(c.delay_ms)),
        },
        ChildSpec::Logger(i) => {
            let logger = &config.loggers[i];
            let path = run_dir.join(logger.output());
            let what = format!("logger {} output {}", logger.kind_name(), path.display());
            match logger {
                LoggerConfig::Position(c) => Box::new(PositionLogger::create(&path, c.delay_ms).map_err(LaunchError::io(what))?),
                LoggerConfig::Field(c) => {
                    Box::new(FieldLogger::create(&path, &c.target, c.delay_ms).map_err(LaunchError::io(what))?)
                }
                LoggerConfig::HelloWorld(c) => {
                    Box::new(HelloWorldLogger::create(&path, c.delay_ms).map_err(LaunchError::io(what))?)
                }
                LoggerConfig::Proximity(c) => {
                    Box::new(ProximityMonitor::create(&path, c.delay_ms, c.from_ms).map_err(LaunchError::io(what))?)
                }
            }
        }
        ChildSpec::Agent(i) => match &config.agents[i] {
            AgentConfig::VirtualDrone2D(d) => {
                let start = positions
                    .iter()
                    .find(|(id, _)| *id == d.agent_id)
                    .map(|(_, p)| *p)
                    .expect("every drone has a resolved position");
                Box::new(VirtualDrone2D::new(d.clone(), start, &RewardRegistry::default())?)
            }
            AgentConfig::HelloWorld(h) => Box::new(HelloWorldAgent::new(&h.agent_id, h.delay_ms)?),
        },
    })
}

enum ChildHandle {
    Thread {
        name: String,
        join: JoinHandle<ExitSummary>,
    },
    Process {
        name: String,
        child: Child,
    },
}

impl ChildHandle {
    fn name(&self) -> &str {
        match self {
            ChildHandle::Thread { name, .. } | ChildHandle::Process { name, .. } => name,
        }
    }

    fn is_running(&mut self) -> bool {
        match self {
            ChildHandle::Thread { join, .. } => !join.is_finished(),
            ChildHandle::Process { child, .. } => matches!(child.try_wait(), Ok(None)),
        }
    }

    /// Collects the exit summary of a finished child, or forces it.
    fn reap(self, force: bool) -> ExitSummary {
        let forced = |name: String| ExitSummary {
            name,
            ticks: 0,
            status: ExitStatus::Forced,
            detail: None,
        };
        match self {
            ChildHandle::Thread { name, join } => {
                if force && !join.is_finished() {
                    // A thread cannot be killed; it is detached and reported.
                    tracing::warn!(child = %name, "child did not stop in time, abandoning thread");
                    return forced(name);
                }
                join.join().unwrap_or_else(|_| ExitSummary {
                    name,
                    ticks: 0,
                    status: ExitStatus::Failed { reason: "panicked".into() },
                    detail: None,
                })
            }
            ChildHandle::Process { name, mut child } => {
                if force && matches!(child.try_wait(), Ok(None)) {
                    tracing::warn!(child = %name, "child did not stop in time, killing it");
                    let _ = child.kill();
                    let _ = child.wait();
                    return forced(name);
                }
                let status = child.wait();
                let mut out = String::new();
                if let Some(mut stdout) = child.stdout.take() {
                    let _ = stdout.read_to_string(&mut out);
                }
                match serde_json::from_str::<ExitSummary>(out.trim()) {
                    Ok(s) => s,
                    Err(_) => ExitSummary {
                        name,
                        ticks: 0,
                        status: ExitStatus::Failed {
                            reason: format!("exited with {status:?} without a report"),
                        },
                        detail: None,
                    },
                }
            }
        }
    }
}

/// A live wall-clock run.
pub struct RunHandle {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub started: Instant,
    bus: Arc<MemoryBus>,
    clock: Arc<WallClock>,
    server: Option<BusServer>,
    gateway: Option<GatewayHandle>,
    children: Vec<ChildHandle>,
    report: Option<ExitReport>,
}

impl std::fmt::Debug for RunHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunHandle")
            .field("run_id", &self.run_id)
            .field("run_dir", &self.run_dir)
            .field("children", &self.children.iter().map(ChildHandle::name).collect::<Vec<_>>())
            .finish()
    }
}

impl RunHandle {
    pub fn bus(&self) -> Arc<dyn Bus> {
        self.bus.clone()
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        self.clock.clone()
    }

    pub fn bus_address(&self) -> Option<SocketAddr> {
        self.server.as_ref().map(BusServer::local_addr)
    }

    pub fn gateway_address(&self) -> Option<SocketAddr> {
        self.gateway.as_ref().map(GatewayHandle::local_addr)
    }

    pub fn child_names(&self) -> Vec<String> {
        self.children.iter().map(|c| c.name().to_owned()).collect()
    }

    /// Children still running; zero after [`shutdown`].
    pub fn live_children(&mut self) -> usize {
        self.children.iter_mut().map(ChildHandle::is_running).filter(|&r| r).count()
    }

    pub fn stop_requested(&self) -> bool {
        self.bus.stop_requested().unwrap_or(true)
    }

    fn spawn_thread(
        &mut self,
        name: String,
        mut process: Box<dyn AppProcess>,
        bus: Arc<dyn Bus>,
    ) -> Result<(), LaunchError> {
        let clock = self.clock.clone();
        let join = thread::Builder::new()
            .name(name.clone())
            .spawn(move || run_wall_loop(process.as_mut(), bus.as_ref(), clock.as_ref()))
            .map_err(LaunchError::io(format!("spawn thread {name}")))?;
        self.children.push(ChildHandle::Thread { name, join });
        Ok(())
    }

    fn spawn_process(&mut self, name: String, spec: ChildSpec, exe: &Path) -> Result<(), LaunchError> {
        let addr = self.bus_address().expect("process mode runs a bus server");
        let child = Command::new(exe)
            .arg("child")
            .arg("--run-dir")
            .arg(&self.run_dir)
            .arg("--role")
            .arg(spec.to_arg())
            .arg("--bus")
            .arg(addr.to_string())
            .arg("--offset-ms")
            .arg(self.clock.now_ms().to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(LaunchError::io(format!("spawn child process {name}")))?;
        self.children.push(ChildHandle::Process { name, child });
        Ok(())
    }
}

impl Drop for RunHandle {
    fn drop(&mut self) {
        if self.report.is_none() {
            shutdown(self, Duration::from_secs(2));
        }
    }
}

fn resolve_bus_address(spec: &BusSpec) -> String {
    match spec {
        BusSpec::Tcp { address: Some(a) } => a.clone(),
        _ => std::env::var(BUS_ADDR_ENV).unwrap_or_else(|_| "127.0.0.1:0".into()),
    }
}

fn make_run_id(seed: u64) -> String {
    format!("{}-seed{seed}", chrono::Local::now().format("%Y%m%dT%H%M%S%.3f"))
}

struct Prepared {
    run_id: String,
    run_dir: PathBuf,
    positions: Vec<(String, Position2D)>,
    manifest: RunManifest,
}

fn prepare(config: &ExperimentConfig, opts: &LaunchOptions, sim_clock: bool) -> Result<Prepared, LaunchError> {
    config.validate()?;
    let seed = opts.seed.unwrap_or(config.seed);
    let run_id = opts.run_id.clone().unwrap_or_else(|| make_run_id(seed));
    let root = opts.output_dir.clone().unwrap_or_else(|| config.output_dir.clone());
    let run_dir = root.join(&run_id);
    std::fs::create_dir_all(&run_dir).map_err(LaunchError::io(format!("create {}", run_dir.display())))?;
    let positions = config.resolve_initial_positions(seed);
    let manifest = RunManifest {
        run_id: run_id.clone(),
        seed,
        sim_clock,
        duration_ms: opts.duration_ms,
        started_at: chrono::Local::now().to_rfc3339(),
        bus_address: None,
        initial_positions: positions.clone(),
        config: config.clone(),
    };
    Ok(Prepared {
        run_id,
        run_dir,
        positions,
        manifest,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LaunchError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(LaunchError::io(format!("write {}", path.display())))
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest, LaunchError> {
    let path = run_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(LaunchError::io(format!("read {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| LaunchError::Io {
        what: format!("parse {}", path.display()),
        source: e.into(),
    })
}

fn gateway_options(config: &ExperimentConfig) -> Option<GatewayOptions> {
    config.gateway.as_ref().map(|g| GatewayOptions {
        listen: g.listen.clone(),
        snapshot_hz: g.snapshot_hz,
        field_agent: g.field_agent.clone(),
        static_dir: g.static_dir.clone(),
    })
}

/// Starts a wall-clock run: bus, environment (waiting for its first
/// publication), loggers, gateway, then agents. On any failure everything
/// already started is torn down before the error is returned.
pub fn launch(config: &ExperimentConfig, opts: &LaunchOptions) -> Result<RunHandle, LaunchError> {
    launch_with(config, opts, Vec::new())
}

/// Like [`launch`], with extra processes started after the configured ones.
pub fn launch_with(
    config: &ExperimentConfig,
    opts: &LaunchOptions,
    extra: Vec<Box<dyn AppProcess>>,
) -> Result<RunHandle, LaunchError> {
    let mut prep = prepare(config, opts, false)?;
    let clock = Arc::new(WallClock::new());
    let bus = Arc::new(MemoryBus::with_clock(clock.clone()));

    let tcp = matches!(config.bus, BusSpec::Tcp { .. });
    let server = if tcp || opts.processes {
        let addr = resolve_bus_address(&config.bus);
        let server = BusServer::bind(&addr, bus.clone()).map_err(|source| LaunchError::BusBind { addr, source })?;
        prep.manifest.bus_address = Some(server.local_addr().to_string());
        Some(server)
    } else {
        None
    };
    write_json(&prep.run_dir.join(MANIFEST_FILE), &prep.manifest)?;

    let mut handle = RunHandle {
        run_id: prep.run_id.clone(),
        run_dir: prep.run_dir.clone(),
        started: clock.start(),
        bus: bus.clone(),
        clock,
        server,
        gateway: None,
        children: Vec::new(),
        report: None,
    };

    match start_children(&mut handle, config, opts, &prep, tcp, extra) {
        Ok(()) => Ok(handle),
        Err(e) => {
            tracing::error!(error = %e, "launch failed, tearing down");
            shutdown(&mut handle, Duration::from_secs(2));
            Err(e)
        }
    }
}

fn start_children(
    handle: &mut RunHandle,
    config: &ExperimentConfig,
    opts: &LaunchOptions,
    prep: &Prepared,
    tcp: bool,
    extra: Vec<Box<dyn AppProcess>>,
) -> Result<(), LaunchError> {
    let exe = match &opts.child_exe {
        Some(p) => p.clone(),
        None => std::env::current_exe().map_err(LaunchError::io("locate executable"))?,
    };
    let child_bus = |handle: &RunHandle| -> Result<Arc<dyn Bus>, LaunchError> {
        match handle.bus_address() {
            Some(addr) if tcp => Ok(Arc::new(TcpBus::connect(addr)?)),
            _ => Ok(handle.bus.clone()),
        }
    };

    let mut gateway_started = false;
    for spec in ChildSpec::all(config) {
        if matches!(spec, ChildSpec::Agent(_)) && !gateway_started {
            start_gateway(handle, config)?;
            gateway_started = true;
        }
        let name = spec.name(config);
        if opts.processes {
            handle.spawn_process(name.clone(), spec, &exe)?;
        } else {
            let process = build_child(config, spec, &prep.run_dir, &prep.positions)?;
            let bus = child_bus(handle)?;
            handle.spawn_thread(name.clone(), process, bus)?;
        }
        if spec == ChildSpec::Environment {
            wait_for_environment(handle, &name)?;
        }
    }
    if !gateway_started {
        start_gateway(handle, config)?;
    }
    for process in extra {
        let bus = child_bus(handle)?;
        handle.spawn_thread(process.name().to_owned(), process, bus)?;
    }
    Ok(())
}

fn start_gateway(handle: &mut RunHandle, config: &ExperimentConfig) -> Result<(), LaunchError> {
    if let Some(opts) = gateway_options(config) {
        let gw = spawn_gateway(handle.bus.clone(), handle.clock.clone(), opts)?;
        tracing::info!(addr = %gw.local_addr(), "gateway listening");
        handle.gateway = Some(gw);
    }
    Ok(())
}

fn wait_for_environment(handle: &mut RunHandle, name: &str) -> Result<(), LaunchError> {
    let deadline = Instant::now() + ENV_READY_TIMEOUT;
    loop {
        if !handle.bus.scan("env/")?.is_empty() {
            return Ok(());
        }
        if let Some(last) = handle.children.last_mut() {
            if !last.is_running() {
                return Err(LaunchError::ChildDied { name: name.to_owned() });
            }
        }
        if Instant::now() >= deadline {
            return Err(LaunchError::EnvironmentTimeout(ENV_READY_TIMEOUT));
        }
        thread::sleep(POLL);
    }
}

/// Raises the stop flag, waits up to `timeout` for every child and forces
/// the rest. Calling it again returns the first report unchanged.
pub fn shutdown(handle: &mut RunHandle, timeout: Duration) -> ExitReport {
    if let Some(report) = &handle.report {
        return report.clone();
    }
    let _ = handle.bus.raise_stop();
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline && handle.children.iter_mut().any(ChildHandle::is_running) {
        thread::sleep(POLL);
    }
    let children: Vec<ExitSummary> = handle.children.drain(..).map(|c| c.reap(true)).collect();
    if let Some(mut gw) = handle.gateway.take() {
        if let Err(e) = gw.shutdown() {
            tracing::warn!(error = %e, "gateway ended with an error");
        }
    }
    if let Some(mut server) = handle.server.take() {
        server.shutdown();
    }
    let report = ExitReport {
        run_id: handle.run_id.clone(),
        run_dir: handle.run_dir.clone(),
        children,
    };
    if let Err(e) = write_json(&handle.run_dir.join(EXIT_REPORT_FILE), &report) {
        tracing::warn!(error = %e, "cannot write exit report");
    }
    handle.report = Some(report.clone());
    report
}

/// Runs a whole experiment in simulated time on the calling thread.
/// Deterministic for a given config and seed.
pub fn run_simulated(config: &ExperimentConfig, opts: &LaunchOptions) -> Result<ExitReport, LaunchError> {
    let duration_ms = opts.duration_ms.ok_or(LaunchError::SimNeedsDuration)?;
    let prep = prepare(config, opts, true)?;
    let clock = Arc::new(SimClock::new());
    let memory = Arc::new(MemoryBus::with_clock(clock.clone()));

    let mut server = None;
    let bus: Arc<dyn Bus> = match &config.bus {
        BusSpec::Tcp { .. } => {
            let addr = resolve_bus_address(&config.bus);
            let s = BusServer::bind(&addr, memory.clone()).map_err(|source| LaunchError::BusBind { addr, source })?;
            let client = TcpBus::connect(s.local_addr())?;
            server = Some(s);
            Arc::new(client)
        }
        BusSpec::Memory => memory.clone(),
    };
    let mut manifest = prep.manifest.clone();
    manifest.bus_address = server.as_ref().map(|s| s.local_addr().to_string());
    write_json(&prep.run_dir.join(MANIFEST_FILE), &manifest)?;

    let mut scheduler = SimScheduler::new(clock.clone());
    let mut gateway = None;
    for spec in ChildSpec::all(config) {
        if matches!(spec, ChildSpec::Agent(_)) && gateway.is_none() {
            if let Some(o) = gateway_options(config) {
                gateway = Some(spawn_gateway(memory.clone(), clock.clone(), o)?);
            }
        }
        scheduler.add(build_child(config, spec, &prep.run_dir, &prep.positions)?);
    }
    if gateway.is_none() {
        if let Some(o) = gateway_options(config) {
            gateway = Some(spawn_gateway(memory.clone(), clock.clone(), o)?);
        }
    }

    let children = scheduler.run(bus.as_ref(), Some(duration_ms));
    let _ = memory.raise_stop();
    if let Some(mut gw) = gateway {
        let _ = gw.shutdown();
    }
    if let Some(mut s) = server {
        s.shutdown();
    }
    let report = ExitReport {
        run_id: prep.run_id,
        run_dir: prep.run_dir,
        children,
    };
    write_json(&report.run_dir.join(EXIT_REPORT_FILE), &report)?;
    Ok(report)
}
