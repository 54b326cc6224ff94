//! WebSocket bridge between the bus and the browser control panel.
//!
//! `/ws` streams [`ArenaSnapshot`]s and, for the selected agent, its latest
//! field. Clients steer remote-controlled agents with `steer` frames, which
//! are validated and republished on `control/agent/{id}/action`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use tower_http::services::ServeDir;

use swarmfield_core::bus::{Bus, BusError, BusExt, TopicKey};
use swarmfield_core::clock::Clock;
use swarmfield_core::controllers::RemoteCommand;
use swarmfield_core::logging::FieldRecord;
use swarmfield_core::model::{Action, AgentState, EnvironmentState, FieldMap, Position2D, SpaceLimits};

/// How often the gateway checks the bus stop flag.
const STOP_POLL: Duration = Duration::from_millis(50);

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("gateway runtime: {0}")]
    Runtime(#[from] std::io::Error),
    #[error("snapshot_hz must be positive, got {0}")]
    SnapshotRate(f64),
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub listen: String,
    pub snapshot_hz: f64,
    /// Agent whose field is streamed to new connections.
    pub field_agent: Option<String>,
    pub static_dir: Option<PathBuf>,
}

impl GatewayOptions {
    pub fn new(listen: impl Into<String>) -> Self {
        GatewayOptions {
            listen: listen.into(),
            snapshot_hz: 10.0,
            field_agent: None,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub agent_id: String,
    pub x: f64,
    pub y: f64,
    pub last_action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArenaSnapshot {
    pub t_ms: u64,
    /// `None` until an environment has published its state.
    pub limits: Option<SpaceLimits>,
    pub agents: Vec<AgentView>,
    pub points: Vec<Position2D>,
}

/// Builds a snapshot from one scan of agent states and one read of the
/// environment state.
pub fn snapshot(bus: &dyn Bus, t_ms: u64) -> Result<ArenaSnapshot, BusError> {
    let agents = bus
        .scan_suffix("agent/", "/state")?
        .iter()
        .filter_map(|e| e.decode::<AgentState>().ok())
        .map(|s| AgentView {
            agent_id: s.agent_id,
            x: s.position.x,
            y: s.position.y,
            last_action: s.last_action,
        })
        .collect();
    let env = bus.read_as::<EnvironmentState>(&TopicKey::env_state()).ok().flatten();
    Ok(ArenaSnapshot {
        t_ms,
        limits: env.as_ref().map(|e| e.limits),
        points: env.map(|e| e.points).unwrap_or_default(),
        agents,
    })
}

/// Frames sent to the browser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Snapshot(ArenaSnapshot),
    Field(FieldRecord),
    Error { message: String },
}

/// Frames accepted from the browser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Inbound {
    Steer { agent_id: String, action: String },
    /// Chooses whose field is streamed; `null` stops field frames.
    Select { agent_id: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SteerError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("invalid agent id {0:?}")]
    AgentId(String),
    #[error("unknown action {0:?}")]
    Action(String),
    #[error("bus: {0}")]
    Bus(String),
}

/// Validates a steering request and stores it for the agent's controller,
/// stamped with `now_ms`.
pub fn apply_steer(bus: &dyn Bus, agent_id: &str, action: &str, now_ms: u64) -> Result<u64, SteerError> {
    let action: Action = action.parse().map_err(|_| SteerError::Action(action.to_owned()))?;
    if !TopicKey::is_valid_segment(agent_id) {
        return Err(SteerError::AgentId(agent_id.to_owned()));
    }
    let key = TopicKey::agent_action(agent_id).map_err(|_| SteerError::AgentId(agent_id.to_owned()))?;
    bus.publish_as(&key, &RemoteCommand { action, published_at: now_ms })
        .map_err(|e| SteerError::Bus(e.to_string()))
}

#[derive(Clone)]
struct AppState {
    bus: Arc<dyn Bus>,
    clock: Arc<dyn Clock>,
    period: Duration,
    field_agent: Option<String>,
    stop: watch::Receiver<bool>,
}

/// A gateway running on its own thread and runtime.
pub struct GatewayHandle {
    addr: SocketAddr,
    stop: watch::Sender<bool>,
    thread: Option<JoinHandle<Result<(), GatewayError>>>,
}

impl std::fmt::Debug for GatewayHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GatewayHandle").field("addr", &self.addr).finish()
    }
}

impl GatewayHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().is_none_or(JoinHandle::is_finished)
    }

    /// Stops serving and waits for the thread. Safe to call more than once.
    pub fn shutdown(&mut self) -> Result<(), GatewayError> {
        let _ = self.stop.send(true);
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(GatewayError::Runtime(std::io::Error::other("gateway thread panicked")))),
            None => Ok(()),
        }
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

/// Binds `options.listen` and serves until the bus stop flag is raised or
/// the handle is shut down. Binding happens before this returns, so a port
/// already in use is reported here.
pub fn spawn_gateway(bus: Arc<dyn Bus>, clock: Arc<dyn Clock>, options: GatewayOptions) -> Result<GatewayHandle, GatewayError> {
    if !(options.snapshot_hz.is_finite() && options.snapshot_hz > 0.0) {
        return Err(GatewayError::SnapshotRate(options.snapshot_hz));
    }
    let listener = std::net::TcpListener::bind(&options.listen).map_err(|source| GatewayError::Bind {
        addr: options.listen.clone(),
        source,
    })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .thread_name("gateway")
        .build()?;
    let (stop_tx, stop_rx) = watch::channel(false);
    let state = AppState {
        bus,
        clock,
        period: Duration::from_secs_f64(1.0 / options.snapshot_hz),
        field_agent: options.field_agent,
        stop: stop_rx,
    };
    let static_dir = options.static_dir;
    let stop_for_poll = stop_tx.clone();
    let thread = std::thread::Builder::new().name("gateway".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            tokio::spawn(watch_stop_flag(state.bus.clone(), stop_for_poll));
            let mut stop = state.stop.clone();
            let app = router(state, static_dir);
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stop.wait_for(|s| *s).await;
                })
                .await?;
            Ok(())
        })
    })?;
    Ok(GatewayHandle {
        addr,
        stop: stop_tx,
        thread: Some(thread),
    })
}

fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new().route("/ws", get(ws_upgrade)).with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

async fn watch_stop_flag(bus: Arc<dyn Bus>, stop: watch::Sender<bool>) {
    let mut tick = tokio::time::interval(STOP_POLL);
    loop {
        tick.tick().await;
        if *stop.borrow() {
            return;
        }
        let b = bus.clone();
        let stopped = tokio::task::spawn_blocking(move || b.stop_requested())
            .await
            .map(|r| r.unwrap_or(false))
            .unwrap_or(false);
        if stopped {
            let _ = stop.send(true);
            return;
        }
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| serve_socket(socket, state))
}

async fn send(socket: &mut WebSocket, frame: &Outbound) -> bool {
    let text = serde_json::to_string(frame).expect("frames serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn serve_socket(mut socket: WebSocket, state: AppState) {
    let mut stop = state.stop.clone();
    let mut field_agent = state.field_agent.clone();
    let mut last_field_seq = 0u64;
    let mut tick = tokio::time::interval(state.period);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        let stopped = *stop.borrow();
        if stopped {
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
        tokio::select! {
            _ = stop.changed() => continue,
            _ = tick.tick() => {
                let bus = state.bus.clone();
                let clock = state.clock.clone();
                let agent = field_agent.clone();
                let frames = tokio::task::spawn_blocking(move || {
                    let snap = snapshot(bus.as_ref(), clock.now_ms());
                    let field = agent.and_then(|a| latest_field(bus.as_ref(), &a));
                    (snap, field)
                })
                .await;
                let Ok((snap, field)) = frames else { return };
                if let Ok(snap) = snap {
                    if !send(&mut socket, &Outbound::Snapshot(snap)).await {
                        return;
                    }
                }
                if let Some((seq, record)) = field {
                    if seq != last_field_seq {
                        last_field_seq = seq;
                        if !send(&mut socket, &Outbound::Field(record)).await {
                            return;
                        }
                    }
                }
            }
            msg = socket.recv() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Binary(_))) => {
                        let err = Outbound::Error { message: "binary frames are not supported".into() };
                        if !send(&mut socket, &err).await { return; }
                        continue;
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => continue,
                };
                match serde_json::from_str::<Inbound>(&text) {
                    Ok(Inbound::Steer { agent_id, action }) => {
                        let bus = state.bus.clone();
                        let now = state.clock.now_ms();
                        let res = tokio::task::spawn_blocking(move || apply_steer(bus.as_ref(), &agent_id, &action, now))
                            .await
                            .unwrap_or_else(|e| Err(SteerError::Bus(e.to_string())));
                        if let Err(e) = res {
                            if !send(&mut socket, &Outbound::Error { message: e.to_string() }).await { return; }
                        }
                    }
                    Ok(Inbound::Select { agent_id }) => {
                        match agent_id {
                            Some(id) if !TopicKey::is_valid_segment(&id) => {
                                let err = Outbound::Error { message: SteerError::AgentId(id).to_string() };
                                if !send(&mut socket, &err).await { return; }
                            }
                            other => {
                                field_agent = other;
                                last_field_seq = 0;
                            }
                        }
                    }
                    Err(e) => {
                        let err = Outbound::Error { message: SteerError::Malformed(e.to_string()).to_string() };
                        if !send(&mut socket, &err).await { return; }
                    }
                }
            }
        }
    }
}

fn latest_field(bus: &dyn Bus, agent_id: &str) -> Option<(u64, FieldRecord)> {
    let key = TopicKey::agent_field(agent_id).ok()?;
    let env = bus.read(&key).ok()??;
    let map: FieldMap = env.decode().ok()?;
    Some((
        env.seq,
        FieldRecord {
            t_ms: env.published_at,
            agent_id: agent_id.to_owned(),
            size: map.size,
            values: map.values,
        },
    ))
}
