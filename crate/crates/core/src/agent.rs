//! The virtual 2D drone: sense, build field, decide, move.

use std::sync::Arc;

use serde_json::json;

use crate::bus::{Bus, BusError, BusExt, TopicKey};
use crate::clock::Clock;
use crate::config::DroneConfig;
use crate::controllers::{Controller, ControllerError, Perception, RewardRegistry};
use crate::field::{FieldBuilder, FieldError};
use crate::model::{action_to_unit_vector, Action, AgentState, EnvironmentState, FieldMap, Position2D, SpaceLimits};
use crate::process::{run_wall_loop, AppProcess, ExitSummary, ProcessError, Role};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("agent {agent_id}: {source}")]
    Controller {
        agent_id: String,
        #[source]
        source: ControllerError,
    },
    #[error("agent {agent_id}: {source}")]
    Field {
        agent_id: String,
        #[source]
        source: FieldError,
    },
    #[error("agent id {0:?} cannot be used in a topic key")]
    InvalidId(String),
}

/// Mutable part of a drone that survives between ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRuntimeState {
    pub position: Position2D,
    pub last_action: Action,
    pub tick: u64,
    /// Sequence of the last published state.
    pub published: u64,
}

/// What one successful tick observed and decided.
#[derive(Debug, Clone)]
pub struct TickReport {
    pub published: AgentState,
    pub neighbors: Vec<Position2D>,
    pub points: Vec<Position2D>,
    pub field: FieldMap,
    pub action: Action,
    pub new_position: Position2D,
}

pub struct VirtualDrone2D {
    config: DroneConfig,
    state: AgentRuntimeState,
    controller: Box<dyn Controller>,
    builder: FieldBuilder,
    state_key: TopicKey,
    field_key: TopicKey,
}

impl std::fmt::Debug for VirtualDrone2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VirtualDrone2D")
            .field("agent_id", &self.config.agent_id)
            .field("controller", &self.controller.name())
            .field("state", &self.state)
            .finish()
    }
}

impl VirtualDrone2D {
    pub fn new(config: DroneConfig, initial: Position2D, registry: &RewardRegistry) -> Result<Self, AgentError> {
        let id = config.agent_id.clone();
        let params = config.modulation_params();
        params.validate().map_err(|source| AgentError::Field { agent_id: id.clone(), source })?;
        let default_epsilon = params.vicinity / params.field_size as f64;
        let controller = config
            .controller
            .build(registry, default_epsilon)
            .map_err(|source| AgentError::Controller { agent_id: id.clone(), source })?;
        let state_key = TopicKey::agent_state(&id).map_err(|_| AgentError::InvalidId(id.clone()))?;
        let field_key = TopicKey::agent_field(&id).map_err(|_| AgentError::InvalidId(id.clone()))?;
        Ok(VirtualDrone2D {
            config,
            state: AgentRuntimeState {
                position: initial,
                last_action: Action::Stop,
                tick: 0,
                published: 0,
            },
            controller,
            builder: FieldBuilder::new(params),
            state_key,
            field_key,
        })
    }

    pub fn agent_id(&self) -> &str {
        &self.config.agent_id
    }

    pub fn config(&self) -> &DroneConfig {
        &self.config
    }

    pub fn state(&self) -> &AgentRuntimeState {
        &self.state
    }

    /// One sense/decide/act cycle at run time `now_ms`.
    ///
    /// On a bus failure the cycle is abandoned and position, action and tick
    /// are left untouched.
    pub fn agent_tick(&mut self, bus: &dyn Bus, now_ms: u64) -> Result<TickReport, BusError> {
        let published = AgentState {
            agent_id: self.config.agent_id.clone(),
            position: self.state.position,
            last_action: self.state.last_action,
            timestamp: now_ms,
            sequence: self.state.published + 1,
        };
        bus.publish_as(&self.state_key, &published)?;
        self.state.published += 1;

        let params = *self.builder.params();
        let me = self.state.position;
        let near = |p: &Position2D| {
            let (dx, dy) = me.delta_to(p);
            params.in_extended_window(dx, dy)
        };

        let mut neighbors = Vec::new();
        for env in bus.scan_suffix("agent/", "/state")? {
            if env.key == self.state_key.as_str() {
                continue;
            }
            match env.decode::<AgentState>() {
                Ok(s) if near(&s.position) => neighbors.push(s.position),
                Ok(_) => {}
                Err(e) => tracing::debug!(key = %env.key, error = %e, "skipping unreadable agent state"),
            }
        }

        let (limits, points) = match bus.read(&TopicKey::env_state())? {
            Some(env) => match env.decode::<EnvironmentState>() {
                Ok(s) => (s.limits, s.points.into_iter().filter(|p| near(p)).collect()),
                Err(e) => {
                    tracing::debug!(error = %e, "skipping unreadable environment state");
                    (SpaceLimits::UNBOUNDED, Vec::new())
                }
            },
            None => (SpaceLimits::UNBOUNDED, Vec::new()),
        };

        let field = self.builder.build(me, &neighbors, &points, &limits);
        bus.publish(
            &self.field_key,
            json!({"size": field.size, "extent": field.extent, "values": field.values}),
        )?;

        let action = self.controller.predict(&Perception {
            agent_id: &self.config.agent_id,
            position: me,
            field: &field,
            now_ms,
            bus,
        });

        let step = self.config.velocity * self.config.delay_ms as f64 / 1000.0;
        let (ux, uy) = action_to_unit_vector(action);
        let mut next = me.offset(ux * step, uy * step);
        if self.config.safety_clamp && limits.is_valid() {
            next.x = next.x.clamp(limits.x_min, limits.x_max);
            next.y = next.y.clamp(limits.y_min, limits.y_max);
        }

        self.state.position = next;
        self.state.last_action = action;
        self.state.tick += 1;
        Ok(TickReport {
            published,
            neighbors,
            points,
            field,
            action,
            new_position: next,
        })
    }
}

impl AppProcess for VirtualDrone2D {
    fn name(&self) -> &str {
        &self.config.agent_id
    }

    fn role(&self) -> Role {
        Role::Agent
    }

    fn delay_ms(&self) -> u64 {
        self.config.delay_ms
    }

    fn step(&mut self, bus: &dyn Bus, now_ms: u64) -> Result<(), ProcessError> {
        if let Err(e) = self.agent_tick(bus, now_ms) {
            // Skipped cycle; the next one retries from the same state.
            tracing::debug!(agent_id = %self.config.agent_id, error = %e, "tick skipped");
        }
        Ok(())
    }

    fn ticks(&self) -> u64 {
        self.state.tick
    }

    fn exit_detail(&self) -> Option<serde_json::Value> {
        Some(json!({
            "terminal": true,
            "position": self.state.position,
            "last_action": self.state.last_action,
            "ticks": self.state.tick,
        }))
    }
}

/// Runs a drone in real time until the stop flag is raised.
pub fn run_agent_loop(mut agent: VirtualDrone2D, bus: Arc<dyn Bus>, clock: Arc<dyn Clock>) -> ExitSummary {
    run_wall_loop(&mut agent, bus.as_ref(), clock.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::MemoryBus;
    use crate::clock::SimClock;
    use crate::config::InitialPosition;
    use crate::controllers::ControllerSpec;

    fn drone(id: &str, at: Position2D, controller: ControllerSpec) -> VirtualDrone2D {
        let cfg = DroneConfig::new(id, InitialPosition::At(at), controller);
        VirtualDrone2D::new(cfg, at, &RewardRegistry::default()).unwrap()
    }

    #[test]
    fn lone_agent_stays_put() {
        let bus = MemoryBus::new();
        let mut a = drone("A", Position2D::new(0.0, 0.0), ControllerSpec::hill_climbing());
        for t in 0..5 {
            let r = a.agent_tick(&bus, t * 100).unwrap();
            assert_eq!(r.action, Action::Stop);
        }
        assert_eq!(a.state().position, Position2D::new(0.0, 0.0));
        assert_eq!(a.state().tick, 5);
    }

    #[test]
    fn publishes_state_and_field() {
        let bus = MemoryBus::new();
        let mut a = drone("A", Position2D::new(0.5, 0.5), ControllerSpec::hill_climbing());
        a.agent_tick(&bus, 0).unwrap();
        let s: AgentState = bus.read_as(&TopicKey::agent_state("A").unwrap()).unwrap().unwrap();
        assert_eq!(s.sequence, 1);
        assert_eq!(s.last_action, Action::Stop);
        let f: FieldMap = bus.read_as(&TopicKey::agent_field("A").unwrap()).unwrap().unwrap();
        assert_eq!(f.size, 84);
        assert_eq!(f.extent, 0.5);
        assert_eq!(f.values.len(), 84 * 84);
    }

    #[test]
    fn move_has_velocity_length() {
        let bus = MemoryBus::new();
        let mut a = drone("A", Position2D::new(0.0, 0.0), ControllerSpec::go_to(Position2D::new(1.0, 0.5)));
        let r = a.agent_tick(&bus, 0).unwrap();
        assert_eq!(r.action, Action::Front);
        let d = Position2D::new(0.0, 0.0).distance(&r.new_position);
        assert!((d - 0.035).abs() < 1e-12, "{d}");
    }

    #[test]
    fn stopped_bus_skips_cycle() {
        let bus = MemoryBus::new();
        let mut a = drone("A", Position2D::new(0.0, 0.0), ControllerSpec::go_to(Position2D::new(1.0, 0.0)));
        a.agent_tick(&bus, 0).unwrap();
        let before = a.state().clone();
        bus.raise_stop().unwrap();
        assert!(matches!(a.agent_tick(&bus, 100), Err(BusError::Stopped)));
        assert_eq!(a.state(), &before);
    }

    #[test]
    fn excludes_self_and_sees_neighbor() {
        let clock = Arc::new(SimClock::new());
        let bus = MemoryBus::with_clock(clock);
        let mut a = drone("A", Position2D::new(0.0, 0.0), ControllerSpec::hill_climbing());
        let mut b = drone("B", Position2D::new(0.3, 0.0), ControllerSpec::hill_climbing());
        a.agent_tick(&bus, 0).unwrap();
        let rb = b.agent_tick(&bus, 0).unwrap();
        assert_eq!(rb.neighbors, vec![Position2D::new(0.0, 0.0)]);
        let ra = a.agent_tick(&bus, 100).unwrap();
        assert_eq!(ra.neighbors, vec![Position2D::new(0.3, 0.0)]);
        // B sits in front of A, so A moves away from it.
        assert_eq!(ra.action.axis_signs().0, -1);
    }
}
