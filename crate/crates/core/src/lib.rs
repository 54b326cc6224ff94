//! Field-modulation swarm simulation.
//!
//! Virtual 2D drones perceive each other and points of interest through
//! small agent-centered gaussian field maps, pick one of nine discrete
//! actions and move. Everything talks through a last-value [`bus::Bus`].

pub mod agent;
pub mod bus;
pub mod clock;
pub mod config;
pub mod controllers;
pub mod environment;
pub mod field;
pub mod hello;
pub mod logging;
pub mod metrics;
pub mod model;
pub mod process;

pub use agent::VirtualDrone2D;
pub use bus::{Bus, BusError, BusExt, Envelope, MemoryBus, TopicKey};
pub use clock::{Clock, OffsetClock, SimClock, WallClock};
pub use config::{parse_config, ExperimentConfig};
pub use field::{build_field, ModulationParams};
pub use model::{Action, AgentState, EnvironmentState, FieldMap, Position2D, SpaceLimits};
