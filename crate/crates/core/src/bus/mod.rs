//! The communicator: a topic-keyed store that retains only the latest value
//! per key.
//!
//! Two transports share one contract: [`MemoryBus`] for in-process runs and
//! [`TcpBus`] talking to a [`BusServer`] over newline-delimited JSON.
//! Stop is a sticky flag on [`TopicKey::STOP`]; once raised, every publish
//! fails with [`BusError::Stopped`].

mod memory;
mod tcp;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use memory::MemoryBus;
pub use tcp::{BusServer, TcpBus};

/// Error string used on the wire for [`BusError::Stopped`].
pub const STOPPED_MESSAGE: &str = "bus stopped";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("bus stopped")]
    Stopped,
    #[error("invalid topic key {0:?}")]
    InvalidKey(String),
    #[error("topic key {0:?} is reserved")]
    ReservedKey(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote error: {0}")]
    Remote(String),
}

impl BusError {
    /// Whether retrying the same call later might succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, BusError::Transport(_))
    }
}

/// A validated key of the form `namespace/id/facet`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicKey(String);

impl TopicKey {
    pub const STOP: &'static str = "control/stop";

    pub fn new(key: impl Into<String>) -> Result<Self, BusError> {
        let key = key.into();
        if Self::is_valid(&key) {
            Ok(TopicKey(key))
        } else {
            Err(BusError::InvalidKey(key))
        }
    }

    /// Non-empty, `/`-separated segments, none empty or containing whitespace.
    pub fn is_valid(key: &str) -> bool {
        !key.is_empty()
            && key
                .split('/')
                .all(|seg| !seg.is_empty() && !seg.chars().any(char::is_whitespace))
    }

    /// Whether `id` can be embedded as one key segment.
    pub fn is_valid_segment(id: &str) -> bool {
        !id.is_empty() && !id.contains('/') && !id.chars().any(char::is_whitespace)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn stop() -> Self {
        TopicKey(Self::STOP.to_owned())
    }

    pub fn agent_state(agent_id: &str) -> Result<Self, BusError> {
        Self::new(format!("agent/{agent_id}/state"))
    }

    pub fn agent_field(agent_id: &str) -> Result<Self, BusError> {
        Self::new(format!("agent/{agent_id}/field"))
    }

    pub fn agent_message(agent_id: &str) -> Result<Self, BusError> {
        Self::new(format!("agent/{agent_id}/message"))
    }

    pub fn agent_action(agent_id: &str) -> Result<Self, BusError> {
        Self::new(format!("control/agent/{agent_id}/action"))
    }

    pub fn env_state() -> Self {
        TopicKey("env/main/state".to_owned())
    }

    pub fn env_message() -> Self {
        TopicKey("env/main/message".to_owned())
    }
}

impl fmt::Display for TopicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for TopicKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Retained value of one key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub key: String,
    /// Shared so that scans do not copy large payloads.
    pub payload: Arc<Value>,
    /// Per-key counter assigned by the bus, starting at 1.
    pub seq: u64,
    pub published_at: u64,
}

impl Envelope {
    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, BusError> {
        T::deserialize(&*self.payload)
            .map_err(|e| BusError::Protocol(format!("payload of {}: {e}", self.key)))
    }
}

/// Operations every transport provides. Safe to call from many threads.
pub trait Bus: Send + Sync {
    /// Stores `payload` as the latest value of `key` and returns its sequence.
    fn publish(&self, key: &TopicKey, payload: Value) -> Result<u64, BusError>;

    fn read(&self, key: &TopicKey) -> Result<Option<Envelope>, BusError>;

    /// Latest envelope of every key starting with `prefix`, in key order.
    fn scan(&self, prefix: &str) -> Result<Vec<Envelope>, BusError>;

    /// Like [`Bus::scan`], keeping only keys that end with `suffix`.
    /// Transports override it to avoid moving unwanted payloads.
    fn scan_suffix(&self, prefix: &str, suffix: &str) -> Result<Vec<Envelope>, BusError> {
        let mut envs = self.scan(prefix)?;
        envs.retain(|e| e.key.ends_with(suffix));
        Ok(envs)
    }

    fn raise_stop(&self) -> Result<(), BusError>;

    fn stop_requested(&self) -> Result<bool, BusError>;
}

/// Typed helpers on top of [`Bus`].
pub trait BusExt: Bus {
    fn publish_as<T: Serialize>(&self, key: &TopicKey, value: &T) -> Result<u64, BusError> {
        let payload =
            serde_json::to_value(value).map_err(|e| BusError::Protocol(e.to_string()))?;
        self.publish(key, payload)
    }

    fn read_as<T: DeserializeOwned>(&self, key: &TopicKey) -> Result<Option<T>, BusError> {
        self.read(key)?.map(|env| env.decode()).transpose()
    }
}

impl<B: Bus + ?Sized> BusExt for B {}

impl<B: Bus + ?Sized> Bus for std::sync::Arc<B> {
    fn publish(&self, key: &TopicKey, payload: Value) -> Result<u64, BusError> {
        (**self).publish(key, payload)
    }
    fn read(&self, key: &TopicKey) -> Result<Option<Envelope>, BusError> {
        (**self).read(key)
    }
    fn scan(&self, prefix: &str) -> Result<Vec<Envelope>, BusError> {
        (**self).scan(prefix)
    }
    fn scan_suffix(&self, prefix: &str, suffix: &str) -> Result<Vec<Envelope>, BusError> {
        (**self).scan_suffix(prefix, suffix)
    }
    fn raise_stop(&self) -> Result<(), BusError> {
        (**self).raise_stop()
    }
    fn stop_requested(&self) -> Result<bool, BusError> {
        (**self).stop_requested()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_validation() {
        for ok in ["agent/A/state", "env/main/state", "control/stop", "control/agent/A/action", "x"] {
            assert!(TopicKey::new(ok).is_ok(), "{ok}");
        }
        for bad in ["", "agent//state", "/agent", "agent/A B/state", "agent/A/", "a\tb"] {
            assert!(TopicKey::new(bad).is_err(), "{bad:?}");
        }
        assert!(TopicKey::agent_state("has space").is_err());
        assert!(TopicKey::agent_state("a/b").is_ok()); // still a valid key, id validated elsewhere
        assert!(!TopicKey::is_valid_segment("a/b"));
    }
}
