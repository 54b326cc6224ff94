//! TCP frames: one JSON object per line, one response per request.
//!
//! ```text
//! -> {"op":"set","key":"agent/A/state","payload":{...}}
//! <- {"ok":true,"seq":3}
//! -> {"op":"scan","prefix":"agent/"}
//! <- {"ok":true,"envelopes":[{"key":...,"payload":...,"seq":3,"published_at":120}]}
//! ```
//!
//! A scan may carry a `suffix` to filter keys on the server side.
//!
//! `get` answers with an `envelopes` list holding zero or one entry; reading
//! `control/stop` is how a remote client observes the stop flag.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Envelope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Set,
    Get,
    Scan,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
    /// Optional filter on scans: only keys ending with this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suffix: Option<String>,
    /// A present `null` stays `Some(Value::Null)`; only an absent field is `None`.
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "present")]
    pub payload: Option<Value>,
}

fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

impl Request {
    pub fn set(key: &str, payload: Value) -> Self {
        Request { op: Op::Set, key: Some(key.to_owned()), prefix: None, suffix: None, payload: Some(payload) }
    }

    pub fn get(key: &str) -> Self {
        Request { op: Op::Get, key: Some(key.to_owned()), prefix: None, suffix: None, payload: None }
    }

    pub fn scan(prefix: &str) -> Self {
        Request { op: Op::Scan, key: None, prefix: Some(prefix.to_owned()), suffix: None, payload: None }
    }

    pub fn scan_suffix(prefix: &str, suffix: &str) -> Self {
        Request { suffix: Some(suffix.to_owned()), ..Request::scan(prefix) }
    }

    pub fn stop() -> Self {
        Request { op: Op::Stop, key: None, prefix: None, suffix: None, payload: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelopes: Option<Vec<Envelope>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn ok() -> Self {
        Response { ok: true, seq: None, envelopes: None, error: None }
    }

    pub fn seq(seq: u64) -> Self {
        Response { seq: Some(seq), ..Self::ok() }
    }

    pub fn envelopes(envelopes: Vec<Envelope>) -> Self {
        Response { envelopes: Some(envelopes), ..Self::ok() }
    }

    pub fn error(msg: impl Into<String>) -> Self {
        Response { ok: false, seq: None, envelopes: None, error: Some(msg.into()) }
    }
}
