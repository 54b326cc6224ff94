//! Random bus scripts replayed against two transports.

#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use swarmfield_core::bus::{Bus, BusError, BusServer, Envelope, MemoryBus, TcpBus, TopicKey};
use swarmfield_core::clock::SimClock;

#[derive(Debug, Clone)]
pub enum Step {
    Publish(String, Value),
    Read(String),
    Scan(String),
    ScanSuffix(String, String),
    RaiseStop,
    StopRequested,
    Advance(u64),
}

const KEYS: &[&str] = &[
    "agent/A/state",
    "agent/A/field",
    "agent/B/state",
    "agent/B/message",
    "env/main/state",
    "control/agent/A/action",
    "control/stop",
    "agent//state",
    "agent/A B/state",
    "",
    "nokey",
];
const PREFIXES: &[&str] = &["", "agent/", "agent/A", "agent/A/", "env/", "control/", "zzz"];
const SUFFIXES: &[&str] = &["", "/state", "/field", "e", "stop", "nokey"];

fn payload(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    match rng.random_range(0..if depth == 0 { 5 } else { 7 }) {
        0 => Value::Null,
        1 => json!(rng.random::<bool>()),
        2 => json!(rng.random::<i64>()),
        3 => json!(rng.random_range(-1e6..1e6) * rng.random::<f64>()),
        4 => json!(format!("s{}", rng.random::<u16>())),
        5 => Value::Array((0..rng.random_range(0..4)).map(|_| payload(rng, depth - 1)).collect()),
        _ => Value::Object(
            (0..rng.random_range(0..4))
                .map(|i| (format!("k{i}"), payload(rng, depth - 1)))
                .collect(),
        ),
    }
}

pub fn script(seed: u64) -> Vec<Step> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(1..40);
    (0..len)
        .map(|_| {
            let key = KEYS.choose(&mut rng).unwrap().to_string();
            match rng.random_range(0..100) {
                0..=44 => Step::Publish(key, payload(&mut rng, 2)),
                45..=64 => Step::Read(key),
                65..=72 => Step::Scan(PREFIXES.choose(&mut rng).unwrap().to_string()),
                73..=79 => Step::ScanSuffix(
                    PREFIXES.choose(&mut rng).unwrap().to_string(),
                    SUFFIXES.choose(&mut rng).unwrap().to_string(),
                ),
                80..=84 => Step::RaiseStop,
                85..=92 => Step::StopRequested,
                _ => Step::Advance(rng.random_range(0..500)),
            }
        })
        .collect()
}

/// What a caller can observe from one step.
#[derive(Debug, Clone, PartialEq)]
pub enum Observed {
    Seq(Result<u64, BusError>),
    One(Result<Option<Envelope>, BusError>),
    Many(Result<Vec<Envelope>, BusError>),
    Unit(Result<(), BusError>),
    Flag(Result<bool, BusError>),
    BadKey(BusError),
    Tick,
}

pub fn replay(bus: &dyn Bus, clock: &SimClock, steps: &[Step]) -> Vec<Observed> {
    steps
        .iter()
        .map(|step| match step {
            Step::Publish(k, v) => match TopicKey::new(k.as_str()) {
                Ok(key) => Observed::Seq(bus.publish(&key, v.clone())),
                Err(e) => Observed::BadKey(e),
            },
            Step::Read(k) => match TopicKey::new(k.as_str()) {
                Ok(key) => Observed::One(bus.read(&key)),
                Err(e) => Observed::BadKey(e),
            },
            Step::Scan(p) => Observed::Many(bus.scan(p)),
            Step::ScanSuffix(p, s) => Observed::Many(bus.scan_suffix(p, s)),
            Step::RaiseStop => Observed::Unit(bus.raise_stop()),
            Step::StopRequested => Observed::Flag(bus.stop_requested()),
            Step::Advance(ms) => {
                clock.advance(*ms);
                Observed::Tick
            }
        })
        .collect()
}

/// Traces of the in-process and the TCP transport for one script.
pub fn both_traces(steps: &[Step]) -> (Vec<Observed>, Vec<Observed>) {
    let clock = Arc::new(SimClock::new());
    let memory = MemoryBus::with_clock(clock.clone());
    let local = replay(&memory, &clock, steps);

    let clock = Arc::new(SimClock::new());
    let backing = Arc::new(MemoryBus::with_clock(clock.clone()));
    let server = BusServer::bind("127.0.0.1:0", backing).expect("bind loopback");
    let client = TcpBus::connect(server.local_addr()).expect("connect loopback");
    let remote = replay(&client, &clock, steps);
    drop(client);
    drop(server);
    (local, remote)
}
