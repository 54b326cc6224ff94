use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde_json::Value;

use super::{Bus, BusError, Envelope, TopicKey};
use crate::clock::{Clock, WallClock};

#[derive(Debug, Default)]
struct Store {
    entries: BTreeMap<String, Envelope>,
    stopped: bool,
}

/// In-process bus. Every operation takes one lock, which makes each key
/// linearizable.
#[derive(Debug)]
pub struct MemoryBus {
    store: RwLock<Store>,
    clock: Arc<dyn Clock>,
}

impl MemoryBus {
    pub fn new() -> Self {
        Self::with_clock(Arc::new(WallClock::new()))
    }

    /// Uses `clock` to stamp `published_at`.
    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        MemoryBus {
            store: RwLock::new(Store::default()),
            clock,
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Number of retained keys, including the stop flag once raised.
    pub fn len(&self) -> usize {
        self.store.read().expect("bus lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn publish_raw(&self, key: &str, payload: Value) -> Result<u64, BusError> {
        if !TopicKey::is_valid(key) {
            return Err(BusError::InvalidKey(key.to_owned()));
        }
        if key == TopicKey::STOP {
            return Err(BusError::ReservedKey(key.to_owned()));
        }
        let mut store = self.store.write().expect("bus lock poisoned");
        if store.stopped {
            return Err(BusError::Stopped);
        }
        let seq = store.entries.get(key).map_or(1, |e| e.seq + 1);
        let published_at = self.clock.now_ms();
        store.entries.insert(
            key.to_owned(),
            Envelope {
                key: key.to_owned(),
                payload: Arc::new(payload),
                seq,
                published_at,
            },
        );
        Ok(seq)
    }

    pub(crate) fn read_raw(&self, key: &str) -> Result<Option<Envelope>, BusError> {
        if !TopicKey::is_valid(key) {
            return Err(BusError::InvalidKey(key.to_owned()));
        }
        Ok(self.store.read().expect("bus lock poisoned").entries.get(key).cloned())
    }
}

impl Default for MemoryBus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus for MemoryBus {
    fn publish(&self, key: &TopicKey, payload: Value) -> Result<u64, BusError> {
        self.publish_raw(key.as_str(), payload)
    }

    fn read(&self, key: &TopicKey) -> Result<Option<Envelope>, BusError> {
        self.read_raw(key.as_str())
    }

    fn scan(&self, prefix: &str) -> Result<Vec<Envelope>, BusError> {
        let store = self.store.read().expect("bus lock poisoned");
        Ok(store
            .entries
            .range(prefix.to_owned()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(_, e)| e.clone())
            .collect())
    }

    fn raise_stop(&self) -> Result<(), BusError> {
        let mut store = self.store.write().expect("bus lock poisoned");
        if !store.stopped {
            store.stopped = true;
            let published_at = self.clock.now_ms();
            store.entries.insert(
                TopicKey::STOP.to_owned(),
                Envelope {
                    key: TopicKey::STOP.to_owned(),
                    payload: Arc::new(Value::Bool(true)),
                    seq: 1,
                    published_at,
                },
            );
        }
        Ok(())
    }

    fn stop_requested(&self) -> Result<bool, BusError> {
        Ok(self.store.read().expect("bus lock poisoned").stopped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use serde_json::json;

    fn key(s: &str) -> TopicKey {
        TopicKey::new(s).unwrap()
    }

    #[test]
    fn last_value_retention() {
        let bus = MemoryBus::new();
        let k = key("agent/A/state");
        assert_eq!(bus.read(&k).unwrap(), None);
        assert_eq!(bus.publish(&k, json!({"v": 1})).unwrap(), 1);
        assert_eq!(*bus.read(&k).unwrap().unwrap().payload, json!({"v": 1}));
        assert_eq!(bus.publish(&k, json!({"v": 2})).unwrap(), 2);
        let env = bus.read(&k).unwrap().unwrap();
        assert_eq!(*env.payload, json!({"v": 2}));
        assert_eq!(env.seq, 2);
    }

    #[test]
    fn sequence_seven() {
        let bus = MemoryBus::new();
        let k = key("agent/A/state");
        for i in 1..=7 {
            bus.publish(&k, json!(i)).unwrap();
        }
        assert_eq!(bus.read(&k).unwrap().unwrap().seq, 7);
    }

    #[test]
    fn scan_is_prefix_ordered() {
        let bus = MemoryBus::new();
        bus.publish(&key("env/main/state"), json!(0)).unwrap();
        bus.publish(&key("agent/B/state"), json!(2)).unwrap();
        bus.publish(&key("agent/A/state"), json!(1)).unwrap();
        let got = bus.scan("agent/").unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].key, "agent/A/state");
        assert_eq!(got[1].key, "agent/B/state");
        assert!(bus.scan("zzz/").unwrap().is_empty());
        assert_eq!(bus.scan("").unwrap().len(), 3);
    }

    #[test]
    fn stop_is_sticky_and_blocks_publish() {
        let bus = MemoryBus::new();
        assert!(!bus.stop_requested().unwrap());
        bus.raise_stop().unwrap();
        assert!(bus.stop_requested().unwrap());
        bus.raise_stop().unwrap();
        assert!(bus.stop_requested().unwrap());
        assert_eq!(bus.read(&TopicKey::stop()).unwrap().unwrap().seq, 1);
        assert_eq!(
            bus.publish(&key("agent/A/state"), json!(1)),
            Err(BusError::Stopped)
        );
    }

    #[test]
    fn stop_key_is_reserved() {
        let bus = MemoryBus::new();
        assert!(matches!(
            bus.publish(&TopicKey::stop(), json!(false)),
            Err(BusError::ReservedKey(_))
        ));
        assert!(!bus.stop_requested().unwrap());
    }

    #[test]
    fn published_at_comes_from_clock() {
        let clock = Arc::new(SimClock::new());
        let bus = MemoryBus::with_clock(clock.clone());
        clock.set(1234);
        bus.publish(&key("a/b"), json!(null)).unwrap();
        assert_eq!(bus.read(&key("a/b")).unwrap().unwrap().published_at, 1234);
    }

    #[test]
    fn concurrent_publishers_read_highest_sequence() {
        let bus = Arc::new(MemoryBus::new());
        let k = key("agent/A/state");
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let bus = bus.clone();
                let k = k.clone();
                std::thread::spawn(move || {
                    for i in 0..250 {
                        bus.publish(&k, json!({"t": t, "i": i})).unwrap();
                    }
                })
            })
            .collect();
        let reader = {
            let bus = bus.clone();
            let k = k.clone();
            std::thread::spawn(move || {
                let mut last = 0;
                for _ in 0..500 {
                    if let Some(e) = bus.read(&k).unwrap() {
                        assert!(e.seq >= last);
                        last = e.seq;
                    }
                }
            })
        };
        for h in handles {
            h.join().unwrap();
        }
        reader.join().unwrap();
        assert_eq!(bus.read(&k).unwrap().unwrap().seq, 1000);
    }
}
