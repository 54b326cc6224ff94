//! Post-run metrics over a trajectory file.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::environment::point_schedule;
use crate::logging::TrajectoryRecord;
use crate::model::Position2D;

/// Half-open time range `[from_ms, to_ms)`; `None` is unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsWindow {
    pub from_ms: Option<u64>,
    pub to_ms: Option<u64>,
}

impl MetricsWindow {
    pub const ALL: MetricsWindow = MetricsWindow { from_ms: None, to_ms: None };

    pub fn new(from_ms: Option<u64>, to_ms: Option<u64>) -> Self {
        MetricsWindow { from_ms, to_ms }
    }

    pub fn contains(&self, t: u64) -> bool {
        self.from_ms.is_none_or(|f| t >= f) && self.to_ms.is_none_or(|e| t < e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosestPair {
    pub distance: f64,
    pub t_ms: u64,
    pub agents: (String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub window: MetricsWindow,
    /// Distinct `(agent, t_ms)` samples inside the window.
    pub samples: usize,
    pub min_pairwise_distance: Option<f64>,
    pub closest_pair: Option<ClosestPair>,
    pub boundary_violations: u64,
    pub mean_distance_to_nearest_poi: BTreeMap<String, f64>,
    pub per_agent_path_length: BTreeMap<String, f64>,
}

type Track = Vec<(u64, Position2D)>;

/// Time-ordered, de-duplicated samples per agent.
fn tracks(records: &[TrajectoryRecord]) -> BTreeMap<String, Track> {
    let mut out: BTreeMap<String, Track> = BTreeMap::new();
    for r in records {
        out.entry(r.agent_id.clone()).or_default().push((r.t_ms, Position2D::new(r.x, r.y)));
    }
    for track in out.values_mut() {
        track.sort_by_key(|&(t, _)| t);
        track.dedup_by_key(|&mut (t, _)| t);
    }
    out
}

/// Sample of `track` closest in time to `t`, if within `tolerance`.
fn sample_near(track: &Track, t: u64, tolerance: u64) -> Option<Position2D> {
    let i = track.partition_point(|&(ts, _)| ts < t);
    [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter_map(|k| track.get(k))
        .map(|&(ts, p)| (ts.abs_diff(t), p))
        .filter(|&(d, _)| d <= tolerance)
        .min_by_key(|&(d, _)| d)
        .map(|(_, p)| p)
}

/// Computes the standard metrics of a run inside `window`.
///
/// Pairwise distances compare agents at each logged instant, pairing every
/// agent's sample nearest in time within one agent delay. POI distances
/// replay the environment's rotation schedule from the config.
pub fn compute_metrics(records: &[TrajectoryRecord], config: &ExperimentConfig, window: MetricsWindow) -> MetricsReport {
    let all = tracks(records);
    let in_window: BTreeMap<&str, Track> = all
        .iter()
        .map(|(id, tr)| (id.as_str(), tr.iter().copied().filter(|&(t, _)| window.contains(t)).collect()))
        .collect();
    let tolerance = config.max_agent_delay_ms().unwrap_or(0);

    let instants: BTreeSet<u64> = in_window.values().flat_map(|tr| tr.iter().map(|&(t, _)| t)).collect();
    let mut closest: Option<ClosestPair> = None;
    for &t in &instants {
        let here: Vec<(&str, Position2D)> = in_window
            .iter()
            .filter_map(|(id, tr)| sample_near(tr, t, tolerance).map(|p| (*id, p)))
            .collect();
        for (i, (a, pa)) in here.iter().enumerate() {
            for (b, pb) in &here[i + 1..] {
                let d = pa.distance(pb);
                if closest.as_ref().is_none_or(|c| d < c.distance) {
                    closest = Some(ClosestPair {
                        distance: d,
                        t_ms: t,
                        agents: ((*a).to_owned(), (*b).to_owned()),
                    });
                }
            }
        }
    }

    let limits = config.environment.as_ref().and_then(|e| e.limits());
    let boundary_violations = limits.map_or(0, |l| {
        in_window.values().flatten().filter(|(_, p)| !l.contains(p)).count() as u64
    });

    let per_agent_path_length = in_window
        .iter()
        .map(|(id, tr)| {
            let len = tr.windows(2).map(|w| w[0].1.distance(&w[1].1)).sum();
            ((*id).to_owned(), len)
        })
        .collect();

    let mut mean_distance_to_nearest_poi = BTreeMap::new();
    if let Some(env) = config.field_environment().filter(|e| !e.modulation_points.is_empty()) {
        let last_t = instants.iter().next_back().copied().unwrap_or(0);
        let schedule: Vec<Vec<Position2D>> = point_schedule(env).take((last_t / env.delay_ms + 1) as usize).collect();
        for (id, tr) in &in_window {
            if tr.is_empty() {
                continue;
            }
            let total: f64 = tr
                .iter()
                .map(|&(t, p)| {
                    let pois = &schedule[(t / env.delay_ms) as usize];
                    pois.iter().map(|q| p.distance(q)).fold(f64::INFINITY, f64::min)
                })
                .sum();
            mean_distance_to_nearest_poi.insert((*id).to_owned(), total / tr.len() as f64);
        }
    }

    MetricsReport {
        window,
        samples: in_window.values().map(Vec::len).sum(),
        min_pairwise_distance: closest.as_ref().map(|c| c.distance),
        closest_pair: closest,
        boundary_violations,
        mean_distance_to_nearest_poi,
        per_agent_path_length,
    }
}
