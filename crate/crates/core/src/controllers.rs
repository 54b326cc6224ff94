//! Decision policies. Each maps what an agent perceives to one of the nine
//! discrete actions; agents do not care which one they run.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bus::{Bus, BusExt, TopicKey};
use crate::model::{Action, FieldMap, Position2D};

pub const DEFAULT_REWARD: &str = "sum";
pub const DEFAULT_STALENESS_MS: u64 = 500;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("unknown reward function {0:?}")]
    UnknownReward(String),
    #[error("field of size {0} cannot be pooled into 3x3 blocks")]
    FieldSize(usize),
    #[error("go_to_point controller needs a target")]
    MissingTarget,
    #[error("arrival tolerance must be finite and >= 0, got {0}")]
    Epsilon(f64),
}

/// Reduces one pooling block (row-major values) to a scalar.
pub type RewardFn = fn(&[f64]) -> f64;

fn reward_sum(block: &[f64]) -> f64 {
    block.iter().sum()
}

/// Named reward functions available to the hill-climbing controller.
#[derive(Clone)]
pub struct RewardRegistry {
    functions: BTreeMap<String, RewardFn>,
}

impl fmt::Debug for RewardRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.functions.keys()).finish()
    }
}

impl Default for RewardRegistry {
    fn default() -> Self {
        let mut functions = BTreeMap::new();
        functions.insert(DEFAULT_REWARD.to_owned(), reward_sum as RewardFn);
        RewardRegistry { functions }
    }
}

impl RewardRegistry {
    pub fn register(&mut self, name: impl Into<String>, f: RewardFn) {
        self.functions.insert(name.into(), f);
    }

    pub fn get(&self, name: &str) -> Result<RewardFn, ControllerError> {
        self.functions
            .get(name)
            .copied()
            .ok_or_else(|| ControllerError::UnknownReward(name.to_owned()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.functions.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }
}

/// Pooled rewards; `cells[i][j]` follows the field axes, `(1, 1)` is the
/// agent's own block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardGrid3x3 {
    pub cells: [[f64; 3]; 3],
}

impl RewardGrid3x3 {
    /// Action that moves toward grid cell `(i, j)`.
    pub fn action_for_cell(i: usize, j: usize) -> Action {
        Action::from_axis_signs(i as i8 - 1, j as i8 - 1).expect("3x3 cell maps to an action")
    }

    pub fn cell_for_action(action: Action) -> (usize, usize) {
        let (sx, sy) = action.axis_signs();
        ((sx + 1) as usize, (sy + 1) as usize)
    }

    pub fn value(&self, action: Action) -> f64 {
        let (i, j) = Self::cell_for_action(action);
        self.cells[i][j]
    }

    /// Highest-valued action; ties go to the earliest entry of [`Action::ALL`].
    pub fn best_action(&self) -> Action {
        let mut best = Action::Stop;
        let mut best_value = self.value(best);
        for a in Action::ALL.into_iter().skip(1) {
            let v = self.value(a);
            if v > best_value {
                best = a;
                best_value = v;
            }
        }
        best
    }
}

/// Splits `map` into nine equal blocks and reduces each with `reward`.
pub fn pool_with(map: &FieldMap, reward: RewardFn) -> Result<RewardGrid3x3, ControllerError> {
    if map.size == 0 || !map.size.is_multiple_of(3) {
        return Err(ControllerError::FieldSize(map.size));
    }
    let b = map.size / 3;
    let mut cells = [[0.0; 3]; 3];
    let mut block = Vec::with_capacity(b * b);
    for (bi, row) in cells.iter_mut().enumerate() {
        for (bj, cell) in row.iter_mut().enumerate() {
            block.clear();
            for i in bi * b..(bi + 1) * b {
                let start = i * map.size + bj * b;
                block.extend_from_slice(&map.values[start..start + b]);
            }
            *cell = reward(&block);
        }
    }
    Ok(RewardGrid3x3 { cells })
}

/// [`pool_with`] using a reward registered under `reward` in the default registry.
pub fn pool_field(map: &FieldMap, reward: &str) -> Result<RewardGrid3x3, ControllerError> {
    pool_with(map, RewardRegistry::default().get(reward)?)
}

/// Pools the map and returns the action toward the best block.
pub fn hill_climb(map: &FieldMap, reward: &str) -> Result<Action, ControllerError> {
    Ok(pool_field(map, reward)?.best_action())
}

/// Single-axis pursuit: move along whichever axis has the larger remaining
/// delta (X on ties), or stop once both deltas are within `epsilon`.
pub fn go_to_point(current: Position2D, target: Position2D, epsilon: f64) -> Action {
    let (dx, dy) = current.delta_to(&target);
    if dx.abs().max(dy.abs()) <= epsilon {
        return Action::Stop;
    }
    if dx.abs() >= dy.abs() {
        if dx > 0.0 { Action::Front } else { Action::Back }
    } else if dy > 0.0 {
        Action::Left
    } else {
        Action::Right
    }
}

/// Steering command stored on `control/agent/{id}/action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteCommand {
    pub action: Action,
    pub published_at: u64,
}

/// Latest remote command for `agent_id` if it is at most `staleness_ms` old,
/// STOP otherwise. Any bus or decoding failure also yields STOP.
pub fn remote_action(bus: &dyn Bus, agent_id: &str, now_ms: u64, staleness_ms: u64) -> Action {
    let Ok(key) = TopicKey::agent_action(agent_id) else {
        return Action::Stop;
    };
    match bus.read_as::<RemoteCommand>(&key) {
        Ok(Some(cmd)) if now_ms.saturating_sub(cmd.published_at) <= staleness_ms => cmd.action,
        Ok(_) => Action::Stop,
        Err(e) => {
            tracing::debug!(agent_id, error = %e, "remote action unavailable");
            Action::Stop
        }
    }
}

/// Everything a controller may look at when deciding.
pub struct Perception<'a> {
    pub agent_id: &'a str,
    pub position: Position2D,
    pub field: &'a FieldMap,
    pub now_ms: u64,
    pub bus: &'a dyn Bus,
}

pub trait Controller: Send {
    fn name(&self) -> &'static str;
    fn predict(&mut self, perception: &Perception<'_>) -> Action;
}

#[derive(Debug, Clone)]
pub struct HillClimbing {
    reward: RewardFn,
}

impl HillClimbing {
    pub fn new(reward: &str, registry: &RewardRegistry) -> Result<Self, ControllerError> {
        Ok(HillClimbing {
            reward: registry.get(reward)?,
        })
    }
}

impl Controller for HillClimbing {
    fn name(&self) -> &'static str {
        "hill_climbing"
    }

    fn predict(&mut self, p: &Perception<'_>) -> Action {
        match pool_with(p.field, self.reward) {
            Ok(grid) => grid.best_action(),
            Err(e) => {
                tracing::warn!(agent_id = p.agent_id, error = %e, "cannot pool field");
                Action::Stop
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GoToPoint {
    pub target: Position2D,
    pub epsilon: f64,
}

impl Controller for GoToPoint {
    fn name(&self) -> &'static str {
        "go_to_point"
    }

    fn predict(&mut self, p: &Perception<'_>) -> Action {
        go_to_point(p.position, self.target, self.epsilon)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteSteered {
    pub staleness_ms: u64,
}

impl Controller for RemoteSteered {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn predict(&mut self, p: &Perception<'_>) -> Action {
        remote_action(p.bus, p.agent_id, p.now_ms, self.staleness_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    HillClimbing,
    GoToPoint,
    Remote,
}

/// Declarative controller choice as it appears in experiment files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    #[serde(default = "default_reward")]
    pub reward_function: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Position2D>,
    /// Arrival tolerance for `go_to_point`; defaults to half a cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_staleness")]
    pub staleness_ms: u64,
}

fn default_reward() -> String {
    DEFAULT_REWARD.to_owned()
}

fn default_staleness() -> u64 {
    DEFAULT_STALENESS_MS
}

impl ControllerSpec {
    pub fn of_kind(kind: ControllerKind) -> Self {
        ControllerSpec {
            kind,
            reward_function: default_reward(),
            target: None,
            epsilon: None,
            staleness_ms: DEFAULT_STALENESS_MS,
        }
    }

    pub fn hill_climbing() -> Self {
        Self::of_kind(ControllerKind::HillClimbing)
    }

    pub fn go_to(target: Position2D) -> Self {
        ControllerSpec {
            target: Some(target),
            ..Self::of_kind(ControllerKind::GoToPoint)
        }
    }

    pub fn remote() -> Self {
        Self::of_kind(ControllerKind::Remote)
    }

    pub fn validate(&self, registry: &RewardRegistry) -> Result<(), ControllerError> {
        registry.get(&self.reward_function)?;
        if self.kind == ControllerKind::GoToPoint && self.target.is_none() {
            return Err(ControllerError::MissingTarget);
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(ControllerError::Epsilon(eps));
            }
        }
        Ok(())
    }

    /// Instantiates the controller. `default_epsilon` is used by
    /// `go_to_point` when no explicit tolerance is configured.
    pub fn build(
        &self,
        registry: &RewardRegistry,
        default_epsilon: f64,
    ) -> Result<Box<dyn Controller>, ControllerError> {
        self.validate(registry)?;
        Ok(match self.kind {
            ControllerKind::HillClimbing => {
                Box::new(HillClimbing::new(&self.reward_function, registry)?)
            }
            ControllerKind::GoToPoint => Box::new(GoToPoint {
                target: self.target.ok_or(ControllerError::MissingTarget)?,
                epsilon: self.epsilon.unwrap_or(default_epsilon),
            }),
            ControllerKind::Remote => Box::new(RemoteSteered {
                staleness_ms: self.staleness_ms,
            }),
        })
    }
}
