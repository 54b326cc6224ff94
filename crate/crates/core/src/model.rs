//! Domain types shared by every process: positions, arena limits, the discrete
//! action vocabulary and the state messages exchanged on the bus.
//!
//! Axis convention used everywhere: FRONT is +X, LEFT is +Y. Agents never
//! rotate, so the body frame and the global frame share axes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A point in the global arena frame, in meters.
///
/// Serialized as a two-element array `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position2D {
    pub x: f64,
    pub y: f64,
}

impl Position2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Position2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Per-axis offset `other - self`.
    pub fn delta_to(&self, other: &Position2D) -> (f64, f64) {
        (other.x - self.x, other.y - self.y)
    }

    pub fn offset(&self, dx: f64, dy: f64) -> Position2D {
        Position2D::new(self.x + dx, self.y + dy)
    }
}

impl Serialize for Position2D {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Position2D {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(deserializer)?;
        Ok(Position2D { x, y })
    }
}

impl From<(f64, f64)> for Position2D {
    fn from((x, y): (f64, f64)) -> Self {
        Position2D::new(x, y)
    }
}

/// Axis-aligned arena bounds in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceLimits {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl SpaceLimits {
    /// Limits large enough that nothing in a desk-scale run ever reaches them.
    pub const UNBOUNDED: SpaceLimits = SpaceLimits {
        x_min: -1.0e9,
        x_max: 1.0e9,
        y_min: -1.0e9,
        y_max: 1.0e9,
    };

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    /// Closed-interval containment: a point exactly on a wall is inside.
    pub fn contains(&self, p: &Position2D) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn center(&self) -> Position2D {
        Position2D::new(
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn translated(&self, dx: f64, dy: f64) -> SpaceLimits {
        SpaceLimits {
            x_min: self.x_min + dx,
            x_max: self.x_max + dx,
            y_min: self.y_min + dy,
            y_max: self.y_max + dy,
        }
    }
}

/// One of the nine discrete moves available to an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Stop,
    Front,
    Back,
    Left,
    Right,
    FrontLeft,
    FrontRight,
    BackLeft,
    BackRight,
}

impl Action {
    /// All actions, in the deterministic preference order used for tie-breaking.
    pub const ALL: [Action; 9] = [
        Action::Stop,
        Action::Front,
        Action::Back,
        Action::Left,
        Action::Right,
        Action::FrontLeft,
        Action::FrontRight,
        Action::BackLeft,
        Action::BackRight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::Stop => "STOP",
            Action::Front => "FRONT",
            Action::Back => "BACK",
            Action::Left => "LEFT",
            Action::Right => "RIGHT",
            Action::FrontLeft => "FRONT_LEFT",
            Action::FrontRight => "FRONT_RIGHT",
            Action::BackLeft => "BACK_LEFT",
            Action::BackRight => "BACK_RIGHT",
        }
    }

    /// Sign of the X and Y components (-1, 0 or 1).
    pub fn axis_signs(self) -> (i8, i8) {
        match self {
            Action::Stop => (0, 0),
            Action::Front => (1, 0),
            Action::Back => (-1, 0),
            Action::Left => (0, 1),
            Action::Right => (0, -1),
            Action::FrontLeft => (1, 1),
            Action::FrontRight => (1, -1),
            Action::BackLeft => (-1, 1),
            Action::BackRight => (-1, -1),
        }
    }

    pub fn from_axis_signs(sx: i8, sy: i8) -> Option<Action> {
        Action::ALL
            .into_iter()
            .find(|a| a.axis_signs() == (sx.signum(), sy.signum()))
    }

    pub fn is_diagonal(self) -> bool {
        let (sx, sy) = self.axis_signs();
        sx != 0 && sy != 0
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown action {0:?}")]
pub struct UnknownAction(pub String);

impl FromStr for Action {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownAction(s.to_owned()))
    }
}

/// Body-frame unit vector for an action. Diagonals are normalized so every
/// moving action travels at the same speed.
pub fn action_to_unit_vector(action: Action) -> (f64, f64) {
    let (sx, sy) = action.axis_signs();
    if sx != 0 && sy != 0 {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        (f64::from(sx) * c, f64::from(sy) * c)
    } else {
        (f64::from(sx), f64::from(sy))
    }
}

/// State an agent broadcasts on `agent/{id}/state` every tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentState {
    pub agent_id: String,
    pub position: Position2D,
    pub last_action: Action,
    /// Milliseconds since run start.
    pub timestamp: u64,
    pub sequence: u64,
}

/// State the environment publishes on `env/main/state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentState {
    pub limits: SpaceLimits,
    pub points: Vec<Position2D>,
    pub timestamp: u64,
    pub sequence: u64,
}

/// Square agent-centered perception grid. Row `i` follows +X (front),
/// column `j` follows +Y (left). `extent` is the half-side in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMap {
    pub size: usize,
    pub extent: f64,
    /// Row-major, `size * size` entries.
    pub values: Vec<f64>,
}

impl FieldMap {
    pub fn zeros(size: usize, extent: f64) -> Self {
        FieldMap {
            size,
            extent,
            values: vec![0.0; size * size],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.size + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.size + j] += v;
    }

    /// Side length of one cell in meters.
    pub fn pitch(&self) -> f64 {
        2.0 * self.extent / self.size as f64
    }

    /// Offset of cell `(i, j)`'s center from the map center, in meters.
    pub fn cell_offset(&self, i: usize, j: usize) -> (f64, f64) {
        let p = self.pitch();
        (
            -self.extent + (i as f64 + 0.5) * p,
            -self.extent + (j as f64 + 0.5) * p,
        )
    }

    pub fn is_well_formed(&self) -> bool {
        self.values.len() == self.size * self.size && self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_vectors_follow_axis_convention() {
        assert_eq!(action_to_unit_vector(Action::Front), (1.0, 0.0));
        assert_eq!(action_to_unit_vector(Action::Back), (-1.0, 0.0));
        assert_eq!(action_to_unit_vector(Action::Left), (0.0, 1.0));
        assert_eq!(action_to_unit_vector(Action::Right), (0.0, -1.0));
        assert_eq!(action_to_unit_vector(Action::Stop), (0.0, 0.0));
    }

    #[test]
    fn diagonal_is_normalized() {
        let (dx, dy) = action_to_unit_vector(Action::FrontLeft);
        // 1/sqrt(2) computed independently
        let expected = 1.0 / 2f64.sqrt();
        assert_eq!((format!("{dx:.5}"), format!("{dy:.5}")), ("0.70711".into(), "0.70711".into()));
        assert!((dx - expected).abs() < 1e-15);
    }

    #[test]
    fn norms_exhaustive() {
        for a in Action::ALL {
            let (dx, dy) = action_to_unit_vector(a);
            let n = dx.hypot(dy);
            if a == Action::Stop {
                assert_eq!(n, 0.0);
            } else {
                assert!((n - 1.0).abs() < 1e-15, "{a}: {n}");
            }
        }
    }

    #[test]
    fn action_names_round_trip() {
        for a in Action::ALL {
            assert_eq!(a.name().parse::<Action>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert!("NORTH".parse::<Action>().is_err());
    }

    #[test]
    fn from_axis_signs_inverts() {
        for a in Action::ALL {
            let (sx, sy) = a.axis_signs();
            assert_eq!(Action::from_axis_signs(sx, sy), Some(a));
        }
    }

    #[test]
    fn position_serializes_as_pair() {
        let p = Position2D::new(-0.5, 0.25);
        assert_eq!(serde_json::to_string(&p).unwrap(), "[-0.5,0.25]");
        let back: Position2D = serde_json::from_str("[-0.5,0.25]").unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn limits_validity() {
        let ok = SpaceLimits { x_min: -2.5, x_max: 1.5, y_min: -1.0, y_max: 2.0 };
        assert!(ok.is_valid());
        assert!(!SpaceLimits { x_min: 1.5, ..ok }.is_valid());
        assert!(!SpaceLimits { y_max: f64::NAN, ..ok }.is_valid());
        assert!(ok.contains(&Position2D::new(1.5, 2.0)));
        assert!(!ok.contains(&Position2D::new(1.5001, 0.0)));
    }
}
