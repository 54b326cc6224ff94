//! The field-modulation environment: rotating points of interest.

use crate::bus::{Bus, BusExt, TopicKey};
use crate::config::FieldEnvironmentConfig;
use crate::model::{EnvironmentState, Position2D};
use crate::process::{AppProcess, ProcessError, Role};

/// Rotates every point counter-clockwise about `center` by `theta_degrees`.
pub fn rotate_points(points: &[Position2D], center: Position2D, theta_degrees: f64) -> Vec<Position2D> {
    let (sin, cos) = theta_degrees.to_radians().sin_cos();
    points
        .iter()
        .map(|p| {
            let dx = p.x - center.x;
            let dy = p.y - center.y;
            Position2D::new(center.x + dx * cos - dy * sin, center.y + dx * sin + dy * cos)
        })
        .collect()
}

/// Points of interest as published by environment tick `tick` (zero based).
///
/// Tick `k` publishes the configured points rotated `k + 1` times, applied
/// one rotation at a time exactly as the running environment does.
pub fn points_at_tick(config: &FieldEnvironmentConfig, tick: u64) -> Vec<Position2D> {
    let mut points = config.modulation_points.clone();
    for _ in 0..=tick {
        points = rotate_points(&points, config.rotation_center, config.theta_degrees);
    }
    points
}

/// Iterator over [`points_at_tick`] for tick 0, 1, 2, ... without recomputation.
pub fn point_schedule(config: &FieldEnvironmentConfig) -> impl Iterator<Item = Vec<Position2D>> + '_ {
    let mut points = config.modulation_points.clone();
    std::iter::repeat_with(move || {
        points = rotate_points(&points, config.rotation_center, config.theta_degrees);
        points.clone()
    })
}

#[derive(Debug, Clone)]
pub struct FieldModulationEnvironment {
    config: FieldEnvironmentConfig,
    points: Vec<Position2D>,
    ticks: u64,
    published: u64,
}

impl FieldModulationEnvironment {
    pub fn new(config: FieldEnvironmentConfig) -> Self {
        let points = config.modulation_points.clone();
        FieldModulationEnvironment {
            config,
            points,
            ticks: 0,
            published: 0,
        }
    }

    pub fn points(&self) -> &[Position2D] {
        &self.points
    }

    /// Advances the rotation and publishes the new state. The rotation
    /// advances even if publishing fails, so POI positions depend only on
    /// the tick count.
    pub fn env_tick(&mut self, bus: &dyn Bus, now_ms: u64) -> Result<EnvironmentState, crate::bus::BusError> {
        self.points = rotate_points(&self.points, self.config.rotation_center, self.config.theta_degrees);
        self.ticks += 1;
        let state = EnvironmentState {
            limits: self.config.limits,
            points: self.points.clone(),
            timestamp: now_ms,
            sequence: self.published + 1,
        };
        bus.publish_as(&TopicKey::env_state(), &state)?;
        self.published += 1;
        Ok(state)
    }
}

impl AppProcess for FieldModulationEnvironment {
    fn name(&self) -> &str {
        "environment"
    }

    fn role(&self) -> Role {
        Role::Environment
    }

    fn delay_ms(&self) -> u64 {
        self.config.delay_ms
    }

    fn step(&mut self, bus: &dyn Bus, now_ms: u64) -> Result<(), ProcessError> {
        if let Err(e) = self.env_tick(bus, now_ms) {
            tracing::debug!(error = %e, "environment publish failed, retrying next cycle");
        }
        Ok(())
    }

    fn ticks(&self) -> u64 {
        self.ticks
    }
}
