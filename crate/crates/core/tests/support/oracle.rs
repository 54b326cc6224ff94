//! Naive reference implementations, written from the definitions and kept
//! free of any shortcut the production code takes.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use swarmfield_core::field::ModulationParams;
use swarmfield_core::model::{Action, FieldMap, Position2D, SpaceLimits};

/// Per-cell brute force: every source is evaluated at every cell center.
pub fn oracle_field(
    me: Position2D,
    neighbors: &[Position2D],
    pois: &[Position2D],
    limits: &SpaceLimits,
    p: &ModulationParams,
) -> FieldMap {
    let n = p.field_size;
    let pitch = 2.0 * p.vicinity / n as f64;
    let margin = (n as f64 * (p.clip_factor - 1.0) / 2.0).round() as usize;
    let big = n + 2 * margin;
    let big_extent = pitch * big as f64 / 2.0;
    let sigma = p.modulation_radius / 3.0;

    // Each source sits at the center of the extended-grid cell it projects to.
    let mut sources = Vec::new();
    for (q, amp) in neighbors
        .iter()
        .map(|q| (q, p.negative_amplitude))
        .chain(pois.iter().map(|q| (q, p.positive_amplitude)))
    {
        let (dx, dy) = (q.x - me.x, q.y - me.y);
        if dx.abs() > big_extent || dy.abs() > big_extent {
            continue;
        }
        let cell = |d: f64| (((d + big_extent) / (2.0 * big_extent) * big as f64).floor().max(0.0) as usize).min(big - 1);
        let center = |c: usize| -big_extent + (c as f64 + 0.5) * pitch;
        sources.push((center(cell(dx)), center(cell(dy)), amp));
    }

    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let cx = -big_extent + ((i + margin) as f64 + 0.5) * pitch;
        for j in 0..n {
            let cy = -big_extent + ((j + margin) as f64 + 0.5) * pitch;
            let mut v = 0.0;
            for &(sx, sy, amp) in &sources {
                let d = ((cx - sx).powi(2) + (cy - sy).powi(2)).sqrt();
                if d <= p.modulation_radius + 1e-9 {
                    v += amp * (-(d * d) / (2.0 * sigma * sigma)).exp();
                }
            }
            let (wx, wy) = (me.x + cx, me.y + cy);
            if wx < limits.x_min || wx > limits.x_max || wy < limits.y_min || wy > limits.y_max {
                v = p.boundary_value;
            }
            values[i * n + j] = v;
        }
    }
    FieldMap { size: n, extent: p.vicinity, values }
}

/// Block sums, `grid[i][j]` with `i` along +X and `j` along +Y.
pub fn oracle_pool_sum(map: &FieldMap) -> [[f64; 3]; 3] {
    let b = map.size / 3;
    let mut grid = [[0.0; 3]; 3];
    for i in 0..map.size {
        for j in 0..map.size {
            grid[i / b][j / b] += map.values[i * map.size + j];
        }
    }
    grid
}

/// Argmax with the fixed preference order on ties.
pub fn oracle_hill_climb(grid: &[[f64; 3]; 3]) -> Action {
    let order = [
        (Action::Stop, 1, 1),
        (Action::Front, 2, 1),
        (Action::Back, 0, 1),
        (Action::Left, 1, 2),
        (Action::Right, 1, 0),
        (Action::FrontLeft, 2, 2),
        (Action::FrontRight, 2, 0),
        (Action::BackLeft, 0, 2),
        (Action::BackRight, 0, 0),
    ];
    let mut best = order[0];
    for cand in order {
        if grid[cand.1][cand.2] > grid[best.1][best.2] {
            best = cand;
        }
    }
    best.0
}

/// Random limits, an agent near them, and up to six neighbors and six POIs
/// within the extended window or slightly beyond it.
pub fn random_scene(rng: &mut ChaCha8Rng) -> (Position2D, Vec<Position2D>, Vec<Position2D>, SpaceLimits) {
    let x_min = rng.random_range(-3.0..-0.2);
    let y_min = rng.random_range(-3.0..-0.2);
    let limits = SpaceLimits {
        x_min,
        x_max: x_min + rng.random_range(0.5..4.0),
        y_min,
        y_max: y_min + rng.random_range(0.5..4.0),
    };
    let me = Position2D::new(
        rng.random_range(limits.x_min - 0.3..limits.x_max + 0.3),
        rng.random_range(limits.y_min - 0.3..limits.y_max + 0.3),
    );
    let nk = rng.random_range(0..=6);
    let pk = rng.random_range(0..=6);
    let mut around = |k: usize| -> Vec<Position2D> {
        (0..k)
            .map(|_| me.offset(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)))
            .collect()
    };
    let neighbors = around(nk);
    let pois = around(pk);
    (me, neighbors, pois, limits)
}

