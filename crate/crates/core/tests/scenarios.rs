//! Canonical perception scenes and what hill climbing does in them.

mod support;

use support::oracle::{oracle_field, oracle_hill_climb, oracle_pool_sum};
use swarmfield_core::controllers::{hill_climb, pool_field};
use swarmfield_core::field::{build_field, ModulationParams};
use swarmfield_core::model::{Action, Position2D, SpaceLimits};

const ARENA: SpaceLimits = SpaceLimits { x_min: -2.5, x_max: 1.5, y_min: -1.0, y_max: 2.0 };
const O: Position2D = Position2D::new(0.0, 0.0);

fn grid_close(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3], tol: f64) -> bool {
    a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn neighbor_at_center_makes_own_block_the_strict_minimum() {
    let p = ModulationParams::default();
    let map = build_field(O, &[O], &[], &SpaceLimits::UNBOUNDED, &p);
    let grid = pool_field(&map, "sum").unwrap();
    let center = grid.cells[1][1];
    for (i, row) in grid.cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if (i, j) != (1, 1) {
                assert!(center < v, "block ({i},{j}) = {v} not above center {center}");
            }
        }
    }
    let action = hill_climb(&map, "sum").unwrap();
    assert_ne!(action, Action::Stop);

    // Frozen from the brute-force oracle.
    let oracle = oracle_pool_sum(&oracle_field(O, &[O], &[], &SpaceLimits::UNBOUNDED, &p));
    assert!(grid_close(&grid.cells, &oracle, 1e-9));
    let frozen = [
        [-38.57276492856906, -187.18498343548626, -43.28939202800374],
        [-187.18498343548617, -860.4225131152538, -208.9581714762965],
        [-43.28939202800373, -208.95817147629663, -48.5578382891956],
    ];
    assert!(grid_close(&grid.cells, &frozen, 1e-9), "{:?}", grid.cells);
    assert_eq!(action, Action::BackRight);
    assert_eq!(oracle_hill_climb(&oracle), Action::BackRight);
}

#[test]
fn poi_at_center_holds_position() {
    let p = ModulationParams::default();
    let map = build_field(O, &[], &[O], &SpaceLimits::UNBOUNDED, &p);
    assert_eq!(hill_climb(&map, "sum").unwrap(), Action::Stop);
    let grid = pool_field(&map, "sum").unwrap();
    let frozen = [
        [25.715176619046023, 124.78998895699085, 28.859594685335804],
        [124.78998895699091, 573.6150087435013, 139.30544765086435],
        [28.859594685335804, 139.30544765086444, 32.37189219279701],
    ];
    assert!(grid_close(&grid.cells, &frozen, 1e-9), "{:?}", grid.cells);
}

#[test]
fn poi_ahead_with_neighbors_behind_moves_front() {
    let p = ModulationParams::default();
    let neighbors = [Position2D::new(-0.25, 0.25), Position2D::new(-0.25, -0.25)];
    let pois = [Position2D::new(0.3, 0.0)];
    let map = build_field(O, &neighbors, &pois, &SpaceLimits::UNBOUNDED, &p);
    assert_eq!(hill_climb(&map, "sum").unwrap(), Action::Front);
    let oracle = oracle_pool_sum(&oracle_field(O, &neighbors, &pois, &SpaceLimits::UNBOUNDED, &p));
    assert_eq!(oracle_hill_climb(&oracle), Action::Front);
    assert!((oracle[2][1] - 563.3103425798487).abs() < 1e-9);
}

/// Agent 0.05 m inside each wall of the arena with nothing around it.
fn wall_cases() -> Vec<(&'static str, Position2D, [Action; 3])> {
    let mid_x = (ARENA.x_min + ARENA.x_max) / 2.0;
    let mid_y = (ARENA.y_min + ARENA.y_max) / 2.0;
    vec![
        ("front wall", Position2D::new(ARENA.x_max - 0.05, mid_y), [Action::Front, Action::FrontLeft, Action::FrontRight]),
        ("back wall", Position2D::new(ARENA.x_min + 0.05, mid_y), [Action::Back, Action::BackLeft, Action::BackRight]),
        ("left wall", Position2D::new(mid_x, ARENA.y_max - 0.05), [Action::Left, Action::FrontLeft, Action::BackLeft]),
        ("right wall", Position2D::new(mid_x, ARENA.y_min + 0.05), [Action::Right, Action::FrontRight, Action::BackRight]),
    ]
}

#[test]
fn agent_near_a_wall_never_heads_into_it() {
    let p = ModulationParams::default();
    for (wall, me, forbidden) in wall_cases() {
        let map = build_field(me, &[], &[], &ARENA, &p);
        let action = hill_climb(&map, "sum").unwrap();
        let grid = pool_field(&map, "sum").unwrap();
        for a in forbidden {
            assert_ne!(action, a, "{wall}");
            assert!(grid.value(a) < 0.0, "{wall}: {a:?} block not penalized");
        }
    }
}

#[test]
fn wall_patch_is_flat_minus_one() {
    let p = ModulationParams::default();
    let me = Position2D::new(ARENA.x_max - 0.1, 0.5);
    let map = build_field(me, &[], &[], &ARENA, &p);
    let oracle = oracle_field(me, &[], &[], &ARENA, &p);
    assert_eq!(map, oracle);
    let patched = map.values.iter().filter(|&&v| v == -1.0).count();
    assert_eq!(patched, 34 * 84);
}
