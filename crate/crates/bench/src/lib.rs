//! Inputs shared by the benchmarks.

use poinav_core::mapping::{inflate_obstacles, InflationParams};
use poinav_core::{Cell, CellState, CostMap, DepthScan, GridMap, Point2, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Free floor with scattered wall segments, fixed by `seed`.
pub fn cluttered_map(w: usize, h: usize, seed: u64) -> GridMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = GridMap::filled(w, h, 0.1, Point2::new(0.0, 0.0), CellState::Free).expect("valid size");
    for _ in 0..(w * h) / 200 {
        let (x, y) = (rng.random_range(0..w as i32), rng.random_range(0..h as i32));
        let horizontal = rng.random_bool(0.5);
        for k in 0..rng.random_range(3..15) {
            let c = if horizontal { Cell::new(x + k, y) } else { Cell::new(x, y + k) };
            if map.contains(c) {
                map.set(c, CellState::Occupied);
            }
        }
    }
    // keep the corners open for start and goal
    for c in [Cell::new(1, 1), Cell::new(w as i32 - 2, h as i32 - 2)] {
        map.set(c, CellState::Free);
    }
    map
}

pub fn costmap(map: &GridMap) -> CostMap {
    inflate_obstacles(map, &InflationParams::default())
}

/// Left half known free, right half unknown, with a ragged boundary.
pub fn half_explored(w: usize, h: usize, seed: u64) -> GridMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = GridMap::new(w, h, 0.1, Point2::new(0.0, 0.0)).expect("valid size");
    for y in 0..h as i32 {
        let edge = w as i32 / 2 + rng.random_range(-3..=3);
        for x in 0..edge {
            map.set(Cell::new(x, y), CellState::Free);
        }
    }
    map
}

/// A full 90-beam scan with ranges drawn from [0.5, 5].
pub fn scan(pose: Pose, seed: u64) -> DepthScan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fov = std::f64::consts::FRAC_PI_2;
    let beam_angles = DepthScan::beam_layout(fov, 90);
    let ranges = beam_angles.iter().map(|_| rng.random_range(0.5..5.0)).collect();
    DepthScan {
        pose,
        fov,
        beam_angles,
        ranges,
        max_range: 5.0,
    }
}
