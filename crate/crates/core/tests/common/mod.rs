//! Independent oracles and fixture helpers shared by the integration tests.
#![allow(dead_code)]

use poinav_core::mapping::{Cell, CellState, CostMap, GridMap};
use poinav_core::{Point2, Scene};
use rand::Rng;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::PathBuf;
use std::sync::Arc;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn scene(rel: &str) -> Arc<Scene> {
    Arc::new(Scene::load(&fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}")))
}

/// Every scene of a fixture directory, in file-name order.
pub fn suite(dir: &str) -> Vec<Arc<Scene>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixture(dir))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Arc::new(Scene::load(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))))
        .collect()
}

/// Integer cost grid: 0 is a wall, otherwise the cost of entering the cell.
pub struct IntGrid {
    pub w: usize,
    pub h: usize,
    pub cost: Vec<u8>,
}

impl IntGrid {
    pub fn random(rng: &mut impl Rng, w: usize, h: usize, wall_p: f64) -> Self {
        let cost = (0..w * h)
            .map(|_| if rng.random_bool(wall_p) { 0 } else { rng.random_range(1..=5) })
            .collect();
        Self { w, h, cost }
    }

    pub fn at(&self, x: i32, y: i32) -> Option<u8> {
        (x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h)
            .then(|| self.cost[y as usize * self.w + x as usize])
    }

    fn open(&self, x: i32, y: i32) -> bool {
        self.at(x, y).is_some_and(|c| c > 0)
    }

    /// Cost map with unit resolution, walls impassable.
    pub fn costmap(&self) -> CostMap {
        let costs = self
            .cost
            .iter()
            .map(|&c| if c == 0 { f64::INFINITY } else { c as f64 })
            .collect();
        CostMap::from_costs(self.w, self.h, 1.0, costs)
    }

    /// Cost of a cell path as (orthogonal part, diagonal part); the metric
    /// cost is `a + sqrt(2) * b`. `None` if the path makes an illegal move.
    pub fn path_pair(&self, cells: &[Cell]) -> Option<(i64, i64)> {
        let (mut a, mut b) = (0i64, 0i64);
        for w in cells.windows(2) {
            let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
            let c = self.at(w[1].x, w[1].y).filter(|&c| c > 0)? as i64;
            match (dx.abs(), dy.abs()) {
                (1, 0) | (0, 1) => a += c,
                (1, 1) => {
                    if !self.open(w[0].x + dx, w[0].y) || !self.open(w[0].x, w[0].y + dy) {
                        return None;
                    }
                    b += c;
                }
                _ => return None,
            }
        }
        Some((a, b))
    }

    /// Textbook Dijkstra over exact (orthogonal, diagonal) cost pairs.
    /// Distinct pairs never tie because sqrt(2) is irrational.
    pub fn dijkstra(&self, s: Cell, g: Cell) -> Option<(i64, i64)> {
        if !self.open(s.x, s.y) || !self.open(g.x, g.y) {
            return None;
        }
        let key = |p: (i64, i64)| p.0 as f64 + std::f64::consts::SQRT_2 * p.1 as f64;
        let idx = |c: Cell| c.y as usize * self.w + c.x as usize;
        let mut best: Vec<Option<(i64, i64)>> = vec![None; self.w * self.h];
        let mut done = vec![false; self.w * self.h];
        let mut heap = BinaryHeap::new();
        best[idx(s)] = Some((0, 0));
        heap.push(Reverse((Key(0.0), 0i64, 0i64, s.x, s.y)));
        while let Some(Reverse((_, a, b, x, y))) = heap.pop() {
            let here = Cell::new(x, y);
            if done[idx(here)] {
                continue;
            }
            done[idx(here)] = true;
            if here == g {
                return Some((a, b));
            }
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 || !self.open(x + dx, y + dy) {
                        continue;
                    }
                    let c = self.at(x + dx, y + dy).unwrap() as i64;
                    let next = if dx != 0 && dy != 0 {
                        if !self.open(x + dx, y) || !self.open(x, y + dy) {
                            continue;
                        }
                        (a, b + c)
                    } else {
                        (a + c, b)
                    };
                    let n = Cell::new(x + dx, y + dy);
                    if best[idx(n)].is_none_or(|old| key(next) < key(old)) {
                        best[idx(n)] = Some(next);
                        heap.push(Reverse((Key(key(next)), next.0, next.1, n.x, n.y)));
                    }
                }
            }
        }
        None
    }
}

/// Total order wrapper for heap keys.
#[derive(Clone, Copy, PartialEq, PartialOrd)]
pub struct Key(pub f64);

impl Eq for Key {}

impl std::cmp::Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Random map of Unknown/Free/Occupied blobs: each cell copies a random
/// earlier neighbor most of the time, which yields contiguous regions.
pub fn random_grid(rng: &mut impl Rng, w: usize, h: usize) -> GridMap {
    let states = [CellState::Unknown, CellState::Free, CellState::Occupied];
    let mut cells = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let (x, y) = (i % w, i / w);
        let s = if rng.random_bool(0.8) && (x > 0 || y > 0) {
            if x > 0 && (y == 0 || rng.random_bool(0.5)) {
                cells[i - 1]
            } else {
                cells[i - w]
            }
        } else {
            states[rng.random_range(0..3)]
        };
        cells.push(s);
    }
    GridMap::from_cells(w, h, 0.1, Point2::new(0.0, 0.0), cells).unwrap()
}

/// Frontier clusters by direct enumeration and union-find. Returns each
/// cluster's cells (row-major) and its representative: the member nearest
/// the centroid, first in row-major order on ties.
pub fn brute_frontiers(map: &GridMap, min_cluster: usize) -> Vec<(Vec<Cell>, Cell)> {
    let (w, h) = (map.width() as i32, map.height() as i32);
    let state = |x: i32, y: i32| {
        (x >= 0 && y >= 0 && x < w && y < h).then(|| map.cells()[(y * w + x) as usize])
    };
    let is_frontier = |x: i32, y: i32| {
        state(x, y) == Some(CellState::Free)
            && [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|(dx, dy)| state(x + dx, y + dy) == Some(CellState::Unknown))
    };
    let n = (w * h) as usize;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for y in 0..h {
        for x in 0..w {
            if !is_frontier(x, y) {
                continue;
            }
            for (dx, dy) in [(1, 0), (-1, 1), (0, 1), (1, 1)] {
                if is_frontier(x + dx, y + dy) {
                    let a = find(&mut parent, (y * w + x) as usize);
                    let b = find(&mut parent, ((y + dy) * w + x + dx) as usize);
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<Cell>> = Default::default();
    for i in 0..n {
        let (x, y) = ((i as i32) % w, (i as i32) / w);
        if is_frontier(x, y) {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(Cell::new(x, y));
        }
    }
    let mut out: Vec<(Vec<Cell>, Cell)> = groups
        .into_values()
        .filter(|g| g.len() >= min_cluster.max(1))
        .map(|g| {
            let k = g.len() as i64;
            let (sx, sy) = g.iter().fold((0i64, 0i64), |(a, b), c| (a + c.x as i64, b + c.y as i64));
            let mut rep = g[0];
            let mut best = i64::MAX;
            for c in &g {
                let d = (k * c.x as i64 - sx).pow(2) + (k * c.y as i64 - sy).pow(2);
                if d < best {
                    best = d;
                    rep = *c;
                }
            }
            (g, rep)
        })
        .collect();
    out.sort_by_key(|(g, _)| (g[0].y, g[0].x));
    out
}
