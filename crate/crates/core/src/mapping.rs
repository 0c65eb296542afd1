//! Occupancy grid mapping from planar depth scans.
//!
//! The same [`GridMap`] type holds the traversability map and the exploration
//! map: `Unknown` cells are unexplored, `Free` and `Occupied` cells are known.
//! Ray traversal uses a 4-connected grid walk, so a ray can never slip between
//! two diagonally touching wall cells.

use crate::geometry::{normalize_angle, wrap_pi, Point2, Pose};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Default map resolution in meters per cell.
pub const DEFAULT_RESOLUTION: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error("map dimensions must be non-zero")]
    EmptyMap,
    #[error("pose ({x:.3}, {y:.3}) lies outside the map bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("scan has {angles} beam angles but {ranges} ranges")]
    BeamMismatch { angles: usize, ranges: usize },
    #[error("scan range {0} outside [0, max_range]")]
    InvalidRange(f64),
}

/// Belief about a single cell. The derived ordering is the merge order:
/// `Occupied` overrides `Free` overrides `Unknown`.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum CellState {
    #[default]
    Unknown,
    Free,
    Occupied,
}

/// Integer cell coordinate; may lie outside the map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn neighbors4(self) -> [Cell; 4] {
        [
            Cell::new(self.x + 1, self.y),
            Cell::new(self.x - 1, self.y),
            Cell::new(self.x, self.y + 1),
            Cell::new(self.x, self.y - 1),
        ]
    }

    pub fn neighbors8(self) -> impl Iterator<Item = Cell> {
        (-1..=1)
            .flat_map(move |dy| (-1..=1).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| dx != 0 || dy != 0)
            .map(move |(dx, dy)| Cell::new(self.x + dx, self.y + dy))
    }
}

/// Dense grid over a rectangular world region.
///
/// `origin` is the world position of the lower-left corner of cell `(0, 0)`;
/// cell `(i, j)` covers `[origin + i*res, origin + (i+1)*res)` on each axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    resolution: f64,
    origin: Point2,
    width: usize,
    height: usize,
    cells: Vec<CellState>,
}

impl GridMap {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Point2) -> Result<Self, MapError> {
        Self::filled(width, height, resolution, origin, CellState::Unknown)
    }

    pub fn filled(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point2,
        state: CellState,
    ) -> Result<Self, MapError> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(MapError::InvalidResolution(resolution));
        }
        if width == 0 || height == 0 {
            return Err(MapError::EmptyMap);
        }
        Ok(Self {
            resolution,
            origin,
            width,
            height,
            cells: vec![state; width * height],
        })
    }

    /// Builds a map from raw cells in row-major order (`y * width + x`).
    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point2,
        cells: Vec<CellState>,
    ) -> Result<Self, MapError> {
        let mut map = Self::new(width, height, resolution, origin)?;
        if cells.len() != width * height {
            return Err(MapError::EmptyMap);
        }
        map.cells = cells;
        Ok(map)
    }

    /// An empty map with the same geometry.
    pub fn blank_like(&self) -> Self {
        Self {
            cells: vec![CellState::Unknown; self.cells.len()],
            ..self.clone()
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x >= 0 && cell.y >= 0 && (cell.x as usize) < self.width && (cell.y as usize) < self.height
    }

    pub fn contains_point(&self, p: &Point2) -> bool {
        self.contains(self.cell_of(p))
    }

    pub fn index(&self, cell: Cell) -> Option<usize> {
        self.contains(cell)
            .then(|| cell.y as usize * self.width + cell.x as usize)
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    /// Cell containing a world point (may be out of bounds).
    pub fn cell_of(&self, p: &Point2) -> Cell {
        Cell::new(
            ((p.x - self.origin.x) / self.resolution).floor() as i32,
            ((p.y - self.origin.y) / self.resolution).floor() as i32,
        )
    }

    /// World position of a cell center.
    pub fn world_of(&self, cell: Cell) -> Point2 {
        Point2::new(
            self.origin.x + (cell.x as f64 + 0.5) * self.resolution,
            self.origin.y + (cell.y as f64 + 0.5) * self.resolution,
        )
    }

    pub fn get(&self, cell: Cell) -> Option<CellState> {
        self.index(cell).map(|i| self.cells[i])
    }

    pub fn state(&self, index: usize) -> CellState {
        self.cells[index]
    }

    pub fn set(&mut self, cell: Cell, state: CellState) {
        if let Some(i) = self.index(cell) {
            self.cells[i] = state;
        }
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == state).count()
    }

    /// Fraction of cells that are no longer `Unknown`.
    pub fn explored_fraction(&self) -> f64 {
        let known = self.cells.len() - self.count(CellState::Unknown);
        known as f64 / self.cells.len() as f64
    }

    /// Walks the cells pierced by a ray, in order, until `max_dist` meters or
    /// the map edge.
    pub fn ray_cells(&self, from: Point2, angle: f64, max_dist: f64) -> RayWalk<'_> {
        RayWalk::new(self, from, angle, max_dist)
    }

    /// Folds a depth scan into the map and returns the indices of cells that
    /// were `Unknown` before.
    ///
    /// Within one scan, a cell that is a hit for any beam is `Occupied`, and a
    /// cell only ever passed through is `Free`. Across scans the latest
    /// evidence wins, which can clear an `Occupied` cell only when a beam
    /// passes strictly through it.
    pub fn integrate_scan(&mut self, scan: &DepthScan) -> Result<Vec<usize>, MapError> {
        scan.validate()?;
        let origin = scan.pose.position();
        if !self.contains_point(&origin) {
            return Err(MapError::OutOfBounds {
                x: origin.x,
                y: origin.y,
            });
        }
        let mut hits = Vec::new();
        let mut passes = Vec::new();
        for (&rel, &range) in scan.beam_angles.iter().zip(&scan.ranges) {
            let is_hit = range < scan.max_range;
            let mut walked: Vec<usize> = Vec::new();
            for step in self.ray_cells(origin, scan.pose.heading + rel, range) {
                if step.t_enter < range || step.t_enter == 0.0 {
                    walked.push(step.index);
                } else {
                    break;
                }
            }
            if is_hit {
                if let Some(last) = walked.pop() {
                    hits.push(last);
                }
            }
            passes.extend(walked);
        }
        hits.sort_unstable();
        hits.dedup();
        passes.sort_unstable();
        passes.dedup();

        let mut revealed = Vec::new();
        for &i in &passes {
            if hits.binary_search(&i).is_ok() {
                continue;
            }
            if self.cells[i] == CellState::Unknown {
                revealed.push(i);
            }
            self.cells[i] = CellState::Free;
        }
        for &i in &hits {
            if self.cells[i] == CellState::Unknown {
                revealed.push(i);
            }
            self.cells[i] = CellState::Occupied;
        }
        revealed.sort_unstable();
        Ok(revealed)
    }

    /// Cells visible from `pose`: the agent's own cell plus every known cell
    /// whose center is within `max_range`, inside the `fov` wedge, and whose
    /// grid line from the agent crosses only `Free` cells.
    pub fn frustum_cells(&self, pose: &Pose, fov: f64, max_range: f64) -> Frustum {
        let here = pose.position();
        let agent = self.cell_of(&here);
        let Some(agent_idx) = self.index(agent) else {
            return Frustum::default();
        };
        let full_circle = fov >= TAU - 1e-12;
        let half_fov = fov / 2.0;
        let reach = (max_range / self.resolution).ceil() as i32 + 1;
        let mut cells = vec![agent_idx];
        for y in (agent.y - reach).max(0)..=(agent.y + reach).min(self.height as i32 - 1) {
            for x in (agent.x - reach).max(0)..=(agent.x + reach).min(self.width as i32 - 1) {
                let c = Cell::new(x, y);
                if c == agent {
                    continue;
                }
                let idx = self.index(c).expect("clamped to bounds");
                if self.cells[idx] == CellState::Unknown {
                    continue;
                }
                let center = self.world_of(c);
                if here.distance(&center) > max_range {
                    continue;
                }
                if !full_circle && wrap_pi(here.bearing_to(&center) - pose.heading).abs() > half_fov {
                    continue;
                }
                if self.line_of_sight(agent, c) {
                    cells.push(idx);
                }
            }
        }
        cells.sort_unstable();
        Frustum { cells }
    }

    /// True when every cell strictly between `a` and `b` on the Bresenham line
    /// is `Free`.
    pub fn line_of_sight(&self, a: Cell, b: Cell) -> bool {
        bresenham(a, b)
            .filter(|&c| c != a && c != b)
            .all(|c| self.get(c) == Some(CellState::Free))
    }

    /// Portable graymap (binary P5) rendering, top row first.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                out.push(match self.cells[y * self.width + x] {
                    CellState::Unknown => 127,
                    CellState::Free => 255,
                    CellState::Occupied => 0,
                });
            }
        }
        out
    }
}

/// One step of a grid ray walk. Distances are in meters along the ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayStep {
    pub cell: Cell,
    pub index: usize,
    pub t_enter: f64,
    pub t_exit: f64,
}

/// Amanatides–Woo traversal. When the ray crosses a cell corner exactly, the
/// x-neighbor is visited (with zero length) before the diagonal cell.
pub struct RayWalk<'a> {
    map: &'a GridMap,
    cell: Cell,
    step_x: i32,
    step_y: i32,
    t_max_x: f64,
    t_max_y: f64,
    t_delta_x: f64,
    t_delta_y: f64,
    t_enter: f64,
    max_dist: f64,
    done: bool,
}

impl<'a> RayWalk<'a> {
    fn new(map: &'a GridMap, from: Point2, angle: f64, max_dist: f64) -> Self {
        let res = map.resolution;
        let gx = (from.x - map.origin.x) / res;
        let gy = (from.y - map.origin.y) / res;
        let cell = Cell::new(gx.floor() as i32, gy.floor() as i32);
        let (dy, dx) = angle.sin_cos();
        let axis = |g: f64, d: f64, c: i32| -> (i32, f64, f64) {
            if d > 0.0 {
                (1, (c as f64 + 1.0 - g) / d * res, res / d)
            } else if d < 0.0 {
                (-1, (g - c as f64) / -d * res, res / -d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (step_x, t_max_x, t_delta_x) = axis(gx, dx, cell.x);
        let (step_y, t_max_y, t_delta_y) = axis(gy, dy, cell.y);
        Self {
            map,
            cell,
            step_x,
            step_y,
            t_max_x,
            t_max_y,
            t_delta_x,
            t_delta_y,
            t_enter: 0.0,
            max_dist,
            done: false,
        }
    }
}

impl Iterator for RayWalk<'_> {
    type Item = RayStep;

    fn next(&mut self) -> Option<RayStep> {
        if self.done {
            return None;
        }
        let index = self.map.index(self.cell)?;
        if self.t_enter > self.max_dist {
            self.done = true;
            return None;
        }
        let cell = self.cell;
        let t_enter = self.t_enter;
        let t_exit;
        if self.t_max_x <= self.t_max_y {
            t_exit = self.t_max_x;
            self.cell.x += self.step_x;
            self.t_max_x += self.t_delta_x;
        } else {
            t_exit = self.t_max_y;
            self.cell.y += self.step_y;
            self.t_max_y += self.t_delta_y;
        }
        self.t_enter = t_exit;
        if !t_exit.is_finite() {
            self.done = true;
        }
        Some(RayStep {
            cell,
            index,
            t_enter,
            t_exit,
        })
    }
}

/// Integer line from `a` to `b`, endpoints included.
pub fn bresenham(a: Cell, b: Cell) -> impl Iterator<Item = Cell> {
    let dx = (b.x - a.x).abs();
    let dy = -(b.y - a.y).abs();
    let sx = if a.x < b.x { 1 } else { -1 };
    let sy = if a.y < b.y { 1 } else { -1 };
    let mut err = dx + dy;
    let mut cur = Some(a);
    std::iter::from_fn(move || {
        let c = cur?;
        if c == b {
            cur = None;
        } else {
            let e2 = 2 * err;
            let mut next = c;
            if e2 >= dy {
                err += dy;
                next.x += sx;
            }
            if e2 <= dx {
                err += dx;
                next.y += sy;
            }
            cur = Some(next);
        }
        Some(c)
    })
}

/// Planar depth scan: one range per beam, `range == max_range` meaning no hit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthScan {
    pub pose: Pose,
    pub fov: f64,
    pub beam_angles: Vec<f64>,
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl DepthScan {
    /// Evenly spaced beam angles across `fov`, centered on the heading.
    /// A full-circle fov does not duplicate the wrap-around beam.
    pub fn beam_layout(fov: f64, beams: usize) -> Vec<f64> {
        if beams == 0 {
            return Vec::new();
        }
        if beams == 1 {
            return vec![0.0];
        }
        if fov >= TAU - 1e-12 {
            let step = TAU / beams as f64;
            return (0..beams).map(|i| i as f64 * step).collect();
        }
        let step = fov / (beams - 1) as f64;
        (0..beams).map(|i| -fov / 2.0 + i as f64 * step).collect()
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if self.beam_angles.len() != self.ranges.len() {
            return Err(MapError::BeamMismatch {
                angles: self.beam_angles.len(),
                ranges: self.ranges.len(),
            });
        }
        if let Some(&bad) = self
            .ranges
            .iter()
            .find(|&&r| !(0.0..=self.max_range).contains(&r))
        {
            return Err(MapError::InvalidRange(bad));
        }
        Ok(())
    }

    /// World angle of beam `i`.
    pub fn beam_angle(&self, i: usize) -> f64 {
        normalize_angle(self.pose.heading + self.beam_angles[i])
    }
}

/// Set of map cell indices visible from a pose, kept sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frustum {
    cells: Vec<usize>,
}

impl Frustum {
    pub fn from_indices(mut cells: Vec<usize>) -> Self {
        cells.sort_unstable();
        cells.dedup();
        Self { cells }
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.cells.binary_search(&index).is_ok()
    }

    pub fn overlaps(&self, other: &Frustum) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.cells.len() && j < other.cells.len() {
            match self.cells[i].cmp(&other.cells[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// How `Unknown` cells are treated when building a cost map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum UnknownCells {
    Blocked,
    Traversable { cost: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationParams {
    /// Meters around each occupied cell that receive the elevated cost.
    pub radius: f64,
    /// Multiplier applied to cells inside the inflation radius.
    pub inflated_cost: f64,
    pub unknown: UnknownCells,
}

impl Default for InflationParams {
    fn default() -> Self {
        Self {
            radius: 0.2,
            inflated_cost: 3.0,
            unknown: UnknownCells::Blocked,
        }
    }
}

/// Per-cell traversal cost. Every finite cost is at least 1; impassable cells
/// hold `f64::INFINITY`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point2,
    costs: Vec<f64>,
    inflated: Vec<bool>,
}

impl CostMap {
    /// Uniform cost map with the geometry of `map`.
    pub fn uniform(map: &GridMap, cost: f64) -> Self {
        Self {
            width: map.width,
            height: map.height,
            resolution: map.resolution,
            origin: map.origin,
            costs: vec![cost; map.len()],
            inflated: vec![false; map.len()],
        }
    }

    /// Cost map over a plain cost grid (row-major); mostly for tests and benches.
    pub fn from_costs(width: usize, height: usize, resolution: f64, costs: Vec<f64>) -> Self {
        assert_eq!(costs.len(), width * height);
        assert!(costs.iter().all(|&c| c >= 1.0), "costs must be >= 1");
        Self {
            width,
            height,
            resolution,
            origin: Point2::new(0.0, 0.0),
            costs,
            inflated: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x >= 0 && cell.y >= 0 && (cell.x as usize) < self.width && (cell.y as usize) < self.height
    }

    pub fn index(&self, cell: Cell) -> Option<usize> {
        self.contains(cell)
            .then(|| cell.y as usize * self.width + cell.x as usize)
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn cell_of(&self, p: &Point2) -> Cell {
        Cell::new(
            ((p.x - self.origin.x) / self.resolution).floor() as i32,
            ((p.y - self.origin.y) / self.resolution).floor() as i32,
        )
    }

    pub fn world_of(&self, cell: Cell) -> Point2 {
        Point2::new(
            self.origin.x + (cell.x as f64 + 0.5) * self.resolution,
            self.origin.y + (cell.y as f64 + 0.5) * self.resolution,
        )
    }

    /// Cost of entering `cell`; out-of-bounds cells are impassable.
    pub fn cost(&self, cell: Cell) -> f64 {
        self.index(cell).map_or(f64::INFINITY, |i| self.costs[i])
    }

    pub fn is_traversable(&self, cell: Cell) -> bool {
        self.cost(cell).is_finite()
    }

    /// Whether the cell lies within the inflation radius of an obstacle.
    pub fn is_inflated(&self, cell: Cell) -> bool {
        self.index(cell).is_some_and(|i| self.inflated[i])
    }

    pub fn set_cost(&mut self, cell: Cell, cost: f64) {
        if let Some(i) = self.index(cell) {
            self.costs[i] = cost;
        }
    }

    /// Copy with `center` blocked and costs multiplied by `factor` within
    /// `radius` meters of it.
    pub fn with_blockage(&self, center: Cell, radius: f64, factor: f64) -> CostMap {
        let mut out = self.clone();
        for (dx, dy) in disc_offsets(radius, self.resolution) {
            let c = Cell::new(center.x + dx, center.y + dy);
            if let Some(i) = out.index(c) {
                out.costs[i] *= factor;
            }
        }
        out.set_cost(center, f64::INFINITY);
        out
    }
}

/// Integer offsets whose centers lie within `radius` meters of the origin cell.
pub fn disc_offsets(radius: f64, resolution: f64) -> Vec<(i32, i32)> {
    let r = (radius / resolution).floor() as i32;
    let limit = (radius / resolution).powi(2) + 1e-9;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= limit {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Converts a map into a cost map: occupied cells impassable, cells within
/// `params.radius` of an occupied cell multiplied by `params.inflated_cost`,
/// unknown cells per `params.unknown`.
pub fn inflate_obstacles(map: &GridMap, params: &InflationParams) -> CostMap {
    let mut out = CostMap::uniform(map, 1.0);
    for (i, state) in map.cells.iter().enumerate() {
        out.costs[i] = match state {
            CellState::Free => 1.0,
            CellState::Occupied => f64::INFINITY,
            CellState::Unknown => match params.unknown {
                UnknownCells::Blocked => f64::INFINITY,
                UnknownCells::Traversable { cost } => cost.max(1.0),
            },
        };
    }
    if params.radius > 0.0 {
        let offsets = disc_offsets(params.radius, map.resolution);
        for (i, state) in map.cells.iter().enumerate() {
            if *state != CellState::Occupied {
                continue;
            }
            let c = map.cell_at(i);
            for &(dx, dy) in &offsets {
                if let Some(j) = map.index(Cell::new(c.x + dx, c.y + dy)) {
                    out.inflated[j] = true;
                }
            }
        }
        for (cost, &inflated) in out.costs.iter_mut().zip(&out.inflated) {
            if inflated && cost.is_finite() {
                *cost *= params.inflated_cost.max(1.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn map(w: usize, h: usize) -> GridMap {
        GridMap::new(w, h, 1.0, Point2::new(0.0, 0.0)).unwrap()
    }

    #[test]
    fn rejects_bad_resolution() {
        assert_eq!(
            GridMap::new(2, 2, 0.0, Point2::new(0.0, 0.0)),
            Err(MapError::InvalidResolution(0.0))
        );
    }

    #[test]
    fn world_cell_round_trip() {
        let m = GridMap::new(13, 7, 0.1, Point2::new(-1.3, 2.0)).unwrap();
        for i in 0..m.len() {
            let c = m.cell_at(i);
            assert_eq!(m.cell_of(&m.world_of(c)), c);
        }
    }

    #[test]
    fn single_beam_hit_marks_two_free_one_occupied() {
        let mut m = map(11, 11);
        let scan = DepthScan {
            pose: Pose::new(5.5, 5.5, 0.0),
            fov: 0.1,
            beam_angles: vec![0.0],
            ranges: vec![2.0],
            max_range: 5.0,
        };
        m.integrate_scan(&scan).unwrap();
        assert_eq!(m.get(Cell::new(5, 5)), Some(CellState::Free));
        assert_eq!(m.get(Cell::new(6, 5)), Some(CellState::Free));
        assert_eq!(m.get(Cell::new(7, 5)), Some(CellState::Occupied));
        assert_eq!(m.count(CellState::Free), 2);
        assert_eq!(m.count(CellState::Occupied), 1);
    }

    #[test]
    fn max_range_beam_is_all_free() {
        let mut m = map(11, 11);
        let scan = DepthScan {
            pose: Pose::new(5.5, 5.5, FRAC_PI_2),
            fov: 0.1,
            beam_angles: vec![0.0],
            ranges: vec![3.0],
            max_range: 3.0,
        };
        m.integrate_scan(&scan).unwrap();
        assert_eq!(m.count(CellState::Occupied), 0);
        assert!(m.count(CellState::Free) >= 3);
    }

    #[test]
    fn scan_outside_map_is_rejected() {
        let mut m = map(4, 4);
        let scan = DepthScan {
            pose: Pose::new(10.0, 1.0, 0.0),
            fov: 0.1,
            beam_angles: vec![0.0],
            ranges: vec![1.0],
            max_range: 2.0,
        };
        assert!(matches!(m.integrate_scan(&scan), Err(MapError::OutOfBounds { .. })));
    }

    #[test]
    fn occupied_cleared_only_by_pass_through() {
        let mut m = map(11, 11);
        m.set(Cell::new(7, 5), CellState::Occupied);
        // hit in the same cell keeps it occupied
        let hit = DepthScan {
            pose: Pose::new(5.5, 5.5, 0.0),
            fov: 0.1,
            beam_angles: vec![0.0],
            ranges: vec![2.0],
            max_range: 5.0,
        };
        m.integrate_scan(&hit).unwrap();
        assert_eq!(m.get(Cell::new(7, 5)), Some(CellState::Occupied));
        // a longer beam passes through and clears it
        let pass = DepthScan {
            ranges: vec![4.0],
            ..hit
        };
        m.integrate_scan(&pass).unwrap();
        assert_eq!(m.get(Cell::new(7, 5)), Some(CellState::Free));
    }

    #[test]
    fn frustum_degenerate_range_is_own_cell() {
        let m = map(5, 5);
        let f = m.frustum_cells(&Pose::new(2.5, 2.5, 0.0), TAU, 0.0);
        assert_eq!(f.cells(), &[m.index(Cell::new(2, 2)).unwrap()]);
    }

    #[test]
    fn frustum_excludes_cells_behind_wall() {
        let mut m = GridMap::filled(9, 9, 1.0, Point2::new(0.0, 0.0), CellState::Free).unwrap();
        for y in 0..9 {
            m.set(Cell::new(5, y), CellState::Occupied);
        }
        let f = m.frustum_cells(&Pose::new(4.5, 4.5, 0.0), 60f64.to_radians(), 10.0);
        assert!(f.contains(m.index(Cell::new(5, 4)).unwrap()), "wall itself is visible");
        for y in 0..9 {
            for x in 6..9 {
                assert!(!f.contains(m.index(Cell::new(x, y)).unwrap()));
            }
        }
    }

    #[test]
    fn inflation_radius_zero_is_identity() {
        let mut m = GridMap::filled(5, 5, 1.0, Point2::new(0.0, 0.0), CellState::Free).unwrap();
        m.set(Cell::new(2, 2), CellState::Occupied);
        let cm = inflate_obstacles(
            &m,
            &InflationParams {
                radius: 0.0,
                ..Default::default()
            },
        );
        for i in 0..m.len() {
            let expected = if i == m.index(Cell::new(2, 2)).unwrap() { f64::INFINITY } else { 1.0 };
            assert_eq!(cm.costs()[i], expected);
        }
    }

    #[test]
    fn inflation_fully_free_is_uniform() {
        let m = GridMap::filled(6, 4, 0.1, Point2::new(0.0, 0.0), CellState::Free).unwrap();
        let cm = inflate_obstacles(&m, &InflationParams::default());
        assert!(cm.costs().iter().all(|&c| c == 1.0));
    }

    #[test]
    fn unknown_traversable_flag() {
        let m = map(3, 3);
        let blocked = inflate_obstacles(&m, &InflationParams::default());
        assert!(blocked.costs().iter().all(|c| c.is_infinite()));
        let open = inflate_obstacles(
            &m,
            &InflationParams {
                unknown: UnknownCells::Traversable { cost: 2.0 },
                ..Default::default()
            },
        );
        assert!(open.costs().iter().all(|&c| c == 2.0));
    }

    #[test]
    fn explored_fraction_counts() {
        let mut m = map(3, 3);
        assert_eq!(m.explored_fraction(), 0.0);
        m.set(Cell::new(0, 0), CellState::Free);
        m.set(Cell::new(1, 0), CellState::Occupied);
        m.set(Cell::new(2, 2), CellState::Free);
        assert!((m.explored_fraction() - 1.0 / 3.0).abs() < 1e-15);
        let full = GridMap::filled(3, 3, 1.0, Point2::new(0.0, 0.0), CellState::Free).unwrap();
        assert_eq!(full.explored_fraction(), 1.0);
    }

    #[test]
    fn ray_walk_is_four_connected() {
        let m = map(20, 20);
        let cells: Vec<Cell> = m
            .ray_cells(Point2::new(0.5, 0.5), 0.9, 15.0)
            .map(|s| s.cell)
            .collect();
        for w in cells.windows(2) {
            assert_eq!((w[0].x - w[1].x).abs() + (w[0].y - w[1].y).abs(), 1);
        }
    }

    #[test]
    fn ray_through_corner_does_not_leak() {
        // two diagonal wall cells touching at a corner the ray passes through
        let mut m = GridMap::filled(6, 6, 1.0, Point2::new(0.0, 0.0), CellState::Free).unwrap();
        m.set(Cell::new(3, 2), CellState::Occupied);
        m.set(Cell::new(2, 3), CellState::Occupied);
        let walk: Vec<Cell> = m
            .ray_cells(Point2::new(0.5, 0.5), std::f64::consts::FRAC_PI_4, 10.0)
            .map(|s| s.cell)
            .collect();
        let first_wall = walk
            .iter()
            .position(|&c| m.get(c) == Some(CellState::Occupied))
            .expect("ray must meet a wall");
        assert!(walk[..first_wall].iter().all(|&c| c.x + c.y <= 4));
    }

    #[test]
    fn pgm_header_and_values() {
        let mut m = map(2, 2);
        m.set(Cell::new(0, 1), CellState::Free);
        m.set(Cell::new(1, 0), CellState::Occupied);
        let pgm = m.to_pgm();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[255, 127, 127, 0]);
    }
}
