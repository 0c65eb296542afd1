//! Low-level navigation: grid search on a cost map and a discrete-action
//! path follower.
//!
//! The follower only ever turns in 30° quanta, so it cannot point straight
//! down an arbitrary path segment. Instead of zig-zagging around the segment,
//! it splits each straight leg into at most two sub-legs along reachable
//! headings whenever both sub-legs are clear on the cost map.

use crate::geometry::{normalize_angle, Point2, Pose};
use crate::mapping::{Cell, CostMap};
use crate::poi::{PoiId, PoiStore};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, SQRT_2};
use thiserror::Error;

pub const FORWARD_STEP: f64 = 0.25;
pub const TURN_ANGLE: f64 = FRAC_PI_6;
pub const LOOK_ANGLE: f64 = FRAC_PI_6;

/// Discrete agent actions with fixed magnitudes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    /// Move 0.25 m along the heading.
    Forward,
    /// Rotate +30°.
    TurnLeft,
    /// Rotate -30°.
    TurnRight,
    /// Tilt the camera up 30°.
    LookUp,
    /// Tilt the camera down 30°.
    LookDown,
    Stop,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "FORWARD",
            Action::TurnLeft => "TURN_LEFT",
            Action::TurnRight => "TURN_RIGHT",
            Action::LookUp => "LOOK_UP",
            Action::LookDown => "LOOK_DOWN",
            Action::Stop => "STOP",
        }
    }
}

/// Twelve left turns: one full revolution.
pub fn full_rotation() -> Vec<Action> {
    vec![Action::TurnLeft; 12]
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("start cell {0:?} is not traversable")]
    StartBlocked(Cell),
    #[error("no path to goal")]
    NoPath,
}

/// An 8-connected cell path with its world waypoints and total cost (meters
/// weighted by cell cost).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub cells: Vec<Cell>,
    pub waypoints: Vec<Point2>,
    pub cost: f64,
}

impl Path {
    pub fn goal(&self) -> Point2 {
        *self.waypoints.last().expect("paths are never empty")
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    f: f64,
    g: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, then prefer deeper nodes, then lower index
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(i32, i32); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Successors of `cell`: traversable neighbors, with diagonal moves allowed
/// only when both orthogonal cells they cut past are traversable. The step
/// cost is the step length (meters) times the cost of the entered cell.
pub fn grid_successors(costmap: &CostMap, cell: Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
    let res = costmap.resolution();
    NEIGHBORS.iter().filter_map(move |&(dx, dy)| {
        let next = Cell::new(cell.x + dx, cell.y + dy);
        let c = costmap.cost(next);
        if !c.is_finite() {
            return None;
        }
        if dx != 0 && dy != 0 {
            let a = Cell::new(cell.x + dx, cell.y);
            let b = Cell::new(cell.x, cell.y + dy);
            if !costmap.is_traversable(a) || !costmap.is_traversable(b) {
                return None;
            }
            Some((next, SQRT_2 * res * c))
        } else {
            Some((next, res * c))
        }
    })
}

/// Octile distance between cells, in meters.
pub fn octile(a: Cell, b: Cell, resolution: f64) -> f64 {
    let dx = (a.x - b.x).abs() as f64;
    let dy = (a.y - b.y).abs() as f64;
    (dx.max(dy) - dx.min(dy) + SQRT_2 * dx.min(dy)) * resolution
}

/// Minimum-cost path from `start` to `goal` under `costmap`.
pub fn astar(costmap: &CostMap, start: &Point2, goal: &Point2) -> Result<Path, PlanError> {
    let s = costmap.cell_of(start);
    let g = costmap.cell_of(goal);
    astar_cells(costmap, s, g)
}

pub fn astar_cells(costmap: &CostMap, start: Cell, goal: Cell) -> Result<Path, PlanError> {
    if !costmap.is_traversable(start) {
        return Err(PlanError::StartBlocked(start));
    }
    if !costmap.is_traversable(goal) {
        return Err(PlanError::NoPath);
    }
    let res = costmap.resolution();
    let n = costmap.width() * costmap.height();
    let mut g_score = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let si = costmap.index(start).expect("start in bounds");
    let gi = costmap.index(goal).expect("goal in bounds");
    g_score[si] = 0.0;
    let mut open = BinaryHeap::new();
    open.push(Entry {
        f: octile(start, goal, res),
        g: 0.0,
        index: si,
    });
    while let Some(Entry { g, index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if index == gi {
            return Ok(reconstruct(costmap, &parent, si, gi, g));
        }
        let cell = costmap.cell_at(index);
        for (next, step) in grid_successors(costmap, cell) {
            let ni = costmap.index(next).expect("successor in bounds");
            if closed[ni] {
                continue;
            }
            let tentative = g + step;
            if tentative < g_score[ni] {
                g_score[ni] = tentative;
                parent[ni] = index;
                open.push(Entry {
                    f: tentative + octile(next, goal, res),
                    g: tentative,
                    index: ni,
                });
            }
        }
    }
    Err(PlanError::NoPath)
}

fn reconstruct(costmap: &CostMap, parent: &[usize], start: usize, goal: usize, cost: f64) -> Path {
    let mut idx = goal;
    let mut cells = vec![costmap.cell_at(idx)];
    while idx != start {
        idx = parent[idx];
        cells.push(costmap.cell_at(idx));
    }
    cells.reverse();
    let waypoints = cells.iter().map(|&c| costmap.world_of(c)).collect();
    Path {
        cells,
        waypoints,
        cost,
    }
}

/// Multi-source Dijkstra. Sources may themselves be impassable (e.g. an
/// object footprint); they seed the search but are never entered.
pub fn distance_field(costmap: &CostMap, sources: &[Cell]) -> Vec<f64> {
    let n = costmap.width() * costmap.height();
    let mut dist = vec![f64::INFINITY; n];
    let mut open = BinaryHeap::new();
    for &s in sources {
        if let Some(i) = costmap.index(s) {
            dist[i] = 0.0;
            open.push(Entry {
                f: 0.0,
                g: 0.0,
                index: i,
            });
        }
    }
    while let Some(Entry { g, index, .. }) = open.pop() {
        if g > dist[index] {
            continue;
        }
        for (next, step) in grid_successors(costmap, costmap.cell_at(index)) {
            let ni = costmap.index(next).expect("successor in bounds");
            let d = g + step;
            if d < dist[ni] {
                dist[ni] = d;
                open.push(Entry {
                    f: d,
                    g: d,
                    index: ni,
                });
            }
        }
    }
    dist
}

/// True when the straight segment between two world points only crosses
/// traversable cells whose cost does not exceed `max_cost`.
pub fn segment_clear(costmap: &CostMap, a: &Point2, b: &Point2, max_cost: f64) -> bool {
    let len = a.distance(b);
    let angle = a.bearing_to(b);
    let res = costmap.resolution();
    let steps = (len / (res * 0.25)).ceil() as usize;
    (0..=steps).all(|k| {
        let t = if steps == 0 { 0.0 } else { len * k as f64 / steps as f64 };
        let c = costmap.cost(costmap.cell_of(&a.offset(angle, t)));
        c.is_finite() && c <= max_cost
    }) && corners_clear(costmap, a, b)
}

// Sampling may skip a cell that the segment only grazes at a corner; check
// the 4-connected walk explicitly.
fn corners_clear(costmap: &CostMap, a: &Point2, b: &Point2) -> bool {
    let mut cell = costmap.cell_of(a);
    let target = costmap.cell_of(b);
    let res = costmap.resolution();
    let o = costmap.origin();
    let (gx, gy) = ((a.x - o.x) / res, (a.y - o.y) / res);
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let step_x = dx.signum() as i32;
    let step_y = dy.signum() as i32;
    let mut t_max_x = if dx > 0.0 {
        (cell.x as f64 + 1.0 - gx) * res / dx
    } else if dx < 0.0 {
        (gx - cell.x as f64) * res / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (cell.y as f64 + 1.0 - gy) * res / dy
    } else if dy < 0.0 {
        (gy - cell.y as f64) * res / -dy
    } else {
        f64::INFINITY
    };
    let t_dx = if dx != 0.0 { res / dx.abs() } else { f64::INFINITY };
    let t_dy = if dy != 0.0 { res / dy.abs() } else { f64::INFINITY };
    let mut guard = 0;
    while cell != target && guard < 100_000 {
        guard += 1;
        if t_max_x.min(t_max_y) > 1.0 {
            break;
        }
        if t_max_x <= t_max_y {
            cell.x += step_x;
            t_max_x += t_dx;
        } else {
            cell.y += step_y;
            t_max_y += t_dy;
        }
        if !costmap.is_traversable(cell) {
            return false;
        }
    }
    true
}

/// Reduces a cell path to the corners of a shortcut polyline. A shortcut
/// between two path points is taken only if it stays on cells no costlier
/// than the path segment it replaces. The start point is not included.
pub fn simplify_path(costmap: &CostMap, path: &Path) -> Vec<Point2> {
    let pts = &path.waypoints;
    if pts.len() <= 1 {
        return pts.clone();
    }
    let cost_at = |i: usize| costmap.cost(path.cells[i]);
    let mut corners = Vec::new();
    let mut anchor = 0;
    while anchor < pts.len() - 1 {
        let mut best = anchor + 1;
        let mut seg_max = cost_at(anchor).max(cost_at(anchor + 1));
        for j in anchor + 2..pts.len() {
            seg_max = seg_max.max(cost_at(j));
            if segment_clear(costmap, &pts[anchor], &pts[j], seg_max) {
                best = j;
            }
        }
        corners.push(pts[best]);
        anchor = best;
    }
    corners
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowerConfig {
    /// A waypoint counts as reached within this distance (meters).
    pub arrival_radius: f64,
    /// Headings within this error (radians) of the aim point move forward.
    pub heading_tolerance: f64,
    /// Forward attempts considered by the stuck check.
    pub stuck_window: usize,
    /// Displacement (meters) below which the window counts as stuck.
    pub stuck_displacement: f64,
    /// Replans allowed before escalating to the episode loop.
    pub max_replans: u32,
}

impl Default for FollowerConfig {
    fn default() -> Self {
        Self {
            arrival_radius: 0.2,
            heading_tolerance: FRAC_PI_6 / 2.0,
            stuck_window: 8,
            stuck_displacement: 0.1,
            max_replans: 2,
        }
    }
}

/// Path-following state for one navigation leg.
#[derive(Clone, Debug)]
pub struct FollowerState {
    pub config: FollowerConfig,
    pub path: Path,
    corners: Vec<Point2>,
    /// Index into the simplified corner list of the next waypoint.
    pub target: usize,
    subgoal: Option<Point2>,
    /// Turn direction held after a blocked step, with turns made so far.
    turn_lock: Option<(Action, u32)>,
    /// Replans performed on this leg.
    pub stuck_counter: u32,
    /// Positions at the most recent forward attempts.
    pub recent: VecDeque<Point2>,
    /// Cells marked as blockages by stuck recovery.
    pub blockages: Vec<Cell>,
}

impl FollowerState {
    pub fn new(path: Path, costmap: &CostMap, config: FollowerConfig) -> Self {
        let corners = simplify_path(costmap, &path);
        Self {
            config,
            path,
            corners,
            target: 0,
            subgoal: None,
            turn_lock: None,
            stuck_counter: 0,
            recent: VecDeque::new(),
            blockages: Vec::new(),
        }
    }

    pub fn goal(&self) -> Point2 {
        self.path.goal()
    }

    pub fn corners(&self) -> &[Point2] {
        &self.corners
    }

    /// Replaces the path while keeping stuck-recovery bookkeeping.
    pub fn replace_path(&mut self, path: Path, costmap: &CostMap) {
        self.corners = simplify_path(costmap, &path);
        self.path = path;
        self.target = 0;
        self.subgoal = None;
        self.turn_lock = None;
    }

    pub fn arrived(&self, pose: &Pose) -> bool {
        pose.position().distance(&self.goal()) <= self.config.arrival_radius
    }

    /// Next action toward the goal; `Stop` once the final waypoint is reached.
    pub fn next_action(&mut self, pose: &Pose, costmap: &CostMap) -> Action {
        let here = pose.position();
        if self.arrived(pose) {
            return Action::Stop;
        }
        while self.target < self.corners.len() - 1
            && here.distance(&self.corners[self.target]) <= self.config.arrival_radius
        {
            self.target += 1;
            self.subgoal = None;
        }
        let target = self.corners[self.target];
        if let Some(s) = self.subgoal {
            if here.distance(&s) <= self.config.arrival_radius {
                self.subgoal = None;
            }
        }
        if self.subgoal.is_none() {
            self.subgoal = self.lattice_subgoal(pose, &target, costmap);
        }
        let aim = self.subgoal.unwrap_or(target);
        let err = pose.heading_error_to(&aim);
        if let Some((dir, turns)) = self.turn_lock {
            // keep turning one way until a clear step makes progress; after a
            // full circle, let the stuck check deal with it
            if (step_clear(costmap, pose) && err.abs() <= FRAC_PI_2 + 1e-9) || turns >= 12 {
                self.turn_lock = None;
                return Action::Forward;
            }
            self.turn_lock = Some((dir, turns + 1));
            return dir;
        }
        let action = steer(pose, &aim, self.config.heading_tolerance);
        if action == Action::Forward && !step_clear(costmap, pose) {
            // within tolerance of the aim but the step itself clips an
            // obstacle
            self.subgoal = None;
            let dir = if err >= 0.0 { Action::TurnLeft } else { Action::TurnRight };
            self.turn_lock = Some((dir, 1));
            return dir;
        }
        action
    }

    /// Corner of the two-leg route to `target` along reachable headings,
    /// starting with the heading closest to the current one.
    fn lattice_subgoal(&self, pose: &Pose, target: &Point2, costmap: &CostMap) -> Option<Point2> {
        let err = pose.heading_error_to(target);
        if err.abs() <= self.config.heading_tolerance + 1e-9 {
            return None;
        }
        let k_lo = (err / TURN_ANGLE).floor();
        let k_hi = k_lo + 1.0;
        let h_lo = pose.heading + k_lo * TURN_ANGLE;
        let h_hi = pose.heading + k_hi * TURN_ANGLE;
        let (u_lo, u_hi) = ((h_lo.cos(), h_lo.sin()), (h_hi.cos(), h_hi.sin()));
        let v = (target.x - pose.x, target.y - pose.y);
        // v = a*u_lo + b*u_hi
        let det = u_lo.0 * u_hi.1 - u_lo.1 * u_hi.0;
        let a = (v.0 * u_hi.1 - v.1 * u_hi.0) / det;
        let b = (u_lo.0 * v.1 - u_lo.1 * v.0) / det;
        if a < 0.0 || b < 0.0 {
            return None;
        }
        let first_lo = k_lo.abs() <= k_hi.abs();
        let corner = if first_lo {
            pose.position().offset(h_lo, a)
        } else {
            pose.position().offset(h_hi, b)
        };
        let leg = pose.position().distance(&corner);
        if leg <= self.config.arrival_radius {
            return None;
        }
        let here = pose.position();
        let limit = costmap
            .cost(costmap.cell_of(&here))
            .max(costmap.cost(costmap.cell_of(target)))
            .max(1.0);
        (segment_clear(costmap, &here, &corner, limit) && segment_clear(costmap, &corner, target, limit))
            .then_some(corner)
    }

    /// Notes a forward attempt made from `pose`.
    pub fn record_forward(&mut self, pose: &Pose) {
        self.recent.push_back(pose.position());
        while self.recent.len() > self.config.stuck_window {
            self.recent.pop_front();
        }
    }

    pub fn is_stuck(&self) -> bool {
        self.recent.len() >= self.config.stuck_window
            && self.recent.front().unwrap().distance(self.recent.back().unwrap())
                < self.config.stuck_displacement
    }

    /// Applies recorded blockages to a freshly built cost map.
    pub fn apply_blockages(&self, costmap: &CostMap, radius: f64) -> CostMap {
        self.blockages
            .iter()
            .fold(costmap.clone(), |cm, &b| cm.with_blockage(b, radius, 2.0))
    }
}

/// Whether a forward step from `pose` stays on traversable cells.
fn step_clear(costmap: &CostMap, pose: &Pose) -> bool {
    let next = apply_action(pose, Action::Forward).position();
    costmap.is_traversable(costmap.cell_of(&next)) && corners_clear(costmap, &pose.position(), &next)
}

/// Turn toward `aim` if the heading error exceeds `tolerance`, else forward.
fn steer(pose: &Pose, aim: &Point2, tolerance: f64) -> Action {
    let err = pose.heading_error_to(aim);
    if err.abs() > tolerance + 1e-9 {
        if err > 0.0 {
            Action::TurnLeft
        } else {
            Action::TurnRight
        }
    } else {
        Action::Forward
    }
}

/// Result of the stuck check.
#[derive(Clone, Debug, PartialEq)]
pub enum StuckOutcome {
    Progressing,
    Replanned,
    Escalate,
}

/// If the last forward attempts made no progress, blocks the cell ahead,
/// doubles nearby costs and replans; after `max_replans` replans, asks the
/// episode loop to give up on the current target.
pub fn detect_stuck_and_replan(
    state: &mut FollowerState,
    pose: &Pose,
    costmap: &CostMap,
    inflation_radius: f64,
) -> StuckOutcome {
    if !state.is_stuck() {
        return StuckOutcome::Progressing;
    }
    if state.stuck_counter >= state.config.max_replans {
        return StuckOutcome::Escalate;
    }
    state.stuck_counter += 1;
    state.recent.clear();
    let here = pose.position();
    let own = costmap.cell_of(&here);
    let ahead = (1..=5)
        .map(|k| costmap.cell_of(&here.offset(pose.heading, FORWARD_STEP * k as f64 / 5.0)))
        .find(|&c| c != own)
        .unwrap_or(own);
    if ahead != own && !state.blockages.contains(&ahead) {
        state.blockages.push(ahead);
    }
    let penalized = state.apply_blockages(costmap, inflation_radius);
    match astar(&penalized, &here, &state.goal()) {
        Ok(path) => {
            state.replace_path(path, &penalized);
            StuckOutcome::Replanned
        }
        Err(_) => StuckOutcome::Escalate,
    }
}

/// When at least `min_count` selectable PoIs lie within `radius` of the
/// agent, returns them in nearest-neighbor tour order (ties by lowest id);
/// otherwise an empty list.
pub fn local_sweep(store: &PoiStore, pose: &Pose, radius: f64, min_count: usize) -> Vec<PoiId> {
    let here = pose.position();
    let mut nearby: Vec<(PoiId, Point2)> = store
        .selectable()
        .filter(|p| p.pose.position().distance(&here) <= radius)
        .map(|p| (p.id, p.pose.position()))
        .collect();
    if nearby.is_empty() || nearby.len() < min_count {
        return Vec::new();
    }
    nearby.sort_by_key(|(id, _)| *id);
    let mut tour = Vec::with_capacity(nearby.len());
    let mut cur = here;
    while !nearby.is_empty() {
        let (k, _) = nearby
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.1.distance(&cur).total_cmp(&b.1.distance(&cur)))
            .expect("non-empty");
        let (id, p) = nearby.remove(k);
        tour.push(id);
        cur = p;
    }
    tour
}

/// Applies an action to a pose without collision checks.
pub fn apply_action(pose: &Pose, action: Action) -> Pose {
    let mut p = *pose;
    match action {
        Action::Forward => {
            p.x += FORWARD_STEP * p.heading.cos();
            p.y += FORWARD_STEP * p.heading.sin();
        }
        Action::TurnLeft => p.heading = normalize_angle(p.heading + TURN_ANGLE),
        Action::TurnRight => p.heading = normalize_angle(p.heading - TURN_ANGLE),
        Action::LookUp => p.pitch = (p.pitch + LOOK_ANGLE).min(LOOK_ANGLE),
        Action::LookDown => p.pitch = (p.pitch - LOOK_ANGLE).max(-LOOK_ANGLE),
        Action::Stop => {}
    }
    p
}
