//! Single-floor world: ground-truth occupancy, objects, depth sensing,
//! detector emulation, stepping and success checks.

pub mod procgen;
pub mod render;

use crate::geometry::{wrap_pi, Point2, Pose};
use crate::mapping::{inflate_obstacles, Cell, CellState, CostMap, DepthScan, GridMap, InflationParams, UnknownCells};
use crate::planner::{apply_action, distance_field, Action};
use crate::prompting::CAMERA_HEIGHT;
use crate::rng::{self, StreamRng, Streams};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const SCENE_VERSION: &str = "scene/1";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("reading scene: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene is not valid JSON: {0}")]
    Parse(String),
    #[error("scene violates the schema: {0}")]
    Schema(String),
    #[error("start pose ({x:.2}, {y:.2}) is not on free floor")]
    StartBlocked { x: f64, y: f64 },
    #[error("no goal object of {0:?} is reachable from the start")]
    UnreachableGoal(Vec<String>),
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("episode already stopped")]
    ActedAfterStop,
    #[error("episode has not stopped yet")]
    NotStopped,
    #[error("point ({x:.2}, {y:.2}) is not on free floor")]
    BlockedStart { x: f64, y: f64 },
}

/// Vertical extent class used for visibility against camera pitch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightBand {
    Floor,
    #[default]
    Mid,
    High,
}

impl HeightBand {
    /// Elevation of the band center above the floor, meters.
    pub fn center(self) -> f64 {
        match self {
            HeightBand::Floor => 0.2,
            HeightBand::Mid => 0.8,
            HeightBand::High => 1.8,
        }
    }

    /// Bottom and top elevation, meters.
    pub fn extent(self) -> (f64, f64) {
        match self {
            HeightBand::Floor => (0.0, 0.45),
            HeightBand::Mid => (0.4, 1.15),
            HeightBand::High => (1.45, 2.15),
        }
    }
}

/// Object stanza of a scene file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: u32,
    pub category: String,
    /// Label the detector reports; defaults to the category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_label: Option<String>,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub base_confidence: f64,
    #[serde(default)]
    pub height_band: HeightBand,
    /// Solid objects block motion and depth beams.
    #[serde(default = "default_true")]
    pub solid: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
}

fn default_resolution() -> f64 {
    crate::mapping::DEFAULT_RESOLUTION
}

fn default_success_radius() -> f64 {
    1.0
}

fn default_max_steps() -> u32 {
    500
}

/// On-disk scene description (`scene/1`). Art row 0 is the top (largest y);
/// `#` is wall, `.` is floor; each character covers `art_cell` meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: String,
    pub name: String,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    pub art_cell: f64,
    pub art: Vec<String>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub start: StartSpec,
    pub goal_categories: Vec<String>,
    #[serde(default = "default_success_radius")]
    pub success_radius: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneObject {
    pub id: u32,
    pub category: String,
    pub visual_label: String,
    pub centroid: Point2,
    pub radius: f64,
    pub footprint: Vec<Cell>,
    pub base_confidence: f64,
    pub height_band: HeightBand,
    pub solid: bool,
}

/// Validated, immutable scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub ground_truth: GridMap,
    pub objects: Vec<SceneObject>,
    pub start: Pose,
    pub goal_categories: Vec<String>,
    pub success_radius: f64,
    pub max_steps: u32,
    truth_costs: CostMap,
    goal_field: Vec<f64>,
    file: SceneFile,
}

impl Scene {
    pub fn load(path: &Path) -> Result<Scene, SceneError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Scene, SceneError> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => SceneError::Schema(e.to_string()),
            _ => SceneError::Parse(e.to_string()),
        })?;
        Self::from_file(file)
    }

    pub fn from_file(file: SceneFile) -> Result<Scene, SceneError> {
        let schema = |msg: String| Err(SceneError::Schema(msg));
        if file.version != SCENE_VERSION {
            return schema(format!("version {:?}, expected {SCENE_VERSION:?}", file.version));
        }
        if !(file.resolution > 0.0) {
            return schema("resolution must be positive".into());
        }
        let per_char = file.art_cell / file.resolution;
        if !(per_char >= 1.0) || (per_char - per_char.round()).abs() > 1e-6 {
            return schema("art_cell must be a positive multiple of resolution".into());
        }
        let per_char = per_char.round() as usize;
        let rows = file.art.len();
        let cols = file.art.first().map_or(0, |r| r.chars().count());
        if rows == 0 || cols == 0 {
            return schema("art block is empty".into());
        }
        let (w, h) = (cols * per_char, rows * per_char);
        let mut cells = vec![CellState::Free; w * h];
        for (r, row) in file.art.iter().enumerate() {
            if row.chars().count() != cols {
                return schema(format!("art row {r} has a different width"));
            }
            for (c, ch) in row.chars().enumerate() {
                let state = match ch {
                    '#' => CellState::Occupied,
                    '.' => CellState::Free,
                    other => return schema(format!("unexpected art character {other:?}")),
                };
                let y0 = (rows - 1 - r) * per_char;
                for y in y0..y0 + per_char {
                    for x in c * per_char..(c + 1) * per_char {
                        cells[y * w + x] = state;
                    }
                }
            }
        }
        let mut gt = GridMap::from_cells(w, h, file.resolution, Point2::new(0.0, 0.0), cells)
            .map_err(|e| SceneError::Schema(e.to_string()))?;
        if file.goal_categories.is_empty() {
            return schema("goal_categories is empty".into());
        }
        if !(file.success_radius > 0.0) || file.max_steps == 0 {
            return schema("success_radius and max_steps must be positive".into());
        }
        let mut objects = Vec::with_capacity(file.objects.len());
        for o in &file.objects {
            if !(0.0..=1.0).contains(&o.base_confidence) {
                return schema(format!("object {} base_confidence outside [0, 1]", o.id));
            }
            if !(o.radius > 0.0) {
                return schema(format!("object {} radius must be positive", o.id));
            }
            let centroid = Point2::new(o.x, o.y);
            if !gt.contains_point(&centroid) {
                return schema(format!("object {} lies outside the map", o.id));
            }
            if objects.iter().any(|p: &SceneObject| p.id == o.id) {
                return schema(format!("duplicate object id {}", o.id));
            }
            objects.push(SceneObject {
                id: o.id,
                category: o.category.clone(),
                visual_label: o.visual_label.clone().unwrap_or_else(|| o.category.clone()),
                centroid,
                radius: o.radius,
                footprint: footprint(&gt, &centroid, o.radius),
                base_confidence: o.base_confidence,
                height_band: o.height_band,
                solid: o.solid,
            });
        }
        for o in objects.iter().filter(|o| o.solid) {
            for &c in &o.footprint {
                gt.set(c, CellState::Occupied);
            }
        }
        let start = Pose::new(file.start.x, file.start.y, file.start.heading);
        if gt.get(gt.cell_of(&start.position())) != Some(CellState::Free) {
            return Err(SceneError::StartBlocked {
                x: start.x,
                y: start.y,
            });
        }
        let truth_costs = truth_costmap(&gt);
        let sources: Vec<Cell> = objects
            .iter()
            .filter(|o| file.goal_categories.contains(&o.category))
            .flat_map(|o| o.footprint.iter().copied())
            .collect();
        let goal_field = distance_field(&truth_costs, &sources);
        let start_idx = gt.index(gt.cell_of(&start.position())).expect("start checked in bounds");
        if !goal_field[start_idx].is_finite() {
            return Err(SceneError::UnreachableGoal(file.goal_categories.clone()));
        }
        objects.sort_by_key(|o| o.id);
        Ok(Scene {
            name: file.name.clone(),
            ground_truth: gt,
            objects,
            start,
            goal_categories: file.goal_categories.clone(),
            success_radius: file.success_radius,
            max_steps: file.max_steps,
            truth_costs,
            goal_field,
            file,
        })
    }

    pub fn file(&self) -> &SceneFile {
        &self.file
    }

    pub fn truth_costs(&self) -> &CostMap {
        &self.truth_costs
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn is_goal(&self, object: &SceneObject) -> bool {
        self.goal_categories.contains(&object.category)
    }

    /// Geodesic distance from the cell containing `p` to the nearest goal
    /// footprint, ignoring whether `p` itself is free. `+inf` when
    /// unreachable or off the map.
    pub fn goal_distance_at(&self, p: &Point2) -> f64 {
        self.ground_truth
            .index(self.ground_truth.cell_of(p))
            .map_or(f64::INFINITY, |i| self.goal_field[i])
    }

    /// Geodesic distance to the nearest goal object; errors when `from` is
    /// not on free floor.
    pub fn goal_distance(&self, from: &Point2) -> Result<f64, SimError> {
        self.require_free(from)?;
        Ok(self.goal_distance_at(from))
    }

    fn require_free(&self, p: &Point2) -> Result<(), SimError> {
        if self.ground_truth.get(self.ground_truth.cell_of(p)) != Some(CellState::Free) {
            return Err(SimError::BlockedStart { x: p.x, y: p.y });
        }
        Ok(())
    }
}

/// Cells whose centers lie within `radius` of `centroid`, always including
/// the centroid's own cell.
pub fn footprint(map: &GridMap, centroid: &Point2, radius: f64) -> Vec<Cell> {
    let center = map.cell_of(centroid);
    let reach = (radius / map.resolution()).ceil() as i32 + 1;
    let mut cells = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let c = Cell::new(center.x + dx, center.y + dy);
            if map.contains(c) && (c == center || map.world_of(c).distance(centroid) <= radius) {
                cells.push(c);
            }
        }
    }
    cells
}

/// Unit-cost map of the ground truth: free cells cost 1, walls impassable.
pub fn truth_costmap(gt: &GridMap) -> CostMap {
    inflate_obstacles(
        gt,
        &InflationParams {
            radius: 0.0,
            inflated_cost: 1.0,
            unknown: UnknownCells::Blocked,
        },
    )
}

/// Geodesic distance on the ground truth from `from` to the nearest object
/// whose true category is in `categories`.
pub fn oracle_distance(scene: &Scene, from: &Point2, categories: &[String]) -> Result<f64, SimError> {
    scene.require_free(from)?;
    if categories == scene.goal_categories.as_slice() {
        return Ok(scene.goal_distance_at(from));
    }
    let sources: Vec<Cell> = scene
        .objects
        .iter()
        .filter(|o| categories.contains(&o.category))
        .flat_map(|o| o.footprint.iter().copied())
        .collect();
    let field = distance_field(&scene.truth_costs, &sources);
    let gt = &scene.ground_truth;
    Ok(gt.index(gt.cell_of(from)).map_or(f64::INFINITY, |i| field[i]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub fov: f64,
    pub beams: usize,
    pub max_range: f64,
    /// Standard deviation of Gaussian range noise, meters.
    pub range_noise: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov: std::f64::consts::FRAC_PI_2,
            beams: 90,
            max_range: 5.0,
            range_noise: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Meters from the agent to the nearest visible footprint cell.
    pub range: f64,
    pub fov: f64,
    /// Vertical half field of view, radians.
    pub half_vfov: f64,
    /// Standard deviation of Gaussian confidence noise.
    pub noise_sigma: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            range: 4.0,
            fov: std::f64::consts::FRAC_PI_2,
            half_vfov: (120.0f64 / 160.0).atan(),
            noise_sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub object_id: u32,
    pub label: String,
    pub confidence: f64,
    /// Direction of the object centroid relative to the heading, in (-π, π].
    pub bearing: f64,
    /// Distance to the object centroid, meters.
    pub range: f64,
    pub height_band: HeightBand,
}

/// Simulated depth scan of the ground truth from `pose`.
pub fn depth_scan(gt: &GridMap, pose: &Pose, cfg: &SensorConfig, rng: Option<&mut StreamRng>) -> DepthScan {
    let beam_angles = DepthScan::beam_layout(cfg.fov, cfg.beams);
    let origin = pose.position();
    let mut ranges: Vec<f64> = beam_angles
        .iter()
        .map(|&rel| {
            gt.ray_cells(origin, pose.heading + rel, cfg.max_range)
                .find(|s| gt.state(s.index) == CellState::Occupied)
                .map_or(cfg.max_range, |s| (0.5 * (s.t_enter + s.t_exit)).min(cfg.max_range))
        })
        .collect();
    if cfg.range_noise > 0.0 {
        if let Some(rng) = rng {
            let n = Normal::new(0.0, cfg.range_noise).expect("finite sigma");
            for r in ranges.iter_mut().filter(|r| **r < cfg.max_range) {
                *r = (*r + n.sample(rng)).clamp(0.0, cfg.max_range);
            }
        }
    }
    DepthScan {
        pose: *pose,
        fov: cfg.fov,
        beam_angles,
        ranges,
        max_range: cfg.max_range,
    }
}

/// Whether an object at horizontal distance `dist` fits the vertical field
/// of view at the pose's pitch.
pub fn in_vertical_view(pose: &Pose, band: HeightBand, dist: f64, half_vfov: f64) -> bool {
    let elevation = (band.center() - CAMERA_HEIGHT).atan2(dist.max(1e-6));
    (elevation - pose.pitch).abs() <= half_vfov
}

/// Footprint cells of `obj` in the frustum of `pose` on the ground truth:
/// within `range`, inside the wedge, with only free cells in between.
pub fn visible_footprint(gt: &GridMap, pose: &Pose, obj: &SceneObject, fov: f64, range: f64) -> Vec<Cell> {
    let here = pose.position();
    let agent = gt.cell_of(&here);
    let full = fov >= std::f64::consts::TAU - 1e-12;
    obj.footprint
        .iter()
        .copied()
        .filter(|&c| {
            if c == agent {
                return true;
            }
            let center = gt.world_of(c);
            here.distance(&center) <= range
                && (full || wrap_pi(here.bearing_to(&center) - pose.heading).abs() <= fov / 2.0)
                && gt.line_of_sight(agent, c)
        })
        .collect()
}

/// Detector output for `pose`: one detection per visible object, in id order.
pub fn sense_detect(scene: &Scene, pose: &Pose, cfg: &DetectorConfig, rng: &mut StreamRng) -> Vec<Detection> {
    let here = pose.position();
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("finite sigma"));
    let mut out = Vec::new();
    for obj in &scene.objects {
        let dist = here.distance(&obj.centroid);
        if dist > cfg.range + obj.radius + scene.ground_truth.resolution() {
            continue;
        }
        if !in_vertical_view(pose, obj.height_band, dist, cfg.half_vfov) {
            continue;
        }
        if visible_footprint(&scene.ground_truth, pose, obj, cfg.fov, cfg.range).is_empty() {
            continue;
        }
        let jitter = noise.as_ref().map_or(0.0, |n| n.sample(rng));
        out.push(Detection {
            object_id: obj.id,
            label: obj.visual_label.clone(),
            confidence: (obj.base_confidence + jitter).clamp(0.0, 1.0),
            bearing: wrap_pi(here.bearing_to(&obj.centroid) - pose.heading),
            range: dist,
            height_band: obj.height_band,
        });
    }
    out
}

/// What the agent perceives after an action.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub pose: Pose,
    pub scan: DepthScan,
    pub detections: Vec<Detection>,
    pub collision: bool,
}

/// One line of the trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub action: Action,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub collision: bool,
    pub n_detections: usize,
}

/// Moves `pose` by `action` on the ground truth. Forward is cancelled when
/// the swept cells touch a wall.
pub fn move_pose(gt: &GridMap, pose: &Pose, action: Action) -> (Pose, bool) {
    let next = apply_action(pose, action);
    if action != Action::Forward {
        return (next, false);
    }
    let dist = pose.position().distance(&next.position());
    let blocked = gt
        .ray_cells(pose.position(), pose.heading, dist)
        .any(|s| gt.state(s.index) != CellState::Free)
        || gt.get(gt.cell_of(&next.position())) != Some(CellState::Free);
    if blocked {
        (*pose, true)
    } else {
        (next, false)
    }
}

/// Final pose after replaying `actions` from the scene start.
pub fn replay_pose(scene: &Scene, actions: &[Action]) -> Pose {
    actions
        .iter()
        .fold(scene.start, |p, &a| move_pose(&scene.ground_truth, &p, a).0)
}

/// Result of an episode's final position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessCheck {
    pub success: bool,
    pub distance: f64,
}

/// Live episode: agent pose, counters, random streams and the step log.
#[derive(Clone, Debug)]
pub struct EpisodeState {
    pub scene: Arc<Scene>,
    pub pose: Pose,
    pub step: u32,
    pub stopped: bool,
    pub path_length: f64,
    pub collisions: u32,
    pub sensor: SensorConfig,
    pub detector: DetectorConfig,
    pub log: Vec<StepRecord>,
    sim_rng: StreamRng,
    detector_rng: StreamRng,
}

impl EpisodeState {
    pub fn new(scene: Arc<Scene>, streams: &Streams, sensor: SensorConfig, detector: DetectorConfig) -> Self {
        Self {
            pose: scene.start,
            scene,
            step: 0,
            stopped: false,
            path_length: 0.0,
            collisions: 0,
            sensor,
            detector,
            log: Vec::new(),
            sim_rng: streams.stream(rng::SIM),
            detector_rng: streams.stream(rng::DETECTOR),
        }
    }

    pub fn max_steps_reached(&self) -> bool {
        self.step >= self.scene.max_steps
    }

    /// Observation at the current pose without acting.
    pub fn observe(&mut self) -> Observation {
        self.observation(false)
    }

    fn observation(&mut self, collision: bool) -> Observation {
        let scan = depth_scan(&self.scene.ground_truth, &self.pose, &self.sensor, Some(&mut self.sim_rng));
        let detections = sense_detect(&self.scene, &self.pose, &self.detector, &mut self.detector_rng);
        Observation {
            pose: self.pose,
            scan,
            detections,
            collision,
        }
    }

    pub fn step(&mut self, action: Action) -> Result<Observation, SimError> {
        if self.stopped {
            return Err(SimError::ActedAfterStop);
        }
        let (next, collision) = move_pose(&self.scene.ground_truth, &self.pose, action);
        self.path_length += self.pose.position().distance(&next.position());
        self.pose = next;
        self.step += 1;
        if collision {
            self.collisions += 1;
        }
        if action == Action::Stop {
            self.stopped = true;
        }
        let obs = self.observation(collision);
        self.log.push(StepRecord {
            step: self.step,
            action,
            x: self.pose.x,
            y: self.pose.y,
            heading: self.pose.heading,
            collision,
            n_detections: obs.detections.len(),
        });
        Ok(obs)
    }

    pub fn actions(&self) -> Vec<Action> {
        self.log.iter().map(|r| r.action).collect()
    }

    pub fn distance_to_goal(&self) -> f64 {
        self.scene.goal_distance_at(&self.pose.position())
    }

    /// Success iff stopped within the success radius (geodesic). Episodes cut
    /// off at `max_steps` count as failures; before either, this errors.
    pub fn check_success(&self) -> Result<SuccessCheck, SimError> {
        let distance = self.distance_to_goal();
        if self.stopped {
            Ok(SuccessCheck {
                success: distance <= self.scene.success_radius,
                distance,
            })
        } else if self.max_steps_reached() {
            Ok(SuccessCheck {
                success: false,
                distance,
            })
        } else {
            Err(SimError::NotStopped)
        }
    }
}
