//! Episode orchestration: initial rotation, waypoint decisions, navigation
//! legs with per-step mapping and PoI maintenance, object confirmation, and
//! batch execution with deterministic aggregation.

use crate::geometry::{wrap_pi, Point2, Pose};
use crate::mapping::{inflate_obstacles, CellState, CostMap, GridMap, InflationParams, UnknownCells};
use crate::metrics::{aggregate_report, EpisodeRecord, MetricsError, Report};
use crate::planner::{
    astar, detect_stuck_and_replan, full_rotation, local_sweep, Action, FollowerConfig, FollowerState, StuckOutcome,
    LOOK_ANGLE,
};
use crate::poi::{
    create_object_poi, detection_centroid, extract_frontiers, geodesic_from, refresh, sample_candidates,
    select_suspect, Associations, CandidateSet, NewPoi, PoiId, PoiKind, PoiParams, PoiRecord, PoiStore,
};
use crate::policy::vlm::{RemoteVlmConfig, ScriptedResponder, VlmClient};
use crate::policy::{
    confirm_object, ConfirmBudget, ConfirmResult, Decision, DecisionInput, DecisionPolicy, EpsilonGreedy,
    GreedyOracle, NearestFrontier, PolicyError, RandomChoice, VlmPolicy,
};
use crate::prompting::{
    assemble_confirmation_prompt, assemble_decision_prompt, write_prompt_archive, CameraIntrinsics, Extrinsics,
    MultiViewSet, PromptError, Snapshot, SnapshotRef, CAMERA_HEIGHT, DEFAULT_CONFIRM_TEMPLATE,
    DEFAULT_DECISION_TEMPLATE,
};
use crate::rlvr::RlvrSample;
use crate::rng::{self, Streams};
use crate::simulator::render::render_view;
use crate::simulator::{in_vertical_view, DetectorConfig, Observation, Scene, SceneError, SensorConfig, SimError, StepRecord};
use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

pub const TRACE_SCHEMA: &str = "trace/1";

const SPENT_RADIUS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("scene: {0}")]
    Scene(#[from] SceneError),
    #[error("network access requested while offline")]
    Offline,
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("simulator: {0}")]
    Sim(#[from] SimError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Greedy,
    Random,
    Epsilon,
    Scripted,
    RemoteVlm,
    NearestFrontier,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Greedy => "greedy",
            PolicyKind::Random => "random",
            PolicyKind::Epsilon => "epsilon",
            PolicyKind::Scripted => "scripted",
            PolicyKind::RemoteVlm => "remote-vlm",
            PolicyKind::NearestFrontier => "nearest-frontier",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            PolicyKind::Greedy,
            PolicyKind::Random,
            PolicyKind::Epsilon,
            PolicyKind::Scripted,
            PolicyKind::RemoteVlm,
            PolicyKind::NearestFrontier,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

/// Whether episode records carry measured wall time. `Off` keeps outputs
/// byte-reproducible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Timing {
    #[default]
    Wall,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub policy: PolicyKind,
    pub seed: u64,
    /// Detection confidence that makes an object a suspect.
    pub tau_sus: f64,
    /// Candidate-set size floor.
    pub tau_choice: usize,
    /// Single-image confirmation attempts per object.
    pub tau_confirm: u32,
    /// Greedy probability of the epsilon-greedy policy.
    pub t_prob: f64,
    /// Overrides the scene's step limit.
    pub max_steps: Option<u32>,
    pub sweep_radius: f64,
    pub sweep_min: usize,
    pub poi: PoiParams,
    pub follower: FollowerConfig,
    pub inflation: InflationParams,
    /// Traversal cost of unknown cells when heading for a frontier.
    pub unknown_cost: f64,
    pub sensor: SensorConfig,
    pub detector: DetectorConfig,
    pub camera: CameraIntrinsics,
    pub timing: Timing,
    /// When set, every decision prompt is archived under this directory.
    pub prompt_archive: Option<PathBuf>,
    pub remote: RemoteVlmConfig,
    /// Rule file for the scripted policy; the built-in rules otherwise.
    pub script: Option<PathBuf>,
    pub offline: bool,
    /// Parallel episodes in a batch.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Greedy,
            seed: 0,
            tau_sus: 0.5,
            tau_choice: PoiParams::default().tau_choice,
            tau_confirm: 3,
            t_prob: 0.8,
            max_steps: None,
            sweep_radius: 1.5,
            sweep_min: 2,
            poi: PoiParams::default(),
            follower: FollowerConfig::default(),
            inflation: InflationParams::default(),
            unknown_cost: 2.0,
            sensor: SensorConfig::default(),
            detector: DetectorConfig::default(),
            camera: CameraIntrinsics::default(),
            timing: Timing::Wall,
            prompt_archive: None,
            remote: RemoteVlmConfig::default(),
            script: None,
            offline: false,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.tau_sus) {
            return bad("tau_sus must lie in [0, 1]");
        }
        if self.tau_choice == 0 {
            return bad("tau_choice must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.t_prob) {
            return bad("t_prob must lie in [0, 1]");
        }
        if !(self.sweep_radius > 0.0) {
            return bad("sweep_radius must be positive");
        }
        if !(self.unknown_cost >= 1.0) {
            return bad("unknown_cost must be at least 1");
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        let p = &self.poi;
        if !(0.0 < p.standoff_min && p.standoff_min <= p.standoff && p.standoff <= p.standoff_max) {
            return bad("standoff must satisfy 0 < min <= standoff <= max");
        }
        if self.policy == PolicyKind::RemoteVlm && self.offline {
            return Err(RunError::Offline);
        }
        self.remote.validate()?;
        Ok(())
    }
}

/// Builds the decision policy for one episode.
pub fn make_policy(cfg: &RunConfig, streams: &Streams) -> Result<Box<dyn DecisionPolicy>, RunError> {
    Ok(match cfg.policy {
        PolicyKind::Greedy => Box::new(GreedyOracle),
        PolicyKind::NearestFrontier => Box::new(NearestFrontier),
        PolicyKind::Random => Box::new(RandomChoice {
            rng: streams.stream(rng::POLICY),
        }),
        PolicyKind::Epsilon => Box::new(EpsilonGreedy {
            t_prob: cfg.t_prob,
            rng: streams.stream(rng::POLICY),
        }),
        PolicyKind::Scripted => {
            let responder = match &cfg.script {
                Some(path) => ScriptedResponder::from_json(&std::fs::read_to_string(path)?)
                    .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?,
                None => ScriptedResponder::builtin(),
            };
            Box::new(VlmPolicy {
                client: VlmClient::new(cfg.remote.clone(), Arc::new(responder))?,
            })
        }
        PolicyKind::RemoteVlm => {
            if cfg.offline {
                return Err(RunError::Offline);
            }
            Box::new(VlmPolicy {
                client: VlmClient::http(cfg.remote.clone())?,
            })
        }
    })
}

/// One waypoint choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionEvent {
    pub step: u32,
    /// 1-based index of this decision in the episode.
    pub waypoint: u32,
    pub candidates: Vec<PoiId>,
    pub kinds: Vec<String>,
    /// Ground-truth geodesic distance from each candidate to the goal; null
    /// when unreachable.
    pub distances: Vec<Option<f64>>,
    /// Candidate bearing relative to the agent heading, radians.
    pub bearings: Vec<f64>,
    pub decision: Decision,
    /// PoI the agent headed for, after any fallback.
    pub target: Option<PoiId>,
    /// Why the policy's answer was overridden, if it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PoiEvent {
    Created { step: u32, id: PoiId, kind: String, x: f64, y: f64 },
    Archived { step: u32, id: PoiId, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationEvent {
    pub step: u32,
    pub object_id: u32,
    pub single_image: bool,
    pub images: usize,
    pub result: ConfirmResult,
}

/// Navigation targets chosen without a policy call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEvent {
    pub step: u32,
    pub tour: Vec<PoiId>,
}

/// Explored map at the end of the episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapDump {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Point2,
    /// Base64 of one byte per cell (0 unknown, 1 free, 2 occupied), row 0 at
    /// the bottom.
    pub cells: String,
}

impl MapDump {
    pub fn from_map(map: &GridMap) -> Self {
        let bytes: Vec<u8> = map
            .cells()
            .iter()
            .map(|c| match c {
                CellState::Unknown => 0,
                CellState::Free => 1,
                CellState::Occupied => 2,
            })
            .collect();
        Self {
            width: map.width(),
            height: map.height(),
            resolution: map.resolution(),
            origin: map.origin(),
            cells: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Option<Vec<u8>> {
        base64::engine::general_purpose::STANDARD.decode(&self.cells).ok()
    }
}

/// Everything that happened in one episode. Replaying `steps` from the scene
/// start reproduces `final_pose`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub schema: String,
    pub scene: String,
    pub seed: u64,
    pub policy: String,
    pub start: Pose,
    pub steps: Vec<StepRecord>,
    pub decisions: Vec<DecisionEvent>,
    pub sweeps: Vec<SweepEvent>,
    pub poi_events: Vec<PoiEvent>,
    pub confirmations: Vec<ConfirmationEvent>,
    pub pois: Vec<PoiRecord>,
    pub final_pose: Pose,
    pub arrivals: u32,
    pub abandoned_legs: u32,
    pub rotations: u32,
    pub map: MapDump,
    pub record: EpisodeRecord,
}

impl EpisodeTrace {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// Step log as JSON lines.
    pub fn trajectory_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

enum LegEnd {
    Arrived,
    Abandoned(&'static str),
    /// The episode ended (stop issued or steps exhausted).
    Ended,
    /// A confirmed object preempted the leg.
    Preempted,
}

struct Agent<'a> {
    cfg: &'a RunConfig,
    scene: Arc<Scene>,
    ep: crate::simulator::EpisodeState,
    map: GridMap,
    map_version: u64,
    cost_cache: [Option<(u64, CostMap)>; 2],
    store: PoiStore,
    policy: Box<dyn DecisionPolicy>,
    budget: ConfirmBudget,
    associations: Associations,
    goal_label: String,
    rejected: BTreeSet<u32>,
    views: BTreeMap<u32, MultiViewSet>,
    tried_this_leg: BTreeSet<u32>,
    /// Map cells of PoIs that were reached or abandoned. An unchanged cluster
    /// whose representative lies near one is not re-seeded.
    spent: BTreeSet<usize>,
    confirmed: Option<PoiId>,
    last_snapshot: Option<SnapshotRef>,
    next_snapshot: u64,
    decisions: Vec<DecisionEvent>,
    sweeps: Vec<SweepEvent>,
    poi_events: Vec<PoiEvent>,
    confirmations: Vec<ConfirmationEvent>,
    arrivals: u32,
    abandoned: u32,
    rotations: u32,
    failure: Option<String>,
}

impl<'a> Agent<'a> {
    fn new(scene: Arc<Scene>, cfg: &'a RunConfig) -> Result<Self, RunError> {
        let streams = Streams::new(cfg.seed);
        let policy = make_policy(cfg, &streams)?;
        let mut ep = crate::simulator::EpisodeState::new(scene.clone(), &streams, cfg.sensor, cfg.detector);
        if let Some(m) = cfg.max_steps {
            let mut s = (*scene).clone();
            s.max_steps = m;
            ep.scene = Arc::new(s);
        }
        Ok(Self {
            cfg,
            map: scene.ground_truth.blank_like(),
            scene: ep.scene.clone(),
            ep,
            map_version: 0,
            cost_cache: [None, None],
            store: PoiStore::new(),
            policy,
            budget: ConfirmBudget::new(cfg.tau_confirm),
            associations: Associations::builtin(),
            goal_label: scene.goal_categories.join(" or "),
            rejected: BTreeSet::new(),
            views: BTreeMap::new(),
            tried_this_leg: BTreeSet::new(),
            spent: BTreeSet::new(),
            confirmed: None,
            last_snapshot: None,
            next_snapshot: 0,
            decisions: Vec::new(),
            sweeps: Vec::new(),
            poi_events: Vec::new(),
            confirmations: Vec::new(),
            arrivals: 0,
            abandoned: 0,
            rotations: 0,
            failure: None,
        })
    }

    fn done(&self) -> bool {
        self.ep.stopped || self.ep.max_steps_reached()
    }

    /// Cost map of the explored map; unknown cells traversable or blocked.
    fn costmap(&mut self, unknown_traversable: bool) -> &CostMap {
        let slot = usize::from(unknown_traversable);
        let stale = self.cost_cache[slot].as_ref().is_none_or(|(v, _)| *v != self.map_version);
        if stale {
            let params = InflationParams {
                unknown: if unknown_traversable {
                    UnknownCells::Traversable {
                        cost: self.cfg.unknown_cost,
                    }
                } else {
                    UnknownCells::Blocked
                },
                ..self.cfg.inflation
            };
            self.cost_cache[slot] = Some((self.map_version, inflate_obstacles(&self.map, &params)));
        }
        &self.cost_cache[slot].as_ref().expect("just filled").1
    }

    fn snapshot(&mut self) -> SnapshotRef {
        let pose = self.ep.pose;
        let step = self.ep.step;
        if let Some(s) = &self.last_snapshot {
            if s.step == step && s.pose == pose {
                return s.clone();
            }
        }
        let scene = self.scene.clone();
        let k = self.cfg.camera;
        let snap = Snapshot::lazy(self.next_snapshot, pose, step, Box::new(move || render_view(&scene, &pose, &k)));
        self.next_snapshot += 1;
        self.last_snapshot = Some(snap.clone());
        snap
    }

    fn act(&mut self, action: Action) -> Result<(), RunError> {
        let obs = self.ep.step(action)?;
        self.process(obs)
    }

    fn spend(&mut self, id: PoiId) {
        if let Some(i) = self.store.get(id).and_then(|p| self.map.index(self.map.cell_of(&p.position()))) {
            self.spent.insert(i);
        }
    }

    fn archive(&mut self, id: PoiId, reason: &str) {
        if let Ok(true) = self.store.archive(id, self.ep.step) {
            self.poi_events.push(PoiEvent::Archived {
                step: self.ep.step,
                id,
                reason: reason.to_string(),
            });
        }
    }

    fn insert_poi(&mut self, kind: PoiKind, pose: Pose, snapshot: SnapshotRef) -> PoiId {
        let here = self.ep.pose;
        let frustum = self.map.frustum_cells(&here, self.cfg.sensor.fov, self.cfg.sensor.max_range);
        let kind_name = kind.name().to_string();
        let id = self.store.insert(NewPoi {
            kind,
            pose,
            extrinsics: Extrinsics::from_pose(&here, CAMERA_HEIGHT),
            snapshot,
            frustum,
            created_step: self.ep.step,
        });
        self.poi_events.push(PoiEvent::Created {
            step: self.ep.step,
            id,
            kind: kind_name,
            x: pose.x,
            y: pose.y,
        });
        id
    }

    /// Integrates an observation: map update, frontier and object PoIs, and
    /// single-image confirmation of a suspect.
    fn process(&mut self, obs: Observation) -> Result<(), RunError> {
        let revealed = self
            .map
            .integrate_scan(&obs.scan)
            .map_err(|e| RunError::Config(format!("scan outside map: {e}")))?;
        if !revealed.is_empty() {
            self.map_version += 1;
            self.add_frontier_pois(&revealed);
        }
        if self.done() || self.confirmed.is_some() {
            return Ok(());
        }
        let detections: Vec<_> = obs
            .detections
            .into_iter()
            .filter(|d| !self.rejected.contains(&d.object_id))
            .collect();
        let Some(suspect) = select_suspect(
            &detections,
            &self.scene.goal_categories,
            &self.associations,
            self.cfg.tau_sus,
        )
        .cloned() else {
            return Ok(());
        };
        let oid = suspect.object_id;
        let here = self.ep.pose;
        let mut poi = self.object_poi(oid);
        if poi.is_none() {
            let cm = self.costmap(false).clone();
            if let Some(pose) = create_object_poi(&self.store, &suspect, &here, &self.map, &cm, &self.cfg.poi) {
                let snap = self.snapshot();
                let kind = PoiKind::Object {
                    object_id: oid,
                    face_heading: pose.heading,
                    label: suspect.label.clone(),
                    centroid: detection_centroid(&here, &suspect),
                    height_band: suspect.height_band,
                };
                let id = self.insert_poi(kind, pose, snap.clone());
                self.views.entry(oid).or_insert_with(|| MultiViewSet::new(oid)).add(snap);
                poi = Some(id);
            }
        }
        let Some(poi) = poi else { return Ok(()) };
        if self.tried_this_leg.contains(&oid) || self.budget.exhausted(oid) {
            return Ok(());
        }
        self.tried_this_leg.insert(oid);
        let snap = self.snapshot();
        self.views.entry(oid).or_insert_with(|| MultiViewSet::new(oid)).add(snap.clone());
        let result = self.confirm(oid, &suspect.label, &[snap], true)?;
        match result {
            ConfirmResult::Confirmed => {
                if self.store.get(poi).is_some_and(|p| p.is_selectable()) {
                    self.confirmed = Some(poi);
                } else {
                    self.ep.step(Action::Stop)?;
                }
            }
            ConfirmResult::Rejected => self.reject(oid),
            ConfirmResult::Unsure => {}
        }
        Ok(())
    }

    fn object_poi(&self, oid: u32) -> Option<PoiId> {
        self.store
            .all()
            .find(|p| p.kind.object_id() == Some(oid))
            .map(|p| p.id)
    }

    fn reject(&mut self, oid: u32) {
        self.rejected.insert(oid);
        let ids: Vec<PoiId> = self
            .store
            .selectable()
            .filter(|p| p.kind.object_id() == Some(oid))
            .map(|p| p.id)
            .collect();
        for id in ids {
            self.archive(id, "rejected");
        }
    }

    fn confirm(&mut self, oid: u32, label: &str, images: &[SnapshotRef], single: bool) -> Result<ConfirmResult, RunError> {
        let prompt = assemble_confirmation_prompt(images, &self.goal_label, label, oid, DEFAULT_CONFIRM_TEMPLATE)?;
        let is_goal = self.scene.object(oid).is_some_and(|o| self.scene.is_goal(o));
        let result = confirm_object(self.policy.as_mut(), &prompt, oid, is_goal, single, &mut self.budget);
        self.confirmations.push(ConfirmationEvent {
            step: self.ep.step,
            object_id: oid,
            single_image: single,
            images: images.len(),
            result,
        });
        Ok(result)
    }

    fn add_frontier_pois(&mut self, revealed: &[usize]) {
        self.add_frontier_pois_min(revealed, self.cfg.poi.min_cluster);
    }

    fn add_frontier_pois_min(&mut self, revealed: &[usize], min_cluster: usize) {
        let clusters = extract_frontiers(&self.map, min_cluster);
        let revealed: BTreeSet<usize> = revealed.iter().copied().collect();
        let here = self.ep.pose;
        for cl in clusters {
            let idx: Vec<usize> = cl.cells.iter().filter_map(|&c| self.map.index(c)).collect();
            let rep = self.map.world_of(cl.representative);
            let grew = idx.iter().any(|i| revealed.contains(i));
            let near_spent = self
                .spent
                .iter()
                .any(|&i| self.map.world_of(self.map.cell_at(i)).distance(&rep) <= SPENT_RADIUS);
            if !grew && near_spent {
                continue;
            }
            let covered = self.store.selectable().any(|p| {
                p.kind.is_frontier()
                    && self
                        .map
                        .index(self.map.cell_of(&p.position()))
                        .is_some_and(|i| idx.contains(&i))
            });
            if covered {
                continue;
            }
            let heading = if rep.distance(&here.position()) > 1e-9 {
                here.position().bearing_to(&rep)
            } else {
                here.heading
            };
            let snap = self.snapshot();
            self.insert_poi(PoiKind::Frontier, Pose::new(rep.x, rep.y, heading), snap);
        }
    }

    fn rotate(&mut self) -> Result<(), RunError> {
        self.rotations += 1;
        for a in full_rotation() {
            if self.done() {
                break;
            }
            self.act(a)?;
        }
        Ok(())
    }

    /// Drives to `target`. With `facing`, turns toward the heading once there.
    fn navigate(&mut self, target: PoiId) -> Result<LegEnd, RunError> {
        self.tried_this_leg.clear();
        let Some(poi) = self.store.get(target).cloned() else {
            return Ok(LegEnd::Abandoned("missing target"));
        };
        let frontier = poi.kind.is_frontier();
        let goal = poi.position();
        let plan = |agent: &mut Self| {
            let here = agent.ep.pose.position();
            let cm = agent.costmap(frontier).clone();
            astar(&cm, &here, &goal).map(|p| (p, cm))
        };
        let Ok((path, cm)) = plan(self) else {
            return Ok(LegEnd::Abandoned("no path"));
        };
        let budget = 4 * path.cells.len() as u32 + 50;
        let mut follower = FollowerState::new(path, &cm, self.cfg.follower);
        let start_step = self.ep.step;
        let mut version = self.map_version;
        loop {
            if self.done() {
                return Ok(LegEnd::Ended);
            }
            if self.confirmed.is_some_and(|c| c != target) {
                return Ok(LegEnd::Preempted);
            }
            if !self.store.get(target).is_some_and(|p| p.is_selectable()) && self.confirmed != Some(target) {
                return Ok(LegEnd::Abandoned("target archived"));
            }
            if self.ep.step - start_step > budget {
                return Ok(LegEnd::Abandoned("leg budget"));
            }
            if version != self.map_version {
                version = self.map_version;
                let cm = self.costmap(frontier).clone();
                let cm = follower.apply_blockages(&cm, self.cfg.inflation.radius);
                if follower.path.cells.iter().any(|&c| !cm.is_traversable(c)) {
                    match astar(&cm, &self.ep.pose.position(), &goal) {
                        Ok(p) => follower.replace_path(p, &cm),
                        Err(_) => return Ok(LegEnd::Abandoned("path blocked")),
                    }
                }
            }
            let cm = self.costmap(frontier).clone();
            let action = follower.next_action(&self.ep.pose, &cm);
            if action == Action::Stop {
                return Ok(LegEnd::Arrived);
            }
            if action == Action::Forward {
                follower.record_forward(&self.ep.pose);
            }
            self.act(action)?;
            if action == Action::Forward {
                let pose = self.ep.pose;
                if detect_stuck_and_replan(&mut follower, &pose, &cm, self.cfg.inflation.radius) == StuckOutcome::Escalate
                {
                    return Ok(LegEnd::Abandoned("stuck"));
                }
            }
        }
    }

    fn face(&mut self, heading: f64) -> Result<(), RunError> {
        let tol = self.cfg.follower.heading_tolerance + 1e-9;
        for _ in 0..12 {
            let err = wrap_pi(heading - self.ep.pose.heading);
            if err.abs() <= tol || self.done() {
                break;
            }
            self.act(if err > 0.0 { Action::TurnLeft } else { Action::TurnRight })?;
        }
        Ok(())
    }

    /// Arrival at an object PoI: face the object, tilt the camera if needed,
    /// confirm from every view gathered so far, then level the camera.
    fn arrive_at_object(&mut self, id: PoiId) -> Result<(), RunError> {
        let Some(poi) = self.store.get(id).cloned() else {
            return Ok(());
        };
        let PoiKind::Object {
            object_id,
            face_heading,
            label,
            centroid,
            height_band,
        } = poi.kind.clone()
        else {
            return Ok(());
        };
        self.face(face_heading)?;
        if self.done() {
            return Ok(());
        }
        if self.confirmed == Some(id) {
            self.ep.step(Action::Stop)?;
            return Ok(());
        }
        if self.rejected.contains(&object_id) {
            return Ok(());
        }
        let dist = self.ep.pose.position().distance(&centroid);
        let half_vfov = self.cfg.camera.half_vfov();
        let mut tilt = None;
        for a in [Action::LookUp, Action::LookDown] {
            let tilted = crate::planner::apply_action(&self.ep.pose, a);
            if !in_vertical_view(&self.ep.pose, height_band, dist, half_vfov)
                && in_vertical_view(&tilted, height_band, dist, half_vfov)
            {
                tilt = Some(a);
                break;
            }
        }
        if let Some(a) = tilt {
            self.act(a)?;
            if self.done() {
                return Ok(());
            }
        }
        let snap = self.snapshot();
        let set = self.views.entry(object_id).or_insert_with(|| MultiViewSet::new(object_id));
        set.add(snap);
        let images = set.images.clone();
        let result = self.confirm(object_id, &label, &images, false)?;
        match result {
            ConfirmResult::Confirmed => {
                self.ep.step(Action::Stop)?;
                return Ok(());
            }
            ConfirmResult::Rejected => self.reject(object_id),
            ConfirmResult::Unsure => {}
        }
        if self.confirmed.is_none() && !self.done() && self.ep.pose.pitch.abs() > 1e-9 {
            let level = if self.ep.pose.pitch > 0.0 { Action::LookDown } else { Action::LookUp };
            debug_assert!((self.ep.pose.pitch.abs() - LOOK_ANGLE).abs() < 1e-9);
            self.act(level)?;
        }
        Ok(())
    }

    /// Nearest selectable frontier PoI by travel distance, else nearest PoI.
    fn nearest_frontier(&mut self) -> Option<PoiId> {
        let here = self.ep.pose;
        let cm = self.costmap(true).clone();
        let field = geodesic_from(&cm, &here);
        let dist = |p: &crate::poi::Poi| cm.index(cm.cell_of(&p.position())).map_or(f64::INFINITY, |i| field[i]);
        let best = |frontier_only: bool| {
            self.store
                .selectable()
                .filter(|p| !frontier_only || p.kind.is_frontier())
                .map(|p| (dist(p), p.id))
                .filter(|(d, _)| d.is_finite())
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, id)| id)
        };
        best(true).or_else(|| best(false))
    }

    /// Queries the policy for the next waypoint. `Ok(None)` means no
    /// reachable PoI remains.
    fn decide(&mut self, after_rotate: bool) -> Result<Option<(PoiId, bool)>, RunError> {
        let here = self.ep.pose;
        let cm = self.costmap(true).clone();
        let cands: CandidateSet = sample_candidates(&self.store, self.cfg.tau_choice, &here, &cm);
        self.store.mark_waypoint(self.ep.step);
        if cands.is_empty() {
            return Ok(self.nearest_frontier().map(|id| (id, false)));
        }
        let field = geodesic_from(&cm, &here);
        let travel: Vec<f64> = cands
            .candidates
            .iter()
            .map(|p| cm.index(cm.cell_of(&p.position())).map_or(f64::INFINITY, |i| field[i]))
            .collect();
        let distances: Vec<f64> = cands
            .candidates
            .iter()
            .map(|p| self.scene.goal_distance_at(&p.position()))
            .collect();
        let bearings: Vec<f64> = cands
            .candidates
            .iter()
            .map(|p| {
                let q = p.position();
                if q.distance(&here.position()) < 1e-9 {
                    0.0
                } else {
                    wrap_pi(here.position().bearing_to(&q) - here.heading)
                }
            })
            .collect();
        let waypoint = self.decisions.len() as u32 + 1;
        let need_prompt = self.policy.needs_prompt() || self.cfg.prompt_archive.is_some();
        let prompt = if need_prompt {
            Some(assemble_decision_prompt(
                &cands,
                &self.goal_label,
                DEFAULT_DECISION_TEMPLATE,
                &self.cfg.camera,
            )?)
        } else {
            None
        };
        let prompt_dir = match (&self.cfg.prompt_archive, &prompt) {
            (Some(root), Some(p)) => {
                let dir = root.join(format!("w{waypoint:03}"));
                write_prompt_archive(&dir, p)?;
                Some(dir.display().to_string())
            }
            _ => None,
        };
        let decision = self.policy.decide(&DecisionInput {
            candidates: &cands,
            distances: &distances,
            travel: &travel,
            prompt: prompt.as_ref(),
        })?;
        let mut fallback = None;
        let target = match decision {
            Decision::Choose(k) => cands.by_display(k).map(|p| p.id),
            Decision::Rotate if !after_rotate => None,
            Decision::Rotate => {
                fallback = Some("second consecutive rotate".to_string());
                self.nearest_frontier()
            }
            Decision::Uncertain => {
                fallback = Some("uncertain".to_string());
                self.nearest_frontier()
            }
        };
        self.decisions.push(DecisionEvent {
            step: self.ep.step,
            waypoint,
            candidates: cands.candidates.iter().map(|p| p.id).collect(),
            kinds: cands.candidates.iter().map(|p| p.kind.name().to_string()).collect(),
            distances: distances.iter().map(|d| d.is_finite().then_some(*d)).collect(),
            bearings,
            decision,
            target,
            fallback,
            prompt_dir,
        });
        if decision == Decision::Rotate && !after_rotate {
            return Ok(Some((0, true)));
        }
        Ok(target.map(|t| (t, false)))
    }

    fn run(&mut self) -> Result<(), RunError> {
        let obs = self.ep.observe();
        self.process(obs)?;
        self.rotate()?;
        let mut arrived: Option<PoiId> = None;
        let mut after_rotate = false;
        let mut exhausted_rotate = false;
        let mut tour: Vec<PoiId> = Vec::new();
        while !self.done() {
            if let Some(t) = self.confirmed {
                match self.navigate(t)? {
                    LegEnd::Arrived => {
                        self.arrivals += 1;
                        self.arrive_at_object(t)?;
                        if !self.done() {
                            self.ep.step(Action::Stop)?;
                        }
                    }
                    LegEnd::Ended => {}
                    _ => {
                        self.ep.step(Action::Stop)?;
                    }
                }
                break;
            }
            let step = self.ep.step;
            let archived = refresh(&mut self.store, &self.map, arrived.take(), step).unwrap_or_default();
            for id in archived {
                self.poi_events.push(PoiEvent::Archived {
                    step,
                    id,
                    reason: "refresh".into(),
                });
            }
            self.add_frontier_pois(&[]);
            tour.retain(|id| self.store.get(*id).is_some_and(|p| p.is_selectable()));
            if tour.is_empty() && !after_rotate {
                tour = local_sweep(&self.store, &self.ep.pose, self.cfg.sweep_radius, self.cfg.sweep_min);
                if !tour.is_empty() {
                    self.store.mark_waypoint(step);
                    self.sweeps.push(SweepEvent {
                        step,
                        tour: tour.clone(),
                    });
                }
            }
            let target = if !tour.is_empty() {
                tour.remove(0)
            } else {
                if self.store.selectable_count() == 0 {
                    // noisy scans can split a frontier into fragments below
                    // the cluster floor; take those before giving up
                    self.add_frontier_pois_min(&[], 1);
                }
                if self.store.selectable_count() == 0 {
                    if !exhausted_rotate {
                        exhausted_rotate = true;
                        self.rotate()?;
                        continue;
                    }
                    self.failure = Some("no selectable PoIs".into());
                    self.ep.step(Action::Stop)?;
                    break;
                }
                exhausted_rotate = false;
                match self.decide(after_rotate)? {
                    None => {
                        self.failure = Some("no reachable PoIs".into());
                        self.ep.step(Action::Stop)?;
                        break;
                    }
                    Some((_, true)) => {
                        self.rotate()?;
                        after_rotate = true;
                        continue;
                    }
                    Some((t, false)) => {
                        after_rotate = false;
                        t
                    }
                }
            };
            match self.navigate(target)? {
                LegEnd::Arrived => {
                    self.arrivals += 1;
                    self.spend(target);
                    if self.store.get(target).is_some_and(|p| !p.kind.is_frontier()) {
                        self.arrive_at_object(target)?;
                    }
                    if self.store.get(target).is_some_and(|p| p.is_selectable()) {
                        arrived = Some(target);
                    }
                }
                LegEnd::Abandoned(reason) => {
                    self.abandoned += 1;
                    self.spend(target);
                    self.archive(target, reason);
                }
                LegEnd::Ended | LegEnd::Preempted => {}
            }
        }
        Ok(())
    }
}

/// Runs one episode on a loaded scene.
pub fn run_episode(scene: Arc<Scene>, cfg: &RunConfig) -> Result<EpisodeTrace, RunError> {
    cfg.validate()?;
    let started = Instant::now();
    let start = scene.start.position();
    let shortest = scene.goal_distance(&start)?;
    let mut agent = Agent::new(scene.clone(), cfg)?;
    if let Err(e) = agent.run() {
        match e {
            RunError::Policy(p) => agent.failure = Some(format!("policy: {p}")),
            other => return Err(other),
        }
    }
    let final_distance = agent.ep.distance_to_goal();
    let success = agent.ep.stopped && final_distance <= scene.success_radius;
    let wall_time = match cfg.timing {
        Timing::Wall => started.elapsed().as_secs_f64(),
        Timing::Off => 0.0,
    };
    let record = EpisodeRecord {
        scene: scene.name.clone(),
        seed: cfg.seed,
        policy: cfg.policy.name().to_string(),
        success,
        path_length: agent.ep.path_length,
        shortest_path: shortest,
        final_distance,
        initial_distance: shortest,
        steps: agent.ep.step,
        decision_count: agent.decisions.len() as u32,
        vlm_calls: agent.policy.remote_calls(),
        wall_time,
        failure: agent.failure.clone(),
    };
    Ok(EpisodeTrace {
        schema: TRACE_SCHEMA.to_string(),
        scene: scene.name.clone(),
        seed: cfg.seed,
        policy: cfg.policy.name().to_string(),
        start: scene.start,
        steps: agent.ep.log.clone(),
        decisions: std::mem::take(&mut agent.decisions),
        sweeps: std::mem::take(&mut agent.sweeps),
        poi_events: std::mem::take(&mut agent.poi_events),
        confirmations: std::mem::take(&mut agent.confirmations),
        pois: agent.store.records(),
        final_pose: agent.ep.pose,
        arrivals: agent.arrivals,
        abandoned_legs: agent.abandoned,
        rotations: agent.rotations,
        map: MapDump::from_map(&agent.map),
        record,
    })
}

/// A scene to run, or the reason it could not be loaded.
pub struct SceneEntry {
    pub label: String,
    pub scene: Result<Arc<Scene>, String>,
}

impl SceneEntry {
    pub fn load(path: &Path) -> Self {
        Self {
            label: path.display().to_string(),
            scene: Scene::load(path).map(Arc::new).map_err(|e| e.to_string()),
        }
    }

    pub fn loaded(scene: Scene) -> Self {
        Self {
            label: scene.name.clone(),
            scene: Ok(Arc::new(scene)),
        }
    }
}

/// Output of [`run_batch`]: traces in (scene, seed) order.
pub struct BatchResult {
    pub traces: Vec<EpisodeTrace>,
    pub report: Report,
}

/// Runs every scene with every seed, `cfg.jobs` episodes at a time. Failed
/// scenes and episodes are noted in the report; the rest still run.
pub fn run_batch(scenes: &[SceneEntry], seeds: &[u64], cfg: &RunConfig) -> Result<BatchResult, RunError> {
    cfg.validate()?;
    let mut notes = Vec::new();
    let mut jobs = Vec::new();
    for entry in scenes {
        match &entry.scene {
            Ok(s) => jobs.extend(seeds.iter().map(|&seed| (s.clone(), seed))),
            Err(e) => notes.push(format!("scene {} skipped: {e}", entry.label)),
        }
    }
    let run = |(scene, seed): &(Arc<Scene>, u64)| {
        let cfg = RunConfig {
            seed: *seed,
            ..cfg.clone()
        };
        (scene.name.clone(), *seed, run_episode(scene.clone(), &cfg))
    };
    let results: Vec<_> = if cfg.jobs <= 1 {
        jobs.iter().map(run).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| RunError::Config(e.to_string()))?
            .install(|| jobs.par_iter().map(run).collect())
    };
    let mut traces = Vec::new();
    for (name, seed, r) in results {
        match r {
            Ok(t) => traces.push(t),
            Err(e) => notes.push(format!("episode {name} seed {seed} failed: {e}")),
        }
    }
    let records: Vec<EpisodeRecord> = traces.iter().map(|t| t.record.clone()).collect();
    let mut report = aggregate_report(&records)?;
    report.notes = notes;
    Ok(BatchResult { traces, report })
}

/// Runs `episodes` epsilon-greedy episodes (episode `e` on scene
/// `e % scenes.len()` with seed `base_seed + e`) and turns every waypoint
/// decision into a training sample. With `out`, prompts are archived under
/// `out/prompts/eNNNN/wNNN` and `prompt_dir` is recorded relative to `out`.
pub fn collect_dataset(
    scenes: &[Arc<Scene>],
    episodes: u64,
    base_seed: u64,
    cfg: &RunConfig,
    out: Option<&Path>,
) -> Result<Vec<RlvrSample>, RunError> {
    if scenes.is_empty() {
        return Err(RunError::Config("no scenes".into()));
    }
    let base = RunConfig {
        policy: PolicyKind::Epsilon,
        ..cfg.clone()
    };
    base.validate()?;
    let run = |e: u64| -> Result<Vec<RlvrSample>, RunError> {
        let scene = scenes[(e % scenes.len() as u64) as usize].clone();
        let seed = base_seed + e;
        let ecfg = RunConfig {
            seed,
            prompt_archive: out.map(|o| o.join("prompts").join(format!("e{e:04}"))),
            ..base.clone()
        };
        let trace = run_episode(scene, &ecfg)?;
        Ok(trace
            .decisions
            .iter()
            .map(|d| RlvrSample {
                scene: trace.scene.clone(),
                episode: e,
                waypoint: d.waypoint,
                prompt_dir: d.prompt_dir.as_ref().map(|p| {
                    let p = Path::new(p);
                    out.and_then(|o| p.strip_prefix(o).ok())
                        .unwrap_or(p)
                        .to_string_lossy()
                        .replace('\\', "/")
                }),
                distances: d.distances.clone(),
                chosen: match d.decision {
                    Decision::Choose(k) => Some(k),
                    Decision::Rotate => Some(0),
                    Decision::Uncertain => None,
                },
                t_prob: base.t_prob,
                seed,
                kinds: d.kinds.clone(),
                bearings: d.bearings.clone(),
            })
            .collect())
    };
    let ids: Vec<u64> = (0..episodes).collect();
    let per_episode: Vec<Result<Vec<RlvrSample>, RunError>> = if base.jobs <= 1 {
        ids.iter().map(|&e| run(e)).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(base.jobs)
            .build()
            .map_err(|e| RunError::Config(e.to_string()))?
            .install(|| ids.par_iter().map(|&e| run(e)).collect())
    };
    let mut samples = Vec::new();
    for r in per_episode {
        samples.extend(r?);
    }
    Ok(samples)
}
