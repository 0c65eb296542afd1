//! Points of interest: frontier extraction, object vantage points, and the
//! selectable / archived stores that feed waypoint decisions.

use crate::geometry::{Point2, Pose};
use crate::mapping::{bresenham, Cell, CellState, CostMap, Frustum, GridMap};
use crate::planner::distance_field;
use crate::prompting::{Extrinsics, SnapshotRef};
use crate::simulator::{Detection, HeightBand};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, VecDeque};
use thiserror::Error;

pub type PoiId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum PoiError {
    #[error("unknown PoI id {0}")]
    NotFound(PoiId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PoiKind {
    Frontier,
    Object {
        object_id: u32,
        /// Heading that faces the object's estimated centroid.
        face_heading: f64,
        label: String,
        centroid: Point2,
        height_band: HeightBand,
    },
}

impl PoiKind {
    pub fn is_frontier(&self) -> bool {
        matches!(self, PoiKind::Frontier)
    }

    pub fn object_id(&self) -> Option<u32> {
        match self {
            PoiKind::Object { object_id, .. } => Some(*object_id),
            PoiKind::Frontier => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PoiKind::Frontier => "frontier",
            PoiKind::Object { .. } => "object",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiState {
    Selectable,
    Archived,
}

/// A navigable decision point with the observation captured when it was
/// created.
#[derive(Clone, Debug)]
pub struct Poi {
    pub id: PoiId,
    pub kind: PoiKind,
    pub pose: Pose,
    /// Camera pose at creation.
    pub extrinsics: Extrinsics,
    pub snapshot: SnapshotRef,
    /// View frustum of the creating observation on the agent's map.
    pub frustum: Frustum,
    pub created_step: u32,
    pub archived_step: Option<u32>,
    pub state: PoiState,
}

impl Poi {
    pub fn position(&self) -> Point2 {
        self.pose.position()
    }

    pub fn is_selectable(&self) -> bool {
        self.state == PoiState::Selectable
    }
}

/// Flat view of a PoI for JSON dumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub id: PoiId,
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub state: PoiState,
    pub created_step: u32,
}

impl From<&Poi> for PoiRecord {
    fn from(p: &Poi) -> Self {
        Self {
            id: p.id,
            kind: p.kind.name().to_string(),
            x: p.pose.x,
            y: p.pose.y,
            heading: p.pose.heading,
            state: p.state,
            created_step: p.created_step,
        }
    }
}

/// Selectable and archived PoIs of one episode. Ids are allocated here and
/// never reused; archiving is one-way.
#[derive(Clone, Debug, Default)]
pub struct PoiStore {
    pois: BTreeMap<PoiId, Poi>,
    next_id: PoiId,
    /// Step of the most recent waypoint decision.
    pub last_waypoint_step: Option<u32>,
}

/// Fields of a PoI before the store assigns its id.
pub struct NewPoi {
    pub kind: PoiKind,
    pub pose: Pose,
    pub extrinsics: Extrinsics,
    pub snapshot: SnapshotRef,
    pub frustum: Frustum,
    pub created_step: u32,
}

impl PoiStore {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, new: NewPoi) -> PoiId {
        let id = self.next_id.max(1);
        self.next_id = id + 1;
        self.pois.insert(
            id,
            Poi {
                id,
                kind: new.kind,
                pose: new.pose,
                extrinsics: new.extrinsics,
                snapshot: new.snapshot,
                frustum: new.frustum,
                created_step: new.created_step,
                archived_step: None,
                state: PoiState::Selectable,
            },
        );
        id
    }

    pub fn get(&self, id: PoiId) -> Option<&Poi> {
        self.pois.get(&id)
    }

    pub fn all(&self) -> impl Iterator<Item = &Poi> {
        self.pois.values()
    }

    pub fn selectable(&self) -> impl Iterator<Item = &Poi> {
        self.pois.values().filter(|p| p.is_selectable())
    }

    pub fn archived(&self) -> impl Iterator<Item = &Poi> {
        self.pois.values().filter(|p| !p.is_selectable())
    }

    pub fn selectable_count(&self) -> usize {
        self.selectable().count()
    }

    pub fn archived_count(&self) -> usize {
        self.archived().count()
    }

    /// Moves a PoI to the archive. Returns whether it was selectable.
    pub fn archive(&mut self, id: PoiId, step: u32) -> Result<bool, PoiError> {
        let poi = self.pois.get_mut(&id).ok_or(PoiError::NotFound(id))?;
        if poi.state == PoiState::Archived {
            return Ok(false);
        }
        poi.state = PoiState::Archived;
        poi.archived_step = Some(step);
        Ok(true)
    }

    pub fn records(&self) -> Vec<PoiRecord> {
        self.pois.values().map(PoiRecord::from).collect()
    }

    /// Records that a waypoint decision happened at `step`; PoIs created later
    /// count as new for the next decision.
    pub fn mark_waypoint(&mut self, step: u32) {
        self.last_waypoint_step = Some(step);
    }

    fn is_new(&self, poi: &Poi) -> bool {
        self.last_waypoint_step.is_none_or(|s| poi.created_step > s)
    }
}

/// Free cell with at least one 4-adjacent unknown cell.
pub fn is_frontier_cell(map: &GridMap, cell: Cell) -> bool {
    map.get(cell) == Some(CellState::Free)
        && cell
            .neighbors4()
            .iter()
            .any(|&n| map.get(n) == Some(CellState::Unknown))
}

/// An 8-connected cluster of frontier cells.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierCluster {
    /// Member cells in row-major order.
    pub cells: Vec<Cell>,
    /// Member cell nearest the cluster centroid.
    pub representative: Cell,
}

/// Frontier clusters with at least `min_cluster` cells, ordered by their
/// first cell in row-major order.
pub fn extract_frontiers(map: &GridMap, min_cluster: usize) -> Vec<FrontierCluster> {
    let n = map.len();
    let frontier: Vec<bool> = (0..n).map(|i| is_frontier_cell(map, map.cell_at(i))).collect();
    let mut seen = vec![false; n];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !frontier[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            for nb in map.cell_at(i).neighbors8() {
                if let Some(j) = map.index(nb) {
                    if frontier[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if members.len() < min_cluster.max(1) {
            continue;
        }
        members.sort_unstable();
        let cells: Vec<Cell> = members.iter().map(|&i| map.cell_at(i)).collect();
        // distances to the centroid scaled by n, so ties are exact
        let n = cells.len() as i64;
        let (sx, sy) = cells
            .iter()
            .fold((0i64, 0i64), |(x, y), c| (x + c.x as i64, y + c.y as i64));
        let representative = *cells
            .iter()
            .min_by_key(|c| (n * c.x as i64 - sx).pow(2) + (n * c.y as i64 - sy).pow(2))
            .expect("cluster is non-empty");
        clusters.push(FrontierCluster {
            cells,
            representative,
        });
    }
    clusters
}

/// Tunables for PoI creation and sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiParams {
    pub tau_choice: usize,
    pub min_cluster: usize,
    pub standoff: f64,
    pub standoff_min: f64,
    pub standoff_max: f64,
    pub dedup_radius: f64,
}

impl Default for PoiParams {
    fn default() -> Self {
        Self {
            tau_choice: 8,
            min_cluster: 3,
            standoff: 0.8,
            standoff_min: 0.7,
            standoff_max: 1.5,
            dedup_radius: 0.5,
        }
    }
}

/// World position of a detected object, estimated from the detection.
pub fn detection_centroid(agent: &Pose, detection: &Detection) -> Point2 {
    agent
        .position()
        .offset(agent.heading + detection.bearing, detection.range)
}

/// Whether some object PoI (selectable or archived) already covers this
/// object.
pub fn has_object_poi(store: &PoiStore, object_id: u32, centroid: &Point2, dedup_radius: f64) -> bool {
    store.all().any(|p| match &p.kind {
        PoiKind::Object {
            object_id: oid,
            centroid: c,
            ..
        } => *oid == object_id || c.distance(centroid) <= dedup_radius,
        PoiKind::Frontier => false,
    })
}

/// Vantage pose facing a detected object: the free, non-inflated cell in the
/// standoff band closest to the preferred standoff distance (ties: nearest
/// to the agent, then lowest index) with a clear line to the object. `None`
/// when no such cell exists or the object already has a PoI.
pub fn create_object_poi(
    store: &PoiStore,
    detection: &Detection,
    agent: &Pose,
    map: &GridMap,
    costmap: &CostMap,
    params: &PoiParams,
) -> Option<Pose> {
    let centroid = detection_centroid(agent, detection);
    if has_object_poi(store, detection.object_id, &centroid, params.dedup_radius) {
        return None;
    }
    let res = map.resolution();
    let center_cell = map.cell_of(&centroid);
    let reach = (params.standoff_max / res).ceil() as i32 + 1;
    let here = agent.position();
    let mut best: Option<((i64, f64, usize), Cell)> = None;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let c = Cell::new(center_cell.x + dx, center_cell.y + dy);
            let Some(idx) = map.index(c) else { continue };
            if map.state(idx) != CellState::Free || costmap.is_inflated(c) || !costmap.is_traversable(c) {
                continue;
            }
            let p = map.world_of(c);
            let d = p.distance(&centroid);
            if d < params.standoff_min || d > params.standoff_max {
                continue;
            }
            if !clear_toward(map, c, center_cell, &centroid, params.standoff_min * 0.6) {
                continue;
            }
            let key = (
                ((d - params.standoff).abs() / res).round() as i64,
                p.distance(&here),
                idx,
            );
            if best
                .as_ref()
                .is_none_or(|(k, _)| key.0 < k.0 || (key.0 == k.0 && (key.1, key.2) < (k.1, k.2)))
            {
                best = Some((key, c));
            }
        }
    }
    let (_, cell) = best?;
    let p = map.world_of(cell);
    Some(Pose::new(p.x, p.y, p.bearing_to(&centroid)))
}

// Line from `from` to the object stays off occupied cells until it is within
// `object_radius` of the centroid.
fn clear_toward(map: &GridMap, from: Cell, to: Cell, centroid: &Point2, object_radius: f64) -> bool {
    bresenham(from, to).skip(1).all(|c| {
        map.world_of(c).distance(centroid) <= object_radius || map.get(c) != Some(CellState::Occupied)
    })
}

/// Archives frontier PoIs that left the frontier and the PoI the agent just
/// reached. Returns the ids archived by this call.
pub fn refresh(
    store: &mut PoiStore,
    map: &GridMap,
    arrived: Option<PoiId>,
    step: u32,
) -> Result<Vec<PoiId>, PoiError> {
    if let Some(id) = arrived {
        if store.get(id).is_none() {
            return Err(PoiError::NotFound(id));
        }
    }
    let stale: Vec<PoiId> = store
        .selectable()
        .filter(|p| p.kind.is_frontier() && !is_frontier_cell(map, map.cell_of(&p.position())))
        .map(|p| p.id)
        .collect();
    let mut archived = Vec::new();
    for id in stale.into_iter().chain(arrived) {
        if store.archive(id, step)? {
            archived.push(id);
        }
    }
    archived.sort_unstable();
    Ok(archived)
}

/// One image view of a decision: the snapshot shared by a group of
/// candidates, plus an archived PoI whose observation serves as context.
#[derive(Clone, Debug)]
pub struct ContextView {
    pub snapshot_id: u64,
    pub archived: Option<Poi>,
}

/// Candidates offered to the decision policy, numbered 1..n in order.
#[derive(Clone, Debug, Default)]
pub struct CandidateSet {
    pub candidates: Vec<Poi>,
    pub context: Vec<ContextView>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// PoI behind display number `n` (1-based).
    pub fn by_display(&self, n: usize) -> Option<&Poi> {
        n.checked_sub(1).and_then(|i| self.candidates.get(i))
    }
}

/// Geodesic distance from the agent to every cell on `costmap`.
pub fn geodesic_from(costmap: &CostMap, agent: &Pose) -> Vec<f64> {
    distance_field(costmap, &[costmap.cell_of(&agent.position())])
}

/// Builds the candidate set: every PoI created since the last waypoint,
/// topped up with the geodesically nearest older PoIs until `tau_choice`
/// candidates exist (unreachable ones are skipped).
pub fn sample_candidates(store: &PoiStore, tau_choice: usize, agent: &Pose, costmap: &CostMap) -> CandidateSet {
    let mut candidates: Vec<Poi> = store.selectable().filter(|p| store.is_new(p)).cloned().collect();
    if candidates.len() < tau_choice {
        let field = geodesic_from(costmap, agent);
        let mut old: Vec<(f64, &Poi)> = store
            .selectable()
            .filter(|p| !store.is_new(p))
            .filter_map(|p| {
                let d = costmap
                    .index(costmap.cell_of(&p.position()))
                    .map_or(f64::INFINITY, |i| field[i]);
                d.is_finite().then_some((d, p))
            })
            .collect();
        old.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        let need = tau_choice - candidates.len();
        candidates.extend(old.into_iter().take(need).map(|(_, p)| p.clone()));
    }
    let context = context_views(store, &candidates);
    CandidateSet { candidates, context }
}

/// Groups candidates by snapshot (first-appearance order) and pairs each
/// group with the most recently archived PoI whose frustum overlaps the
/// group's view.
pub fn context_views(store: &PoiStore, candidates: &[Poi]) -> Vec<ContextView> {
    let mut order: Vec<u64> = Vec::new();
    let mut frusta: HashMap<u64, &Frustum> = HashMap::new();
    for c in candidates {
        let sid = c.snapshot.id;
        if !frusta.contains_key(&sid) {
            order.push(sid);
            frusta.insert(sid, &c.frustum);
        }
    }
    order
        .into_iter()
        .map(|sid| {
            let view = frusta[&sid];
            let archived = store
                .archived()
                .filter(|q| q.snapshot.id != sid && q.frustum.overlaps(view))
                .max_by_key(|q| (q.archived_step, q.id))
                .cloned();
            ContextView {
                snapshot_id: sid,
                archived,
            }
        })
        .collect()
}

/// Per-goal table of labels the detector may report for objects resembling
/// the goal (the goal label itself always included).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Associations {
    table: BTreeMap<String, Vec<String>>,
}

const DEFAULT_ASSOCIATIONS: &str = include_str!("../assets/associations.json");

impl Associations {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self {
            table: serde_json::from_str(text)?,
        })
    }

    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_ASSOCIATIONS).expect("bundled association table parses")
    }

    pub fn is_associated(&self, goal: &str, label: &str) -> bool {
        goal == label || self.table.get(goal).is_some_and(|v| v.iter().any(|l| l == label))
    }
}

/// The strongest detection among labels associated with any goal category,
/// if its confidence exceeds `tau_sus`. Ties go to the lowest object id.
pub fn select_suspect<'a>(
    detections: &'a [Detection],
    goals: &[String],
    associations: &Associations,
    tau_sus: f64,
) -> Option<&'a Detection> {
    detections
        .iter()
        .filter(|d| goals.iter().any(|g| associations.is_associated(g, &d.label)))
        .max_by(|a, b| a.confidence.total_cmp(&b.confidence).then(b.object_id.cmp(&a.object_id)))
        .filter(|d| d.confidence > tau_sus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{inflate_obstacles, InflationParams};
    use crate::prompting::Snapshot;

    fn blank(w: usize, h: usize) -> GridMap {
        GridMap::new(w, h, 0.1, Point2::new(0.0, 0.0)).unwrap()
    }

    pub(crate) fn new_poi(store: &mut PoiStore, kind: PoiKind, x: f64, y: f64, step: u32) -> PoiId {
        let pose = Pose::new(x, y, 0.0);
        store.insert(NewPoi {
            kind,
            pose,
            extrinsics: Extrinsics::identity(),
            snapshot: Snapshot::blank(step as u64, pose, step, 4, 4),
            frustum: Frustum::default(),
            created_step: step,
        })
    }

    #[test]
    fn fully_explored_has_no_frontiers() {
        let m = GridMap::filled(6, 6, 0.1, Point2::new(0.0, 0.0), CellState::Free).unwrap();
        assert!(extract_frontiers(&m, 1).is_empty());
    }

    #[test]
    fn half_known_map_has_one_boundary_cluster() {
        let mut m = blank(5, 5);
        for y in 0..5 {
            for x in 0..3 {
                m.set(Cell::new(x, y), CellState::Free);
            }
        }
        let f = extract_frontiers(&m, 3);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].cells.len(), 5);
        assert!(f[0].cells.iter().all(|c| c.x == 2));
        assert_eq!(f[0].representative, Cell::new(2, 2));
    }

    #[test]
    fn single_free_cell_is_a_cluster() {
        let mut m = blank(3, 3);
        m.set(Cell::new(1, 1), CellState::Free);
        let f = extract_frontiers(&m, 1);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].cells, vec![Cell::new(1, 1)]);
    }

    #[test]
    fn refresh_archives_arrival_and_stale_frontiers() {
        let mut m = blank(10, 10);
        for y in 0..10 {
            for x in 0..5 {
                m.set(Cell::new(x, y), CellState::Free);
            }
        }
        let mut store = PoiStore::new();
        let f = new_poi(&mut store, PoiKind::Frontier, 0.45, 0.55, 0);
        let o = new_poi(
            &mut store,
            PoiKind::Object {
                object_id: 3,
                face_heading: 0.0,
                label: "chair".into(),
                centroid: Point2::new(0.1, 0.1),
                height_band: HeightBand::Mid,
            },
            0.15,
            0.15,
            0,
        );
        assert!(refresh(&mut store, &m, None, 1).unwrap().is_empty());
        assert_eq!(refresh(&mut store, &m, Some(o), 2).unwrap(), vec![o]);
        // reveal beyond the frontier column
        for y in 0..10 {
            m.set(Cell::new(5, y), CellState::Free);
        }
        assert_eq!(refresh(&mut store, &m, None, 3).unwrap(), vec![f]);
        assert_eq!(refresh(&mut store, &m, Some(99), 4), Err(PoiError::NotFound(99)));
    }

    #[test]
    fn sampling_tops_up_with_nearest_old() {
        let m = GridMap::filled(60, 10, 0.1, Point2::new(0.0, 0.0), CellState::Free).unwrap();
        let cm = inflate_obstacles(&m, &InflationParams::default());
        let mut store = PoiStore::new();
        let old: Vec<PoiId> = (0..5)
            .map(|k| new_poi(&mut store, PoiKind::Frontier, 0.55 + k as f64, 0.55, 0))
            .collect();
        store.mark_waypoint(0);
        let new: Vec<PoiId> = (0..2)
            .map(|k| new_poi(&mut store, PoiKind::Frontier, 5.05, 0.25 + 0.3 * k as f64, 3))
            .collect();
        let agent = Pose::new(3.15, 0.55, 0.0);
        let cs = sample_candidates(&store, 4, &agent, &cm);
        let ids: Vec<PoiId> = cs.candidates.iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![new[0], new[1], old[3], old[2]]);
    }

    #[test]
    fn sampling_keeps_all_new_and_exhausts_old() {
        let m = GridMap::filled(60, 10, 0.1, Point2::new(0.0, 0.0), CellState::Free).unwrap();
        let cm = inflate_obstacles(&m, &InflationParams::default());
        let mut store = PoiStore::new();
        for k in 0..6 {
            new_poi(&mut store, PoiKind::Frontier, 0.55 + 0.5 * k as f64, 0.55, 2);
        }
        store.mark_waypoint(1);
        let agent = Pose::new(0.55, 0.55, 0.0);
        assert_eq!(sample_candidates(&store, 4, &agent, &cm).len(), 6);

        let mut store = PoiStore::new();
        for k in 0..3 {
            new_poi(&mut store, PoiKind::Frontier, 0.55 + 0.5 * k as f64, 0.55, 0);
        }
        store.mark_waypoint(1);
        assert_eq!(sample_candidates(&store, 4, &agent, &cm).len(), 3);
    }

    #[test]
    fn associations_include_goal_itself() {
        let a = Associations::builtin();
        assert!(a.is_associated("chair", "chair"));
        assert!(a.is_associated("potted plant", "flower"));
        assert!(!a.is_associated("toilet", "bed"));
    }

    #[test]
    fn suspect_requires_threshold_and_max() {
        let a = Associations::builtin();
        let det = |id, label: &str, c| Detection {
            object_id: id,
            label: label.into(),
            confidence: c,
            bearing: 0.0,
            range: 1.0,
            height_band: HeightBand::Floor,
        };
        let goals = vec!["potted plant".to_string()];
        let ds = vec![det(1, "potted plant", 0.6), det(2, "flower", 0.8), det(3, "bed", 0.99)];
        assert_eq!(select_suspect(&ds, &goals, &a, 0.5).unwrap().object_id, 2);
        assert!(select_suspect(&ds, &goals, &a, 0.85).is_none());
    }
}
