//! Snapshot projection, numbered markers and prompt assembly.

pub mod raster;

use crate::geometry::Pose;
use crate::poi::{CandidateSet, PoiId};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use thiserror::Error;

pub use raster::{Raster, Rgb};

/// Camera height above the floor, meters.
pub const CAMERA_HEIGHT: f64 = 0.88;

pub const DEFAULT_DECISION_TEMPLATE: &str = include_str!("../../assets/decision_prompt.txt");
pub const DEFAULT_CONFIRM_TEMPLATE: &str = include_str!("../../assets/confirm_prompt.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("confirmation prompt needs at least one image")]
    NoImages,
    #[error("decision prompt needs at least one candidate")]
    NoCandidates,
    #[error("writing prompt archive: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding prompt manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// Pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 160.0,
            fy: 160.0,
            cx: 160.0,
            cy: 120.0,
            width: 320,
            height: 240,
        }
    }
}

impl CameraIntrinsics {
    /// Half of the horizontal field of view.
    pub fn half_hfov(&self) -> f64 {
        (self.cx.max(self.width as f64 - self.cx) / self.fx).atan()
    }

    pub fn half_vfov(&self) -> f64 {
        (self.cy.max(self.height as f64 - self.cy) / self.fy).atan()
    }
}

/// World-to-camera transform. The camera frame has X right, Y down and Z
/// along the optical axis; the world frame has z up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Camera mounted `height` meters above the agent, looking along the
    /// heading and tilted by the pose pitch.
    pub fn from_pose(pose: &Pose, height: f64) -> Self {
        let (sh, ch) = pose.heading.sin_cos();
        let (sp, cp) = pose.pitch.sin_cos();
        let right = [sh, -ch, 0.0];
        let down = [sp * ch, sp * sh, -cp];
        let forward = [ch * cp, sh * cp, sp];
        let rotation = [right, down, forward];
        let c = [pose.x, pose.y, height];
        let mut translation = [0.0; 3];
        for (t, row) in translation.iter_mut().zip(&rotation) {
            *t = -(row[0] * c[0] + row[1] * c[1] + row[2] * c[2]);
        }
        Self {
            rotation,
            translation,
        }
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = self.translation;
        for (o, row) in out.iter_mut().zip(&self.rotation) {
            *o += row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
        }
        out
    }
}

/// Outcome of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    /// Pixel coordinates (possibly off-image) and depth along the optical axis.
    InFront { x: f64, y: f64, depth: f64 },
    /// The point is not in front of the camera; `camera_x` tells which side.
    BehindCamera { camera_x: f64 },
}

/// Pinhole projection of world point `p`.
pub fn project(k: &CameraIntrinsics, e: &Extrinsics, p: [f64; 3]) -> Projection {
    let [x, y, z] = e.to_camera(p);
    if z <= 0.0 {
        return Projection::BehindCamera { camera_x: x };
    }
    Projection::InFront {
        x: k.fx * x / z + k.cx,
        y: k.fy * y / z + k.cy,
        depth: z,
    }
}

/// Integer pixel for a projection, pinned to the image border when off-image.
/// Points behind the camera pin to the bottom edge on their side.
pub fn pixel_for(k: &CameraIntrinsics, proj: Projection) -> (i64, i64) {
    let max_x = k.width as f64 - 1.0;
    let max_y = k.height as f64 - 1.0;
    match proj {
        Projection::InFront { x, y, .. } => (x.round().clamp(0.0, max_x) as i64, y.round().clamp(0.0, max_y) as i64),
        Projection::BehindCamera { camera_x } => {
            let x = if camera_x < 0.0 { 0.0 } else { max_x };
            (x as i64, max_y as i64)
        }
    }
}

/// Where a PoI on the floor appears in a snapshot taken with `e`.
pub fn poi_pixel(k: &CameraIntrinsics, e: &Extrinsics, pose: &Pose) -> (i64, i64) {
    pixel_for(k, project(k, e, [pose.x, pose.y, 0.0]))
}

pub type SnapshotId = u64;

type RenderFn = dyn Fn() -> Raster + Send + Sync;

/// Immutable egocentric image with its capture pose. The pixels may be
/// rendered on first use.
pub struct Snapshot {
    pub id: SnapshotId,
    pub pose: Pose,
    pub step: u32,
    render: Option<Box<RenderFn>>,
    image: OnceLock<Arc<Raster>>,
}

pub type SnapshotRef = Arc<Snapshot>;

impl Snapshot {
    pub fn from_raster(id: SnapshotId, pose: Pose, step: u32, raster: Raster) -> SnapshotRef {
        let image = OnceLock::new();
        let _ = image.set(Arc::new(raster));
        Arc::new(Self {
            id,
            pose,
            step,
            render: None,
            image,
        })
    }

    pub fn lazy(id: SnapshotId, pose: Pose, step: u32, render: Box<RenderFn>) -> SnapshotRef {
        Arc::new(Self {
            id,
            pose,
            step,
            render: Some(render),
            image: OnceLock::new(),
        })
    }

    /// Uniform gray image, mostly for tests.
    pub fn blank(id: SnapshotId, pose: Pose, step: u32, width: u32, height: u32) -> SnapshotRef {
        Self::from_raster(id, pose, step, Raster::new(width, height, [128, 128, 128]))
    }

    pub fn image(&self) -> Arc<Raster> {
        self.image
            .get_or_init(|| Arc::new((self.render.as_ref().expect("lazy snapshot has a renderer"))()))
            .clone()
    }
}

impl fmt::Debug for Snapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Snapshot")
            .field("id", &self.id)
            .field("pose", &self.pose)
            .field("step", &self.step)
            .finish()
    }
}

pub const MARKER_RADIUS: i64 = 11;
const MARKER_FILL: Rgb = [230, 40, 40];
const MARKER_RING: Rgb = [255, 255, 255];
const MARKER_TEXT: Rgb = [255, 255, 255];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub number: u32,
    pub x: i64,
    pub y: i64,
}

/// A snapshot with numbered markers placed on it.
#[derive(Clone, Debug)]
pub struct AnnotatedSnapshot {
    pub base: SnapshotRef,
    pub markers: Vec<Marker>,
}

impl AnnotatedSnapshot {
    pub fn render(&self) -> Raster {
        let mut img = (*self.base.image()).clone();
        for m in &self.markers {
            draw_marker(&mut img, m);
        }
        img
    }
}

fn draw_marker(img: &mut Raster, m: &Marker) {
    img.fill_circle(m.x, m.y, MARKER_RADIUS, MARKER_RING);
    img.fill_circle(m.x, m.y, MARKER_RADIUS - 2, MARKER_FILL);
    let text = m.number.to_string();
    let scale = if text.len() == 1 { 2 } else { 1 };
    img.draw_text_centered(m.x, m.y, &text, scale, MARKER_TEXT);
}

/// Places markers in order. Centers are kept a marker radius inside the
/// image; a marker within one diameter of an earlier one is moved vertically
/// by whole diameters (down first, then up) until it is clear.
pub fn annotate(snapshot: &SnapshotRef, requested: &[(u32, i64, i64)]) -> AnnotatedSnapshot {
    let img = snapshot.image();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let d = 2 * MARKER_RADIUS;
    let clamp_x = |x: i64| x.clamp(MARKER_RADIUS.min(w - 1), (w - 1 - MARKER_RADIUS).max(0));
    let clamp_y = |y: i64| y.clamp(MARKER_RADIUS.min(h - 1), (h - 1 - MARKER_RADIUS).max(0));
    let mut placed: Vec<Marker> = Vec::with_capacity(requested.len());
    for &(number, x, y) in requested {
        let x = clamp_x(x);
        let y0 = clamp_y(y);
        let clear = |yy: i64, placed: &[Marker]| {
            placed
                .iter()
                .all(|m| (m.x - x).pow(2) + (m.y - yy).pow(2) >= d * d)
        };
        let in_bounds = |yy: i64| yy >= MARKER_RADIUS && yy <= h - 1 - MARKER_RADIUS;
        let mut y_final = y0;
        if !clear(y0, &placed) {
            let max_k = h / d.max(1) + 1;
            'search: for k in 1..=max_k {
                for yy in [y0 + k * d, y0 - k * d] {
                    if in_bounds(yy) && clear(yy, &placed) {
                        y_final = yy;
                        break 'search;
                    }
                }
            }
        }
        placed.push(Marker {
            number,
            x,
            y: y_final,
        });
    }
    AnnotatedSnapshot {
        base: snapshot.clone(),
        markers: placed,
    }
}

/// One annotated view with its optional historical context view.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub view: AnnotatedSnapshot,
    pub context: Option<SnapshotRef>,
}

/// Images plus instruction for a waypoint decision.
#[derive(Clone, Debug)]
pub struct DecisionPrompt {
    pub image_pairs: Vec<ImagePair>,
    pub instruction: String,
    pub n_choices: usize,
    /// PoI id behind display number `i + 1`.
    pub marker_map: Vec<PoiId>,
}

impl DecisionPrompt {
    pub fn poi_for(&self, number: usize) -> Option<PoiId> {
        number.checked_sub(1).and_then(|i| self.marker_map.get(i).copied())
    }

    /// Images in message order: each annotated view followed by its context.
    pub fn images(&self) -> Vec<Raster> {
        let mut out = Vec::new();
        for pair in &self.image_pairs {
            out.push(pair.view.render());
            if let Some(c) = &pair.context {
                out.push((*c.image()).clone());
            }
        }
        out
    }

    pub fn content(&self) -> Vec<ContentPart> {
        message_content(&self.instruction, &self.images())
    }
}

/// Fills `{goal}` and `{n}` in a decision template.
pub fn render_decision_template(template: &str, goal: &str, n: usize) -> String {
    template.replace("{goal}", goal).replace("{n}", &n.to_string())
}

/// Groups candidates by source snapshot (first-appearance order), numbers
/// markers 1..n in candidate order and pairs each view with its context.
pub fn assemble_decision_prompt(
    cands: &CandidateSet,
    goal: &str,
    template: &str,
    k: &CameraIntrinsics,
) -> Result<DecisionPrompt, PromptError> {
    if cands.is_empty() {
        return Err(PromptError::NoCandidates);
    }
    let mut groups: Vec<(SnapshotRef, Vec<(u32, i64, i64)>)> = Vec::new();
    for (i, poi) in cands.candidates.iter().enumerate() {
        let (x, y) = poi_pixel(k, &poi.extrinsics, &poi.pose);
        let marker = ((i + 1) as u32, x, y);
        match groups.iter_mut().find(|(s, _)| s.id == poi.snapshot.id) {
            Some((_, ms)) => ms.push(marker),
            None => groups.push((poi.snapshot.clone(), vec![marker])),
        }
    }
    let image_pairs = groups
        .into_iter()
        .map(|(snap, markers)| {
            let context = cands
                .context
                .iter()
                .find(|c| c.snapshot_id == snap.id)
                .and_then(|c| c.archived.as_ref())
                .map(|p| p.snapshot.clone());
            ImagePair {
                view: annotate(&snap, &markers),
                context,
            }
        })
        .collect();
    let n = cands.len();
    Ok(DecisionPrompt {
        image_pairs,
        instruction: render_decision_template(template, goal, n),
        n_choices: n,
        marker_map: cands.candidates.iter().map(|p| p.id).collect(),
    })
}

/// Views of one suspected object gathered from distinct PoIs.
#[derive(Clone, Debug, Default)]
pub struct MultiViewSet {
    pub object_id: u32,
    pub images: Vec<SnapshotRef>,
}

impl MultiViewSet {
    pub fn new(object_id: u32) -> Self {
        Self {
            object_id,
            images: Vec::new(),
        }
    }

    /// Adds a view unless a snapshot with the same id is already present.
    pub fn add(&mut self, snap: SnapshotRef) {
        if !self.images.iter().any(|s| s.id == snap.id) {
            self.images.push(snap);
        }
    }
}

/// Yes/no/unsure question about a suspected object.
#[derive(Clone, Debug)]
pub struct ConfirmationPrompt {
    pub images: Vec<SnapshotRef>,
    pub instruction: String,
}

impl ConfirmationPrompt {
    pub fn content(&self) -> Vec<ContentPart> {
        let rasters: Vec<Raster> = self.images.iter().map(|s| (*s.image()).clone()).collect();
        message_content(&self.instruction, &rasters)
    }
}

/// Builds a confirmation prompt; images are ordered by capture step, then id.
pub fn assemble_confirmation_prompt(
    images: &[SnapshotRef],
    goal: &str,
    label: &str,
    object_id: u32,
    template: &str,
) -> Result<ConfirmationPrompt, PromptError> {
    if images.is_empty() {
        return Err(PromptError::NoImages);
    }
    let mut images = images.to_vec();
    images.sort_by_key(|s| (s.step, s.id));
    let instruction = template
        .replace("{goal}", goal)
        .replace("{label}", label)
        .replace("{object}", &object_id.to_string())
        .replace("{count}", &images.len().to_string());
    Ok(ConfirmationPrompt { images, instruction })
}

/// One element of a chat message's content list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

pub fn png_data_url(img: &Raster) -> String {
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(img.to_png())
    )
}

/// Instruction text followed by the images as PNG data URLs.
pub fn message_content(instruction: &str, images: &[Raster]) -> Vec<ContentPart> {
    std::iter::once(ContentPart::Text {
        text: instruction.to_string(),
    })
    .chain(images.iter().map(|img| ContentPart::ImageUrl {
        image_url: ImageUrl { url: png_data_url(img) },
    }))
    .collect()
}

/// Manifest written next to the PNGs of an archived prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptManifest {
    pub images: Vec<String>,
    pub instruction: String,
    /// Display number to PoI id.
    pub marker_map: BTreeMap<u32, PoiId>,
    pub n_choices: usize,
}

/// Writes the prompt's images as `image_XX.png` plus `manifest.json` into `dir`.
pub fn write_prompt_archive(dir: &Path, prompt: &DecisionPrompt) -> Result<PromptManifest, PromptError> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (i, img) in prompt.images().iter().enumerate() {
        let name = format!("image_{i:02}.png");
        fs::write(dir.join(&name), img.to_png())?;
        names.push(name);
    }
    let manifest = PromptManifest {
        images: names,
        instruction: prompt.instruction.clone(),
        marker_map: prompt
            .marker_map
            .iter()
            .enumerate()
            .map(|(i, &id)| ((i + 1) as u32, id))
            .collect(),
        n_choices: prompt.n_choices,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::Frustum;
    use crate::poi::{ContextView, Poi, PoiKind, PoiState};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let p = project(&k(), &Extrinsics::identity(), [0.0, 0.0, 1.0]);
        assert_eq!(
            p,
            Projection::InFront {
                x: 160.0,
                y: 120.0,
                depth: 1.0
            }
        );
    }

    #[test]
    fn lateral_offset_scales_with_focal_length() {
        let k = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        };
        match project(&k, &Extrinsics::identity(), [0.5, 0.0, 1.0]) {
            Projection::InFront { x, .. } => assert!((x - 370.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            project(&k, &Extrinsics::identity(), [0.0, 0.0, -1.0]),
            Projection::BehindCamera { .. }
        ));
    }

    #[test]
    fn pose_extrinsics_floor_point_ahead_is_below_center() {
        let pose = Pose::new(1.0, 2.0, 0.3);
        let e = Extrinsics::from_pose(&pose, CAMERA_HEIGHT);
        let ahead = pose.position().offset(0.3, 2.0);
        match project(&k(), &e, [ahead.x, ahead.y, 0.0]) {
            Projection::InFront { x, y, depth } => {
                assert!((x - 160.0).abs() < 1e-9);
                assert!((y - (120.0 + 160.0 * CAMERA_HEIGHT / 2.0)).abs() < 1e-9);
                assert!((depth - 2.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        // a point to the left lands left of center
        let left = pose.position().offset(0.3 + 0.4, 2.0);
        match project(&k(), &e, [left.x, left.y, CAMERA_HEIGHT]) {
            Projection::InFront { x, .. } => assert!(x < 160.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_markers_leave_image_unchanged() {
        let s = Snapshot::blank(1, Pose::new(0.0, 0.0, 0.0), 0, 64, 48);
        let a = annotate(&s, &[]);
        assert_eq!(a.render(), *s.image());
    }

    #[test]
    fn single_marker_diff_within_circle_box() {
        let s = Snapshot::blank(1, Pose::new(0.0, 0.0, 0.0), 0, 160, 120);
        let a = annotate(&s, &[(3, 80, 60)]);
        let (x0, y0, x1, y1) = a.render().diff_bbox(&s.image()).unwrap();
        let r = MARKER_RADIUS as u32;
        assert!(x0 >= 80 - r && y0 >= 60 - r && x1 <= 80 + r && y1 <= 60 + r);
    }

    #[test]
    fn coincident_markers_offset_by_diameter() {
        let s = Snapshot::blank(1, Pose::new(0.0, 0.0, 0.0), 0, 160, 120);
        let a = annotate(&s, &[(1, 80, 60), (2, 80, 60)]);
        assert_eq!(a.markers[0].y, 60);
        assert_eq!(a.markers[1].y, 60 + 2 * MARKER_RADIUS);
        assert_eq!(a.markers[1].x, 80);
    }

    #[test]
    fn markers_clamped_into_image() {
        let s = Snapshot::blank(1, Pose::new(0.0, 0.0, 0.0), 0, 160, 120);
        let a = annotate(&s, &[(1, -50, 500)]);
        assert_eq!(a.markers[0].x, MARKER_RADIUS);
        assert_eq!(a.markers[0].y, 119 - MARKER_RADIUS);
    }

    fn poi(id: PoiId, snap: &SnapshotRef, x: f64) -> Poi {
        let pose = Pose::new(x, 0.0, 0.0);
        Poi {
            id,
            kind: PoiKind::Frontier,
            pose,
            extrinsics: Extrinsics::from_pose(&snap.pose, CAMERA_HEIGHT),
            snapshot: snap.clone(),
            frustum: Frustum::default(),
            created_step: snap.step,
            archived_step: None,
            state: PoiState::Selectable,
        }
    }

    #[test]
    fn decision_prompt_groups_by_snapshot() {
        let a = Snapshot::blank(10, Pose::new(0.0, 0.0, 0.0), 1, 320, 240);
        let b = Snapshot::blank(11, Pose::new(0.0, 0.0, 0.0), 2, 320, 240);
        let cands = CandidateSet {
            candidates: vec![poi(4, &a, 2.0), poi(5, &a, 3.0), poi(6, &b, 2.5)],
            context: vec![],
        };
        let p = assemble_decision_prompt(&cands, "chair", DEFAULT_DECISION_TEMPLATE, &k()).unwrap();
        assert_eq!(p.image_pairs.len(), 2);
        let nums: Vec<Vec<u32>> = p
            .image_pairs
            .iter()
            .map(|pair| pair.view.markers.iter().map(|m| m.number).collect())
            .collect();
        assert_eq!(nums, vec![vec![1, 2], vec![3]]);
        assert_eq!(p.n_choices, 3);
        assert_eq!(p.poi_for(3), Some(6));
        assert!(p.instruction.contains("chair"));
        assert!(p.instruction.contains('0'));
        assert!(p.image_pairs.iter().all(|pair| pair.context.is_none()));
    }

    #[test]
    fn decision_prompt_attaches_context() {
        let a = Snapshot::blank(10, Pose::new(0.0, 0.0, 0.0), 1, 320, 240);
        let old = Snapshot::blank(3, Pose::new(0.0, 0.0, 0.0), 0, 320, 240);
        let mut archived = poi(1, &old, 1.0);
        archived.state = PoiState::Archived;
        let cands = CandidateSet {
            candidates: vec![poi(4, &a, 2.0)],
            context: vec![ContextView {
                snapshot_id: 10,
                archived: Some(archived),
            }],
        };
        let p = assemble_decision_prompt(&cands, "bed", DEFAULT_DECISION_TEMPLATE, &k()).unwrap();
        assert_eq!(p.image_pairs[0].context.as_ref().unwrap().id, 3);
        assert_eq!(p.images().len(), 2);
    }

    #[test]
    fn confirmation_prompt_orders_by_capture() {
        let s = |id, step| Snapshot::blank(id, Pose::new(0.0, 0.0, 0.0), step, 8, 8);
        let imgs = vec![s(7, 30), s(2, 10), s(5, 20)];
        let p = assemble_confirmation_prompt(&imgs, "sofa", "sofa", 4, DEFAULT_CONFIRM_TEMPLATE).unwrap();
        let ids: Vec<u64> = p.images.iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![2, 5, 7]);
        assert!(p.instruction.contains("sofa"));
        assert!(matches!(
            assemble_confirmation_prompt(&[], "sofa", "sofa", 4, DEFAULT_CONFIRM_TEMPLATE),
            Err(PromptError::NoImages)
        ));
    }

    #[test]
    fn archive_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let a = Snapshot::blank(10, Pose::new(0.0, 0.0, 0.0), 1, 32, 24);
        let cands = CandidateSet {
            candidates: vec![poi(4, &a, 2.0)],
            context: vec![],
        };
        let p = assemble_decision_prompt(&cands, "tv", DEFAULT_DECISION_TEMPLATE, &k()).unwrap();
        let m = write_prompt_archive(dir.path(), &p).unwrap();
        assert_eq!(m.images, vec!["image_00.png"]);
        let back: PromptManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.marker_map[&1], 4);
    }
}
