//! Schematic egocentric renders: raycast walls, flat floor and ceiling,
//! objects as labelled billboards.

use super::{Scene, SceneObject};
use crate::geometry::{Point2, Pose};
use crate::mapping::CellState;
use crate::prompting::raster::{text_size, Raster, Rgb};
use crate::prompting::{project, CameraIntrinsics, Extrinsics, Projection, CAMERA_HEIGHT};

pub const WALL_HEIGHT: f64 = 2.4;
const VIEW_DISTANCE: f64 = 30.0;
const CEILING: Rgb = [206, 210, 220];
const FLOOR: Rgb = [168, 144, 112];

fn shade(c: Rgb, f: f64) -> Rgb {
    let f = f.clamp(0.0, 1.0);
    [
        (c[0] as f64 * f).round() as u8,
        (c[1] as f64 * f).round() as u8,
        (c[2] as f64 * f).round() as u8,
    ]
}

/// Stable color for a label.
pub fn label_color(label: &str) -> Rgb {
    let h = label
        .bytes()
        .fold(0x811c_9dc5u32, |h, b| (h ^ b as u32).wrapping_mul(0x0100_0193));
    [
        60 + (h & 0x7f) as u8,
        60 + ((h >> 8) & 0x7f) as u8,
        60 + ((h >> 16) & 0x7f) as u8,
    ]
}

fn row_of(k: &CameraIntrinsics, e: &Extrinsics, p: Point2, z: f64) -> Option<f64> {
    match project(k, e, [p.x, p.y, z]) {
        Projection::InFront { y, .. } => Some(y),
        Projection::BehindCamera { .. } => None,
    }
}

/// Renders the view from `pose`.
pub fn render_view(scene: &Scene, pose: &Pose, k: &CameraIntrinsics) -> Raster {
    let gt = &scene.ground_truth;
    let e = Extrinsics::from_pose(pose, CAMERA_HEIGHT);
    let mut img = Raster::new(k.width, k.height, CEILING);
    let horizon = row_of(k, &e, pose.position().offset(pose.heading, 1000.0), CAMERA_HEIGHT).unwrap_or(k.cy);
    for v in 0..k.height as i64 {
        if (v as f64) >= horizon {
            let depth = ((v as f64 - horizon) / k.height as f64).clamp(0.0, 1.0);
            let c = shade(FLOOR, 0.65 + 0.35 * depth);
            img.fill_rect(0, v, k.width as i64 - 1, v, c);
        }
    }
    let origin = pose.position();
    let mut depth_buf = vec![f64::INFINITY; k.width as usize];
    for u in 0..k.width {
        let offset = ((k.cx - (u as f64 + 0.5)) / k.fx).atan();
        let angle = pose.heading + offset;
        let Some(hit) = gt
            .ray_cells(origin, angle, VIEW_DISTANCE)
            .find(|s| gt.state(s.index) == CellState::Occupied)
        else {
            continue;
        };
        let t = hit.t_enter.max(1e-3);
        depth_buf[u as usize] = t;
        let p = origin.offset(angle, t);
        let (Some(top), Some(bottom)) = (row_of(k, &e, p, WALL_HEIGHT), row_of(k, &e, p, 0.0)) else {
            continue;
        };
        // faces crossed along x are lighter than faces crossed along y
        let cell = gt.world_of(gt.cell_at(hit.index));
        let x_face = (p.x - cell.x).abs() > (p.y - cell.y).abs();
        let base: Rgb = if x_face { [176, 176, 188] } else { [146, 146, 162] };
        let c = shade(base, 1.0 - (t / VIEW_DISTANCE).min(0.6));
        img.vline(u as i64, top.round() as i64, bottom.round() as i64, c);
    }
    let mut visible: Vec<&SceneObject> = scene
        .objects
        .iter()
        .filter(|o| o.centroid.distance(&origin) < VIEW_DISTANCE)
        .collect();
    visible.sort_by(|a, b| b.centroid.distance(&origin).total_cmp(&a.centroid.distance(&origin)).then(a.id.cmp(&b.id)));
    for obj in visible {
        draw_object(&mut img, k, &e, pose, obj, &depth_buf);
    }
    img
}

fn draw_object(img: &mut Raster, k: &CameraIntrinsics, e: &Extrinsics, pose: &Pose, obj: &SceneObject, depth_buf: &[f64]) {
    let origin = pose.position();
    let dist = obj.centroid.distance(&origin);
    let front = (dist - obj.radius).max(0.05);
    let bearing = origin.bearing_to(&obj.centroid);
    let side = bearing - std::f64::consts::FRAC_PI_2;
    let left = obj.centroid.offset(side + std::f64::consts::PI, obj.radius);
    let right = obj.centroid.offset(side, obj.radius);
    let (z0, z1) = obj.height_band.extent();
    let col = |p: Point2| match project(k, e, [p.x, p.y, (z0 + z1) / 2.0]) {
        Projection::InFront { x, .. } => Some(x),
        Projection::BehindCamera { .. } => None,
    };
    let (Some(ul), Some(ur)) = (col(left), col(right)) else {
        return;
    };
    let (Some(top), Some(bottom)) = (row_of(k, e, obj.centroid, z1), row_of(k, e, obj.centroid, z0)) else {
        return;
    };
    let (u0, u1) = (ul.min(ur).round() as i64, ul.max(ur).round() as i64);
    let (v0, v1) = (top.round() as i64, bottom.round() as i64);
    // the object's own footprint (solid) or the wall it hangs on (flat) sits
    // in the depth buffer
    let allowance = obj.radius + 0.1;
    let fill = label_color(&obj.visual_label);
    let frame: Rgb = [70, 50, 30];
    let mut drawn = false;
    for u in u0.max(0)..=u1.min(img.width() as i64 - 1) {
        if front > depth_buf[u as usize] + allowance {
            continue;
        }
        drawn = true;
        if obj.solid {
            img.vline(u, v0, v1, fill);
        } else {
            img.vline(u, v0, v1, frame);
            if u - u0 >= 3 && u1 - u >= 3 {
                img.vline(u, v0 + 3, v1 - 3, fill);
            }
        }
    }
    if !drawn {
        return;
    }
    let label = obj.visual_label.to_uppercase();
    let max_chars = ((u1 - u0).max(36) / 6) as usize;
    let label: String = label.chars().take(max_chars).collect();
    let (tw, th) = text_size(&label, 1);
    let cx = (u0 + u1) / 2;
    let ty = (v0 - th - 3).max(1);
    img.fill_rect(cx - tw / 2 - 2, ty - 2, cx - tw / 2 + tw + 1, ty + th + 1, [255, 255, 255]);
    img.draw_text(cx - tw / 2, ty, &label, 1, [0, 0, 0]);
}
