//! SVG and PGM views of an episode trace.

use poinav_core::runner::{EpisodeTrace, MapDump};
use poinav_core::simulator::Scene;
use std::fmt::Write as _;

/// Pixels per meter.
const SCALE: f64 = 40.0;

pub struct Canvas {
    width_m: f64,
    height_m: f64,
    ox: f64,
    oy: f64,
}

impl Canvas {
    fn new(map: &MapDump) -> Self {
        Self {
            width_m: map.width as f64 * map.resolution,
            height_m: map.height as f64 * map.resolution,
            ox: map.origin.x,
            oy: map.origin.y,
        }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.ox) * SCALE, (self.height_m - (y - self.oy)) * SCALE)
    }
}

fn decode(map: &MapDump) -> Vec<u8> {
    map.decode().unwrap_or_else(|| vec![0; map.width * map.height])
}

/// Explored map, trajectory, PoIs (one `<g id="poi-N">` each) and start and
/// end markers. With a scene, its objects are drawn too.
pub fn svg(trace: &EpisodeTrace, scene: Option<&Scene>) -> String {
    let map = &trace.map;
    let c = Canvas::new(map);
    let (w, h) = (c.width_m * SCALE, c.height_m * SCALE);
    let cell = map.resolution * SCALE;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(
        out,
        "<title>{} seed {} ({})</title>",
        trace.scene, trace.seed, trace.policy
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#b0b0b0"/>"##);
    let cells = decode(map);
    let _ = writeln!(out, r#"<g id="map" shape-rendering="crispEdges">"#);
    for row in 0..map.height {
        let mut col = 0;
        while col < map.width {
            let v = cells[row * map.width + col];
            let start = col;
            while col < map.width && cells[row * map.width + col] == v {
                col += 1;
            }
            let fill = match v {
                1 => "#ffffff",
                2 => "#303030",
                _ => continue,
            };
            let (x, y) = (start as f64 * cell, h - (row + 1) as f64 * cell);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{cell:.1}" fill="{fill}"/>"#,
                (col - start) as f64 * cell
            );
        }
    }
    out.push_str("</g>\n");

    if let Some(scene) = scene {
        out.push_str("<g id=\"objects\">\n");
        for o in &scene.objects {
            let (x, y) = c.px(o.centroid.x, o.centroid.y);
            let fill = if scene.is_goal(o) { "#d62728" } else { "#8c564b" };
            let _ = writeln!(
                out,
                r#"<rect id="object-{}" x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{fill}" opacity="0.7"><title>{}</title></rect>"#,
                o.id,
                x - o.radius * SCALE,
                y - o.radius * SCALE,
                2.0 * o.radius * SCALE,
                2.0 * o.radius * SCALE,
                o.category
            );
        }
        out.push_str("</g>\n");
    }

    let mut pts = vec![c.px(trace.start.x, trace.start.y)];
    pts.extend(trace.steps.iter().map(|s| c.px(s.x, s.y)));
    let _ = write!(out, r##"<polyline id="trajectory" fill="none" stroke="#1f77b4" stroke-width="2" points=""##);
    for (i, (x, y)) in pts.iter().enumerate() {
        let _ = write!(out, "{}{x:.1},{y:.1}", if i == 0 { "" } else { " " });
    }
    out.push_str("\"/>\n");

    out.push_str("<g id=\"pois\" font-family=\"sans-serif\" font-size=\"10\">\n");
    for p in &trace.pois {
        let (x, y) = c.px(p.x, p.y);
        let state = format!("{:?}", p.state).to_lowercase();
        let fill = if p.kind == "frontier" { "#2ca02c" } else { "#ff7f0e" };
        let opacity = if state == "archived" { 0.35 } else { 1.0 };
        let _ = writeln!(
            out,
            r#"<g id="poi-{id}" class="poi {kind} {state}" opacity="{opacity}"><circle cx="{x:.1}" cy="{y:.1}" r="5" fill="{fill}"/><text x="{:.1}" y="{:.1}">{id}</text></g>"#,
            x + 6.0,
            y - 6.0,
            id = p.id,
            kind = p.kind,
        );
    }
    out.push_str("</g>\n");

    let (sx, sy) = c.px(trace.start.x, trace.start.y);
    let (fx, fy) = c.px(trace.final_pose.x, trace.final_pose.y);
    let _ = writeln!(
        out,
        r##"<circle id="start" cx="{sx:.1}" cy="{sy:.1}" r="7" fill="none" stroke="#2ca02c" stroke-width="3"/>"##
    );
    let end = if trace.record.success { "#2ca02c" } else { "#d62728" };
    let _ = writeln!(
        out,
        r#"<rect id="end" x="{:.1}" y="{:.1}" width="12" height="12" fill="{end}"/>"#,
        fx - 6.0,
        fy - 6.0
    );
    out.push_str("</svg>\n");
    out
}

/// Binary PGM of the explored map: unknown grey, free white, occupied black.
pub fn pgm(map: &MapDump) -> Vec<u8> {
    let cells = decode(map);
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    for row in (0..map.height).rev() {
        out.extend(cells[row * map.width..(row + 1) * map.width].iter().map(|v| match v {
            1 => 255u8,
            2 => 0,
            _ => 128,
        }));
    }
    out
}
