//! Planar poses and angle helpers shared by every subsystem.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// A point in world coordinates (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Direction from `self` to `other`, in `[0, 2π)`.
    pub fn bearing_to(&self, other: &Point2) -> f64 {
        normalize_angle((other.y - self.y).atan2(other.x - self.x))
    }

    pub fn offset(&self, angle: f64, dist: f64) -> Point2 {
        Point2::new(self.x + dist * angle.cos(), self.y + dist * angle.sin())
    }
}

/// Agent pose: planar position, heading, and camera tilt.
///
/// Heading is kept in `[0, 2π)`; pitch is the camera tilt (positive looks up).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    #[serde(default)]
    pub pitch: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
            pitch: 0.0,
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn with_pitch(mut self, pitch: f64) -> Self {
        self.pitch = pitch;
        self
    }

    /// Signed angle in `(-π, π]` the agent must turn to face `target`.
    pub fn heading_error_to(&self, target: &Point2) -> f64 {
        wrap_pi(self.position().bearing_to(target) - self.heading)
    }
}

/// Normalizes an angle into `[0, 2π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can return exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = normalize_angle(a);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Smallest absolute difference between two angles.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_pi(a - b).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_wraps_negative_and_large() {
        assert!((normalize_angle(-PI / 2.0) - 1.5 * PI).abs() < 1e-12);
        assert!((normalize_angle(5.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(normalize_angle(-1e-18), 0.0);
    }

    #[test]
    fn wrap_pi_range() {
        assert!((wrap_pi(1.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert!((wrap_pi(PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn heading_error_sign() {
        let p = Pose::new(0.0, 0.0, 0.0);
        assert!(p.heading_error_to(&Point2::new(0.0, 1.0)) > 0.0);
        assert!(p.heading_error_to(&Point2::new(0.0, -1.0)) < 0.0);
    }
}
