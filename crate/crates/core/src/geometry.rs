//! SE(2) poses and the localization success criterion.
//!
//! A pose maps local coordinates into its parent frame by rotating first and
//! translating second: `p_parent = R(theta) * p_local + (x, y)`. Image poses
//! are expressed in the map frame, keypoint poses in their owner's frame.
//! Angles are radians internally; degrees appear only in [`SuccessThresholds`]
//! and [`PoseError`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Rigid 2D transform: translation in pixels and orientation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Always normalized into `(-pi, pi]`.
    pub theta: f64,
}

impl Default for Pose2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn from_degrees(x: f64, y: f64, degrees: f64) -> Self {
        Self::new(x, y, degrees.to_radians())
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            -c * self.x - s * self.y,
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Maps a point from the local frame into the parent frame.
    pub fn transform_point(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    /// Maps a point from the parent frame into the local frame.
    pub fn inverse_transform_point(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = px - self.x;
        let dy = py - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn translation_distance(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn theta_degrees(&self) -> f64 {
        self.theta.to_degrees()
    }
}

/// Position error in pixels and orientation error in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub position: f64,
    /// Absolute wrapped difference in `[0, 180]`.
    pub orientation_deg: f64,
}

pub fn pose_error(estimate: &Pose2D, truth: &Pose2D) -> PoseError {
    PoseError {
        position: estimate.translation_distance(truth),
        orientation_deg: normalize_angle(estimate.theta - truth.theta)
            .abs()
            .to_degrees(),
    }
}

/// Acceptance region for a localization attempt. Both bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessThresholds {
    pub max_position_error: f64,
    pub max_orientation_error_deg: f64,
}

impl Default for SuccessThresholds {
    /// 30 px and 1.5 degrees.
    fn default() -> Self {
        Self {
            max_position_error: 30.0,
            max_orientation_error_deg: 1.5,
        }
    }
}

impl SuccessThresholds {
    pub fn new(max_position_error: f64, max_orientation_error_deg: f64) -> Result<Self> {
        if !(max_position_error > 0.0 && max_orientation_error_deg > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "success thresholds must be positive, got ({max_position_error}, {max_orientation_error_deg})"
            )));
        }
        Ok(Self {
            max_position_error,
            max_orientation_error_deg,
        })
    }

    pub fn accepts(&self, err: &PoseError) -> bool {
        err.position <= self.max_position_error
            && err.orientation_deg <= self.max_orientation_error_deg
    }
}

pub fn is_success(estimate: &Pose2D, truth: &Pose2D, thresholds: &SuccessThresholds) -> bool {
    thresholds.accepts(&pose_error(estimate, truth))
}

/// Least-squares rigid transform mapping `src` points onto `dst` points.
///
/// Returns the pose `T` minimizing `sum |T(src_i) - dst_i|^2`. Needs at least
/// one pair; with a single pair the rotation is zero.
pub fn fit_rigid(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Option<Pose2D> {
    if src.is_empty() || src.len() != dst.len() {
        return None;
    }
    let n = src.len() as f64;
    let (mut sx, mut sy, mut dx, mut dy) = (0.0, 0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        sx += s.0;
        sy += s.1;
        dx += d.0;
        dy += d.1;
    }
    let (sx, sy, dx, dy) = (sx / n, sy / n, dx / n, dy / n);
    let (mut a, mut b) = (0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (px, py) = (s.0 - sx, s.1 - sy);
        let (qx, qy) = (d.0 - dx, d.1 - dy);
        a += px * qx + py * qy;
        b += px * qy - py * qx;
    }
    let theta = if a == 0.0 && b == 0.0 { 0.0 } else { b.atan2(a) };
    let (s, c) = theta.sin_cos();
    Some(Pose2D::new(
        dx - (c * sx - s * sy),
        dy - (s * sx + c * sy),
        theta,
    ))
}

/// Signed shoelace area; positive for counter-clockwise vertex order.
pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

/// Area of the intersection of two convex polygons (Sutherland-Hodgman).
pub fn convex_intersection_area(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let orient = |p: &[(f64, f64)]| -> Vec<(f64, f64)> {
        let mut v = p.to_vec();
        if polygon_area(&v) < 0.0 {
            v.reverse();
        }
        v
    };
    let clip = orient(b);
    let mut out = orient(a);
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (c0, c1) = (clip[i], clip[(i + 1) % clip.len()]);
        let side = |p: (f64, f64)| (c1.0 - c0.0) * (p.1 - c0.1) - (c1.1 - c0.1) * (p.0 - c0.0);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
    }
    if out.len() < 3 {
        0.0
    } else {
        polygon_area(&out).abs()
    }
}
