//! Oriented 3D boxes, rigid ego poses and overlap measures.
//!
//! All headings live in `(-pi, pi]`; any arithmetic on a heading is followed by
//! [`normalize_heading`]. Bird's-eye-view (BEV) intersections are computed by
//! clipping one rotated rectangle against the other.

use std::f64::consts::PI;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detector id reserved for boxes produced by a fusion step.
pub const FUSED_DETECTOR_ID: u32 = u32::MAX;

/// Vertices closer than this are treated as the same point during clipping.
const VERTEX_EPS: f64 = 1e-9;

/// Tolerance applied to the containment test so boundary points stay inside.
const CONTAINS_EPS: f64 = 1e-9;

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_heading(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// A 7-DOF oriented box with a confidence score and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box7 {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    /// Extent along the heading direction.
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub heading: f64,
    pub score: f64,
    pub class_id: u32,
    pub detector_id: u32,
    pub frame_idx: u32,
}

impl Box7 {
    /// Box with unit score, class 0, detector 0 and frame 0.
    pub fn new(center: [f64; 3], dims: [f64; 3], heading: f64) -> Self {
        Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            l: dims[0],
            w: dims[1],
            h: dims[2],
            heading: normalize_heading(heading),
            score: 1.0,
            class_id: 0,
            detector_id: 0,
            frame_idx: 0,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn with_frame(mut self, frame_idx: u32) -> Self {
        self.frame_idx = frame_idx;
        self
    }

    pub fn with_detector(mut self, detector_id: u32) -> Self {
        self.detector_id = detector_id;
        self
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.cx, self.cy, self.cz)
    }

    pub fn set_center(&mut self, c: &Vector3<f64>) {
        self.cx = c.x;
        self.cy = c.y;
        self.cz = c.z;
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.l, self.w, self.h]
    }

    /// The seven geometric parameters `[cx, cy, cz, l, w, h, heading]`.
    pub fn params(&self) -> [f64; 7] {
        [
            self.cx,
            self.cy,
            self.cz,
            self.l,
            self.w,
            self.h,
            self.heading,
        ]
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    /// Horizontal distance of the centre from the origin of its frame.
    pub fn range(&self) -> f64 {
        self.cx.hypot(self.cy)
    }

    pub fn z_min(&self) -> f64 {
        self.cz - 0.5 * self.h
    }

    pub fn z_max(&self) -> f64 {
        self.cz + 0.5 * self.h
    }

    /// Half the BEV diagonal; no point of the footprint is farther from the centre.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.l.hypot(self.w)
    }

    /// Footprint corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, y]| [self.cx + c * x - s * y, self.cy + s * x + c * y])
    }

    /// The corners at local `(+l/2, +w/2, +h/2)` and `(-l/2, -w/2, -h/2)`.
    pub fn opposite_corners(&self) -> (Vector3<f64>, Vector3<f64>) {
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), self.heading);
        let half = rot * Vector3::new(0.5 * self.l, 0.5 * self.w, 0.5 * self.h);
        let c = self.center();
        (c + half, c - half)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.params().iter().all(|v| v.is_finite()) && self.score.is_finite();
        if !finite {
            return Err(Error::InvalidBox("non-finite parameter".into()));
        }
        if !(self.l > 0.0 && self.w > 0.0 && self.h > 0.0) {
            return Err(Error::InvalidBox(format!(
                "dimensions must be positive, got l={} w={} h={}",
                self.l, self.w, self.h
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidBox(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        if !(self.heading > -PI && self.heading <= PI) {
            return Err(Error::InvalidBox(format!(
                "heading {} outside (-pi, pi]",
                self.heading
            )));
        }
        Ok(())
    }
}

/// Ego-to-world rigid transform for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub frame_idx: u32,
}

impl EgoPose {
    pub fn identity(frame_idx: u32) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            frame_idx,
        }
    }

    /// Planar pose: rotation about +z followed by a translation.
    pub fn from_yaw(yaw: f64, translation: [f64; 3], frame_idx: u32) -> Self {
        Self {
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation: Vector3::from(translation),
            frame_idx,
        }
    }

    /// Build from a `[w, x, y, z]` quaternion. Quaternions already unit to
    /// within 1e-12 are kept bit-for-bit; others within 1e-6 are renormalised.
    pub fn from_wxyz(q: [f64; 4], translation: [f64; 3], frame_idx: u32) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidPose {
                frame: frame_idx,
                reason: format!("quaternion norm {norm} is not 1"),
            });
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose {
                frame: frame_idx,
                reason: "non-finite translation".into(),
            });
        }
        let rotation = if (norm - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(quat)
        } else {
            UnitQuaternion::from_quaternion(quat)
        };
        Ok(Self {
            rotation,
            translation: Vector3::from(translation),
            frame_idx,
        })
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        self.rotation.to_rotation_matrix()
    }

    /// Rotation of the ego x-axis about world z.
    pub fn yaw(&self) -> f64 {
        let m = self.rotation_matrix();
        m[(1, 0)].atan2(m[(0, 0)])
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self {
            rotation: inv,
            translation: -(inv * self.translation),
            frame_idx: self.frame_idx,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Map a box through `pose`: the centre is rotated and translated, the heading
/// is advanced by the pose yaw. Everything else is carried over.
pub fn transform_box(b: &Box7, pose: &EgoPose) -> Box7 {
    let mut out = *b;
    out.set_center(&pose.transform_point(&b.center()));
    out.heading = normalize_heading(b.heading + pose.yaw());
    out
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        twice += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * twice.abs()
}

fn segment_line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let denom = dp - dq;
    if denom.abs() < f64::MIN_POSITIVE {
        return p;
    }
    let t = dp / denom;
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn push_distinct(out: &mut Vec<[f64; 2]>, p: [f64; 2]) {
    if let Some(last) = out.last() {
        if (last[0] - p[0]).abs() <= VERTEX_EPS && (last[1] - p[1]).abs() <= VERTEX_EPS {
            return;
        }
    }
    out.push(p);
}

/// Sutherland-Hodgman clipping of a convex polygon by a convex CCW polygon.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= -VERTEX_EPS;
            let prev_in = cross(a, b, prev) >= -VERTEX_EPS;
            if cur_in {
                if !prev_in {
                    push_distinct(&mut output, segment_line_intersection(prev, cur, a, b));
                }
                push_distinct(&mut output, cur);
            } else if prev_in {
                push_distinct(&mut output, segment_line_intersection(prev, cur, a, b));
            }
        }
        if output.len() > 1 {
            let first = output[0];
            let last = output[output.len() - 1];
            if (first[0] - last[0]).abs() <= VERTEX_EPS && (first[1] - last[1]).abs() <= VERTEX_EPS
            {
                output.pop();
            }
        }
    }
    output
}

/// Area of the intersection of the two footprints.
pub fn bev_intersection_area(a: &Box7, b: &Box7) -> f64 {
    let dist = (a.cx - b.cx).hypot(a.cy - b.cy);
    if dist > a.bev_radius() + b.bev_radius() {
        return 0.0;
    }
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    polygon_area(&poly)
}

/// Intersection over union of the two rotated footprints.
pub fn bev_iou(a: &Box7, b: &Box7) -> f64 {
    let (area_a, area_b) = (a.bev_area(), b.bev_area());
    if !(area_a > 0.0 && area_b > 0.0) {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU for boxes that rotate only about z.
pub fn iou_3d(a: &Box7, b: &Box7) -> f64 {
    let (vol_a, vol_b) = (a.volume(), b.volume());
    if !(vol_a > 0.0 && vol_b > 0.0) {
        return 0.0;
    }
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = vol_a + vol_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Whether `p` lies inside the box; points on a face count as inside.
pub fn contains_point(b: &Box7, p: &[f64; 3]) -> bool {
    let (dx, dy) = (p[0] - b.cx, p[1] - b.cy);
    let (s, c) = b.heading.sin_cos();
    let local_x = c * dx + s * dy;
    let local_y = -s * dx + c * dy;
    local_x.abs() <= 0.5 * b.l + CONTAINS_EPS
        && local_y.abs() <= 0.5 * b.w + CONTAINS_EPS
        && (p[2] - b.cz).abs() <= 0.5 * b.h + CONTAINS_EPS
}

/// Number of points inside the box, boundary included.
pub fn points_in_box(b: &Box7, points: &[[f64; 3]]) -> usize {
    let r2 = b.bev_radius().powi(2) + CONTAINS_EPS;
    points
        .iter()
        .filter(|p| (p[0] - b.cx).powi(2) + (p[1] - b.cy).powi(2) <= r2 && contains_point(b, p))
        .count()
}
