//! 68-point facial landmarks, grouped by facial region.
//!
//! Indexing follows the iBUG 68-point layout with the region names used by
//! the common Python `face_recognition` wrapper (`left_eye` is the eye on the
//! image's left side).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub const NUM_POINTS: usize = 68;

const CHIN: std::ops::Range<usize> = 0..17;
const LEFT_EYEBROW: std::ops::Range<usize> = 17..22;
const RIGHT_EYEBROW: std::ops::Range<usize> = 22..27;
const NOSE_BRIDGE: std::ops::Range<usize> = 27..31;
const NOSE_TIP: std::ops::Range<usize> = 31..36;
const LEFT_EYE: std::ops::Range<usize> = 36..42;
const RIGHT_EYE: std::ops::Range<usize> = 42..48;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != NUM_POINTS {
            return Err(Error::contract(format!(
                "expected {NUM_POINTS} landmarks, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite landmark coordinate"));
        }
        Ok(LandmarkSet { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Clamps every point into `[0, width-1] x [0, height-1]`.
    pub fn clamped(mut self, width: usize, height: usize) -> Self {
        for p in &mut self.points {
            p[0] = p[0].clamp(0.0, (width.max(1) - 1) as f64);
            p[1] = p[1].clamp(0.0, (height.max(1) - 1) as f64);
        }
        self
    }

    pub fn chin(&self) -> &[Point] {
        &self.points[CHIN]
    }

    pub fn left_eyebrow(&self) -> &[Point] {
        &self.points[LEFT_EYEBROW]
    }

    pub fn right_eyebrow(&self) -> &[Point] {
        &self.points[RIGHT_EYEBROW]
    }

    pub fn nose_bridge(&self) -> &[Point] {
        &self.points[NOSE_BRIDGE]
    }

    pub fn nose_tip(&self) -> &[Point] {
        &self.points[NOSE_TIP]
    }

    pub fn left_eye(&self) -> &[Point] {
        &self.points[LEFT_EYE]
    }

    pub fn right_eye(&self) -> &[Point] {
        &self.points[RIGHT_EYE]
    }

    pub fn top_lip(&self) -> Vec<Point> {
        let p = &self.points;
        let mut v: Vec<Point> = p[48..55].to_vec();
        v.extend([p[64], p[63], p[62], p[61], p[60]]);
        v
    }

    pub fn bottom_lip(&self) -> Vec<Point> {
        let p = &self.points;
        let mut v: Vec<Point> = p[54..60].to_vec();
        v.extend([p[48], p[60], p[67], p[66], p[65], p[64]]);
        v
    }

    pub fn left_eye_center(&self) -> Point {
        centroid(self.left_eye())
    }

    pub fn right_eye_center(&self) -> Point {
        centroid(self.right_eye())
    }

    pub fn nose_tip_center(&self) -> Point {
        centroid(self.nose_tip())
    }

    pub fn inter_eye_distance(&self) -> f64 {
        let (l, r) = (self.left_eye_center(), self.right_eye_center());
        (r[0] - l[0]).hypot(r[1] - l[1])
    }

    /// Angle of the line from the left to the right eye centre, radians.
    pub fn eye_line_angle(&self) -> f64 {
        let (l, r) = (self.left_eye_center(), self.right_eye_center());
        (r[1] - l[1]).atan2(r[0] - l[0])
    }
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    [sx / n, sy / n]
}

/// Geometry of a frontal face in a canonical frame: origin at the face
/// centre, x to the image right, y down, units in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceGeometry {
    /// Face ellipse semi-axes.
    pub face_rx: f64,
    pub face_ry: f64,
    /// Horizontal offset of each eye centre from the midline.
    pub eye_dx: f64,
    /// Vertical position of the eye line (negative is above centre).
    pub eye_y: f64,
    pub eye_rx: f64,
    pub eye_ry: f64,
    /// Gap between eye top and brow.
    pub brow_gap: f64,
    pub brow_len: f64,
    pub nose_y: f64,
    pub nose_half_width: f64,
    pub mouth_y: f64,
    pub mouth_half_width: f64,
    pub lip_height: f64,
    /// Inner mouth opening, 0 = closed.
    pub mouth_open: f64,
}

impl FaceGeometry {
    /// Average face used as the fitting template.
    pub const MEAN: FaceGeometry = FaceGeometry {
        face_rx: 19.0,
        face_ry: 23.0,
        eye_dx: 9.75,
        eye_y: -5.5,
        eye_rx: 3.7,
        eye_ry: 2.2,
        brow_gap: 2.6,
        brow_len: 7.0,
        nose_y: 4.5,
        nose_half_width: 3.0,
        mouth_y: 12.0,
        mouth_half_width: 6.5,
        lip_height: 1.8,
        mouth_open: 0.5,
    };

    /// All 68 landmarks in the canonical frame.
    pub fn canonical_points(&self) -> Vec<Point> {
        use std::f64::consts::PI;
        let mut pts = Vec::with_capacity(NUM_POINTS);
        // Jaw: from the left temple round the chin to the right temple.
        for k in 0..17 {
            let t = PI * (1.0 + 0.1) - (k as f64 / 16.0) * PI * 1.2;
            pts.push([self.face_rx * t.cos(), self.face_ry * t.sin()]);
        }
        for side in [-1.0, 1.0] {
            let cx = side * self.eye_dx;
            let y = self.eye_y - self.eye_ry - self.brow_gap;
            for k in 0..5 {
                let u = k as f64 / 4.0 - 0.5;
                let x = cx + u * self.brow_len;
                pts.push([x, y - 1.0 * (1.0 - 4.0 * u * u)]);
            }
        }
        for k in 0..4 {
            let f = k as f64 / 3.0;
            pts.push([0.0, self.eye_y + f * (self.nose_y - 1.0 - self.eye_y)]);
        }
        for k in 0..5 {
            let u = k as f64 / 4.0 - 0.5;
            pts.push([u * 2.0 * self.nose_half_width, self.nose_y + 0.8 * (1.0 - 4.0 * u * u)]);
        }
        for side in [-1.0, 1.0] {
            let cx = side * self.eye_dx;
            // corner, two upper, corner, two lower
            for deg in [180.0f64, 120.0, 60.0, 0.0, 300.0, 240.0] {
                let a = deg.to_radians();
                pts.push([cx + self.eye_rx * a.cos(), self.eye_y - self.eye_ry * a.sin()]);
            }
        }
        let (mw, my, lh, open) = (self.mouth_half_width, self.mouth_y, self.lip_height, self.mouth_open);
        // Outer lip contour 48..60, clockwise from the left corner.
        for k in 0..12 {
            let a = PI - k as f64 * (2.0 * PI / 12.0);
            pts.push([mw * a.cos(), my - (lh + open / 2.0) * a.sin()]);
        }
        // Inner contour 60..68.
        for k in 0..8 {
            let a = PI - k as f64 * (2.0 * PI / 8.0);
            pts.push([0.75 * mw * a.cos(), my - (open / 2.0 + 0.2) * a.sin()]);
        }
        pts
    }

    /// Landmarks after placing the canonical frame with `pose`.
    pub fn landmarks(&self, pose: &Pose) -> LandmarkSet {
        let pts = self.canonical_points().into_iter().map(|p| pose.apply(p)).collect();
        LandmarkSet::new(pts).expect("canonical template has 68 finite points")
    }
}

/// Similarity pose mapping the canonical face frame into image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
    pub roll: f64,
}

impl Pose {
    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.roll.sin_cos();
        [
            self.cx + self.scale * (c * p[0] - s * p[1]),
            self.cy + self.scale * (s * p[0] + c * p[1]),
        ]
    }

    pub fn invert(&self, p: Point) -> Point {
        let (s, c) = self.roll.sin_cos();
        let dx = (p[0] - self.cx) / self.scale;
        let dy = (p[1] - self.cy) / self.scale;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Pose that puts the template's eye centres exactly on `left`/`right`.
    pub fn from_eyes(template: &FaceGeometry, left: Point, right: Point) -> Pose {
        let dx = right[0] - left[0];
        let dy = right[1] - left[1];
        let dist = dx.hypot(dy);
        let roll = dy.atan2(dx);
        let scale = dist / (2.0 * template.eye_dx);
        let (s, c) = roll.sin_cos();
        let mid = [(left[0] + right[0]) / 2.0, (left[1] + right[1]) / 2.0];
        // the eye midpoint sits at (0, eye_y) in the canonical frame
        let off = [-s * template.eye_y * scale, c * template.eye_y * scale];
        Pose {
            cx: mid[0] - off[0],
            cy: mid[1] - off[1],
            scale,
            roll,
        }
    }
}
