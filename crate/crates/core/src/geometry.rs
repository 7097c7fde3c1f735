//! Pinhole cameras, pose normalization and per-pixel Plücker ray maps.
//!
//! Cameras use the x-right, y-down, z-forward convention and poses are
//! stored camera-to-world. The ray of pixel `(row v, col u)` goes through the
//! pixel center `(u + 0.5, v + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            t[j][i] = v;
        }
    }
    t
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn det(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Rotation of `angle` radians about a unit `axis` (Rodrigues).
pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let [x, y, z] = normalize(axis);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Square pixels, principal point at the image center, horizontal field of view `fov_x` (radians).
    pub fn from_fov(width: usize, height: usize, fov_x: f64) -> Self {
        let f = width as f64 / (2.0 * (fov_x / 2.0).tan());
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok && self.fx.is_finite() && self.fy.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidIntrinsics(format!("{self:?}")))
        }
    }
}

/// Camera-to-world rigid transform; `translation` is the camera center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: IDENTITY,
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// A camera at `eye` whose optical axis points at `target`; image "up" follows `up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = normalize(sub(target, eye));
        let mut right = cross(forward, up);
        if norm(right) < 1e-9 {
            let alt = if forward[0].abs() < 0.9 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            };
            right = cross(forward, alt);
        }
        let right = normalize(right);
        let down = cross(forward, right);
        Self {
            rotation: [
                [right[0], down[0], forward[0]],
                [right[1], down[1], forward[1]],
                [right[2], down[2], forward[2]],
            ],
            translation: eye,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let rtr = mat_mul(&transpose(r), r);
        let mut err: f64 = (det(r) - 1.0).abs();
        for i in 0..3 {
            for j in 0..3 {
                err = err.max((rtr[i][j] - IDENTITY[i][j]).abs());
            }
        }
        if err <= 1e-6 && self.translation.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidPose(format!(
                "rotation deviates from SO(3) by {err:.3e}"
            )))
        }
    }

    /// Composes a rigid transform `x -> rotation·x + translation` on the world side.
    pub fn transformed(&self, rotation: &Mat3, translation: Vec3) -> Self {
        Self {
            rotation: mat_mul(rotation, &self.rotation),
            translation: add(mat_vec(rotation, self.translation), translation),
        }
    }

    /// World-frame unit direction of the ray through pixel `(u, v)` (continuous pixel coordinates).
    pub fn ray_direction(&self, intr: &CameraIntrinsics, u: f64, v: f64) -> Vec3 {
        let cam = [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0];
        normalize(mat_vec(&self.rotation, cam))
    }
}

/// Extrinsics and intrinsics of one view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
}

/// Per-pixel `(direction, moment)` ray embedding, `H × W × 6`.
#[derive(Clone, Debug, PartialEq)]
pub struct PluckerMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl PluckerMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width * 6],
        }
    }

    /// Direction and moment of pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> (Vec3, Vec3) {
        let i = (row * self.width + col) * 6;
        let v = &self.values[i..i + 6];
        ([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }
}

pub fn compute_plucker_map(
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    height: usize,
    width: usize,
) -> Result<PluckerMap> {
    if height == 0 || width == 0 {
        return Err(Error::shape("Plücker map needs at least one pixel"));
    }
    pose.validate()?;
    intr.validate()?;
    let origin = pose.center();
    let mut values = Vec::with_capacity(height * width * 6);
    for v in 0..height {
        for u in 0..width {
            let d = pose.ray_direction(intr, u as f64 + 0.5, v as f64 + 0.5);
            let m = cross(origin, d);
            values.extend_from_slice(&d);
            values.extend_from_slice(&m);
        }
    }
    Ok(PluckerMap {
        height,
        width,
        values,
    })
}

/// The global similarity applied by [`normalize_cameras`]:
/// `x -> scale · rotation · (x - origin)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub rotation: Mat3,
    pub origin: Vec3,
    pub scale: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            rotation: IDENTITY,
            origin: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, x: Vec3) -> Vec3 {
        scale(mat_vec(&self.rotation, sub(x, self.origin)), self.scale)
    }

    pub fn apply_pose(&self, pose: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: mat_mul(&self.rotation, &pose.rotation),
            translation: self.apply_point(pose.translation),
        }
    }
}

/// Maps all poses by one similarity so that `poses[reference_index]` becomes
/// the identity and the farthest camera center lies at distance 1 from it.
/// The scale is left at 1 when all centers coincide.
pub fn normalize_cameras(
    poses: &[CameraPose],
    reference_index: usize,
) -> Result<(Vec<CameraPose>, SimilarityTransform)> {
    let reference = poses.get(reference_index).ok_or_else(|| {
        Error::Config(format!(
            "reference index {reference_index} out of range for {} poses",
            poses.len()
        ))
    })?;
    for p in poses {
        p.validate()?;
    }
    let origin = reference.center();
    let max_dist = poses
        .iter()
        .map(|p| norm(sub(p.center(), origin)))
        .fold(0.0, f64::max);
    let transform = SimilarityTransform {
        rotation: transpose(&reference.rotation),
        origin,
        scale: if max_dist > 1e-12 {
            1.0 / max_dist
        } else {
            1.0
        },
    };
    let normalized = poses.iter().map(|p| transform.apply_pose(p)).collect();
    Ok((normalized, transform))
}

/// An order-independent reference choice: the camera whose center is closest
/// to the centroid of all centers, ties broken lexicographically by pose.
pub fn central_reference_index(poses: &[CameraPose]) -> usize {
    if poses.is_empty() {
        return 0;
    }
    // Sort the centers first so the centroid sum does not depend on input order.
    let mut centers: Vec<Vec3> = poses.iter().map(|p| p.center()).collect();
    centers.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let centroid = scale(
        centers.iter().fold([0.0; 3], |acc, &c| add(acc, c)),
        1.0 / poses.len() as f64,
    );
    let key = |p: &CameraPose| {
        let mut k = vec![norm(sub(p.center(), centroid))];
        k.extend_from_slice(&p.translation);
        k.extend(p.rotation.iter().flatten());
        k
    };
    (0..poses.len())
        .min_by(|&a, &b| {
            key(&poses[a])
                .partial_cmp(&key(&poses[b]))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0)
}
