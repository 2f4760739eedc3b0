//! Gaussian scenes, cameras and scene bounds, plus the on-disk loaders.

mod cameras;
mod ply;

pub use cameras::{load_cameras, write_colmap_text, write_transforms_json, CameraFormat};
pub use ply::{load_gaussian_ply, write_gaussian_ply};

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{quantile_sorted, Quat, Vec3};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("missing required PLY property `{0}`")]
    MissingProperty(String),
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("scene contains no primitives")]
    EmptyScene,
    #[error("unsupported camera model `{0}`")]
    UnsupportedCameraModel(String),
    #[error("pose count mismatch: header declares {declared} images, found {found}")]
    PoseCountMismatch { declared: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Activated Gaussian primitives. Scales stay in log space.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub centers: Vec<Vec3>,
    pub log_scales: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub opacities: Vec<f64>,
    pub dc_colors: Vec<[f64; 3]>,
}

impl GaussianScene {
    /// Validates lengths and value ranges.
    pub fn new(
        centers: Vec<Vec3>,
        log_scales: Vec<Vec3>,
        rotations: Vec<Quat>,
        opacities: Vec<f64>,
        dc_colors: Vec<[f64; 3]>,
    ) -> Result<Self, SceneError> {
        let n = centers.len();
        if n == 0 {
            return Err(SceneError::EmptyScene);
        }
        if log_scales.len() != n || rotations.len() != n || opacities.len() != n || dc_colors.len() != n {
            return Err(SceneError::MalformedFile("per-primitive arrays differ in length".into()));
        }
        let finite = |v: &Vec3| v.iter().all(|c| c.is_finite());
        for i in 0..n {
            if !finite(&centers[i]) || !finite(&log_scales[i]) {
                return Err(SceneError::MalformedFile(format!("non-finite geometry at primitive {i}")));
            }
            if !(0.0..=1.0).contains(&opacities[i]) {
                return Err(SceneError::MalformedFile(format!("opacity out of range at primitive {i}")));
            }
            if dc_colors[i].iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(SceneError::MalformedFile(format!("color out of range at primitive {i}")));
            }
            if rotations[i].coords.iter().any(|c| !c.is_finite()) {
                return Err(SceneError::MalformedFile(format!("non-finite rotation at primitive {i}")));
            }
        }
        Ok(Self { centers, log_scales, rotations, opacities, dc_colors })
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    /// Product of the three axis lengths.
    pub fn volume(&self, i: usize) -> f64 {
        let s = &self.log_scales[i];
        s.x.exp() * s.y.exp() * s.z.exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Training,
    Candidate,
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Rescales to another image size, keeping the field of view.
    pub fn scaled_to(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self { fx: self.fx * sx, fy: self.fy * sy, cx: self.cx * sx, cy: self.cy * sy, width, height }
    }
}

/// A pinhole camera with a world→camera rigid transform (OpenCV axes).
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub id: u32,
    pub kind: ViewKind,
    pub rotation: Quat,
    pub translation: Vec3,
    pub intrinsics: Intrinsics,
    pub near: f64,
    pub far: f64,
}

/// Result of projecting a world point into a camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraPose {
    /// Builds a pose from a world→camera rotation and a camera center.
    pub fn from_center(
        id: u32,
        kind: ViewKind,
        rotation: Quat,
        center: Vec3,
        intrinsics: Intrinsics,
        near: f64,
        far: f64,
    ) -> Self {
        let translation = -(rotation * center);
        Self { id, kind, rotation, translation, intrinsics, near, far }
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// World direction of the camera +z axis.
    pub fn forward(&self) -> Vec3 {
        self.rotation.inverse() * Vec3::z()
    }

    pub fn right(&self) -> Vec3 {
        self.rotation.inverse() * Vec3::x()
    }

    pub fn down(&self) -> Vec3 {
        self.rotation.inverse() * Vec3::y()
    }

    /// Projects a world point; `None` unless the depth lies in (near, far)
    /// and the pixel inside [0, W) × [0, H).
    pub fn project(&self, p: &Vec3) -> Option<Projection> {
        let c = self.to_camera(p);
        let z = c.z;
        if !(z > self.near && z < self.far) {
            return None;
        }
        let k = &self.intrinsics;
        let u = k.fx * c.x / z + k.cx;
        let v = k.fy * c.y / z + k.cy;
        if u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64 {
            Some(Projection { u, v, depth: z })
        } else {
            None
        }
    }

    /// Checks the pose invariants: unit quaternion, proper rotation, valid clip range.
    pub fn is_valid(&self) -> bool {
        let q = self.rotation.quaternion();
        if (q.norm() - 1.0).abs() > 1e-6 || q.coords.iter().any(|c| !c.is_finite()) {
            return false;
        }
        let m = self.rotation.to_rotation_matrix().into_inner();
        let ortho = (m * m.transpose() - nalgebra::Matrix3::identity()).abs().max();
        ortho < 1e-6
            && (m.determinant() - 1.0).abs() < 1e-6
            && self.translation.iter().all(|c| c.is_finite())
            && self.near > 0.0
            && self.far > self.near
    }

    /// Same pose rendered at a different resolution.
    pub fn with_resolution(&self, width: u32, height: u32) -> Self {
        let mut out = self.clone();
        out.intrinsics = self.intrinsics.scaled_to(width, height);
        out
    }
}

/// Serializable pose: w2c quaternion `[w, x, y, z]` plus translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub id: u32,
    pub kind: ViewKind,
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
    pub intrinsics: Intrinsics,
    pub near: f64,
    pub far: f64,
}

impl From<&CameraPose> for PoseRecord {
    fn from(p: &CameraPose) -> Self {
        let q = p.rotation.quaternion();
        Self {
            id: p.id,
            kind: p.kind,
            rotation_wxyz: [q.w, q.i, q.j, q.k],
            translation: [p.translation.x, p.translation.y, p.translation.z],
            intrinsics: p.intrinsics,
            near: p.near,
            far: p.far,
        }
    }
}

impl TryFrom<&PoseRecord> for CameraPose {
    type Error = SceneError;

    fn try_from(r: &PoseRecord) -> Result<Self, SceneError> {
        let [w, x, y, z] = r.rotation_wxyz;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        // keep stored unit quaternions bit-exact
        let rotation = if (q.norm() - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            normalized_rotation(w, x, y, z)
                .ok_or_else(|| SceneError::MalformedFile(format!("pose {}: degenerate quaternion", r.id)))?
        };
        let pose = CameraPose {
            id: r.id,
            kind: r.kind,
            rotation,
            translation: Vec3::from(r.translation),
            intrinsics: r.intrinsics,
            near: r.near,
            far: r.far,
        };
        if !pose.is_valid() {
            return Err(SceneError::MalformedFile(format!("pose {}: invalid pose", r.id)));
        }
        Ok(pose)
    }
}

/// Axis-aligned scene box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min_corner: [f64; 3],
    pub max_corner: [f64; 3],
}

impl SceneBounds {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, SceneError> {
        if (0..3).any(|k| !(min[k] < max[k]) || !min[k].is_finite() || !max[k].is_finite()) {
            return Err(SceneError::InvalidArgument("bounds must satisfy min < max".into()));
        }
        Ok(Self { min_corner: min.into(), max_corner: max.into() })
    }

    pub fn min(&self) -> Vec3 {
        Vec3::from(self.min_corner)
    }

    pub fn max(&self) -> Vec3 {
        Vec3::from(self.max_corner)
    }

    pub fn extent(&self) -> Vec3 {
        self.max() - self.min()
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vec3 {
        (self.min() + self.max()) * 0.5
    }

    /// Closed-box containment.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min_corner[k] && p[k] <= self.max_corner[k])
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }
}

pub const DEFAULT_LO_QUANTILE: f64 = 0.01;
pub const DEFAULT_HI_QUANTILE: f64 = 0.99;
pub const DEFAULT_BOUNDS_PAD: f64 = 0.05;

/// Robust scene box: per-axis quantiles of the centers, grown on each side
/// by `pad × extent`.
///
/// An axis with zero spread is widened to half the largest other extent
/// (or ±0.5 when every axis is flat) so the box is never degenerate.
pub fn compute_bounds(
    scene: &GaussianScene,
    lo_quantile: f64,
    hi_quantile: f64,
    pad: f64,
) -> Result<SceneBounds, SceneError> {
    if scene.count() == 0 {
        return Err(SceneError::EmptyScene);
    }
    if !(0.0 <= lo_quantile && lo_quantile < hi_quantile && hi_quantile <= 1.0) || !(pad >= 0.0) {
        return Err(SceneError::InvalidArgument(format!(
            "quantiles ({lo_quantile}, {hi_quantile}) / pad {pad} out of range"
        )));
    }
    let mut lo = Vec3::zeros();
    let mut hi = Vec3::zeros();
    for axis in 0..3 {
        let mut coords: Vec<f64> = scene.centers.iter().map(|c| c[axis]).collect();
        coords.sort_by(f64::total_cmp);
        lo[axis] = quantile_sorted(&coords, lo_quantile);
        hi[axis] = quantile_sorted(&coords, hi_quantile);
    }
    let extent = hi - lo;
    let widest = extent.max();
    for axis in 0..3 {
        let e = extent[axis];
        if e <= 1e-12 * (1.0 + lo[axis].abs()) {
            let half = if widest > 0.0 { 0.5 * widest } else { 0.5 };
            lo[axis] -= half;
            hi[axis] += half;
        } else {
            lo[axis] -= pad * e;
            hi[axis] += pad * e;
        }
    }
    SceneBounds::new(lo, hi)
}

/// Near/far defaults of 0.01× and 10× the bounds diagonal.
pub fn apply_default_clip(poses: &mut [CameraPose], bounds: &SceneBounds) {
    let diag = bounds.diagonal();
    for pose in poses {
        pose.near = 0.01 * diag;
        pose.far = 10.0 * diag;
    }
}

pub(crate) fn normalized_rotation(w: f64, x: f64, y: f64, z: f64) -> Option<Quat> {
    let q = nalgebra::Quaternion::new(w, x, y, z);
    let n = q.norm();
    if !n.is_finite() || n < 1e-12 {
        return None;
    }
    Some(UnitQuaternion::new_normalize(q))
}
