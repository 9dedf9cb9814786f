//! Pinhole intrinsics, rigid transforms and the image-grasp to world-grasp chain.
//!
//! Camera frame convention: x right, y down, z along the optical axis. Pixel
//! centers sit at integer coordinates, so the optical axis lands on `(cx, cy)`.
//!
//! Image-space grasp angles are measured counter-clockwise as seen on screen,
//! i.e. `atan2(-dv, du)`. With a top-down camera whose rotation is
//! `diag(1, -1, -1)` this coincides with the world angle about +z.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ORTHO_TOL: f64 = 1e-9;

/// Distance from the tool point to the wrist camera along the tool axis.
pub const DEFAULT_HAND_EYE_OFFSET_M: f64 = 0.09;
/// Camera tilt toward the gripper, in degrees.
pub const DEFAULT_HAND_EYE_TILT_DEG: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("depth is zero")]
    DepthZero,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not a proper orthonormal matrix")]
    NotOrthonormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: &str| Err(GeometryError::InvalidIntrinsics(msg.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image must be non-empty");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx outside image");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy outside image");
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

impl Default for CameraIntrinsics {
    /// 128x128 sensor with 100 px focal length.
    fn default() -> Self {
        Self {
            fx: 100.0,
            fy: 100.0,
            cx: 64.0,
            cy: 64.0,
            width: 128,
            height: 128,
        }
    }
}

/// A proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let ortho = (gram - Matrix3::identity()).abs().max() <= ORTHO_TOL;
        if !ortho || (rotation.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(GeometryError::NotOrthonormal);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_rotation(r: Rotation3<f64>) -> Self {
        Self {
            rotation: *r.matrix(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(r: Rotation3<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: *r.matrix(),
            translation: t,
        }
    }

    /// Rotation about world z by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_rotation(Rotation3::from_axis_angle(&Vector3::z_axis(), yaw))
    }

    /// Camera looking straight down at `(x, y)` from `height`, image u along
    /// world +x and image v along world -y.
    pub fn top_down(x: f64, y: f64, height: f64) -> Self {
        Self {
            rotation: Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
            translation: Vector3::new(x, y, height),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Heading of the rotated x axis projected on the world xy plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }
}

/// Wrist-camera pose relative to the tool point: the camera sits `offset_m`
/// behind the fingertips along the tool approach axis and is pitched by
/// `tilt_deg` toward the gripper. Tool frame z points along the approach.
pub fn hand_eye(offset_m: f64, tilt_deg: f64) -> RigidTransform {
    let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), tilt_deg.to_radians());
    RigidTransform::from_parts(tilt, Vector3::new(0.0, 0.0, -offset_m))
}

pub fn default_hand_eye() -> RigidTransform {
    hand_eye(DEFAULT_HAND_EYE_OFFSET_M, DEFAULT_HAND_EYE_TILT_DEG)
}

/// Image-space grasp: center pixel, angle, width in pixels, quality and the
/// depth read at the center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrasp {
    pub u: f64,
    pub v: f64,
    pub phi_img: f64,
    pub w_img: f64,
    pub q: f64,
    pub depth: f64,
}

/// Planar grasp in the robot frame, executed perpendicular to the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldGrasp {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub w: f64,
    pub q: f64,
}

impl WorldGrasp {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Wraps an angle into `[-pi/2, pi/2)`. Antipodal grasps are symmetric under
/// a half turn.
pub fn normalize_grasp_angle(phi: f64) -> f64 {
    let mut a = (phi + PI / 2.0).rem_euclid(PI) - PI / 2.0;
    if a >= PI / 2.0 {
        a -= PI;
    }
    a
}

/// Smallest distance between two grasp angles modulo pi.
pub fn grasp_angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

pub fn project(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<(f64, f64), GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

pub fn deproject(
    k: &CameraIntrinsics,
    u: f64,
    v: f64,
    depth: f64,
) -> Result<Vector3<f64>, GeometryError> {
    if depth == 0.0 {
        return Err(GeometryError::DepthZero);
    }
    if depth.is_nan() || depth < 0.0 {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(Vector3::new(
        (u - k.cx) * depth / k.fx,
        (v - k.cy) * depth / k.fy,
        depth,
    ))
}

pub fn apply_transform(t: &RigidTransform, p: &Vector3<f64>) -> Vector3<f64> {
    t.apply(p)
}

/// Lifts an image grasp into the robot frame through the intrinsics and the
/// camera-to-robot transform. Width converts with `fx` at the grasp depth.
pub fn image_grasp_to_world(
    k: &CameraIntrinsics,
    t_rc: &RigidTransform,
    g: &ImageGrasp,
) -> Result<WorldGrasp, GeometryError> {
    let p_cam = deproject(k, g.u, g.v, g.depth)?;
    let p = t_rc.apply(&p_cam);
    Ok(WorldGrasp {
        x: p.x,
        y: p.y,
        z: p.z,
        phi: normalize_grasp_angle(g.phi_img + t_rc.yaw()),
        w: g.w_img * g.depth / k.fx,
        q: g.q,
    })
}
