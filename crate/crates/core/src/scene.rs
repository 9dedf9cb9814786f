//! Tabletop world model and synthetic depth/RGB rendering.
//!
//! The table top is the plane `z = 0` spanning `x ∈ [0, size_x]`,
//! `y ∈ [-size_y/2, size_y/2]`; the robot base sits at the origin on the near
//! edge. Rendering casts one ray per pixel center against the table plane and
//! the analytic primitives. Depth values are z-depth along the optical axis
//! (what `deproject` consumes), `0` marks a missing reading.

use std::fmt;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, RigidTransform};

pub const DEFAULT_TABLE_COLOR: [u8; 3] = [0, 128, 0];
/// Color for rays that never reach the table (only possible for tilted cameras).
const SKY_COLOR: [u8; 3] = [0, 0, 0];
const FOOTPRINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("malformed scene document: {0}")]
    Parse(String),
    #[error("invalid scene: {0}")]
    Validation(String),
    #[error("camera cannot see the table plane")]
    CameraBelowTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Banana,
    Apple,
    Block,
    Bottle,
    Orange,
    Spoon,
    Bowl,
    Cup,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 8] = [
        ObjectClass::Banana,
        ObjectClass::Apple,
        ObjectClass::Block,
        ObjectClass::Bottle,
        ObjectClass::Orange,
        ObjectClass::Spoon,
        ObjectClass::Bowl,
        ObjectClass::Cup,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Banana => "banana",
            ObjectClass::Apple => "apple",
            ObjectClass::Block => "block",
            ObjectClass::Bottle => "bottle",
            ObjectClass::Orange => "orange",
            ObjectClass::Spoon => "spoon",
            ObjectClass::Bowl => "bowl",
            ObjectClass::Cup => "cup",
        }
    }

    pub fn parse(s: &str) -> Option<ObjectClass> {
        ObjectClass::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn is_container(self) -> bool {
        matches!(self, ObjectClass::Bowl | ObjectClass::Cup)
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    Cylinder,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    #[serde(rename = "class")]
    pub class_label: ObjectClass,
    pub shape: Shape,
    /// Extents along the object's local x, y and z axes. Spheres use the
    /// diameter three times, cylinders `[diameter, diameter, height]`.
    pub dims: [f64; 3],
    pub pose: Pose2,
    pub color: [u8; 3],
    pub container: bool,
    /// Container this object was placed into, if any. Nested objects rest on
    /// the container's top surface.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placed_in: Option<u32>,
}

impl SceneObject {
    pub fn radius(&self) -> f64 {
        self.dims[0] / 2.0
    }

    pub fn height(&self) -> f64 {
        self.dims[2]
    }

    pub fn min_footprint_extent(&self) -> f64 {
        self.dims[0].min(self.dims[1])
    }

    /// Width a parallel gripper closing along world angle `phi` must span.
    pub fn extent_along(&self, phi: f64) -> f64 {
        match self.shape {
            Shape::Sphere | Shape::Cylinder => self.dims[0],
            Shape::Box => {
                let rel = phi - self.pose.yaw;
                self.dims[0] * rel.cos().abs() + self.dims[1] * rel.sin().abs()
            }
        }
    }

    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.pose.x;
        let dy = y - self.pose.y;
        match self.shape {
            Shape::Sphere | Shape::Cylinder => dx.hypot(dy) <= self.radius(),
            Shape::Box => {
                let (s, c) = self.pose.yaw.sin_cos();
                let lx = c * dx + s * dy;
                let ly = -s * dx + c * dy;
                lx.abs() <= self.dims[0] / 2.0 && ly.abs() <= self.dims[1] / 2.0
            }
        }
    }

    /// Axis-aligned footprint bounds `(x_min, x_max, y_min, y_max)`.
    pub fn footprint_bounds(&self) -> (f64, f64, f64, f64) {
        let (hx, hy) = match self.shape {
            Shape::Sphere | Shape::Cylinder => (self.radius(), self.radius()),
            Shape::Box => {
                let (s, c) = self.pose.yaw.sin_cos();
                let (a, b) = (self.dims[0] / 2.0, self.dims[1] / 2.0);
                (a * c.abs() + b * s.abs(), a * s.abs() + b * c.abs())
            }
        };
        (
            self.pose.x - hx,
            self.pose.x + hx,
            self.pose.y - hy,
            self.pose.y + hy,
        )
    }

    /// The eight corners of the object's oriented 3D bounding box.
    pub fn bounding_corners(&self, base_z: f64) -> [Vector3<f64>; 8] {
        let (s, c) = self.pose.yaw.sin_cos();
        let (a, b, h) = (self.dims[0] / 2.0, self.dims[1] / 2.0, self.dims[2]);
        let mut out = [Vector3::zeros(); 8];
        let mut i = 0;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for z in [base_z, base_z + h] {
                    let lx = sx * a;
                    let ly = sy * b;
                    out[i] = Vector3::new(
                        self.pose.x + c * lx - s * ly,
                        self.pose.y + s * lx + c * ly,
                        z,
                    );
                    i += 1;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub size_x: f64,
    pub size_y: f64,
    #[serde(default = "default_table_color")]
    pub color: [u8; 3],
}

fn default_table_color() -> [u8; 3] {
    DEFAULT_TABLE_COLOR
}

impl Default for Table {
    fn default() -> Self {
        Self {
            size_x: 0.6,
            size_y: 0.6,
            color: DEFAULT_TABLE_COLOR,
        }
    }
}

impl Table {
    pub fn center(&self) -> (f64, f64) {
        (self.size_x / 2.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub table: Table,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
}

/// Wire shape of an object entry; `container` may be omitted and then follows
/// the class.
#[derive(Deserialize)]
struct RawObject {
    id: u32,
    class: ObjectClass,
    shape: Shape,
    dims: [f64; 3],
    pose: Pose2,
    color: [u8; 3],
    container: Option<bool>,
    #[serde(default)]
    placed_in: Option<u32>,
}

#[derive(Deserialize)]
struct RawScene {
    table: Table,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    objects: Vec<RawObject>,
}

pub fn load_scene(text: &str) -> Result<Scene, SceneError> {
    let raw: RawScene = serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
    let scene = Scene {
        table: raw.table,
        seed: raw.seed,
        objects: raw
            .objects
            .into_iter()
            .map(|o| SceneObject {
                id: o.id,
                class_label: o.class,
                shape: o.shape,
                dims: o.dims,
                pose: o.pose,
                color: o.color,
                container: o.container.unwrap_or_else(|| o.class.is_container()),
                placed_in: o.placed_in,
            })
            .collect(),
    };
    scene.validate()?;
    Ok(scene)
}

impl Scene {
    pub fn empty(table: Table) -> Self {
        Self {
            table,
            seed: 0,
            objects: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let invalid = |m: String| Err(SceneError::Validation(m));
        let t = &self.table;
        if !(t.size_x > 0.0 && t.size_y > 0.0) || !t.size_x.is_finite() || !t.size_y.is_finite() {
            return invalid("table extents must be positive".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return invalid(format!("duplicate object id {}", o.id));
            }
            if !o.dims.iter().all(|d| d.is_finite() && *d > 0.0) {
                return invalid(format!("object {} has non-positive dims", o.id));
            }
            if ![o.pose.x, o.pose.y, o.pose.yaw].iter().all(|v| v.is_finite()) {
                return invalid(format!("object {} has a non-finite pose", o.id));
            }
            match o.shape {
                Shape::Sphere if o.dims[0] != o.dims[1] || o.dims[0] != o.dims[2] => {
                    return invalid(format!("sphere {} needs equal dims", o.id));
                }
                Shape::Cylinder if o.dims[0] != o.dims[1] => {
                    return invalid(format!("cylinder {} needs equal footprint dims", o.id));
                }
                _ => {}
            }
            let (x0, x1, y0, y1) = o.footprint_bounds();
            if x0 < -FOOTPRINT_TOL
                || x1 > t.size_x + FOOTPRINT_TOL
                || y0 < -t.size_y / 2.0 - FOOTPRINT_TOL
                || y1 > t.size_y / 2.0 + FOOTPRINT_TOL
            {
                return invalid(format!("object {} extends past the table", o.id));
            }
        }
        for o in &self.objects {
            if let Some(c) = o.placed_in {
                match self.object(c) {
                    Some(host) if host.container && host.id != o.id => {}
                    _ => return invalid(format!("object {} placed in non-container {}", o.id, c)),
                }
            }
        }
        Ok(())
    }

    /// Height of the object's base above the table.
    pub fn base_z(&self, o: &SceneObject) -> f64 {
        o.placed_in
            .and_then(|c| self.object(c))
            .map(|host| host.height())
            .unwrap_or(0.0)
    }

    pub fn top_z(&self, o: &SceneObject) -> f64 {
        self.base_z(o) + o.height()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), (width * height) as usize);
        Self {
            width,
            height,
            values,
        }
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self::new(width, height, vec![value; (width * height) as usize])
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.values[(v * self.width + u) as usize]
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, d: f64) {
        self.values[(v * self.width + u) as usize] = d;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    #[inline]
    pub fn get(&self, u: u32, v: u32) -> [u8; 3] {
        self.pixels[(v * self.width + u) as usize]
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl PixelRect {
    pub fn contains(&self, u: u32, v: u32) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorNoise {
    pub dropout_p: f64,
    pub jitter_sigma: f64,
    pub seed: u64,
    /// Restricts dropout to this rectangle when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_region: Option<PixelRect>,
}

impl SensorNoise {
    pub fn none() -> Self {
        Self {
            dropout_p: 0.0,
            jitter_sigma: 0.0,
            seed: 0,
            dropout_region: None,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(0.0..=1.0).contains(&self.dropout_p) {
            return Err(SceneError::Validation("dropout_p must lie in [0, 1]".into()));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(SceneError::Validation("jitter_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self::none()
    }
}

/// Noiseless per-pixel raycast result: z-depth (0 for no hit) and the index
/// of the object hit, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct RayFrame {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
    pub hit: Vec<Option<usize>>,
}

impl RayFrame {
    pub fn hit_at(&self, u: u32, v: u32) -> Option<usize> {
        self.hit[(v * self.width + u) as usize]
    }
}

struct Ray {
    origin: Vector3<f64>,
    dir: Vector3<f64>,
}

fn nearest_root(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    Some(((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)))
}

fn intersect_sphere(ray: &Ray, center: Vector3<f64>, r: f64) -> Option<f64> {
    let oc = ray.origin - center;
    let (t0, t1) = nearest_root(ray.dir.dot(&ray.dir), 2.0 * ray.dir.dot(&oc), oc.dot(&oc) - r * r)?;
    [t0, t1].into_iter().find(|t| *t > 0.0)
}

fn intersect_cylinder(ray: &Ray, cx: f64, cy: f64, r: f64, z0: f64, z1: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut take = |t: f64| {
        if t > 0.0 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    let (ox, oy) = (ray.origin.x - cx, ray.origin.y - cy);
    let (dx, dy) = (ray.dir.x, ray.dir.y);
    if let Some((t0, t1)) = nearest_root(dx * dx + dy * dy, 2.0 * (ox * dx + oy * dy), ox * ox + oy * oy - r * r) {
        for t in [t0, t1] {
            let z = ray.origin.z + t * ray.dir.z;
            if z >= z0 && z <= z1 {
                take(t);
            }
        }
    }
    if ray.dir.z != 0.0 {
        for zc in [z0, z1] {
            let t = (zc - ray.origin.z) / ray.dir.z;
            let x = ox + t * dx;
            let y = oy + t * dy;
            if x * x + y * y <= r * r {
                take(t);
            }
        }
    }
    best
}

fn intersect_box(ray: &Ray, o: &SceneObject, base_z: f64) -> Option<f64> {
    let (s, c) = o.pose.yaw.sin_cos();
    let rel = ray.origin - Vector3::new(o.pose.x, o.pose.y, base_z + o.dims[2] / 2.0);
    // Rotate into the box frame by -yaw.
    let lo = Vector3::new(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z);
    let ld = Vector3::new(c * ray.dir.x + s * ray.dir.y, -s * ray.dir.x + c * ray.dir.y, ray.dir.z);
    let half = Vector3::new(o.dims[0] / 2.0, o.dims[1] / 2.0, o.dims[2] / 2.0);
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for i in 0..3 {
        if ld[i] == 0.0 {
            if lo[i].abs() > half[i] {
                return None;
            }
            continue;
        }
        let a = (-half[i] - lo[i]) / ld[i];
        let b = (half[i] - lo[i]) / ld[i];
        t_near = t_near.max(a.min(b));
        t_far = t_far.min(a.max(b));
    }
    if t_near > t_far || t_far <= 0.0 {
        return None;
    }
    Some(if t_near > 0.0 { t_near } else { t_far })
}

fn intersect_object(ray: &Ray, scene: &Scene, o: &SceneObject) -> Option<f64> {
    let base = scene.base_z(o);
    match o.shape {
        Shape::Sphere => intersect_sphere(
            ray,
            Vector3::new(o.pose.x, o.pose.y, base + o.radius()),
            o.radius(),
        ),
        Shape::Cylinder => intersect_cylinder(ray, o.pose.x, o.pose.y, o.radius(), base, base + o.height()),
        Shape::Box => intersect_box(ray, o, base),
    }
}

/// Casts one ray per pixel. The ray direction has unit camera-frame z, so the
/// hit parameter is the z-depth.
pub fn raycast(
    scene: &Scene,
    cam: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<RayFrame, SceneError> {
    let origin = *cam.translation();
    if origin.z <= 0.0 {
        return Err(SceneError::CameraBelowTable);
    }
    let n = (k.width * k.height) as usize;
    let mut depth = vec![0.0; n];
    let mut hit = vec![None; n];
    let mut any_table = false;
    for v in 0..k.height {
        for u in 0..k.width {
            let d_cam = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let ray = Ray {
                origin,
                dir: cam.apply_vector(&d_cam),
            };
            let mut best = if ray.dir.z < 0.0 {
                any_table = true;
                Some(-origin.z / ray.dir.z)
            } else {
                None
            };
            let mut best_obj = None;
            for (i, o) in scene.objects.iter().enumerate() {
                if let Some(t) = intersect_object(&ray, scene, o) {
                    if best.is_none_or(|b| t < b) {
                        best = Some(t);
                        best_obj = Some(i);
                    }
                }
            }
            let idx = (v * k.width + u) as usize;
            depth[idx] = best.unwrap_or(0.0);
            hit[idx] = best_obj;
        }
    }
    if !any_table {
        return Err(SceneError::CameraBelowTable);
    }
    Ok(RayFrame {
        width: k.width,
        height: k.height,
        depth,
        hit,
    })
}

/// Applies jitter then dropout, drawing from a ChaCha stream seeded by
/// `noise.seed` in row-major order.
pub fn apply_sensor_noise(depth: &mut DepthImage, noise: &SensorNoise) {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    if noise.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.jitter_sigma).expect("sigma validated");
        for d in depth.values.iter_mut() {
            let e = normal.sample(&mut rng);
            if *d > 0.0 {
                *d = (*d + e).max(0.0);
            }
        }
    }
    if noise.dropout_p > 0.0 {
        let w = depth.width;
        for (i, d) in depth.values.iter_mut().enumerate() {
            let (u, v) = (i as u32 % w, i as u32 / w);
            if noise.dropout_region.is_none_or(|r| r.contains(u, v)) && rng.gen_bool(noise.dropout_p) {
                *d = 0.0;
            }
        }
    }
}

pub fn render_depth(
    scene: &Scene,
    cam: &RigidTransform,
    k: &CameraIntrinsics,
    noise: &SensorNoise,
) -> Result<DepthImage, SceneError> {
    noise.validate()?;
    let frame = raycast(scene, cam, k)?;
    let mut depth = DepthImage::new(frame.width, frame.height, frame.depth);
    apply_sensor_noise(&mut depth, noise);
    Ok(depth)
}

pub fn rgb_from_frame(scene: &Scene, frame: &RayFrame) -> RgbImage {
    let pixels = frame
        .hit
        .iter()
        .zip(&frame.depth)
        .map(|(h, d)| match h {
            Some(i) => scene.objects[*i].color,
            None if *d > 0.0 => scene.table.color,
            None => SKY_COLOR,
        })
        .collect();
    RgbImage {
        width: frame.width,
        height: frame.height,
        pixels,
    }
}

pub fn render_rgb(
    scene: &Scene,
    cam: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<RgbImage, SceneError> {
    Ok(rgb_from_frame(scene, &raycast(scene, cam, k)?))
}
