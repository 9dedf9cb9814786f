//! Simulated object detector and dominant-color naming.
//!
//! Boxes come from projecting each visible object's ground-truth silhouette,
//! optionally corrupted by corner jitter and random misses. Colors come from
//! k-means over the RGB pixels inside each box, with centroids named by the
//! nearest palette anchor.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::geometry::{
    deproject, normalize_grasp_angle, project, CameraIntrinsics, GeometryError, RigidTransform,
    WorldGrasp,
};
use crate::scene::{
    raycast, rgb_from_frame, DepthImage, ObjectClass, RayFrame, RgbImage, Scene, SceneError,
    SceneObject, Shape,
};

pub const DEFAULT_COLOR_CLUSTERS: usize = 3;
const KMEANS_TOL: f64 = 1e-3;
const KMEANS_MAX_ITERS: usize = 50;
const KMEANS_RESTARTS: usize = 8;
const CONFIDENCE_EPS: f64 = 1e-9;
/// Extra gripper opening added to the box-derived width.
const BOX_GRASP_MARGIN_M: f64 = 0.01;
const DEPTH_SEARCH_RADIUS: i64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("bounding box contains no pixels")]
    EmptyCrop,
    #[error("cluster count must be at least 1")]
    InvalidClusterCount,
    #[error("no valid depth near the box center")]
    DepthZero,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(GeometryError),
}

impl From<GeometryError> for DetectorError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::DepthZero => DetectorError::DepthZero,
            other => DetectorError::Geometry(other),
        }
    }
}

/// Axis-aligned box of inclusive pixel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl BBox {
    pub fn width_px(&self) -> u32 {
        self.u_max - self.u_min + 1
    }

    pub fn height_px(&self) -> u32 {
        self.v_max - self.v_min + 1
    }

    pub fn to_rect(self) -> crate::scene::PixelRect {
        crate::scene::PixelRect {
            u_min: self.u_min,
            v_min: self.v_min,
            u_max: self.u_max,
            v_max: self.v_max,
        }
    }
}

pub fn box_center(b: &BBox) -> (f64, f64) {
    (
        (b.u_min as f64 + b.u_max as f64) / 2.0,
        (b.v_min as f64 + b.v_max as f64) / 2.0,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedColor {
    pub name: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub index: usize,
    pub bbox: BBox,
    pub label: ObjectClass,
    pub confidence: f64,
    pub colors: Vec<NamedColor>,
}

impl Detection {
    pub fn has_color(&self, name: &str) -> bool {
        self.colors.iter().any(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn color_names(&self) -> Vec<&str> {
        self.colors.iter().map(|c| c.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoise {
    pub jitter_sigma: f64,
    pub miss_p: f64,
    pub seed: u64,
}

impl DetectorNoise {
    pub fn none() -> Self {
        Self {
            jitter_sigma: 0.0,
            miss_p: 0.0,
            seed: 0,
        }
    }
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorPalette {
    entries: Vec<(String, [u8; 3])>,
}

impl Default for ColorPalette {
    fn default() -> Self {
        let anchors: [(&str, [u8; 3]); 11] = [
            ("Red", [220, 20, 60]),
            ("Green", [0, 128, 0]),
            ("Blue", [0, 0, 255]),
            ("Yellow", [255, 215, 0]),
            ("Pink", [255, 105, 180]),
            ("Orange", [255, 140, 0]),
            ("Black", [20, 20, 20]),
            ("White", [240, 240, 240]),
            ("Brown", [139, 69, 19]),
            ("Purple", [128, 0, 128]),
            ("Gray", [128, 128, 128]),
        ];
        Self {
            entries: anchors.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
        }
    }
}

impl ColorPalette {
    /// Rejects duplicate names.
    pub fn new(entries: Vec<(String, [u8; 3])>) -> Option<Self> {
        let mut names: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        (names.len() == entries.len() && !entries.is_empty()).then_some(Self { entries })
    }

    pub fn entries(&self) -> &[(String, [u8; 3])] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn anchor(&self, name: &str) -> Option<[u8; 3]> {
        self.entries
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, c)| *c)
    }

    /// Index of the nearest anchor in RGB space; ties go to the earlier entry.
    pub fn nearest(&self, c: [f64; 3]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, (_, a)) in self.entries.iter().enumerate() {
            let d = dist2(c, rgb_f(*a));
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

fn rgb_f(c: [u8; 3]) -> [f64; 3] {
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<[f64; 3]>,
    pub assignment: Vec<usize>,
    /// Within-cluster SSE after each assignment step.
    pub sse_history: Vec<f64>,
}

impl KMeansResult {
    /// SSE of the final partition around its own means.
    pub fn partition_sse(&self, points: &[[f64; 3]]) -> f64 {
        partition_sse(points, &self.assignment, self.centroids.len())
    }
}

pub fn partition_sse(points: &[[f64; 3]], assignment: &[usize], k: usize) -> f64 {
    let mut sums = vec![[0.0; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, a) in points.iter().zip(assignment) {
        counts[*a] += 1;
        for c in 0..3 {
            sums[*a][c] += p[c];
        }
    }
    points
        .iter()
        .zip(assignment)
        .map(|(p, a)| {
            let n = counts[*a] as f64;
            dist2(*p, [sums[*a][0] / n, sums[*a][1] / n, sums[*a][2] / n])
        })
        .sum()
}

/// Lloyd iterations from `centroids` until no centroid moves more than the
/// tolerance. SSE is recorded after every assignment step.
fn lloyd(points: &[[f64; 3]], mut centroids: Vec<[f64; 3]>) -> KMeansResult {
    let mut assignment = vec![0usize; points.len()];
    let mut sse_history = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sse = 0.0;
        for (a, p) in assignment.iter_mut().zip(points) {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = dist2(*p, *c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            *a = best.0;
            sse += best.1;
        }
        sse_history.push(sse);

        let mut sums = vec![[0.0; 3]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (a, p) in assignment.iter().zip(points) {
            counts[*a] += 1;
            for c in 0..3 {
                sums[*a][c] += p[c];
            }
        }
        let mut moved = 0.0f64;
        for (j, c) in centroids.iter_mut().enumerate() {
            if counts[j] == 0 {
                continue;
            }
            let n = counts[j] as f64;
            let next = [sums[j][0] / n, sums[j][1] / n, sums[j][2] / n];
            moved = moved.max(dist2(*c, next).sqrt());
            *c = next;
        }
        if moved < KMEANS_TOL {
            break;
        }
    }
    KMeansResult {
        centroids,
        assignment,
        sse_history,
    }
}

/// Adds centroids until there are `k`. `farthest` picks the point farthest
/// from the chosen set, otherwise points are drawn with probability
/// proportional to squared distance. Stops early once every point coincides
/// with a centroid.
fn seed_centroids(points: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng, farthest: bool) -> Vec<[f64; 3]> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(*p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        if total == 0.0 {
            break;
        }
        let pick = if farthest {
            let mut far = 0;
            for (i, d) in nearest.iter().enumerate() {
                if *d > nearest[far] {
                    far = i;
                }
            }
            far
        } else {
            let mut r = rng.gen_range(0.0..total);
            let mut pick = nearest.iter().rposition(|d| *d > 0.0).unwrap_or(0);
            for (i, d) in nearest.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        };
        let c = points[pick];
        centroids.push(c);
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(dist2(*p, c));
        }
    }
    centroids
}

/// Seeded k-means over RGB points. The first run starts from farthest-point
/// seeding, the remaining restarts from k-means++ seeding; the run with the
/// lowest final SSE wins, earlier runs winning ties. Fewer than `k` clusters
/// come back when the points have fewer distinct values.
pub fn kmeans(points: &[[f64; 3]], k: usize, seed: u64) -> KMeansResult {
    assert!(!points.is_empty() && k >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, KMeansResult)> = None;
    for run in 0..KMEANS_RESTARTS {
        let r = lloyd(points, seed_centroids(points, k, &mut rng, run == 0));
        let sse = r.partition_sse(points);
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, r));
        }
    }
    best.expect("at least one run").1
}

/// Names the dominant colors inside `b`, merged by palette name and sorted by
/// descending pixel fraction (ties in palette order).
pub fn dominant_colors(
    img: &RgbImage,
    b: &BBox,
    k: usize,
    palette: &ColorPalette,
    seed: u64,
) -> Result<Vec<NamedColor>, DetectorError> {
    if k == 0 {
        return Err(DetectorError::InvalidClusterCount);
    }
    let mut points = Vec::new();
    if b.u_min < img.width && b.v_min < img.height {
        for v in b.v_min..=b.v_max.min(img.height - 1) {
            for u in b.u_min..=b.u_max.min(img.width - 1) {
                points.push(rgb_f(img.get(u, v)));
            }
        }
    }
    if points.is_empty() {
        return Err(DetectorError::EmptyCrop);
    }
    let result = kmeans(&points, k.min(points.len()), seed);
    let mut counts = vec![0usize; palette.entries.len()];
    let mut cluster_sizes = vec![0usize; result.centroids.len()];
    for a in &result.assignment {
        cluster_sizes[*a] += 1;
    }
    for (c, n) in result.centroids.iter().zip(&cluster_sizes) {
        counts[palette.nearest(*c)] += n;
    }
    let total = points.len() as f64;
    let mut named: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .filter(|(_, n)| **n > 0)
        .map(|(i, n)| (i, *n))
        .collect();
    named.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(named
        .into_iter()
        .map(|(i, n)| NamedColor {
            name: palette.entries[i].0.clone(),
            fraction: n as f64 / total,
        })
        .collect())
}

/// World-frame points whose projection extremes match the object's silhouette
/// extremes: box corners, rim circles for cylinders, a dense sphere sampling.
fn silhouette_points(o: &SceneObject, base_z: f64) -> Vec<Vector3<f64>> {
    match o.shape {
        Shape::Box => o.bounding_corners(base_z).to_vec(),
        Shape::Cylinder => {
            let r = o.radius();
            let mut pts = Vec::with_capacity(256);
            for z in [base_z, base_z + o.height()] {
                for i in 0..128 {
                    let a = 2.0 * PI * i as f64 / 128.0;
                    pts.push(Vector3::new(o.pose.x + r * a.cos(), o.pose.y + r * a.sin(), z));
                }
            }
            pts
        }
        Shape::Sphere => {
            let r = o.radius();
            let c = Vector3::new(o.pose.x, o.pose.y, base_z + r);
            let mut pts = Vec::with_capacity(91 * 180);
            for i in 0..=90 {
                let lat = -FRAC_PI_2 + PI * i as f64 / 90.0;
                for j in 0..180 {
                    let lon = 2.0 * PI * j as f64 / 180.0;
                    pts.push(c + r * Vector3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()));
                }
            }
            pts
        }
    }
}

/// Everything [`detect_in_frame`] needs besides the rendered frame.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub noise: DetectorNoise,
    pub palette: ColorPalette,
    pub clusters: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            noise: DetectorNoise::none(),
            palette: ColorPalette::default(),
            clusters: DEFAULT_COLOR_CLUSTERS,
        }
    }
}

pub fn detect(
    scene: &Scene,
    cam: &RigidTransform,
    k: &CameraIntrinsics,
    noise: &DetectorNoise,
) -> Result<Vec<Detection>, DetectorError> {
    let frame = raycast(scene, cam, k)?;
    let rgb = rgb_from_frame(scene, &frame);
    let cfg = DetectorConfig {
        noise: *noise,
        ..DetectorConfig::default()
    };
    Ok(detect_in_frame(scene, &frame, &rgb, cam, k, &cfg))
}

/// Detects every object with at least one visible pixel in `frame`.
pub fn detect_in_frame(
    scene: &Scene,
    frame: &RayFrame,
    rgb: &RgbImage,
    cam: &RigidTransform,
    k: &CameraIntrinsics,
    cfg: &DetectorConfig,
) -> Vec<Detection> {
    let noise = &cfg.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let jitter = (noise.jitter_sigma > 0.0).then(|| Normal::new(0.0, noise.jitter_sigma).expect("sigma >= 0"));
    let mut visible = vec![false; scene.objects.len()];
    for i in frame.hit.iter().flatten() {
        visible[*i] = true;
    }
    let world_to_cam = cam.inverse();
    let (wmax, hmax) = (k.width as f64 - 1.0, k.height as f64 - 1.0);

    let mut found: Vec<(BBox, usize, f64)> = Vec::new();
    for (idx, o) in scene.objects.iter().enumerate() {
        let missed = noise.miss_p > 0.0 && rng.gen_bool(noise.miss_p);
        let offsets: [f64; 4] = match &jitter {
            Some(n) => [n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)],
            None => [0.0; 4],
        };
        if missed || !visible[idx] {
            continue;
        }
        let (mut lo_u, mut lo_v, mut hi_u, mut hi_v) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in silhouette_points(o, scene.base_z(o)) {
            if let Ok((u, v)) = project(k, &world_to_cam.apply(&p)) {
                lo_u = lo_u.min(u);
                lo_v = lo_v.min(v);
                hi_u = hi_u.max(u);
                hi_v = hi_v.max(v);
            }
        }
        if !lo_u.is_finite() {
            continue;
        }
        // Pixels whose centers fall inside the continuous extent.
        let mut u0 = (lo_u + offsets[0]).ceil();
        let mut v0 = (lo_v + offsets[1]).ceil();
        let mut u1 = (hi_u + offsets[2]).floor();
        let mut v1 = (hi_v + offsets[3]).floor();
        if u0 > u1 {
            u0 = ((u0 + u1) / 2.0).floor();
            u1 = u0;
        }
        if v0 > v1 {
            v0 = ((v0 + v1) / 2.0).floor();
            v1 = v0;
        }
        if u1 < 0.0 || v1 < 0.0 || u0 > wmax || v0 > hmax {
            continue;
        }
        let bbox = BBox {
            u_min: u0.clamp(0.0, wmax) as u32,
            v_min: v0.clamp(0.0, hmax) as u32,
            u_max: u1.clamp(0.0, wmax) as u32,
            v_max: v1.clamp(0.0, hmax) as u32,
        };
        let drawn = offsets.iter().fold(0.0f64, |m, j| m.max(j.abs()));
        let confidence = (1.0 - drawn / (3.0 * noise.jitter_sigma + CONFIDENCE_EPS)).clamp(0.5, 1.0);
        found.push((bbox, idx, confidence));
    }
    found.sort_by(|a, b| {
        (a.0.u_min, a.0.v_min, a.1).cmp(&(b.0.u_min, b.0.v_min, b.1))
    });
    found
        .into_iter()
        .enumerate()
        .map(|(index, (bbox, obj, confidence))| {
            let seed = derive_seed(noise.seed, 7, obj as u64);
            let colors = dominant_colors(rgb, &bbox, cfg.clusters, &cfg.palette, seed)
                .expect("clipped box is non-empty");
            Detection {
                index,
                bbox,
                label: scene.objects[obj].class_label,
                confidence,
                colors,
            }
        })
        .collect()
}

/// Depth at the box center, or at the nearest valid pixel within 3 px.
fn depth_near(depth: &DepthImage, u: f64, v: f64) -> Option<f64> {
    let (cu, cv) = (u.floor() as i64, v.floor() as i64);
    let mut candidates = Vec::new();
    for dv in -DEPTH_SEARCH_RADIUS..=DEPTH_SEARCH_RADIUS {
        for du in -DEPTH_SEARCH_RADIUS..=DEPTH_SEARCH_RADIUS {
            let (x, y) = (cu + du, cv + dv);
            if x >= 0 && y >= 0 && x < depth.width as i64 && y < depth.height as i64 {
                candidates.push((du * du + dv * dv, y, x));
            }
        }
    }
    candidates.sort_unstable();
    candidates
        .into_iter()
        .map(|(_, y, x)| depth.get(x as u32, y as u32))
        .find(|d| *d > 0.0)
}

/// Box-center grasp: closes across the shorter box side.
pub fn detection_to_world_grasp(
    d: &Detection,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    t_rc: &RigidTransform,
    w_max: f64,
) -> Result<WorldGrasp, DetectorError> {
    let (u, v) = box_center(&d.bbox);
    let z = depth_near(depth, u, v).ok_or(DetectorError::DepthZero)?;
    let p = t_rc.apply(&deproject(k, u, v, z)?);
    let (bw, bh) = (d.bbox.width_px(), d.bbox.height_px());
    let phi_img = if bw <= bh { 0.0 } else { FRAC_PI_2 };
    let short_m = bw.min(bh) as f64 * z / k.fx;
    Ok(WorldGrasp {
        x: p.x,
        y: p.y,
        z: p.z,
        phi: normalize_grasp_angle(phi_img + t_rc.yaw()),
        w: (short_m + BOX_GRASP_MARGIN_M).min(w_max),
        q: d.confidence,
    })
}

/// Top-surface point under the box center, used as a place target.
pub fn detection_center_point(
    d: &Detection,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    t_rc: &RigidTransform,
) -> Result<Vector3<f64>, DetectorError> {
    let (u, v) = box_center(&d.bbox);
    let z = depth_near(depth, u, v).ok_or(DetectorError::DepthZero)?;
    Ok(t_rc.apply(&deproject(k, u, v, z)?))
}
