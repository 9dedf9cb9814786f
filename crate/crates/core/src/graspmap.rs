//! Analytic per-pixel grasp maps over depth images.
//!
//! Each pixel of the object mask gets a quality (normalized distance to the
//! mask boundary), a grasp angle (minor axis of the local pixel covariance)
//! and a grasp width (mask extent along that angle plus clearance). The best
//! grasp is the quality argmax.
//!
//! Missing depth (zeros) is filled from the nearest valid pixel before the
//! mask is built, so a dropout hole inside an object still belongs to the
//! object; the selected grasp then reads the raw depth and can report
//! [`GraspError::DepthZero`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    image_grasp_to_world, normalize_grasp_angle, CameraIntrinsics, GeometryError, ImageGrasp,
    RigidTransform, WorldGrasp,
};
use crate::scene::{DepthImage, PixelRect};

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraspError {
    #[error("no grasp reaches the minimum quality")]
    NoGrasp,
    #[error("depth at the selected grasp is zero")]
    DepthZero,
    #[error("grasp map and depth image dimensions differ")]
    DimensionMismatch,
    #[error(transparent)]
    Geometry(GeometryError),
}

impl From<GeometryError> for GraspError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::DepthZero => GraspError::DepthZero,
            other => GraspError::Geometry(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspSynthParams {
    /// Depth of the empty table as seen by the camera.
    pub table_depth: f64,
    /// Pixels must be at least this much closer than the table to count as object.
    pub mask_margin: f64,
    pub window_radius: u32,
    pub q_min: f64,
    /// Gripper opening limit in meters.
    pub w_max: f64,
    /// Extra pixels added to the measured object extent.
    pub clearance_px: f64,
    /// Focal length used to convert `w_max` into pixels.
    pub focal_px: f64,
}

impl Default for GraspSynthParams {
    fn default() -> Self {
        Self {
            table_depth: 0.5,
            mask_margin: 0.005,
            window_radius: 15,
            q_min: 0.2,
            w_max: 0.085,
            clearance_px: 4.0,
            focal_px: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspMap {
    pub width: u32,
    pub height: u32,
    pub q: Vec<f64>,
    pub phi: Vec<f64>,
    pub w: Vec<f64>,
    /// Connected-component label per pixel, 0 for background.
    pub component: Vec<u32>,
}

impl GraspMap {
    #[inline]
    fn idx(&self, u: u32, v: u32) -> usize {
        (v * self.width + u) as usize
    }

    pub fn q_at(&self, u: u32, v: u32) -> f64 {
        self.q[self.idx(u, v)]
    }

    pub fn phi_at(&self, u: u32, v: u32) -> f64 {
        self.phi[self.idx(u, v)]
    }

    pub fn w_at(&self, u: u32, v: u32) -> f64 {
        self.w[self.idx(u, v)]
    }
}

/// Replaces zero pixels by the value of the nearest valid pixel (4-connected
/// breadth-first order). An all-zero image stays all zero.
pub fn fill_missing_depth(depth: &DepthImage) -> Vec<f64> {
    let (w, h) = (depth.width as usize, depth.height as usize);
    let mut out = depth.values.clone();
    let mut seen: Vec<bool> = out.iter().map(|d| *d > 0.0).collect();
    let mut queue: VecDeque<usize> = (0..out.len()).filter(|i| seen[*i]).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if !seen[j] {
                seen[j] = true;
                out[j] = out[i];
                queue.push_back(j);
            }
        };
        if y > 0 {
            visit(i - w);
        }
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    out
}

/// Object pixels: valid and at least `mask_margin` closer than the table.
pub fn object_mask(values: &[f64], params: &GraspSynthParams) -> Vec<bool> {
    let limit = params.table_depth - params.mask_margin;
    values.iter().map(|d| *d > 0.0 && *d < limit).collect()
}

/// 1-D squared distance transform (lower envelope of parabolas). Infinite
/// entries are skipped; at least one entry must be finite.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut finite = (0..n).filter(|i| f[*i].is_finite());
    let first = finite.next().expect("line has a background pixel");
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in finite {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                break;
            }
        }
        if s <= z[k] {
            v[k] = q;
        } else {
            k += 1;
            v[k] = q;
            z[k] = s;
        }
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from every mask pixel to the nearest non-mask pixel;
/// pixels beyond the image border count as background.
pub fn distance_transform(mask: &[bool], width: u32, height: u32) -> Vec<f64> {
    let (w, h) = (width as usize + 2, height as usize + 2);
    let mut grid = vec![0.0f64; w * h];
    for y in 0..height as usize {
        for x in 0..width as usize {
            if mask[y * width as usize + x] {
                grid[(y + 1) * w + x + 1] = f64::INFINITY;
            }
        }
    }
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut col_out);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        edt_1d(&grid[y * w..(y + 1) * w], &mut row_out);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    let mut out = vec![0.0; (width * height) as usize];
    for y in 0..height as usize {
        for x in 0..width as usize {
            out[y * width as usize + x] = grid[(y + 1) * w + x + 1].sqrt();
        }
    }
    out
}

/// 4-connected component labels; `0` is background, components count from 1.
pub fn label_components(mask: &[bool], width: u32, height: u32) -> (Vec<u32>, u32) {
    let (w, h) = (width as usize, height as usize);
    let mut labels = vec![0u32; w * h];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut neighbors = [usize::MAX; 4];
            if y > 0 {
                neighbors[0] = i - w;
            }
            if x > 0 {
                neighbors[1] = i - 1;
            }
            if x + 1 < w {
                neighbors[2] = i + 1;
            }
            if y + 1 < h {
                neighbors[3] = i + w;
            }
            for j in neighbors.into_iter().filter(|j| *j != usize::MAX) {
                if mask[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next)
}

/// Grasp angle at `(u, v)`: the minor principal axis of same-component mask
/// pixels inside the square window, as an image angle `atan2(-dv, du)`.
fn window_angle(labels: &[u32], width: u32, height: u32, u: u32, v: u32, radius: u32) -> f64 {
    let label = labels[(v * width + u) as usize];
    let (u0, u1) = (u.saturating_sub(radius), (u + radius).min(width - 1));
    let (v0, v1) = (v.saturating_sub(radius), (v + radius).min(height - 1));
    let (mut n, mut su, mut sv) = (0.0, 0.0, 0.0);
    let (mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0);
    for y in v0..=v1 {
        for x in u0..=u1 {
            if labels[(y * width + x) as usize] == label {
                let (xf, yf) = (x as f64, y as f64);
                n += 1.0;
                su += xf;
                sv += yf;
                suu += xf * xf;
                svv += yf * yf;
                suv += xf * yf;
            }
        }
    }
    let (mu, mv) = (su / n, sv / n);
    let cuu = suu / n - mu * mu;
    let cvv = svv / n - mv * mv;
    let cuv = suv / n - mu * mv;
    let major = 0.5 * (2.0 * cuv).atan2(cuu - cvv);
    let minor = major + std::f64::consts::FRAC_PI_2;
    normalize_grasp_angle(-minor)
}

/// Number of same-component pixels crossed by the line through `(u, v)` at
/// image angle `phi`, counting the center pixel once.
fn extent_along(labels: &[u32], width: u32, height: u32, u: u32, v: u32, phi: f64) -> f64 {
    let label = labels[(v * width + u) as usize];
    let (du, dv) = (phi.cos(), -phi.sin());
    let run = |sign: f64| {
        let mut t = 0u32;
        loop {
            let step = (t + 1) as f64 * sign;
            let x = (u as f64 + step * du).round();
            let y = (v as f64 + step * dv).round();
            if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
                return t;
            }
            if labels[(y as u32 * width + x as u32) as usize] != label {
                return t;
            }
            t += 1;
        }
    };
    (run(1.0) + run(-1.0) + 1) as f64
}

pub fn synthesize_grasp_map(depth: &DepthImage, params: &GraspSynthParams) -> GraspMap {
    let (width, height) = (depth.width, depth.height);
    let n = (width * height) as usize;
    let filled = fill_missing_depth(depth);
    let mask = object_mask(&filled, params);
    let dist = distance_transform(&mask, width, height);
    let (labels, count) = label_components(&mask, width, height);

    let mut peak = vec![0.0f64; count as usize + 1];
    for i in 0..n {
        let l = labels[i] as usize;
        if l > 0 && dist[i] > peak[l] {
            peak[l] = dist[i];
        }
    }

    let mut q = vec![0.0; n];
    let mut phi = vec![0.0; n];
    let mut w = vec![0.0; n];
    for v in 0..height {
        for u in 0..width {
            let i = (v * width + u) as usize;
            let l = labels[i] as usize;
            if l == 0 {
                continue;
            }
            q[i] = (dist[i] / peak[l]).clamp(0.0, 1.0);
            let angle = window_angle(&labels, width, height, u, v, params.window_radius);
            phi[i] = angle;
            let extent = extent_along(&labels, width, height, u, v, angle) + params.clearance_px;
            let cap = params.w_max * params.focal_px / filled[i];
            w[i] = extent.min(cap);
        }
    }
    GraspMap {
        width,
        height,
        q,
        phi,
        w,
        component: labels,
    }
}

/// Quality argmax, optionally restricted to `region`. A flat maximum (the
/// ridge of an elongated object) resolves to the tied pixel of the winning
/// component closest to the ridge centroid; remaining ties go to the lowest
/// row-major index.
pub fn best_image_grasp_in(
    g: &GraspMap,
    depth: &DepthImage,
    params: &GraspSynthParams,
    region: Option<PixelRect>,
) -> Result<ImageGrasp, GraspError> {
    if g.width != depth.width || g.height != depth.height {
        return Err(GraspError::DimensionMismatch);
    }
    let in_region = |i: usize| {
        let (u, v) = (i as u32 % g.width, i as u32 / g.width);
        region.is_none_or(|r| r.contains(u, v))
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in g.q.iter().enumerate() {
        if in_region(i) && best.is_none_or(|(_, b)| *q > b) {
            best = Some((i, *q));
        }
    }
    let (first, q) = best.ok_or(GraspError::NoGrasp)?;
    if q < params.q_min {
        return Err(GraspError::NoGrasp);
    }
    let label = g.component[first];
    let tied: Vec<usize> = (0..g.q.len())
        .filter(|&i| in_region(i) && g.component[i] == label && (g.q[i] - q).abs() <= TIE_EPS)
        .collect();
    let xy = |i: usize| ((i as u32 % g.width) as f64, (i as u32 / g.width) as f64);
    let (sx, sy) = tied.iter().fold((0.0, 0.0), |(a, b), &i| (a + xy(i).0, b + xy(i).1));
    let (mx, my) = (sx / tied.len() as f64, sy / tied.len() as f64);
    let d2 = |i: usize| (xy(i).0 - mx).powi(2) + (xy(i).1 - my).powi(2);
    let mut i = first;
    for &t in &tied {
        if d2(t) < d2(i) - TIE_EPS {
            i = t;
        }
    }
    let d = depth.values[i];
    if d == 0.0 {
        return Err(GraspError::DepthZero);
    }
    Ok(ImageGrasp {
        u: (i as u32 % g.width) as f64,
        v: (i as u32 / g.width) as f64,
        phi_img: g.phi[i],
        w_img: g.w[i],
        q,
        depth: d,
    })
}

pub fn best_image_grasp(
    g: &GraspMap,
    depth: &DepthImage,
    params: &GraspSynthParams,
) -> Result<ImageGrasp, GraspError> {
    best_image_grasp_in(g, depth, params, None)
}

pub fn best_world_grasp_in(
    depth: &DepthImage,
    params: &GraspSynthParams,
    k: &CameraIntrinsics,
    t_rc: &RigidTransform,
    region: Option<PixelRect>,
) -> Result<WorldGrasp, GraspError> {
    let map = synthesize_grasp_map(depth, params);
    let g = best_image_grasp_in(&map, depth, params, region)?;
    Ok(image_grasp_to_world(k, t_rc, &g)?)
}

pub fn best_world_grasp(
    depth: &DepthImage,
    params: &GraspSynthParams,
    k: &CameraIntrinsics,
    t_rc: &RigidTransform,
) -> Result<WorldGrasp, GraspError> {
    best_world_grasp_in(depth, params, k, t_rc, None)
}
