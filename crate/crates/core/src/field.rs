//! Multi-channel voxel SDF with trilinear interpolation.
//!
//! Each channel stores signed distances (world units) on the nodes of a
//! regular grid spanning an axis-aligned box. Channel 0 is the background;
//! the scene SDF is the minimum over channels. Densities follow the
//! Laplace-CDF transform with one global, log-parameterized sharpness `beta`.
//! A shared RGB albedo grid lives on the same nodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn cube(half_extent: f64) -> Self {
        Aabb {
            min: [-half_extent; 3],
            max: [half_extent; 3],
        }
    }

    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    /// Entry and exit distances of a ray, if it hits the box.
    pub fn ray_interval(&self, origin: Point3, dir: Point3) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if dir[a].abs() < 1e-300 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut near, mut far) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Laplace-CDF density of a signed distance: `(1/beta) * Psi(-d)`.
pub fn sdf_to_density(d: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    Ok(density_terms(d, beta).0)
}

/// Density with its derivatives in `d` and `beta`.
#[inline]
pub(crate) fn density_terms(d: f64, beta: f64) -> (f64, f64, f64) {
    let inv = 1.0 / beta;
    if d >= 0.0 {
        let e = (-d * inv).exp();
        let sigma = 0.5 * e * inv;
        (sigma, -sigma * inv, sigma * inv * (d * inv - 1.0))
    } else {
        let e = (d * inv).exp();
        let psi = 1.0 - 0.5 * e;
        let dd = -0.5 * e * inv * inv;
        let db = -psi * inv * inv + 0.5 * e * d * inv * inv * inv;
        (psi * inv, dd, db)
    }
}

/// Interpolation stencil of one query point: the 8 cell corners, their
/// weights and the spatial derivatives of those weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub nodes: [usize; 8],
    pub w: [f64; 8],
    pub dw: [[f64; 3]; 8],
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub sdf: Vec<f64>,
    pub scene_sdf: f64,
    pub density: Vec<f64>,
    pub scene_density: f64,
    /// Spatial gradient of the minimum channel.
    pub gradient: [f64; 3],
    pub argmin: usize,
    /// The query was outside the bounds and got clamped onto them.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSdfGrid {
    pub(crate) resolution: [usize; 3],
    pub(crate) bounds: Aabb,
    pub(crate) channels: usize,
    /// Node-major, channel innermost.
    pub(crate) values: Vec<f64>,
    /// Node-major, RGB innermost.
    pub(crate) albedo: Vec<f64>,
    pub(crate) log_beta: f64,
    /// Per-node minimum over channels; trilinear interpolation of it is a
    /// lower bound of the scene SDF.
    #[serde(skip)]
    pub(crate) node_min: Vec<f64>,
}

impl ObjectSdfGrid {
    pub fn new(resolution: [usize; 3], bounds: Aabb, channels: usize, beta: f64) -> Result<Self> {
        if resolution.iter().any(|&r| r < 8) {
            return Err(Error::Config(format!(
                "grid resolution must be at least 8 per axis, got {resolution:?}"
            )));
        }
        if channels < 2 {
            return Err(Error::Config(format!("need at least 2 channels, got {channels}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        if (0..3).any(|a| !(bounds.max[a] > bounds.min[a])) {
            return Err(Error::Config("empty bounds".into()));
        }
        let nodes = resolution.iter().product::<usize>();
        Ok(ObjectSdfGrid {
            resolution,
            bounds,
            channels,
            values: vec![0.0; nodes * channels],
            albedo: vec![0.5; nodes * 3],
            log_beta: beta.ln(),
            node_min: vec![0.0; nodes],
        })
    }

    /// Fills every channel from a closure of (node position, channel).
    pub fn fill(&mut self, mut f: impl FnMut(Point3, usize) -> f64) {
        for node in 0..self.node_count() {
            let p = self.node_position(node);
            for ch in 0..self.channels {
                self.values[node * self.channels + ch] = f(p, ch);
            }
        }
        self.refresh_all();
    }

    pub fn fill_albedo(&mut self, mut f: impl FnMut(Point3) -> [f64; 3]) {
        for node in 0..self.node_count() {
            let rgb = f(self.node_position(node));
            self.albedo[node * 3..node * 3 + 3].copy_from_slice(&rgb);
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn log_beta(&self) -> f64 {
        self.log_beta
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        self.log_beta = beta.ln();
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Grid spacing per axis.
    pub fn spacing(&self) -> [f64; 3] {
        let e = self.bounds.extent();
        [
            e[0] / (self.resolution[0] - 1) as f64,
            e[1] / (self.resolution[1] - 1) as f64,
            e[2] / (self.resolution[2] - 1) as f64,
        ]
    }

    pub fn voxel_size(&self) -> f64 {
        let s = self.spacing();
        s[0].max(s[1]).max(s[2])
    }

    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.resolution[1] + iy) * self.resolution[2] + iz
    }

    pub fn node_coords(&self, node: usize) -> [usize; 3] {
        let iz = node % self.resolution[2];
        let rest = node / self.resolution[2];
        [rest / self.resolution[1], rest % self.resolution[1], iz]
    }

    pub fn node_position(&self, node: usize) -> Point3 {
        let c = self.node_coords(node);
        let h = self.spacing();
        [
            self.bounds.min[0] + c[0] as f64 * h[0],
            self.bounds.min[1] + c[1] as f64 * h[1],
            self.bounds.min[2] + c[2] as f64 * h[2],
        ]
    }

    pub fn value(&self, node: usize, channel: usize) -> f64 {
        self.values[node * self.channels + channel]
    }

    pub fn set_value(&mut self, node: usize, channel: usize, v: f64) {
        self.values[node * self.channels + channel] = v;
        self.refresh_node(node);
    }

    pub fn node_values(&self, node: usize) -> &[f64] {
        &self.values[node * self.channels..(node + 1) * self.channels]
    }

    pub fn albedo_at(&self, node: usize) -> [f64; 3] {
        [self.albedo[node * 3], self.albedo[node * 3 + 1], self.albedo[node * 3 + 2]]
    }

    /// Values of one channel in node order.
    pub fn channel_values(&self, channel: usize) -> Vec<f64> {
        (0..self.node_count()).map(|n| self.value(n, channel)).collect()
    }

    pub(crate) fn refresh_node(&mut self, node: usize) {
        let row = &self.values[node * self.channels..(node + 1) * self.channels];
        self.node_min[node] = row.iter().copied().fold(f64::INFINITY, f64::min);
    }

    pub(crate) fn refresh_all(&mut self) {
        self.node_min.resize(self.node_count(), 0.0);
        for node in 0..self.node_count() {
            self.refresh_node(node);
        }
    }

    /// The same field sampled onto a grid of another resolution by trilinear
    /// interpolation.
    pub fn resampled(&self, resolution: [usize; 3]) -> Result<Self> {
        let mut out = ObjectSdfGrid::new(resolution, self.bounds, self.channels, 1.0)?;
        out.log_beta = self.log_beta;
        let c = self.channels;
        let mut row = vec![0.0; c];
        for node in 0..out.node_count() {
            let st = self.stencil(out.node_position(node));
            self.interp_channels(&st, &mut row);
            out.values[node * c..(node + 1) * c].copy_from_slice(&row);
            out.albedo[node * 3..node * 3 + 3].copy_from_slice(&self.interp_albedo(&st));
        }
        out.refresh_all();
        Ok(out)
    }

    /// Flat parameter count: SDF values, then albedo, then `log beta`.
    pub fn param_count(&self) -> usize {
        self.values.len() + self.albedo.len() + 1
    }

    pub fn param(&self, i: usize) -> f64 {
        let (nv, na) = (self.values.len(), self.albedo.len());
        if i < nv {
            self.values[i]
        } else if i < nv + na {
            self.albedo[i - nv]
        } else {
            self.log_beta
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let (nv, na) = (self.values.len(), self.albedo.len());
        if i < nv {
            self.values[i] = v;
            self.refresh_node(i / self.channels);
        } else if i < nv + na {
            self.albedo[i - nv] = v;
        } else {
            self.log_beta = v;
        }
    }

    #[inline]
    pub(crate) fn stencil(&self, p: Point3) -> Stencil {
        let h = self.spacing();
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        let mut live = [1.0; 3];
        let mut clamped = false;
        for a in 0..3 {
            let r = self.resolution[a];
            let mut u = (p[a] - self.bounds.min[a]) / h[a];
            if !(u >= 0.0) {
                u = 0.0;
                clamped = true;
                live[a] = 0.0;
            } else if u > (r - 1) as f64 {
                u = (r - 1) as f64;
                clamped = true;
                live[a] = 0.0;
            }
            let i = (u.floor() as usize).min(r - 2);
            base[a] = i;
            t[a] = u - i as f64;
        }
        let mut nodes = [0usize; 8];
        let mut w = [0.0; 8];
        let mut dw = [[0.0; 3]; 8];
        for k in 0..8 {
            let b = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
            nodes[k] = self.node_index(base[0] + b[0], base[1] + b[1], base[2] + b[2]);
            let f = |a: usize| if b[a] == 1 { t[a] } else { 1.0 - t[a] };
            let s = |a: usize| if b[a] == 1 { 1.0 } else { -1.0 };
            let (fx, fy, fz) = (f(0), f(1), f(2));
            w[k] = fx * fy * fz;
            dw[k] = [
                live[0] * s(0) * fy * fz / h[0],
                live[1] * s(1) * fx * fz / h[1],
                live[2] * s(2) * fx * fy / h[2],
            ];
        }
        Stencil { nodes, w, dw, clamped }
    }

    /// Lower bound of the scene SDF at a stencil.
    #[inline]
    pub(crate) fn min_bound(&self, st: &Stencil) -> f64 {
        (0..8).map(|k| st.w[k] * self.node_min[st.nodes[k]]).sum()
    }

    /// Interpolated SDF of every channel into `out`.
    #[inline]
    pub(crate) fn interp_channels(&self, st: &Stencil, out: &mut [f64]) {
        let c = self.channels;
        out[..c].iter_mut().for_each(|v| *v = 0.0);
        for k in 0..8 {
            let w = st.w[k];
            let row = &self.values[st.nodes[k] * c..st.nodes[k] * c + c];
            for (o, v) in out[..c].iter_mut().zip(row) {
                *o += w * v;
            }
        }
    }

    #[inline]
    pub(crate) fn interp_gradient(&self, st: &Stencil, channel: usize) -> [f64; 3] {
        let mut g = [0.0; 3];
        for k in 0..8 {
            let v = self.values[st.nodes[k] * self.channels + channel];
            for a in 0..3 {
                g[a] += st.dw[k][a] * v;
            }
        }
        g
    }

    #[inline]
    pub(crate) fn interp_albedo(&self, st: &Stencil) -> [f64; 3] {
        let mut rgb = [0.0; 3];
        for k in 0..8 {
            let n = st.nodes[k] * 3;
            for (j, out) in rgb.iter_mut().enumerate() {
                *out += st.w[k] * self.albedo[n + j];
            }
        }
        rgb
    }

    pub fn sample(&self, p: Point3) -> FieldSample {
        let st = self.stencil(p);
        let mut sdf = vec![0.0; self.channels];
        self.interp_channels(&st, &mut sdf);
        let argmin = crate::simplex::argmin(&sdf);
        let beta = self.beta();
        let density = sdf.iter().map(|&d| density_terms(d, beta).0).collect();
        FieldSample {
            scene_sdf: sdf[argmin],
            scene_density: density_terms(sdf[argmin], beta).0,
            density,
            gradient: self.interp_gradient(&st, argmin),
            argmin,
            sdf,
            clamped: st.clamped,
        }
    }

    /// Interpolated albedo at a point.
    pub fn albedo(&self, p: Point3) -> [f64; 3] {
        self.interp_albedo(&self.stencil(p))
    }

    /// Mean over points and channels of `(|grad d| - 1)^2`, with its gradient
    /// with respect to the grid values.
    pub fn eikonal_residual(&self, points: &[Point3]) -> (f64, GridGrad) {
        let mut grad = GridGrad::new(self);
        let value = self.eikonal_into(points, 1.0, &mut grad);
        (value, grad)
    }

    /// Accumulates `weight *` the eikonal gradient into `grad`; returns the
    /// unweighted residual.
    pub fn eikonal_into(&self, points: &[Point3], weight: f64, grad: &mut GridGrad) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let c = self.channels;
        let norm = 1.0 / (points.len() * c) as f64;
        let mut total = 0.0;
        for &p in points {
            let st = self.stencil(p);
            for ch in 0..c {
                let g = self.interp_gradient(&st, ch);
                let len = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                let r = len - 1.0;
                total += r * r;
                if len > 0.0 && weight != 0.0 {
                    let s = weight * norm * 2.0 * r / len;
                    for k in 0..8 {
                        let d = s * (g[0] * st.dw[k][0] + g[1] * st.dw[k][1] + g[2] * st.dw[k][2]);
                        grad.add_value(st.nodes[k], ch, d);
                    }
                }
            }
        }
        total * norm
    }

    pub fn extract_mesh(&self, channel: usize, iso: f64) -> Result<crate::mesh::TriangleMesh> {
        if channel >= self.channels {
            return Err(Error::InvalidInput(format!(
                "channel {channel} out of range for {} channels",
                self.channels
            )));
        }
        let values = self.channel_values(channel);
        Ok(crate::mesh::marching_tetrahedra(
            &values,
            self.resolution,
            self.bounds.min,
            self.spacing(),
            iso,
        ))
    }
}

/// Sparse-tracked gradient buffer shaped like an [`ObjectSdfGrid`].
#[derive(Clone, Debug)]
pub struct GridGrad {
    channels: usize,
    pub(crate) values: Vec<f64>,
    pub(crate) albedo: Vec<f64>,
    pub log_beta: f64,
    touched: Vec<usize>,
    mark: Vec<bool>,
}

impl GridGrad {
    pub fn new(grid: &ObjectSdfGrid) -> Self {
        let nodes = grid.node_count();
        GridGrad {
            channels: grid.channels,
            values: vec![0.0; nodes * grid.channels],
            albedo: vec![0.0; nodes * 3],
            log_beta: 0.0,
            touched: Vec::new(),
            mark: vec![false; nodes],
        }
    }

    #[inline]
    pub(crate) fn touch(&mut self, node: usize) {
        if !self.mark[node] {
            self.mark[node] = true;
            self.touched.push(node);
        }
    }

    #[inline]
    pub(crate) fn add_value(&mut self, node: usize, channel: usize, g: f64) {
        self.touch(node);
        self.values[node * self.channels + channel] += g;
    }

    /// Adds `w * row` to every channel of `node`.
    #[inline]
    pub(crate) fn add_row(&mut self, node: usize, w: f64, row: &[f64]) {
        self.touch(node);
        let c = self.channels;
        for (g, r) in self.values[node * c..node * c + c].iter_mut().zip(row) {
            *g += w * r;
        }
    }

    #[inline]
    pub(crate) fn add_albedo(&mut self, node: usize, k: usize, g: f64) {
        self.touch(node);
        self.albedo[node * 3 + k] += g;
    }

    /// Nodes with any nonzero contribution since the last clear.
    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    pub fn node_values(&self, node: usize) -> &[f64] {
        &self.values[node * self.channels..(node + 1) * self.channels]
    }

    pub fn clear(&mut self) {
        for &n in &self.touched {
            self.mark[n] = false;
            self.values[n * self.channels..(n + 1) * self.channels]
                .iter_mut()
                .for_each(|v| *v = 0.0);
            self.albedo[n * 3..n * 3 + 3].iter_mut().for_each(|v| *v = 0.0);
        }
        self.touched.clear();
        self.log_beta = 0.0;
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, other: &GridGrad, weight: f64) {
        for &n in &other.touched {
            self.touch(n);
            let c = self.channels;
            for i in n * c..(n + 1) * c {
                self.values[i] += weight * other.values[i];
            }
            for i in n * 3..n * 3 + 3 {
                self.albedo[i] += weight * other.albedo[i];
            }
        }
        self.log_beta += weight * other.log_beta;
    }

    /// Same flat layout as [`ObjectSdfGrid::param`].
    pub fn param(&self, i: usize) -> f64 {
        let (nv, na) = (self.values.len(), self.albedo.len());
        if i < nv {
            self.values[i]
        } else if i < nv + na {
            self.albedo[i - nv]
        } else {
            self.log_beta
        }
    }

    pub fn max_abs(&self) -> f64 {
        let m = self
            .touched
            .iter()
            .flat_map(|&n| {
                self.values[n * self.channels..(n + 1) * self.channels]
                    .iter()
                    .chain(&self.albedo[n * 3..n * 3 + 3])
            })
            .fold(0.0f64, |m, v| m.max(v.abs()));
        m.max(self.log_beta.abs())
    }
}

/// Field initialization parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub channels: usize,
    pub resolution: usize,
    /// Bounds are the cube `[-half_extent, half_extent]^3`.
    pub half_extent: f64,
    /// Radius of the enclosing background sphere.
    pub background_radius: f64,
    pub beta: f64,
    pub seed: u64,
    /// Foreground spheres get radius `0.4 * background_radius` plus a
    /// uniform offset in `±radius_jitter`.
    pub radius_jitter: f64,
    /// Per-axis uniform offset of the foreground sphere centers.
    pub center_jitter: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            channels: 16,
            resolution: 64,
            half_extent: 1.0,
            background_radius: 0.95,
            beta: 0.1,
            seed: 0,
            radius_jitter: 0.02,
            center_jitter: 0.02,
        }
    }
}

/// Foreground channels start as jittered spheres around the origin; the
/// background channel is the inside-out bounding sphere.
pub fn init_field(config: &FieldConfig) -> Result<ObjectSdfGrid> {
    if config.channels < 2 {
        return Err(Error::Config(format!(
            "need at least 2 channels, got {}",
            config.channels
        )));
    }
    if !(config.background_radius > 0.0) {
        return Err(Error::Config("background radius must be positive".into()));
    }
    let r = config.resolution;
    let mut grid = ObjectSdfGrid::new([r, r, r], Aabb::cube(config.half_extent), config.channels, config.beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base = 0.4 * config.background_radius;
    let spheres: Vec<(Point3, f64)> = (1..config.channels)
        .map(|_| {
            let mut center = [0.0; 3];
            for c in &mut center {
                *c = if config.center_jitter > 0.0 {
                    rng.gen_range(-config.center_jitter..=config.center_jitter)
                } else {
                    0.0
                };
            }
            let dr = if config.radius_jitter > 0.0 {
                rng.gen_range(-config.radius_jitter..=config.radius_jitter)
            } else {
                0.0
            };
            (center, base + dr)
        })
        .collect();
    let bg = config.background_radius;
    grid.fill(|p, ch| {
        if ch == 0 {
            bg - norm(p)
        } else {
            let (c, radius) = spheres[ch - 1];
            norm(sub(p, c)) - radius
        }
    });
    Ok(grid)
}

#[inline]
pub(crate) fn norm(p: Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[inline]
pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
