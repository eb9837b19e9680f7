//! Discrete volume rendering of per-object opacities, color, depth and
//! normals, with a reverse pass back to the grid parameters.
//!
//! Along a ray with samples `k`, optical thickness `tau_k = sigma(p_k) dt_k`
//! uses the scene density, `T_k = exp(-sum_{j<k} tau_j)` is the scene
//! transmittance and object `i` accumulates `T_k (1 - exp(-sigma_i(p_k) dt_k))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{density_terms, GridGrad, ObjectSdfGrid, Point3};
use crate::simplex::argmin;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub direction: Point3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Point3, direction: Point3, near: f64, far: f64) -> Result<Self> {
        let len = (direction[0] * direction[0] + direction[1] * direction[1] + direction[2] * direction[2]).sqrt();
        if !((len - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidInput(format!("ray direction has length {len}")));
        }
        if !(near < far) || !near.is_finite() || !far.is_finite() {
            return Err(Error::InvalidInput(format!("ray interval [{near}, {far}] is empty")));
        }
        Ok(Ray { origin, direction, near, far })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Point3 {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub points: Vec<Point3>,
    /// Lengths of the segments each sample stands for; they tile
    /// `[near, far]`.
    pub deltas: Vec<f64>,
}

/// Samples in `n` equal bins, at bin centers or jittered within bins.
pub fn sample_ray(ray: &Ray, n: usize, stratified: bool, seed: u64) -> Result<RaySamples> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut t, mut deltas) = (Vec::new(), Vec::new());
    fill_samples(ray, n, stratified.then_some(&mut rng), &mut t, &mut deltas);
    let points = t.iter().map(|&s| ray.at(s)).collect();
    Ok(RaySamples { t, points, deltas })
}

fn fill_samples(ray: &Ray, n: usize, rng: Option<&mut ChaCha8Rng>, t: &mut Vec<f64>, deltas: &mut Vec<f64>) {
    t.clear();
    deltas.clear();
    let h = (ray.far - ray.near) / n as f64;
    match rng {
        Some(rng) => t.extend((0..n).map(|k| ray.near + (k as f64 + rng.gen::<f64>()) * h)),
        None => t.extend((0..n).map(|k| ray.near + (k as f64 + 0.5) * h)),
    }
    // Segment boundaries sit halfway between neighbouring samples.
    let mut prev = ray.near;
    for k in 0..n {
        let next = if k + 1 < n { 0.5 * (t[k] + t[k + 1]) } else { ray.far };
        deltas.push(next - prev);
        prev = next;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub n_samples: usize,
    pub stratified: bool,
    /// Samples whose scene density bound gives `sigma * dt` below this are
    /// skipped. 0 disables.
    pub skip_epsilon: f64,
    /// Stop marching once transmittance drops below this. 0 disables.
    pub termination: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            n_samples: 128,
            stratified: true,
            skip_epsilon: 1e-7,
            termination: 1e-4,
        }
    }
}

impl RenderOptions {
    /// Deterministic bin-center quadrature with no shortcuts.
    pub fn exact(n_samples: usize) -> Self {
        RenderOptions {
            n_samples,
            stratified: false,
            skip_epsilon: 0.0,
            termination: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub object_opacity: Vec<f64>,
    pub color: [f64; 3],
    pub depth: f64,
    pub normal: [f64; 3],
    pub scene_opacity: f64,
}

/// Output-space adjoints of one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderAdjoint {
    pub opacity: Vec<f64>,
    pub color: [f64; 3],
    pub depth: f64,
    pub normal: [f64; 3],
    pub scene_opacity: f64,
}

impl RenderAdjoint {
    pub fn zeros(channels: usize) -> Self {
        RenderAdjoint {
            opacity: vec![0.0; channels],
            color: [0.0; 3],
            depth: 0.0,
            normal: [0.0; 3],
            scene_opacity: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.opacity.iter().all(|&v| v == 0.0)
            && self.color == [0.0; 3]
            && self.depth == 0.0
            && self.normal == [0.0; 3]
            && self.scene_opacity == 0.0
    }
}

#[derive(Clone, Copy, Debug)]
struct SampleTape {
    point: Point3,
    t: f64,
    delta: f64,
    trans: f64,
    tau: f64,
    weight: f64,
    argmin: usize,
    /// d sigma / d sdf and d sigma / d beta of the argmin channel.
    a_dsdd: f64,
    a_dsdb: f64,
    /// Range of this sample's entries in `chan`.
    chan_start: usize,
    chan_len: usize,
    albedo: [f64; 3],
    grad: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
struct RayTape {
    start: usize,
    len: usize,
    opacity: f64,
    depth: f64,
    v: [f64; 3],
}

/// Everything the reverse pass needs from a batch's forward pass.
#[derive(Clone, Debug, Default)]
pub struct RenderTape {
    channels: usize,
    rays: Vec<RayTape>,
    samples: Vec<SampleTape>,
    // Channels with non-negligible density at each sample:
    // (channel, d sigma / d sdf, d sigma / d beta, exp(-sigma dt)).
    chan: Vec<(usize, f64, f64, f64)>,
}

struct Scratch {
    t: Vec<f64>,
    deltas: Vec<f64>,
    sdf: Vec<f64>,
}

impl Scratch {
    fn new(channels: usize) -> Self {
        Scratch {
            t: Vec::new(),
            deltas: Vec::new(),
            sdf: vec![0.0; channels],
        }
    }
}

fn trace(
    field: &ObjectSdfGrid,
    ray: &Ray,
    opts: &RenderOptions,
    rng: Option<&mut ChaCha8Rng>,
    scratch: &mut Scratch,
    mut tape: Option<&mut RenderTape>,
) -> RenderOutput {
    let c = field.channels();
    let beta = field.beta();
    let n = opts.n_samples.max(2);
    fill_samples(ray, n, if opts.stratified { rng } else { None }, &mut scratch.t, &mut scratch.deltas);
    let start = tape.as_ref().map_or(0, |t| t.samples.len());
    let mut out = RenderOutput {
        object_opacity: vec![0.0; c],
        color: [0.0; 3],
        depth: 0.0,
        normal: [0.0; 3],
        scene_opacity: 0.0,
    };
    let (mut trans, mut opacity, mut dnum, mut v) = (1.0, 0.0, 0.0, [0.0; 3]);
    for k in 0..n {
        let (t, delta) = (scratch.t[k], scratch.deltas[k]);
        let p = ray.at(t);
        let st = field.stencil(p);
        if opts.skip_epsilon > 0.0 {
            let bound = density_terms(field.min_bound(&st), beta).0;
            if bound * delta < opts.skip_epsilon {
                continue;
            }
        }
        field.interp_channels(&st, &mut scratch.sdf);
        let a = argmin(&scratch.sdf);
        let (sigma, a_dsdd, a_dsdb) = density_terms(scratch.sdf[a], beta);
        let tau = sigma * delta;
        let weight = trans * -(-tau).exp_m1();
        // Channels further than this contribute less than `skip_epsilon`
        // opacity at this sample and are left out.
        let cutoff = if opts.skip_epsilon > 0.0 {
            beta * (0.5 * delta / (beta * opts.skip_epsilon)).ln()
        } else {
            f64::INFINITY
        };
        let chan_start = tape.as_ref().map_or(0, |t| t.chan.len());
        for i in 0..c {
            let d = scratch.sdf[i];
            if d > cutoff {
                continue;
            }
            let (s, dsdd, dsdb) = density_terms(d, beta);
            let em = (-s * delta).exp_m1();
            out.object_opacity[i] -= trans * em;
            if let Some(tape) = tape.as_deref_mut() {
                tape.chan.push((i, dsdd, dsdb, 1.0 + em));
            }
        }
        let albedo = field.interp_albedo(&st);
        let grad = field.interp_gradient(&st, a);
        for j in 0..3 {
            out.color[j] += weight * albedo[j];
            v[j] += weight * grad[j];
        }
        opacity += weight;
        dnum += weight * t;
        if let Some(tape) = tape.as_deref_mut() {
            tape.samples.push(SampleTape {
                point: p,
                t,
                delta,
                trans,
                tau,
                weight,
                argmin: a,
                a_dsdd,
                a_dsdb,
                chan_start,
                chan_len: tape.chan.len() - chan_start,
                albedo,
                grad,
            });
        }
        trans *= (-tau).exp();
        if opts.termination > 0.0 && trans < opts.termination {
            break;
        }
    }
    // The sums telescope to 1 - T in exact arithmetic; rounding can push
    // them a hair past 1.
    out.scene_opacity = opacity.min(1.0);
    out.object_opacity.iter_mut().for_each(|o| *o = o.min(1.0));
    out.depth = if opacity >= 1e-6 { dnum / opacity } else { 0.0 };
    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if len > 0.0 {
        out.normal = [v[0] / len, v[1] / len, v[2] / len];
    }
    if let Some(tape) = tape {
        let len = tape.samples.len() - start;
        tape.rays.push(RayTape {
            start,
            len,
            opacity,
            depth: out.depth,
            v,
        });
    }
    out
}

/// Renders one ray with exact bin-center quadrature.
pub fn render(ray: &Ray, field: &ObjectSdfGrid, n_samples: usize) -> RenderOutput {
    render_with(ray, field, &RenderOptions::exact(n_samples), 0)
}

pub fn render_with(ray: &Ray, field: &ObjectSdfGrid, opts: &RenderOptions, seed: u64) -> RenderOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    trace(field, ray, opts, Some(&mut rng), &mut Scratch::new(field.channels()), None)
}

/// Renders rays without recording a tape. Stratified jitter is drawn from
/// one stream seeded by `seed`, in ray order.
pub fn render_rays(rays: &[Ray], field: &ObjectSdfGrid, opts: &RenderOptions, seed: u64) -> Vec<RenderOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = Scratch::new(field.channels());
    rays.iter()
        .map(|r| trace(field, r, opts, Some(&mut rng), &mut scratch, None))
        .collect()
}

/// Renders a batch and records the tape for [`RenderTape::backward`].
pub fn render_batch(
    rays: &[Ray],
    field: &ObjectSdfGrid,
    opts: &RenderOptions,
    seed: u64,
) -> (Vec<RenderOutput>, RenderTape) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = Scratch::new(field.channels());
    let mut tape = RenderTape {
        channels: field.channels(),
        ..Default::default()
    };
    let outputs = rays
        .iter()
        .map(|r| trace(field, r, opts, Some(&mut rng), &mut scratch, Some(&mut tape)))
        .collect();
    (outputs, tape)
}

impl RenderTape {
    pub fn ray_count(&self) -> usize {
        self.rays.len()
    }

    /// Number of samples that were actually evaluated.
    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Accumulates the gradient of `sum_r <adjoint_r, output_r>` into `grad`.
    /// `field` must be the grid the tape was recorded on.
    pub fn backward(&self, field: &ObjectSdfGrid, adjoints: &[RenderAdjoint], grad: &mut GridGrad) -> Result<()> {
        if adjoints.len() != self.rays.len() {
            return Err(Error::InvalidInput(format!(
                "{} adjoints for {} rays",
                adjoints.len(),
                self.rays.len()
            )));
        }
        let c = self.channels;
        let beta = field.beta();
        let mut dsdf = vec![0.0; c];
        let mut dbeta = 0.0;
        for (ray, adj) in self.rays.iter().zip(adjoints) {
            if adj.is_zero() || ray.len == 0 {
                continue;
            }
            let mut ds = adj.scene_opacity;
            let mut ddnum = 0.0;
            if ray.opacity >= 1e-6 {
                ddnum = adj.depth / ray.opacity;
                ds -= adj.depth * ray.depth / ray.opacity;
            }
            let v = ray.v;
            let vlen = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let mut dv = [0.0; 3];
            if vlen > 0.0 {
                let nrm = [v[0] / vlen, v[1] / vlen, v[2] / vlen];
                let proj = nrm[0] * adj.normal[0] + nrm[1] * adj.normal[1] + nrm[2] * adj.normal[2];
                for j in 0..3 {
                    dv[j] = (adj.normal[j] - nrm[j] * proj) / vlen;
                }
            }
            // Sum over later samples of the loss sensitivity to their
            // transmittance, times that transmittance.
            let mut suffix = 0.0;
            for k in (ray.start..ray.start + ray.len).rev() {
                let s = &self.samples[k];
                let ch = &self.chan[s.chan_start..s.chan_start + s.chan_len];
                let gw = adj.color[0] * s.albedo[0]
                    + adj.color[1] * s.albedo[1]
                    + adj.color[2] * s.albedo[2]
                    + ddnum * s.t
                    + dv[0] * s.grad[0]
                    + dv[1] * s.grad[1]
                    + dv[2] * s.grad[2]
                    + ds;
                let mut q = 0.0;
                for &(i, dsdd, dsdb, keep) in ch {
                    q += adj.opacity[i] * (1.0 - keep);
                    let dsigma = adj.opacity[i] * s.trans * s.delta * keep;
                    dsdf[i] = dsigma * dsdd;
                    dbeta += dsigma * dsdb;
                }
                let next = s.trans * (-s.tau).exp();
                let dtau = next * gw - suffix;
                suffix += s.weight * gw + s.trans * q;
                let dsigma = dtau * s.delta;
                let a = s.argmin;
                dsdf[a] += dsigma * s.a_dsdd;
                dbeta += dsigma * s.a_dsdb;

                let st = field.stencil(s.point);
                let dg = [s.weight * dv[0], s.weight * dv[1], s.weight * dv[2]];
                let dalb = [s.weight * adj.color[0], s.weight * adj.color[1], s.weight * adj.color[2]];
                for corner in 0..8 {
                    let node = st.nodes[corner];
                    let w = st.w[corner];
                    grad.add_row(node, w, &dsdf);
                    let dw = st.dw[corner];
                    grad.add_value(node, a, dw[0] * dg[0] + dw[1] * dg[1] + dw[2] * dg[2]);
                    for j in 0..3 {
                        grad.add_albedo(node, j, w * dalb[j]);
                    }
                }
                for &(i, ..) in ch {
                    dsdf[i] = 0.0;
                }
                dsdf[a] = 0.0;
            }
        }
        grad.log_beta += dbeta * beta;
        Ok(())
    }
}
