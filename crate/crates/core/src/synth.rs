//! Analytic multi-view scenes with known instance and semantic ids, and a
//! corruptor that turns their ground-truth masks into view-inconsistent
//! machine-style labels.
//!
//! Scenes live inside an inside-out background sphere (the dome); cameras
//! sit between the objects and the dome.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Intrinsics, Pose};
use crate::dataset::{Dataset, Meta, View};
use crate::error::{Error, Result};
use crate::field::Point3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "shape")]
pub enum Shape {
    Sphere { radius: f64 },
    /// Axis-aligned box given by its half extents.
    Box { half: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub center: Point3,
    pub instance: u16,
    pub semantic: u16,
    pub color: [f64; 3],
}

impl Primitive {
    /// Signed distance to the primitive.
    pub fn sdf(&self, p: Point3) -> f64 {
        let q = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        match self.shape {
            Shape::Sphere { radius } => len(q) - radius,
            Shape::Box { half } => {
                let d = [q[0].abs() - half[0], q[1].abs() - half[1], q[2].abs() - half[2]];
                let outside = len([d[0].max(0.0), d[1].max(0.0), d[2].max(0.0)]);
                outside + d[0].max(d[1]).max(d[2]).min(0.0)
            }
        }
    }

    /// Nearest hit `t > 0` and the outward normal there.
    pub fn intersect(&self, origin: Point3, dir: Point3) -> Option<(f64, Point3)> {
        let o = [origin[0] - self.center[0], origin[1] - self.center[1], origin[2] - self.center[2]];
        match self.shape {
            Shape::Sphere { radius } => {
                let b = dot(o, dir);
                let c = dot(o, o) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > 1e-9 { -b - s } else { -b + s };
                if t <= 1e-9 {
                    return None;
                }
                let p = [o[0] + t * dir[0], o[1] + t * dir[1], o[2] + t * dir[2]];
                Some((t, [p[0] / radius, p[1] / radius, p[2] / radius]))
            }
            Shape::Box { half } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut axis0, mut axis1) = (0, 0);
                for a in 0..3 {
                    if dir[a].abs() < 1e-300 {
                        if o[a].abs() > half[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut n, mut f) = ((-half[a] - o[a]) / dir[a], (half[a] - o[a]) / dir[a]);
                    if n > f {
                        std::mem::swap(&mut n, &mut f);
                    }
                    if n > t0 {
                        t0 = n;
                        axis0 = a;
                    }
                    if f < t1 {
                        t1 = f;
                        axis1 = a;
                    }
                }
                if t0 > t1 || t1 <= 1e-9 {
                    return None;
                }
                let (t, a) = if t0 > 1e-9 { (t0, axis0) } else { (t1, axis1) };
                let mut normal = [0.0; 3];
                normal[a] = (o[a] + t * dir[a]).signum();
                Some((t, normal))
            }
        }
    }

    /// Radius of a bounding sphere about the center.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => radius,
            Shape::Box { half } => len(half),
        }
    }
}

/// A ring of cameras around `center`, all looking at it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Orbit {
    pub n_views: usize,
    pub center: Point3,
    pub radius: f64,
    /// Azimuth range in degrees about the z axis; views are spread evenly.
    pub azimuth_deg: [f64; 2],
    /// Elevation range in degrees; each view draws one uniformly.
    pub elevation_deg: [f64; 2],
}

impl Default for Orbit {
    fn default() -> Self {
        Orbit {
            n_views: 40,
            center: [0.0; 3],
            radius: 0.65,
            azimuth_deg: [0.0, 360.0],
            elevation_deg: [-35.0, 45.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub permute_per_view: bool,
    /// Probability that an object is missed (set to 0) in a given view.
    pub dropout_prob: f64,
    /// Pixels this close (Chebyshev) to a label edge may be flipped.
    pub boundary_noise_px: usize,
    /// Chance that an eligible boundary pixel is flipped.
    pub boundary_flip_prob: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            permute_per_view: true,
            dropout_prob: 0.1,
            boundary_noise_px: 0,
            boundary_flip_prob: 0.5,
            seed: 1,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("dropout_prob", self.dropout_prob), ("boundary_flip_prob", self.boundary_flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Spec(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    /// Scene bounds are the cube `[-half_extent, half_extent]^3`.
    pub half_extent: f64,
    pub background_radius: f64,
    pub background_color: [f64; 3],
    /// Names of semantic classes 1.. (class 0 is background).
    pub class_names: Vec<String>,
    pub orbits: Vec<Orbit>,
    pub primitives: Vec<Primitive>,
    pub corruption: CorruptionSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::three_objects()
    }
}

impl SceneSpec {
    /// Sphere, box and sphere with distinct classes around the origin.
    pub fn three_objects() -> Self {
        SceneSpec {
            seed: 0,
            width: 128,
            height: 128,
            fov_deg: 60.0,
            half_extent: 1.0,
            background_radius: 0.95,
            background_color: [0.8, 0.8, 0.75],
            class_names: vec!["ball".into(), "crate".into(), "orb".into()],
            orbits: vec![Orbit::default()],
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere { radius: 0.15 },
                    center: [0.19, 0.12, 0.03],
                    instance: 1,
                    semantic: 1,
                    color: [0.85, 0.2, 0.15],
                },
                Primitive {
                    shape: Shape::Box { half: [0.11, 0.11, 0.13] },
                    center: [-0.17, 0.1, -0.02],
                    instance: 2,
                    semantic: 2,
                    color: [0.2, 0.55, 0.85],
                },
                Primitive {
                    shape: Shape::Sphere { radius: 0.13 },
                    center: [0.0, -0.2, 0.0],
                    instance: 3,
                    semantic: 3,
                    color: [0.25, 0.75, 0.3],
                },
            ],
            corruption: CorruptionSpec::default(),
        }
    }

    /// Two objects of different classes that never share a view: each is
    /// seen only by its own ring of cameras, which looks across the axis
    /// joining them.
    pub fn two_isolated_objects() -> Self {
        let (a, b) = ([0.3, 0.0, 0.0], [-0.3, 0.0, 0.0]);
        let ring = |center: Point3, azimuth: f64| Orbit {
            n_views: 10,
            center,
            radius: 0.45,
            azimuth_deg: [azimuth, azimuth],
            elevation_deg: [-60.0, 60.0],
        };
        SceneSpec {
            class_names: vec!["ball".into(), "crate".into()],
            orbits: vec![ring(a, 90.0), ring(a, 270.0), ring(b, 90.0), ring(b, 270.0)],
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere { radius: 0.12 },
                    center: a,
                    instance: 1,
                    semantic: 1,
                    color: [0.85, 0.2, 0.15],
                },
                Primitive {
                    shape: Shape::Box { half: [0.09, 0.09, 0.09] },
                    center: b,
                    instance: 2,
                    semantic: 2,
                    color: [0.2, 0.55, 0.85],
                },
            ],
            ..SceneSpec::three_objects()
        }
    }

    pub fn n_views(&self) -> usize {
        self.orbits.iter().map(|o| o.n_views).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Spec("image size must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Spec(format!("field of view {} out of range", self.fov_deg)));
        }
        if !(self.background_radius > 0.0 && self.background_radius <= self.half_extent) {
            return Err(Error::Spec("background sphere must fit inside the bounds".into()));
        }
        if self.n_views() == 0 {
            return Err(Error::Spec("no views".into()));
        }
        let mut ids = BTreeSet::new();
        for p in &self.primitives {
            if p.instance == 0 || !ids.insert(p.instance) {
                return Err(Error::Spec(format!("instance id {} is zero or repeated", p.instance)));
            }
            if p.semantic == 0 || p.semantic as usize > self.class_names.len() {
                return Err(Error::Spec(format!(
                    "semantic class {} of instance {} is not in the class table",
                    p.semantic, p.instance
                )));
            }
            if len(p.center) + p.bounding_radius() >= self.background_radius {
                return Err(Error::Spec(format!("instance {} pokes out of the background sphere", p.instance)));
            }
        }
        for o in &self.orbits {
            if len(o.center) + o.radius >= self.background_radius {
                return Err(Error::Spec("cameras must stay inside the background sphere".into()));
            }
        }
        for cam in self.cameras()? {
            if self.sdf(cam.pose.position()) < 0.05 {
                return Err(Error::Spec("a camera sits inside or too close to a surface".into()));
            }
        }
        self.corruption.validate()
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let k = Intrinsics::from_fov(self.width, self.height, self.fov_deg);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::new();
        for o in &self.orbits {
            for v in 0..o.n_views {
                let t = (v as f64 + 0.5) / o.n_views as f64;
                let az = (o.azimuth_deg[0] + t * (o.azimuth_deg[1] - o.azimuth_deg[0])).to_radians();
                let (e0, e1) = (o.elevation_deg[0], o.elevation_deg[1]);
                let el = if e1 > e0 { rng.gen_range(e0..=e1) } else { e0 }.to_radians();
                let eye = [
                    o.center[0] + o.radius * el.cos() * az.cos(),
                    o.center[1] + o.radius * el.cos() * az.sin(),
                    o.center[2] + o.radius * el.sin(),
                ];
                let pose = Pose::look_at(eye, o.center, [0.0, 0.0, 1.0])?;
                out.push(Camera { intrinsics: k, pose });
            }
        }
        Ok(out)
    }

    /// Nearest surface along a ray: (distance, normal, instance, semantic,
    /// color). Instance 0 is the background dome.
    pub fn cast(&self, origin: Point3, dir: Point3) -> Hit {
        // The camera is inside the dome, so the far root always exists.
        let b = dot(origin, dir);
        let c = dot(origin, origin) - self.background_radius * self.background_radius;
        let t = -b + (b * b - c).max(0.0).sqrt();
        let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
        let r = self.background_radius;
        let mut hit = Hit {
            t,
            normal: [-p[0] / r, -p[1] / r, -p[2] / r],
            instance: 0,
            semantic: 0,
            color: self.background_color,
        };
        for prim in &self.primitives {
            if let Some((t, normal)) = prim.intersect(origin, dir) {
                if t < hit.t {
                    hit = Hit {
                        t,
                        normal,
                        instance: prim.instance,
                        semantic: prim.semantic,
                        color: prim.color,
                    };
                }
            }
        }
        hit
    }

    /// Scene signed distance: objects and the dome, min-composed.
    pub fn sdf(&self, p: Point3) -> f64 {
        self.primitives
            .iter()
            .map(|q| q.sdf(p))
            .fold(self.background_radius - len(p), f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Point3,
    pub instance: u16,
    pub semantic: u16,
    pub color: [f64; 3],
}

/// Ray-casts every view of the scene. Label maps start out equal to the
/// ground truth with full confidence.
pub fn generate_views(spec: &SceneSpec) -> Result<Dataset> {
    spec.validate()?;
    let cameras = spec.cameras()?;
    let k = cameras[0].intrinsics;
    let n = k.pixel_count();
    let views = cameras
        .iter()
        .map(|cam| {
            let mut view = View::blank(cam.pose, n);
            for px in 0..n {
                let dir = cam.direction(px % k.width, px / k.width);
                let hit = spec.cast(cam.pose.position(), dir);
                for j in 0..3 {
                    view.rgb[3 * px + j] = (hit.color[j].clamp(0.0, 1.0) * 255.0).round() as u8;
                    view.normal[3 * px + j] = hit.normal[j] as f32;
                }
                view.depth[px] = hit.t as f32;
                view.gt_instance[px] = hit.instance;
                view.gt_semantic[px] = hit.semantic;
            }
            view.instance = view.gt_instance.clone();
            view.semantic = view.gt_semantic.clone();
            view
        })
        .collect();
    Ok(Dataset {
        meta: Meta::from_spec(spec),
        intrinsics: k,
        views,
    })
}

/// Replaces each view's instance/semantic maps with corrupted copies of its
/// ground truth and sets the confidence maps.
///
/// Per view, in order: the ids present are permuted among themselves; each
/// present object is dropped (to 0, in both maps) with `dropout_prob`;
/// pixels near a label edge are flipped to a nearby different label with
/// `boundary_flip_prob` and get confidence 0.5.
pub fn corrupt_labels(dataset: &mut Dataset, spec: &CorruptionSpec) -> Result<()> {
    spec.validate()?;
    let (w, h) = (dataset.intrinsics.width, dataset.intrinsics.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for view in &mut dataset.views {
        let present: Vec<u16> = view
            .gt_instance
            .iter()
            .copied()
            .filter(|&l| l != 0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut image = present.clone();
        if spec.permute_per_view {
            image.shuffle(&mut rng);
        }
        let dropped: BTreeSet<u16> = present
            .iter()
            .copied()
            .filter(|_| rng.gen::<f64>() < spec.dropout_prob)
            .collect();
        let map = |l: u16| -> u16 {
            if l == 0 || dropped.contains(&l) {
                0
            } else {
                image[present.binary_search(&l).expect("present id")]
            }
        };
        let mut instance: Vec<u16> = view.gt_instance.iter().map(|&l| map(l)).collect();
        let mut semantic: Vec<u16> = view
            .gt_semantic
            .iter()
            .zip(&view.gt_instance)
            .map(|(&s, &l)| if dropped.contains(&l) { 0 } else { s })
            .collect();
        let mut confidence = vec![255u8; w * h];
        let r = spec.boundary_noise_px as isize;
        if r > 0 && spec.boundary_flip_prob > 0.0 {
            let (src_i, src_s) = (instance.clone(), semantic.clone());
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let px = (y * w as isize + x) as usize;
                    let mut others = Vec::new();
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (nx, ny) = (x + dx, y + dy);
                            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                                continue;
                            }
                            let q = (ny * w as isize + nx) as usize;
                            if src_i[q] != src_i[px] {
                                others.push(q);
                            }
                        }
                    }
                    if !others.is_empty() && rng.gen::<f64>() < spec.boundary_flip_prob {
                        let q = others[rng.gen_range(0..others.len())];
                        instance[px] = src_i[q];
                        semantic[px] = src_s[q];
                        confidence[px] = 128;
                    }
                }
            }
        }
        view.instance = instance;
        view.semantic = semantic;
        view.confidence = confidence;
    }
    dataset.meta.corruption = Some(spec.clone());
    Ok(())
}

/// Generates the views and applies the spec's corruption.
pub fn generate_dataset(spec: &SceneSpec) -> Result<Dataset> {
    let mut ds = generate_views(spec)?;
    corrupt_labels(&mut ds, &spec.corruption)?;
    Ok(ds)
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn len(a: Point3) -> f64 {
    dot(a, a).sqrt()
}
