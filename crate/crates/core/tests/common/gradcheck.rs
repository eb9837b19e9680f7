//! Analytic gradients against central finite differences, 100 random
//! instances per operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdfcluster::field::{Aabb, GridGrad, ObjectSdfGrid, Point3};
use sdfcluster::losses::{
    cross_view_loss, fg_bg_loss, gt_opacity_loss, reconstruction_loss, semantic_loss, LossWeights, RayTarget,
    ViewClusters,
};
use sdfcluster::render::{render_batch, render_rays, Ray, RenderAdjoint, RenderOptions, RenderOutput};
use sdfcluster::simplex::{
    cluster_centers, clustering_loss, diff_loss, onehot_loss, reg_loss, softmax_backward, spread_center_grads,
    ChannelVector, ClusteringWeights, LabelGroups, Norm, ProbVector, RowGrad,
};

const INSTANCES: usize = 100;
const STEP: f64 = 1e-5;

fn rel_err(a: &[f64], f: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(f).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(f)).max(1e-8)
}

/// Central differences of `f` at `x` along every coordinate.
fn fd(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + STEP;
            let hi = f(&y);
            y[i] = x[i] - STEP;
            let lo = f(&y);
            y[i] = x[i];
            (hi - lo) / (2.0 * STEP)
        })
        .collect()
}

fn rows(flat: &[f64], c: usize) -> Vec<ChannelVector> {
    flat.chunks(c).map(|r| ChannelVector::new(r.to_vec()).unwrap()).collect()
}

fn soft(raw: &[ChannelVector]) -> Vec<ProbVector> {
    raw.iter().map(|r| r.softmax()).collect()
}

/// Random raw opacities in (0, 1) with labels drawn from `0..labels`.
struct Batch {
    c: usize,
    raw: Vec<f64>,
    labels: Vec<u32>,
}

fn batch(rng: &mut ChaCha8Rng) -> Batch {
    let c = rng.gen_range(2..7);
    let n = rng.gen_range(3..20);
    let k = rng.gen_range(1..5);
    Batch {
        c,
        raw: (0..n * c).map(|_| rng.gen_range(0.02..0.98)).collect(),
        labels: (0..n).map(|_| rng.gen_range(0..k)).collect(),
    }
}

fn fg_of(labels: &[u32]) -> Vec<usize> {
    (0..labels.len()).filter(|&i| labels[i] != 0).collect()
}

/// Worst relative error of `op` over 100 seeded instances.
fn suite(seed: u64, mut op: impl FnMut(&mut ChaCha8Rng) -> f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..INSTANCES).map(|_| op(&mut rng)).fold(0.0, f64::max)
}

/// Checks a loss whose gradient is given with respect to the softmax rows.
fn soft_suite(seed: u64, op: impl Fn(&[ProbVector], &Batch) -> (f64, RowGrad)) -> f64 {
    suite(seed, |rng| {
        let b = batch(rng);
        let raw = rows(&b.raw, b.c);
        let s = soft(&raw);
        let (_, g) = op(&s, &b);
        let analytic = g.soft_to_raw(&s);
        let numeric = fd(&b.raw, |x| op(&soft(&rows(x, b.c)), &b).0);
        rel_err(analytic.as_slice(), &numeric)
    })
}

pub fn softmax() -> f64 {
    suite(1, |rng| {
        let c = rng.gen_range(2..10);
        let x: Vec<f64> = (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |x: &[f64]| -> f64 {
            let p = ChannelVector::new(x.to_vec()).unwrap().softmax();
            p.as_slice().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let p = ChannelVector::new(x.clone()).unwrap().softmax();
        let mut analytic = vec![0.0; c];
        softmax_backward(p.as_slice(), &w, &mut analytic);
        rel_err(&analytic, &fd(&x, f))
    })
}

pub fn diff() -> f64 {
    soft_suite(2, |s, b| {
        let groups = LabelGroups::from_labels(&b.labels);
        let centers = cluster_centers(s, &groups).unwrap();
        let (v, cg) = diff_loss(&centers);
        let g = spread_center_grads(&groups, &cg, s.len());
        (v, if g.cols() == b.c { g } else { RowGrad::zeros(s.len(), b.c) })
    })
}

pub fn reg() -> f64 {
    soft_suite(3, |s, b| reg_loss(s, &LabelGroups::from_labels(&b.labels)).unwrap())
}

pub fn semantic() -> f64 {
    soft_suite(4, |s, b| {
        let groups = LabelGroups::from_labels(&b.labels);
        let classes: Vec<u32> = groups.labels().iter().map(|&l| l % b.c as u32).collect();
        let conf: Vec<f64> = (0..s.len()).map(|i| 0.25 + 0.5 * (i % 3) as f64 / 2.0).collect();
        semantic_loss(s, &groups, &conf, &classes).unwrap()
    })
}

fn onehot(norm: Norm, seed: u64) -> f64 {
    suite(seed, |rng| {
        let b = batch(rng);
        let fg = fg_of(&b.labels);
        let raw = rows(&b.raw, b.c);
        // The one-hot target is held fixed, so differentiate at a fixed target.
        let s = soft(&raw);
        let (_, g) = onehot_loss(&raw, &s, &fg, norm).unwrap();
        let numeric = fd(&b.raw, |x| onehot_loss(&rows(x, b.c), &s, &fg, norm).unwrap().0);
        rel_err(g.as_slice(), &numeric)
    })
}

pub fn onehot_l1() -> f64 {
    onehot(Norm::L1, 5)
}

pub fn onehot_l2() -> f64 {
    onehot(Norm::L2, 6)
}

pub fn clustering_composite() -> f64 {
    suite(7, |rng| {
        let b = batch(rng);
        let fg = fg_of(&b.labels);
        let groups = LabelGroups::from_labels(&b.labels);
        let w = ClusteringWeights {
            diff: rng.gen_range(0.5..20.0),
            onehot: rng.gen_range(0.1..1.0),
            reg: rng.gen_range(1.0..100.0),
            onehot_norm: Norm::L1,
        };
        let raw = rows(&b.raw, b.c);
        let s0 = soft(&raw);
        let out = clustering_loss(&raw, &s0, &groups, &fg, &w).unwrap();
        let numeric = fd(&b.raw, |x| {
            let r = rows(x, b.c);
            let s = soft(&r);
            let mut l = clustering_loss(&r, &s, &groups, &fg, &w).unwrap();
            // Keep the stop-gradient one-hot target of the base point.
            l.total -= w.onehot * l.onehot;
            l.total + w.onehot * onehot_loss(&r, &s0, &fg, Norm::L1).unwrap().0
        });
        rel_err(out.grad_raw.as_slice(), &numeric)
    })
}

pub fn fg_bg() -> f64 {
    suite(8, |rng| {
        let b = batch(rng);
        let fg = fg_of(&b.labels);
        let bg: Vec<usize> = (0..b.labels.len()).filter(|&i| b.labels[i] == 0).collect();
        let (wb, wf) = (rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0));
        let (_, g) = fg_bg_loss(&rows(&b.raw, b.c), &fg, &bg, wb, wf).unwrap();
        let numeric = fd(&b.raw, |x| fg_bg_loss(&rows(x, b.c), &fg, &bg, wb, wf).unwrap().0);
        rel_err(g.as_slice(), &numeric)
    })
}

pub fn gt_opacity() -> f64 {
    suite(9, |rng| {
        let b = batch(rng);
        let gt: Vec<Vec<f64>> = b.raw.chunks(b.c).map(|r| r.iter().map(|_| rng.gen_bool(0.5) as u8 as f64).collect()).collect();
        let (_, g) = gt_opacity_loss(&rows(&b.raw, b.c), &gt).unwrap();
        let numeric = fd(&b.raw, |x| gt_opacity_loss(&rows(x, b.c), &gt).unwrap().0);
        rel_err(g.as_slice(), &numeric)
    })
}

pub fn cross_view() -> f64 {
    suite(10, |rng| {
        let c = rng.gen_range(3..7);
        let views: Vec<Batch> = (0..3)
            .map(|_| {
                let mut b = batch(rng);
                b.c = c;
                b.raw = (0..b.labels.len() * c).map(|_| rng.gen_range(0.02..0.98)).collect();
                b
            })
            .collect();
        let groups: Vec<LabelGroups> = views.iter().map(|v| LabelGroups::from_labels(&v.labels)).collect();
        let eval = |flat: &[Vec<f64>]| {
            let soft: Vec<Vec<ProbVector>> = flat.iter().map(|f| soft(&rows(f, c))).collect();
            let vc: Vec<ViewClusters> = soft
                .iter()
                .zip(&groups)
                .map(|(s, g)| ViewClusters { soft: s, groups: g })
                .collect();
            let out = cross_view_loss(vc[0], &vc[1..]).unwrap();
            let mut grads = vec![out.current.soft_to_raw(&soft[0])];
            grads.extend(out.extras.iter().zip(&soft[1..]).map(|(g, s)| g.soft_to_raw(s)));
            (out.value, grads)
        };
        let base: Vec<Vec<f64>> = views.iter().map(|v| v.raw.clone()).collect();
        let (_, grads) = eval(&base);
        let analytic: Vec<f64> = grads.iter().flat_map(|g| g.as_slice().to_vec()).collect();
        let flat: Vec<f64> = base.concat();
        let numeric = fd(&flat, |x| {
            let mut parts = Vec::new();
            let mut at = 0;
            for v in &base {
                parts.push(x[at..at + v.len()].to_vec());
                at += v.len();
            }
            eval(&parts).0
        });
        rel_err(&analytic, &numeric)
    })
}

fn random_output(rng: &mut ChaCha8Rng) -> RenderOutput {
    let mut v3 = || [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let (color, normal) = (v3(), v3());
    RenderOutput {
        object_opacity: vec![],
        color,
        depth: rng.gen_range(0.5..2.0),
        normal,
        scene_opacity: if rng.gen_bool(0.7) { rng.gen_range(0.6..1.0) } else { rng.gen_range(0.0..0.4) },
    }
}

pub fn reconstruction() -> f64 {
    suite(11, |rng| {
        let n = rng.gen_range(1..10);
        let outputs: Vec<RenderOutput> = (0..n).map(|_| random_output(rng)).collect();
        let targets: Vec<RayTarget> = (0..n)
            .map(|_| {
                let o = random_output(rng);
                RayTarget {
                    color: o.color,
                    depth: o.depth,
                    normal: o.normal,
                }
            })
            .collect();
        let w = LossWeights {
            depth: rng.gen_range(0.1..1.0),
            normal: rng.gen_range(0.05..1.0),
            ..LossWeights::default()
        };
        let flatten = |o: &[RenderOutput]| -> Vec<f64> {
            o.iter().flat_map(|r| r.color.into_iter().chain([r.depth]).chain(r.normal)).collect()
        };
        let rebuild = |x: &[f64]| -> Vec<RenderOutput> {
            x.chunks(7)
                .zip(&outputs)
                .map(|(v, o)| RenderOutput {
                    color: [v[0], v[1], v[2]],
                    depth: v[3],
                    normal: [v[4], v[5], v[6]],
                    ..o.clone()
                })
                .collect()
        };
        let mut adj = vec![RenderAdjoint::zeros(0); n];
        reconstruction_loss(&outputs, &targets, &w, &mut adj).unwrap();
        let analytic: Vec<f64> = adj.iter().flat_map(|a| a.color.into_iter().chain([a.depth]).chain(a.normal)).collect();
        let numeric = fd(&flatten(&outputs), |x| {
            let mut scratch = vec![RenderAdjoint::zeros(0); n];
            reconstruction_loss(&rebuild(x), &targets, &w, &mut scratch).unwrap().total
        });
        rel_err(&analytic, &numeric)
    })
}

fn random_grid(rng: &mut ChaCha8Rng, c: usize) -> ObjectSdfGrid {
    let mut g = ObjectSdfGrid::new([8; 3], Aabb::cube(1.0), c, rng.gen_range(0.05..0.3)).unwrap();
    let centers: Vec<(Point3, f64)> = (0..c)
        .map(|_| ([rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)], rng.gen_range(0.2..0.5)))
        .collect();
    let mut noise = ChaCha8Rng::seed_from_u64(rng.gen());
    g.fill(|p, ch| {
        let (q, r) = centers[ch];
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        d - r + noise.gen_range(-0.05..0.05)
    });
    g.fill_albedo(|_| [noise.gen(), noise.gen(), noise.gen()]);
    g
}

/// Parameter indices to probe: a random subset of the touched SDF values and
/// albedo entries, plus `log beta`.
fn probe_params(rng: &mut ChaCha8Rng, g: &ObjectSdfGrid, grad: &GridGrad, count: usize) -> Vec<usize> {
    let c = g.channels();
    let nv = g.node_count() * c;
    let touched = grad.touched();
    let mut out: Vec<usize> = (0..count)
        .map(|_| {
            let node = touched[rng.gen_range(0..touched.len())];
            if rng.gen_bool(0.75) {
                node * c + rng.gen_range(0..c)
            } else {
                nv + node * 3 + rng.gen_range(0..3)
            }
        })
        .collect();
    out.push(g.param_count() - 1);
    out.sort_unstable();
    out.dedup();
    out
}

fn grid_fd(g: &ObjectSdfGrid, params: &[usize], f: impl Fn(&ObjectSdfGrid) -> f64) -> Vec<f64> {
    let mut h = g.clone();
    params
        .iter()
        .map(|&i| {
            let x = g.param(i);
            h.set_param(i, x + STEP);
            let hi = f(&h);
            h.set_param(i, x - STEP);
            let lo = f(&h);
            h.set_param(i, x);
            (hi - lo) / (2.0 * STEP)
        })
        .collect()
}

pub fn eikonal_on_grid() -> f64 {
    suite(12, |rng| {
        let c = rng.gen_range(2..5);
        let g = random_grid(rng, c);
        let pts: Vec<Point3> = (0..16)
            .map(|_| [rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95)])
            .collect();
        let (_, grad) = g.eikonal_residual(&pts);
        let params: Vec<usize> = probe_params(rng, &g, &grad, 40).into_iter().filter(|&i| i < g.node_count() * c).collect();
        let analytic: Vec<f64> = params.iter().map(|&i| grad.param(i)).collect();
        rel_err(&analytic, &grid_fd(&g, &params, |h| h.eikonal_residual(&pts).0))
    })
}

pub fn render_closure_on_grid() -> f64 {
    suite(13, |rng| {
        let c = rng.gen_range(2..5);
        let g = random_grid(rng, c);
        let rays: Vec<Ray> = (0..3)
            .map(|_| {
                let o = [-0.95, rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)];
                let d: [f64; 3] = [1.0, rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                Ray::new(o, [d[0] / n, d[1] / n, d[2] / n], 0.0, 1.6).unwrap()
            })
            .collect();
        let mut adj_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let mut r = || adj_rng.gen_range(-1.0..1.0);
        let adj: Vec<RenderAdjoint> = rays
            .iter()
            .map(|_| RenderAdjoint {
                opacity: (0..c).map(|_| r()).collect(),
                color: [r(), r(), r()],
                depth: r(),
                normal: [r(), r(), r()],
                scene_opacity: r(),
            })
            .collect();
        let opts = RenderOptions::exact(24);
        let objective = |h: &ObjectSdfGrid| -> f64 {
            render_rays(&rays, h, &opts, 0)
                .iter()
                .zip(&adj)
                .map(|(o, a)| {
                    o.object_opacity.iter().zip(&a.opacity).map(|(x, y)| x * y).sum::<f64>()
                        + (0..3).map(|j| o.color[j] * a.color[j] + o.normal[j] * a.normal[j]).sum::<f64>()
                        + o.depth * a.depth
                        + o.scene_opacity * a.scene_opacity
                })
                .sum()
        };
        let (_, tape) = render_batch(&rays, &g, &opts, 0);
        let mut grad = GridGrad::new(&g);
        tape.backward(&g, &adj, &mut grad).unwrap();
        let params = probe_params(rng, &g, &grad, 40);
        let analytic: Vec<f64> = params.iter().map(|&i| grad.param(i)).collect();
        rel_err(&analytic, &grid_fd(&g, &params, objective))
    })
}

pub const TOLERANCE: f64 = 1e-4;

/// Every suite by name.
pub fn all() -> Vec<(&'static str, fn() -> f64)> {
    vec![
        ("softmax", softmax as fn() -> f64),
        ("diff", diff),
        ("reg", reg),
        ("semantic", semantic),
        ("onehot_l1", onehot_l1),
        ("onehot_l2", onehot_l2),
        ("clustering", clustering_composite),
        ("fg_bg", fg_bg),
        ("gt_opacity", gt_opacity),
        ("cross_view", cross_view),
        ("reconstruction", reconstruction),
        ("eikonal", eikonal_on_grid),
        ("render", render_closure_on_grid),
    ]
}
