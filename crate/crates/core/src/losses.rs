//! Foreground/background, semantic, cross-view and reconstruction losses,
//! and their assembly into the per-mode training objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{RenderAdjoint, RenderOutput};
use crate::simplex::{l2_dist, ChannelVector, ClusteringWeights, LabelGroups, Norm, ProbVector, RowGrad};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Semantic,
    Instance,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(Mode::Semantic),
            "instance" => Ok(Mode::Instance),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Semantic => "semantic",
            Mode::Instance => "instance",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub diff: f64,
    pub onehot: f64,
    pub reg: f64,
    pub onehot_norm: Norm,
    pub bg: f64,
    pub fg: f64,
    pub semantic: f64,
    pub cross_view: f64,
    pub color: f64,
    pub depth: f64,
    pub normal: f64,
    pub eikonal: f64,
    /// Supervised opacity loss against consistent masks; 0 disables.
    pub gt_opacity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        let c = ClusteringWeights::default();
        LossWeights {
            diff: c.diff,
            onehot: c.onehot,
            reg: c.reg,
            onehot_norm: c.onehot_norm,
            bg: 0.2,
            fg: 0.1,
            semantic: 1.0,
            cross_view: 1.0,
            color: 1.0,
            depth: 1.0,
            normal: 0.1,
            eikonal: 0.1,
            gt_opacity: 0.0,
        }
    }
}

impl LossWeights {
    pub fn clustering(&self) -> ClusteringWeights {
        ClusteringWeights {
            diff: self.diff,
            onehot: self.onehot,
            reg: self.reg,
            onehot_norm: self.onehot_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("diff", self.diff),
            ("onehot", self.onehot),
            ("reg", self.reg),
            ("bg", self.bg),
            ("fg", self.fg),
            ("semantic", self.semantic),
            ("cross_view", self.cross_view),
            ("color", self.color),
            ("depth", self.depth),
            ("normal", self.normal),
            ("eikonal", self.eikonal),
            ("gt_opacity", self.gt_opacity),
        ];
        for (name, w) in named {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `w_bg * mean_bg |O_0 - 1| + w_fg * mean_fg |O_0|` on raw opacities.
/// Returns the value and its gradient with respect to the raw rows.
pub fn fg_bg_loss(raw: &[ChannelVector], fg: &[usize], bg: &[usize], w_bg: f64, w_fg: f64) -> Result<(f64, RowGrad)> {
    let c = raw.first().map_or(0, |r| r.len());
    let mut grad = RowGrad::zeros(raw.len(), c);
    let mut value = 0.0;
    for (set, w, target) in [(bg, w_bg, 1.0), (fg, w_fg, 0.0)] {
        if set.is_empty() {
            continue;
        }
        let inv = w / set.len() as f64;
        for &i in set {
            let o = raw
                .get(i)
                .ok_or_else(|| Error::InvalidInput(format!("ray index {i} out of range")))?
                .as_slice()[0];
            value += inv * (o - target).abs();
            grad.row_mut(i)[0] += inv * sign(o - target);
        }
    }
    Ok((value, grad))
}

/// Confidence-weighted L2 distance between each non-background cluster center
/// and the one-hot vector of its semantic class, averaged over clusters.
///
/// `classes[g]` is the semantic class of group `g`; `confidence` is per ray.
/// The gradient is with respect to the softmax rows.
pub fn semantic_loss(
    soft: &[ProbVector],
    groups: &LabelGroups,
    confidence: &[f64],
    classes: &[u32],
) -> Result<(f64, RowGrad)> {
    let c = soft.first().map_or(0, |p| p.len());
    let mut grad = RowGrad::zeros(soft.len(), c);
    if classes.len() != groups.len() {
        return Err(Error::InvalidInput(format!(
            "{} classes for {} groups",
            classes.len(),
            groups.len()
        )));
    }
    if confidence.len() != soft.len() {
        return Err(Error::InvalidInput("confidence and batch differ in length".into()));
    }
    let picked: Vec<(usize, u32)> = groups
        .iter()
        .enumerate()
        .filter(|(_, (l, _))| *l != 0)
        .map(|(g, _)| (g, classes[g]))
        .collect();
    if picked.is_empty() {
        return Ok((0.0, grad));
    }
    let n = picked.len() as f64;
    let mut value = 0.0;
    for (g, class) in picked {
        let class = class as usize;
        if class >= c {
            return Err(Error::Config(format!("semantic class {class} needs more than {c} channels")));
        }
        let m = groups.members(g);
        if m.is_empty() {
            return Err(Error::DegenerateGroup(format!("label {} has no members", groups.labels()[g])));
        }
        let inv_m = 1.0 / m.len() as f64;
        let mut center = vec![0.0; c];
        let mut conf = 0.0;
        for &i in m {
            for (a, p) in center.iter_mut().zip(soft[i].as_slice()) {
                *a += p * inv_m;
            }
            conf += confidence[i] * inv_m;
        }
        let mut target = vec![0.0; c];
        target[class] = 1.0;
        let dist = l2_dist(&center, &target);
        value += conf * dist / n;
        if dist > 0.0 && conf != 0.0 {
            for &i in m {
                let row = grad.row_mut(i);
                for k in 0..c {
                    row[k] += conf / n * (center[k] - target[k]) / dist * inv_m;
                }
            }
        }
    }
    Ok((value, grad))
}

/// Softmax rows of one view together with their semantic grouping.
#[derive(Clone, Copy, Debug)]
pub struct ViewClusters<'a> {
    pub soft: &'a [ProbVector],
    pub groups: &'a LabelGroups,
}

#[derive(Clone, Debug)]
pub struct CrossViewLoss {
    pub value: f64,
    /// Gradient with respect to the current view's softmax rows.
    pub current: RowGrad,
    /// Gradients with respect to each extra view's softmax rows.
    pub extras: Vec<RowGrad>,
}

/// `exp(-sum_v sum_{l1 != l2} || mu_current(l1) - mu_v(l2) ||)` over the
/// semantic clusters of the current view and of each extra view. Background
/// clusters (label 0) take no part. No extra views gives 1.
pub fn cross_view_loss(current: ViewClusters<'_>, extras: &[ViewClusters<'_>]) -> Result<CrossViewLoss> {
    let centers = |v: &ViewClusters<'_>| -> Result<Vec<(u32, Vec<f64>, usize)>> {
        let c = v.soft.first().map_or(0, |p| p.len());
        let mut out = Vec::new();
        for (g, (l, m)) in v.groups.iter().enumerate() {
            if l == 0 {
                continue;
            }
            if m.is_empty() {
                return Err(Error::DegenerateGroup(format!("label {l} has no members")));
            }
            let mut mu = vec![0.0; c];
            for &i in m {
                let row = v
                    .soft
                    .get(i)
                    .ok_or_else(|| Error::InvalidInput(format!("ray index {i} out of range")))?;
                for (a, p) in mu.iter_mut().zip(row.as_slice()) {
                    *a += p / m.len() as f64;
                }
            }
            out.push((l, mu, g));
        }
        Ok(out)
    };
    let cur = centers(&current)?;
    let c = current.soft.first().map_or(0, |p| p.len());
    let mut cur_grad = vec![vec![0.0; c]; cur.len()];
    let mut ext_centers = Vec::with_capacity(extras.len());
    let mut ext_grads = Vec::with_capacity(extras.len());
    let mut sum = 0.0;
    for v in extras {
        let ext = centers(v)?;
        let mut eg = vec![vec![0.0; c]; ext.len()];
        for (a, (l1, mu1, _)) in cur.iter().enumerate() {
            for (b, (l2, mu2, _)) in ext.iter().enumerate() {
                if l1 == l2 {
                    continue;
                }
                let d = l2_dist(mu1, mu2);
                sum += d;
                if d > 0.0 {
                    for k in 0..c {
                        let u = (mu1[k] - mu2[k]) / d;
                        cur_grad[a][k] += u;
                        eg[b][k] -= u;
                    }
                }
            }
        }
        ext_centers.push(ext);
        ext_grads.push(eg);
    }
    let value = (-sum).exp();
    // d value / d sum = -value.
    let spread = |v: &ViewClusters<'_>, cs: &[(u32, Vec<f64>, usize)], gs: &[Vec<f64>]| {
        let mut out = RowGrad::zeros(v.soft.len(), c);
        for ((_, _, g), grad) in cs.iter().zip(gs) {
            let m = v.groups.members(*g);
            let s = -value / m.len() as f64;
            for &i in m {
                for (o, d) in out.row_mut(i).iter_mut().zip(grad) {
                    *o += s * d;
                }
            }
        }
        out
    };
    let current_grad = spread(&current, &cur, &cur_grad);
    let extras_grad = extras
        .iter()
        .zip(&ext_centers)
        .zip(&ext_grads)
        .map(|((v, cs), gs)| spread(v, cs, gs))
        .collect();
    Ok(CrossViewLoss {
        value,
        current: current_grad,
        extras: extras_grad,
    })
}

/// Ground-truth color, depth and normal of one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayTarget {
    pub color: [f64; 3],
    pub depth: f64,
    pub normal: [f64; 3],
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Reconstruction {
    /// Mean absolute color error over rays and channels.
    pub color: f64,
    /// Mean absolute depth error over rays with scene opacity above 0.5.
    pub depth: f64,
    /// Mean absolute normal error (per component) over the same rays.
    pub normal: f64,
    /// Weighted sum of the three.
    pub total: f64,
}

/// Color, depth and normal L1 terms. Weighted adjoints are added into `adj`.
pub fn reconstruction_loss(
    outputs: &[RenderOutput],
    targets: &[RayTarget],
    weights: &LossWeights,
    adj: &mut [RenderAdjoint],
) -> Result<Reconstruction> {
    if outputs.len() != targets.len() || outputs.len() != adj.len() {
        return Err(Error::InvalidInput("outputs, targets and adjoints differ in length".into()));
    }
    let mut rec = Reconstruction::default();
    if outputs.is_empty() {
        return Ok(rec);
    }
    let masked: Vec<usize> = (0..outputs.len()).filter(|&i| outputs[i].scene_opacity > 0.5).collect();
    let inv_c = 1.0 / (3 * outputs.len()) as f64;
    for (i, (o, t)) in outputs.iter().zip(targets).enumerate() {
        for j in 0..3 {
            let d = o.color[j] - t.color[j];
            rec.color += d.abs() * inv_c;
            adj[i].color[j] += weights.color * inv_c * sign(d);
        }
    }
    if !masked.is_empty() {
        let inv_d = 1.0 / masked.len() as f64;
        let inv_n = inv_d / 3.0;
        for &i in &masked {
            let (o, t) = (&outputs[i], &targets[i]);
            let d = o.depth - t.depth;
            rec.depth += d.abs() * inv_d;
            adj[i].depth += weights.depth * inv_d * sign(d);
            for j in 0..3 {
                let d = o.normal[j] - t.normal[j];
                rec.normal += d.abs() * inv_n;
                adj[i].normal[j] += weights.normal * inv_n * sign(d);
            }
        }
    }
    rec.total = weights.color * rec.color + weights.depth * rec.depth + weights.normal * rec.normal;
    Ok(rec)
}

/// Supervised per-object opacity loss: mean over rays of
/// `(1/M) sum_i |O_i - gt_i|`, where `M` is the channel count.
pub fn gt_opacity_loss(raw: &[ChannelVector], gt: &[Vec<f64>]) -> Result<(f64, RowGrad)> {
    if raw.len() != gt.len() {
        return Err(Error::InvalidInput("opacities and masks differ in length".into()));
    }
    let c = raw.first().map_or(0, |r| r.len());
    let mut grad = RowGrad::zeros(raw.len(), c);
    if raw.is_empty() {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / (raw.len() * c) as f64;
    let mut value = 0.0;
    for (i, (o, g)) in raw.iter().zip(gt).enumerate() {
        if g.len() != c {
            return Err(Error::InvalidInput(format!("mask {i} has {} channels, expected {c}", g.len())));
        }
        for (k, (a, b)) in o.as_slice().iter().zip(g).enumerate() {
            value += (a - b).abs() * inv;
            grad.row_mut(i)[k] = inv * sign(a - b);
        }
    }
    Ok((value, grad))
}

/// Value and gradient of one already-weighted loss term with respect to the
/// render outputs of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub value: f64,
    pub grad: Vec<RenderAdjoint>,
}

impl Term {
    pub fn zero(rows: usize, channels: usize) -> Self {
        Term {
            value: 0.0,
            grad: vec![RenderAdjoint::zeros(channels); rows],
        }
    }

    /// A term whose gradient only touches the opacity rows starting at
    /// `offset`.
    pub fn from_rows(value: f64, rows: &RowGrad, offset: usize, total_rows: usize) -> Self {
        let mut t = Term::zero(total_rows, rows.cols());
        t.value = value;
        for i in 0..rows.rows() {
            t.grad[offset + i].opacity.copy_from_slice(rows.row(i));
        }
        t
    }

    pub fn add(&mut self, other: &Term) {
        self.value += other.value;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            for (x, y) in a.opacity.iter_mut().zip(&b.opacity) {
                *x += y;
            }
            for j in 0..3 {
                a.color[j] += b.color[j];
                a.normal[j] += b.normal[j];
            }
            a.depth += b.depth;
            a.scene_opacity += b.scene_opacity;
        }
    }
}

/// Per-component terms of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct Components {
    pub rec: Term,
    /// Eikonal value; its gradient lives on the grid directly.
    pub sdf: f64,
    pub clustering: Term,
    pub sem: Option<Term>,
    pub cross_view: Option<Term>,
    pub fg_bg: Term,
}

/// Sums the terms of the mode's objective. Semantic mode uses the semantic
/// term and ignores any cross-view term; instance mode the reverse.
pub fn total_loss(mode: Mode, comps: &Components) -> Result<Term> {
    let extra = match mode {
        Mode::Semantic => comps
            .sem
            .as_ref()
            .ok_or_else(|| Error::Config("semantic mode needs the semantic term".into()))?,
        Mode::Instance => comps
            .cross_view
            .as_ref()
            .ok_or_else(|| Error::Config("instance mode needs the cross-view term".into()))?,
    };
    let mut total = comps.rec.clone();
    total.value += comps.sdf;
    total.add(&comps.clustering);
    total.add(extra);
    total.add(&comps.fg_bg);
    Ok(total)
}
