//! Probability-simplex math behind the clustering loss.
//!
//! Rendered per-object opacities are softmax-normalized across channels so
//! every ray becomes a point on the (c-1)-simplex. Rays that share a 2D label
//! form a cluster whose center is the mean of its points. Three terms act on
//! these clusters:
//!
//! * [`diff_loss`] pushes cluster centers apart (toward distinct vertices),
//! * [`onehot_loss`] pulls each foreground ray's raw opacities toward the
//!   one-hot vector of its dominant channel,
//! * [`reg_loss`] pulls softmax values toward uniform, slowing entropy collapse.
//!
//! All gradients are analytic. Gradients with respect to softmax rows can be
//! folded back onto raw opacities with [`RowGrad::soft_to_raw`].

use crate::error::{Error, Result};

/// Raw per-object opacities of one ray. Channel 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelVector(Vec<f64>);

impl ChannelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "channel vector needs at least 2 channels, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite opacity {bad}")));
        }
        Ok(ChannelVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn softmax(&self) -> ProbVector {
        ProbVector(softmax_unchecked(&self.0))
    }
}

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("negative or non-finite probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("probabilities sum to {sum}")));
        }
        Ok(ProbVector(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Population variance of the entries.
    pub fn variance(&self) -> f64 {
        let n = self.0.len() as f64;
        let mean = self.0.iter().sum::<f64>() / n;
        self.0.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry; ties go to the lowest index.
pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn softmax_unchecked(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Softmax across channels with max-subtraction.
pub fn softmax_normalize(values: &[f64]) -> Result<ProbVector> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty channel vector".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite opacity {bad}")));
    }
    Ok(ProbVector(softmax_unchecked(values)))
}

/// Vector-Jacobian product of softmax: maps d/d(soft) to d/d(raw).
pub fn softmax_backward(soft: &[f64], d_soft: &[f64], d_raw: &mut [f64]) {
    let dot: f64 = soft.iter().zip(d_soft).map(|(s, g)| s * g).sum();
    for ((out, s), g) in d_raw.iter_mut().zip(soft).zip(d_soft) {
        *out = s * (g - dot);
    }
}

/// Dense row-major gradient over a batch of per-ray channel vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct RowGrad {
    cols: usize,
    data: Vec<f64>,
}

impl RowGrad {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RowGrad {
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        if self.cols == 0 {
            0
        } else {
            self.data.len() / self.cols
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, other: &RowGrad, weight: f64) {
        assert_eq!(self.data.len(), other.data.len(), "gradient shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += weight * b;
        }
    }

    pub fn scaled(mut self, weight: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= weight);
        self
    }

    /// Folds a gradient taken with respect to softmax rows back onto the raw
    /// rows that produced them.
    pub fn soft_to_raw(&self, soft: &[ProbVector]) -> RowGrad {
        let mut out = RowGrad::zeros(self.rows(), self.cols);
        for (i, s) in soft.iter().enumerate() {
            let (src, dst) = (self.row(i), &mut out.data[i * self.cols..(i + 1) * self.cols]);
            softmax_backward(s.as_slice(), src, dst);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Rays of one batch partitioned by label value. Groups are stored in
/// ascending label order.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelGroups {
    labels: Vec<u32>,
    members: Vec<Vec<usize>>,
}

impl LabelGroups {
    pub fn from_labels(labels: &[u32]) -> Self {
        let mut map: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (i, &l) in labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        let (labels, members) = map.into_iter().unzip();
        LabelGroups { labels, members }
    }

    /// Builds groups from explicit index sets; rejects overlapping groups and
    /// repeated labels.
    pub fn new(groups: Vec<(u32, Vec<usize>)>) -> Result<Self> {
        let mut groups = groups;
        groups.sort_by_key(|g| g.0);
        let mut seen = std::collections::HashSet::new();
        for w in groups.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidInput(format!("label {} repeated", w[0].0)));
            }
        }
        for (_, m) in &groups {
            for &i in m {
                if !seen.insert(i) {
                    return Err(Error::InvalidInput(format!("index {i} in two groups")));
                }
            }
        }
        let (labels, members) = groups.into_iter().unzip();
        Ok(LabelGroups { labels, members })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[usize])> {
        self.labels
            .iter()
            .copied()
            .zip(self.members.iter().map(|m| m.as_slice()))
    }

    /// Same partition with the background label 0 removed.
    pub fn without_background(&self) -> LabelGroups {
        let (labels, members) = self
            .iter()
            .filter(|(l, _)| *l != 0)
            .map(|(l, m)| (l, m.to_vec()))
            .unzip();
        LabelGroups { labels, members }
    }

    fn check(&self, rows: usize) -> Result<()> {
        for (l, m) in self.iter() {
            if m.is_empty() {
                return Err(Error::DegenerateGroup(format!("label {l} has no members")));
            }
            if let Some(&i) = m.iter().find(|&&i| i >= rows) {
                return Err(Error::InvalidInput(format!(
                    "label {l} references row {i} of a {rows}-row batch"
                )));
            }
        }
        Ok(())
    }
}

/// Per-group means of softmax rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterCenters {
    labels: Vec<u32>,
    centers: Vec<ProbVector>,
}

impl ClusterCenters {
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn centers(&self) -> &[ProbVector] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Builds centers directly, e.g. for testing the pairwise terms.
    pub fn from_centers(labels: Vec<u32>, centers: Vec<ProbVector>) -> Result<Self> {
        if labels.len() != centers.len() {
            return Err(Error::InvalidInput("labels and centers differ in length".into()));
        }
        Ok(ClusterCenters { labels, centers })
    }
}

pub fn cluster_centers(batch: &[ProbVector], groups: &LabelGroups) -> Result<ClusterCenters> {
    let mut ops = 0;
    centers_counted(batch, groups, &mut ops)
}

fn centers_counted(
    batch: &[ProbVector],
    groups: &LabelGroups,
    ops: &mut u64,
) -> Result<ClusterCenters> {
    groups.check(batch.len())?;
    let c = batch.first().map_or(0, |p| p.len());
    let mut centers = Vec::with_capacity(groups.len());
    for (_, m) in groups.iter() {
        let mut acc = vec![0.0; c];
        for &i in m {
            for (a, p) in acc.iter_mut().zip(batch[i].as_slice()) {
                *a += p;
            }
            *ops += 1;
        }
        let inv = 1.0 / m.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        *ops += 1;
        centers.push(ProbVector(acc));
    }
    Ok(ClusterCenters {
        labels: groups.labels.clone(),
        centers,
    })
}

/// Distributes gradients on cluster centers onto the member rows
/// (each member receives `grad / |group|`).
pub fn spread_center_grads(groups: &LabelGroups, center_grads: &[Vec<f64>], rows: usize) -> RowGrad {
    let cols = center_grads.first().map_or(0, |g| g.len());
    let mut out = RowGrad::zeros(rows, cols);
    for ((_, m), g) in groups.iter().zip(center_grads) {
        let inv = 1.0 / m.len() as f64;
        for &i in m {
            for (o, v) in out.row_mut(i).iter_mut().zip(g) {
                *o += v * inv;
            }
        }
    }
    out
}

pub(crate) fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Negative mean pairwise L2 distance between cluster centers, weighted by
/// `1 / (N (N - 1))` over the `i < j` pairs. Fewer than two centers gives 0.
///
/// Returns the value and the gradient with respect to every center.
pub fn diff_loss(centers: &ClusterCenters) -> (f64, Vec<Vec<f64>>) {
    let mut ops = 0;
    diff_counted(centers, &mut ops)
}

fn diff_counted(centers: &ClusterCenters, ops: &mut u64) -> (f64, Vec<Vec<f64>>) {
    let n = centers.len();
    let c = centers.centers.first().map_or(0, |p| p.len());
    let mut grads = vec![vec![0.0; c]; n];
    if n < 2 {
        return (0.0, grads);
    }
    let scale = 1.0 / (n * (n - 1)) as f64;
    let mut value = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (centers.centers[i].as_slice(), centers.centers[j].as_slice());
            let dist = l2_dist(a, b);
            *ops += 2;
            value -= scale * dist;
            if dist > 0.0 {
                for k in 0..c {
                    let g = scale * (a[k] - b[k]) / dist;
                    grads[i][k] -= g;
                    grads[j][k] += g;
                }
                *ops += 2;
            }
        }
    }
    (value, grads)
}

/// One-hot vector at the largest channel (lowest index on ties).
pub fn onehot_project(p: &ProbVector) -> ProbVector {
    let mut out = vec![0.0; p.len()];
    out[p.argmax()] = 1.0;
    ProbVector(out)
}

/// Norm used by the one-hot residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L1,
    L2,
}

/// Mean over foreground rays of `|| raw - onehot(soft) ||`, with the one-hot
/// target held constant. An empty foreground set gives 0.
pub fn onehot_loss(
    raw: &[ChannelVector],
    soft: &[ProbVector],
    fg: &[usize],
    norm: Norm,
) -> Result<(f64, RowGrad)> {
    let mut ops = 0;
    onehot_counted(raw, soft, fg, norm, &mut ops)
}

fn onehot_counted(
    raw: &[ChannelVector],
    soft: &[ProbVector],
    fg: &[usize],
    norm: Norm,
    ops: &mut u64,
) -> Result<(f64, RowGrad)> {
    if raw.len() != soft.len() {
        return Err(Error::InvalidInput("raw and soft batches differ in length".into()));
    }
    let c = raw.first().map_or(0, |r| r.len());
    let mut grad = RowGrad::zeros(raw.len(), c);
    if fg.is_empty() {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / fg.len() as f64;
    let mut value = 0.0;
    for &i in fg {
        let r = raw
            .get(i)
            .ok_or_else(|| Error::InvalidInput(format!("foreground index {i} out of range")))?
            .as_slice();
        let hot = soft[i].argmax();
        *ops += 1;
        let g = grad.row_mut(i);
        match norm {
            Norm::L1 => {
                for k in 0..c {
                    let diff = r[k] - if k == hot { 1.0 } else { 0.0 };
                    value += inv * diff.abs();
                    g[k] = inv * sign(diff);
                }
            }
            Norm::L2 => {
                let diffs: Vec<f64> = (0..c)
                    .map(|k| r[k] - if k == hot { 1.0 } else { 0.0 })
                    .collect();
                let len = diffs.iter().map(|d| d * d).sum::<f64>().sqrt();
                value += inv * len;
                if len > 0.0 {
                    for k in 0..c {
                        g[k] = inv * diffs[k] / len;
                    }
                }
            }
        }
        *ops += 2;
    }
    Ok((value, grad))
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

/// Mean over non-background clusters of the variance of all softmax values in
/// the cluster (the `|m| * c` scalars taken as one population).
///
/// Returns the value and the gradient with respect to the softmax rows.
pub fn reg_loss(soft: &[ProbVector], groups: &LabelGroups) -> Result<(f64, RowGrad)> {
    let mut ops = 0;
    reg_counted(soft, groups, &mut ops)
}

fn reg_counted(soft: &[ProbVector], groups: &LabelGroups, ops: &mut u64) -> Result<(f64, RowGrad)> {
    groups.check(soft.len())?;
    let c = soft.first().map_or(0, |p| p.len());
    let mut grad = RowGrad::zeros(soft.len(), c);
    let fg: Vec<(u32, &[usize])> = groups.iter().filter(|(l, _)| *l != 0).collect();
    if fg.is_empty() {
        return Ok((0.0, grad));
    }
    let n = fg.len() as f64;
    let mut value = 0.0;
    for (_, m) in fg {
        let count = (m.len() * c) as f64;
        let mean = m
            .iter()
            .map(|&i| soft[i].as_slice().iter().sum::<f64>())
            .sum::<f64>()
            / count;
        let mut var = 0.0;
        for &i in m {
            let row = soft[i].as_slice();
            let g = grad.row_mut(i);
            for k in 0..c {
                let dev = row[k] - mean;
                var += dev * dev;
                // The mean's own derivative sums to zero over the population.
                g[k] = 2.0 * dev / (count * n);
            }
            *ops += 2;
        }
        value += var / count / n;
    }
    Ok((value, grad))
}

/// Weights of the three clustering terms.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ClusteringWeights {
    pub diff: f64,
    pub onehot: f64,
    pub reg: f64,
    pub onehot_norm: Norm,
}

impl Default for ClusteringWeights {
    fn default() -> Self {
        ClusteringWeights {
            diff: 20.0,
            onehot: 0.5,
            reg: 10000.0,
            onehot_norm: Norm::L1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClusteringLoss {
    pub diff: f64,
    pub onehot: f64,
    pub reg: f64,
    /// Weighted sum of the three terms.
    pub total: f64,
    /// Gradient of `total` with respect to the raw rows.
    pub grad_raw: RowGrad,
    /// Number of length-c vector operations performed.
    pub ops: u64,
}

/// `diff * L_diff + onehot * L_onehot + reg * L_reg` on one single-view batch.
///
/// `groups` holds every label of the batch (background included);
/// `fg` indexes the rays whose label is not background.
pub fn clustering_loss(
    raw: &[ChannelVector],
    soft: &[ProbVector],
    groups: &LabelGroups,
    fg: &[usize],
    weights: &ClusteringWeights,
) -> Result<ClusteringLoss> {
    let mut ops = 0;
    let rows = raw.len();
    let c = raw.first().map_or(0, |r| r.len());

    let centers = centers_counted(soft, groups, &mut ops)?;
    let (diff, center_grads) = diff_counted(&centers, &mut ops);
    let mut soft_grad = spread_center_grads(groups, &center_grads, rows);
    ops += rows as u64;
    if soft_grad.cols() != c {
        soft_grad = RowGrad::zeros(rows, c);
    }
    soft_grad = soft_grad.scaled(weights.diff);

    let (reg, reg_grad) = reg_counted(soft, groups, &mut ops)?;
    soft_grad.add_scaled(&reg_grad, weights.reg);
    ops += rows as u64;

    let (onehot, onehot_grad) = onehot_counted(raw, soft, fg, weights.onehot_norm, &mut ops)?;
    let mut grad_raw = soft_grad.soft_to_raw(soft);
    ops += rows as u64;
    grad_raw.add_scaled(&onehot_grad, weights.onehot);
    ops += rows as u64;

    Ok(ClusteringLoss {
        diff,
        onehot,
        reg,
        total: weights.diff * diff + weights.onehot * onehot + weights.reg * reg,
        grad_raw,
        ops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn cv(v: &[f64]) -> ChannelVector {
        ChannelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_normalize(&[0.0, 0.0, 0.0]).unwrap();
        for p in u.as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = softmax_normalize(&[0.3, -1.2, 2.0]).unwrap();
        let b = softmax_normalize(&[100.3, 98.8, 102.0]).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        // exp(1) / (exp(1) + 2), 1 / (exp(1) + 2)
        let e = softmax_normalize(&[1.0, 0.0, 0.0]).unwrap();
        let expected = [0.576117, 0.211942, 0.211942];
        for (x, y) in e.as_slice().iter().zip(expected) {
            assert!((x - y).abs() < 1e-6);
        }
        // Would overflow without max-subtraction.
        let big = softmax_normalize(&[1000.0, 999.0]).unwrap();
        assert!(big.as_slice().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let err = softmax_normalize(&[0.0, f64::NAN]).unwrap_err();
        assert_eq!(err.category(), crate::Category::InvalidInput);
        assert!(ChannelVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(ChannelVector::new(vec![1.0]).is_err());
    }

    #[test]
    fn center_examples() {
        let p = pv(&[0.3, 0.7]);
        let groups = LabelGroups::from_labels(&[4, 4, 4]);
        let c = cluster_centers(&[p.clone(), p.clone(), p.clone()], &groups).unwrap();
        for (x, y) in c.centers()[0].as_slice().iter().zip(p.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }

        let groups = LabelGroups::from_labels(&[1, 1]);
        let c = cluster_centers(&[pv(&[1.0, 0.0]), pv(&[0.0, 1.0])], &groups).unwrap();
        assert_eq!(c.centers()[0].as_slice(), &[0.5, 0.5]);

        let groups = LabelGroups::from_labels(&[2, 2, 2]);
        let batch = [pv(&[0.2, 0.8]), pv(&[0.4, 0.6]), pv(&[0.6, 0.4])];
        let c = cluster_centers(&batch, &groups).unwrap();
        assert!((c.centers()[0].as_slice()[0] - 0.4).abs() < 1e-15);
        assert!((c.centers()[0].as_slice()[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn empty_group_is_degenerate() {
        let groups = LabelGroups::new(vec![(1, vec![0]), (2, vec![])]).unwrap();
        let err = cluster_centers(&[pv(&[0.5, 0.5])], &groups).unwrap_err();
        assert_eq!(err.category(), crate::Category::DegenerateGroup);
        let groups = LabelGroups::new(vec![(1, vec![3])]).unwrap();
        assert!(cluster_centers(&[pv(&[0.5, 0.5])], &groups).is_err());
    }

    #[test]
    fn overlapping_groups_rejected() {
        assert!(LabelGroups::new(vec![(1, vec![0, 1]), (2, vec![1])]).is_err());
        assert!(LabelGroups::new(vec![(1, vec![0]), (1, vec![1])]).is_err());
    }

    #[test]
    fn diff_examples() {
        let two = ClusterCenters::from_centers(vec![1, 2], vec![pv(&[1.0, 0.0]), pv(&[0.0, 1.0])]).unwrap();
        let (v, _) = diff_loss(&two);
        assert!((v + 0.5 * 2f64.sqrt()).abs() < 1e-12);
        assert!((v + 0.707107).abs() < 1e-6);

        let same = ClusterCenters::from_centers(vec![1, 2], vec![pv(&[0.3, 0.7]), pv(&[0.3, 0.7])]).unwrap();
        let (v, g) = diff_loss(&same);
        assert_eq!(v, 0.0);
        assert!(g.iter().flatten().all(|x| *x == 0.0));

        let three = ClusterCenters::from_centers(
            vec![1, 2, 3],
            vec![pv(&[1.0, 0.0, 0.0]), pv(&[0.0, 1.0, 0.0]), pv(&[0.0, 0.0, 1.0])],
        )
        .unwrap();
        let (v, _) = diff_loss(&three);
        assert!((v + 2f64.sqrt() / 2.0).abs() < 1e-12);

        let one = ClusterCenters::from_centers(vec![1], vec![pv(&[0.3, 0.7])]).unwrap();
        let (v, g) = diff_loss(&one);
        assert_eq!(v, 0.0);
        assert!(g[0].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn onehot_examples() {
        assert_eq!(onehot_project(&pv(&[0.1, 0.7, 0.2])).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(onehot_project(&pv(&[0.5, 0.5])).as_slice(), &[1.0, 0.0]);
        let once = onehot_project(&pv(&[0.2, 0.3, 0.5]));
        assert_eq!(onehot_project(&once), once);

        let raw = [cv(&[1.0, 0.0, 0.0])];
        let soft: Vec<_> = raw.iter().map(|r| r.softmax()).collect();
        let (v, _) = onehot_loss(&raw, &soft, &[0], Norm::L1).unwrap();
        assert_eq!(v, 0.0);

        // target onehot([0.982, 0.018]) = [1, 0]; |5 - 1| + |1 - 0| = 5
        let raw = [cv(&[5.0, 1.0])];
        let soft: Vec<_> = raw.iter().map(|r| r.softmax()).collect();
        assert!((soft[0].as_slice()[0] - 0.982).abs() < 1e-3);
        let (v, g) = onehot_loss(&raw, &soft, &[0], Norm::L1).unwrap();
        assert!((v - 5.0).abs() < 1e-12);
        assert_eq!(g.row(0), &[1.0, 1.0]);

        let (v, g) = onehot_loss(&raw, &soft, &[], Norm::L1).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn reg_examples() {
        let c = 4;
        let uniform = vec![pv(&vec![1.0 / c as f64; c]); 3];
        let (v, _) = reg_loss(&uniform, &LabelGroups::from_labels(&[1, 1, 1])).unwrap();
        assert!(v.abs() < 1e-18);

        let (v, _) = reg_loss(&[pv(&[1.0, 0.0])], &LabelGroups::from_labels(&[5])).unwrap();
        assert!((v - 0.25).abs() < 1e-15);

        // Two clusters: variances 0.25 (c = 2 one-hot) and 0.0 (uniform).
        let batch = [pv(&[1.0, 0.0]), pv(&[0.5, 0.5])];
        let (v, _) = reg_loss(&batch, &LabelGroups::from_labels(&[1, 2])).unwrap();
        assert!((v - 0.125).abs() < 1e-15);

        // Background cluster ignored entirely.
        let (v, g) = reg_loss(&[pv(&[1.0, 0.0])], &LabelGroups::from_labels(&[0])).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn reg_is_mean_over_clusters() {
        // Cluster variances 0.1 and 0.2 -> 0.15. A simplex point has
        // variance at most (c - 1) / c^2 <= 1/4, so c = 2 vectors
        // [a, 1 - a] with (a - 1/2)^2 = var cover both.
        let a1 = 0.5 + 0.1f64.sqrt();
        let a2 = 0.5 + 0.2f64.sqrt();
        let batch = [pv(&[a1, 1.0 - a1]), pv(&[a2, 1.0 - a2])];
        let (v, _) = reg_loss(&batch, &LabelGroups::from_labels(&[1, 2])).unwrap();
        assert!((v - 0.15).abs() < 1e-12);
    }

    #[test]
    fn clustering_zero_weights_and_composition() {
        let raw = vec![cv(&[0.0, 1.0, 0.0]), cv(&[0.0, 0.0, 1.0]), cv(&[1.0, 0.0, 0.0])];
        let soft: Vec<_> = raw.iter().map(|r| r.softmax()).collect();
        let labels = [1, 2, 0];
        let groups = LabelGroups::from_labels(&labels);
        let fg = [0, 1];
        let zero = ClusteringWeights {
            diff: 0.0,
            onehot: 0.0,
            reg: 0.0,
            ..Default::default()
        };
        let out = clustering_loss(&raw, &soft, &groups, &fg, &zero).unwrap();
        assert_eq!(out.total, 0.0);
        assert_eq!(out.grad_raw.max_abs(), 0.0);

        let w = ClusteringWeights::default();
        assert_eq!((w.diff, w.onehot, w.reg), (20.0, 0.5, 10000.0));
        let out = clustering_loss(&raw, &soft, &groups, &fg, &w).unwrap();
        let centers = cluster_centers(&soft, &groups).unwrap();
        let (d, _) = diff_loss(&centers);
        let (o, _) = onehot_loss(&raw, &soft, &fg, Norm::L1).unwrap();
        let (r, _) = reg_loss(&soft, &groups).unwrap();
        assert_eq!(o, 0.0);
        assert!((out.total - (20.0 * d + 0.5 * o + 10000.0 * r)).abs() < 1e-12);
    }

    fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut x = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = x[i];
                x[i] = orig + h;
                let up = f(&x);
                x[i] = orig - h;
                let down = f(&x);
                x[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        diff / scale.max(1e-12)
    }

    #[test]
    fn clustering_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (rows, c) = (9, 4);
            let labels: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..4)).collect();
            let flat: Vec<f64> = (0..rows * c).map(|_| rng.gen_range(0.0..1.0)).collect();
            let groups = LabelGroups::from_labels(&labels);
            let fg: Vec<usize> = (0..rows).filter(|&i| labels[i] != 0).collect();
            let w = ClusteringWeights::default();
            let eval = |x: &[f64]| {
                let raw: Vec<_> = x.chunks(c).map(|r| cv(r)).collect();
                let soft: Vec<_> = raw.iter().map(|r| r.softmax()).collect();
                clustering_loss(&raw, &soft, &groups, &fg, &w).unwrap().total
            };
            let raw: Vec<_> = flat.chunks(c).map(|r| cv(r)).collect();
            let soft: Vec<_> = raw.iter().map(|r| r.softmax()).collect();
            let analytic = clustering_loss(&raw, &soft, &groups, &fg, &w).unwrap();
            let numeric = central_diff(&eval, &flat, 1e-6);
            assert!(rel_err(analytic.grad_raw.as_slice(), &numeric) < 1e-5);
        }
    }
}
