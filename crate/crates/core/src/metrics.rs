//! Scene-level segmentation metrics over sets of label maps.
//!
//! Maps are flat row-major `u16` slices, one per view; label 0 is
//! background. Prediction ids are arbitrary: every score here is invariant
//! to renaming them.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};

/// Scene-wide one-to-one matching between predicted and ground-truth ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchTable {
    /// `(pred, gt, iou)` in matching order.
    pub pairs: Vec<(u16, u16, f64)>,
    pub false_positives: Vec<u16>,
    pub false_negatives: Vec<u16>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Panoptic {
    pub pq: f64,
    pub rq: f64,
    pub sq: f64,
}

fn check_shapes<P: AsRef<[u16]>, G: AsRef<[u16]>>(pred: &[P], gt: &[G]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Resolution(format!("{} predicted views vs {} ground-truth views", pred.len(), gt.len())));
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.as_ref().len() != g.as_ref().len() {
            return Err(Error::Resolution(format!(
                "view {i}: {} predicted pixels vs {} ground-truth pixels",
                p.as_ref().len(),
                g.as_ref().len()
            )));
        }
    }
    Ok(())
}

/// Joint pixel counts over all views.
struct Contingency {
    joint: HashMap<(u16, u16), u64>,
    pred: BTreeMap<u16, u64>,
    gt: BTreeMap<u16, u64>,
    total: u64,
}

impl Contingency {
    fn new<P: AsRef<[u16]>, G: AsRef<[u16]>>(pred: &[P], gt: &[G]) -> Result<Self> {
        check_shapes(pred, gt)?;
        let mut c = Contingency {
            joint: HashMap::new(),
            pred: BTreeMap::new(),
            gt: BTreeMap::new(),
            total: 0,
        };
        for (p, g) in pred.iter().zip(gt) {
            for (&a, &b) in p.as_ref().iter().zip(g.as_ref()) {
                *c.joint.entry((a, b)).or_default() += 1;
                *c.pred.entry(a).or_default() += 1;
                *c.gt.entry(b).or_default() += 1;
                c.total += 1;
            }
        }
        Ok(c)
    }
}

/// Greedy matching by descending scene-wide IoU, keeping pairs above 0.5.
/// Label 0 takes part as a single stuff segment that can only match 0.
pub fn match_scene<P: AsRef<[u16]>, G: AsRef<[u16]>>(pred: &[P], gt: &[G]) -> Result<MatchTable> {
    let c = Contingency::new(pred, gt)?;
    let mut candidates: Vec<(u16, u16, f64)> = c
        .joint
        .iter()
        .filter(|(&(p, g), _)| (p == 0) == (g == 0))
        .map(|(&(p, g), &inter)| {
            let union = c.pred[&p] + c.gt[&g] - inter;
            (p, g, inter as f64 / union as f64)
        })
        .filter(|&(_, _, iou)| iou > 0.5)
        .collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let (mut used_p, mut used_g) = (BTreeSet::new(), BTreeSet::new());
    let mut table = MatchTable::default();
    for (p, g, iou) in candidates {
        if !used_p.contains(&p) && !used_g.contains(&g) {
            used_p.insert(p);
            used_g.insert(g);
            table.pairs.push((p, g, iou));
        }
    }
    table.false_positives = c.pred.keys().copied().filter(|p| !used_p.contains(p)).collect();
    table.false_negatives = c.gt.keys().copied().filter(|g| !used_g.contains(g)).collect();
    Ok(table)
}

pub fn pq_rq_scene(table: &MatchTable) -> Panoptic {
    let tp = table.pairs.len() as f64;
    let denom = tp + 0.5 * (table.false_positives.len() + table.false_negatives.len()) as f64;
    if denom == 0.0 {
        return Panoptic { pq: 0.0, rq: 0.0, sq: 0.0 };
    }
    // An empty f64 sum is -0.0; report it as 0.
    let pq = (table.pairs.iter().map(|p| p.2).sum::<f64>() + 0.0) / denom;
    let rq = tp / denom;
    let sq = if rq > 0.0 { pq / rq } else { 0.0 };
    Panoptic { pq, rq, sq }
}

/// Mean over the classes present in the ground truth (background
/// included) of the per-class IoU accumulated over all views.
pub fn miou<P: AsRef<[u16]>, G: AsRef<[u16]>>(pred: &[P], gt: &[G]) -> Result<f64> {
    let c = Contingency::new(pred, gt)?;
    if c.gt.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = c
        .gt
        .iter()
        .map(|(&k, &g)| {
            let inter = c.joint.get(&(k, k)).copied().unwrap_or(0);
            let p = c.pred.get(&k).copied().unwrap_or(0);
            inter as f64 / (g + p - inter) as f64
        })
        .sum();
    Ok(total / c.gt.len() as f64)
}

/// Pixels of `mask` with a 4-neighbor outside it. The image border does not
/// count as an edge.
pub fn boundary(mask: &[bool], width: usize) -> Vec<bool> {
    let height = mask.len() / width;
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            out[i] = (x > 0 && !mask[i - 1])
                || (x + 1 < width && !mask[i + 1])
                || (y > 0 && !mask[i - width])
                || (y + 1 < height && !mask[i + width]);
        }
    }
    out
}

/// Dilation by a Euclidean disk of the given radius.
pub fn dilate(mask: &[bool], width: usize, radius: usize) -> Vec<bool> {
    let height = mask.len() / width;
    let r = radius as isize;
    let mut out = vec![false; mask.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            if !mask[(y * width as isize + x) as usize] {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if dx * dx + dy * dy <= r * r && nx >= 0 && ny >= 0 && nx < width as isize && ny < height as isize {
                        out[(ny * width as isize + nx) as usize] = true;
                    }
                }
            }
        }
    }
    out
}

fn dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Edge accuracy: in each view every non-background ground-truth label is
/// paired with the predicted label overlapping it most (the best-scoring
/// one on ties, so ids never matter); their boundaries are dilated by `radius` and compared by Dice.
/// The result averages over all (view, label) pairs whose ground-truth
/// boundary is non-empty, and is 1 when there are none.
pub fn edge_accuracy<P: AsRef<[u16]>, G: AsRef<[u16]>>(pred: &[P], gt: &[G], width: usize, radius: usize) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        let (p, g) = (p.as_ref(), g.as_ref());
        if width == 0 || g.len() % width != 0 {
            return Err(Error::Resolution(format!("{} pixels is not a multiple of width {width}", g.len())));
        }
        let mut overlap: BTreeMap<u16, BTreeMap<u16, usize>> = BTreeMap::new();
        for (&a, &b) in p.iter().zip(g) {
            if b != 0 {
                *overlap.entry(b).or_default().entry(a).or_default() += 1;
            }
        }
        for (&label, counts) in &overlap {
            let gt_edge = boundary(&g.iter().map(|&x| x == label).collect::<Vec<_>>(), width);
            if !gt_edge.contains(&true) {
                continue;
            }
            let gt_band = dilate(&gt_edge, width, radius);
            let most = counts.values().copied().max().expect("non-empty");
            let score = counts
                .iter()
                .filter(|(_, &n)| n == most)
                .map(|(&id, _)| {
                    let pred_edge = boundary(&p.iter().map(|&x| x == id).collect::<Vec<_>>(), width);
                    dice(&gt_band, &dilate(&pred_edge, width, radius))
                })
                .fold(0.0, f64::max);
            sum += score;
            count += 1;
        }
    }
    Ok(if count == 0 { 1.0 } else { sum / count as f64 })
}

fn pairs(n: u64) -> f64 {
    n as f64 * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index over all pixels of all views, by pair counting.
/// Two identical partitions score 1 even when the chance correction is
/// degenerate (for example a single cluster).
pub fn ari<P: AsRef<[u16]>, G: AsRef<[u16]>>(pred: P, gt: G) -> Result<f64> {
    ari_views(&[pred], &[gt])
}

pub fn ari_views<P: AsRef<[u16]>, G: AsRef<[u16]>>(pred: &[P], gt: &[G]) -> Result<f64> {
    let c = Contingency::new(pred, gt)?;
    if c.total < 2 {
        return Ok(1.0);
    }
    let index: f64 = c.joint.values().map(|&n| pairs(n)).sum();
    let a: f64 = c.pred.values().map(|&n| pairs(n)).sum();
    let b: f64 = c.gt.values().map(|&n| pairs(n)).sum();
    let expected = a * b / pairs(c.total);
    let max = 0.5 * (a + b);
    if (max - expected).abs() < 1e-12 * max.max(1.0) {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
