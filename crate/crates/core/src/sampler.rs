//! Training-frame scheduling and label-comprehensive ray sampling.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::losses::Mode;
use crate::render::Ray;

/// A camera ray together with the 2D supervision at its pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRay {
    pub view: usize,
    pub pixel: usize,
    pub ray: Ray,
    pub instance: u16,
    pub semantic: u16,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameInfo {
    /// Sorted unique labels, background included when present.
    pub labels: Vec<u16>,
    /// Pixel indices of each label, parallel to `labels`.
    pub pixels: Vec<Vec<u32>>,
    pub keyframe: bool,
    /// No non-background label.
    pub empty: bool,
}

impl FrameInfo {
    pub fn counts(&self) -> Vec<usize> {
        self.pixels.iter().map(Vec::len).collect()
    }

    /// Number of distinct non-background labels.
    pub fn object_labels(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameIndex {
    /// Which label maps drive grouping: instance or semantic.
    pub mode: Mode,
    pub frames: Vec<FrameInfo>,
    /// Keyframe view ids, most labels first.
    pub keyframes: Vec<usize>,
}

impl FrameIndex {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn labels_of(dataset: &Dataset, view: usize, mode: Mode) -> &[u16] {
    match mode {
        Mode::Instance => &dataset.views[view].instance,
        Mode::Semantic => &dataset.views[view].semantic,
    }
}

/// Indexes the label maps used by `mode`. Keyframes are the top tenth of
/// non-empty views (rounded up) by number of distinct object labels, ties
/// broken by lower view id.
pub fn build_frame_index(dataset: &Dataset, mode: Mode) -> FrameIndex {
    let frames: Vec<FrameInfo> = (0..dataset.views.len())
        .map(|v| {
            let map = labels_of(dataset, v, mode);
            let mut labels: Vec<u16> = map.to_vec();
            labels.sort_unstable();
            labels.dedup();
            let mut pixels = vec![Vec::new(); labels.len()];
            for (p, l) in map.iter().enumerate() {
                let k = labels.binary_search(l).expect("label collected above");
                pixels[k].push(p as u32);
            }
            let empty = labels.iter().all(|&l| l == 0);
            FrameInfo {
                labels,
                pixels,
                keyframe: false,
                empty,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..frames.len()).filter(|&v| !frames[v].empty).collect();
    order.sort_by_key(|&v| (std::cmp::Reverse(frames[v].object_labels()), v));
    order.truncate(frames.len().div_ceil(10));
    let mut index = FrameIndex { mode, frames, keyframes: order };
    for &k in &index.keyframes {
        index.frames[k].keyframe = true;
    }
    index
}

/// Samples `n_rays` pixels of one view: one uniformly chosen pixel of every
/// label, then the rest uniformly (with replacement) over the frame.
pub fn sample_view(
    dataset: &Dataset,
    index: &FrameIndex,
    view: usize,
    n_rays: usize,
    bounds: &Aabb,
    rng: &mut impl Rng,
) -> Result<Vec<LabeledRay>> {
    let frame = index
        .frames
        .get(view)
        .ok_or_else(|| Error::InvalidInput(format!("view {view} out of range")))?;
    if frame.labels.len() > n_rays {
        return Err(Error::InvalidInput(format!(
            "view {view} has {} labels but only {n_rays} rays",
            frame.labels.len()
        )));
    }
    let n_pixels = dataset.pixel_count();
    let mut pixels: Vec<usize> = frame
        .pixels
        .iter()
        .map(|set| set[rng.gen_range(0..set.len())] as usize)
        .collect();
    pixels.extend((frame.labels.len()..n_rays).map(|_| rng.gen_range(0..n_pixels)));
    let camera = dataset.camera(view);
    let v = &dataset.views[view];
    pixels
        .into_iter()
        .map(|pixel| {
            Ok(LabeledRay {
                view,
                pixel,
                ray: camera.ray_for_pixel(pixel, bounds)?,
                instance: v.instance[pixel],
                semantic: v.semantic[pixel],
                confidence: v.confidence_at(pixel),
            })
        })
        .collect()
}

/// Seeded stream for `(seed, step)`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Round-robin over views; an empty view's slot goes to a keyframe drawn
/// uniformly with the `(seed, step)` stream.
pub fn next_training_frame(index: &FrameIndex, step: u64, seed: u64) -> Result<usize> {
    if index.keyframes.is_empty() {
        return Err(Error::Dataset("every frame is empty of object labels".into()));
    }
    let v = (step % index.frames.len() as u64) as usize;
    if !index.frames[v].empty {
        return Ok(v);
    }
    let mut rng = step_rng(seed ^ 0x6b65_7966_7261_6d65, step);
    Ok(index.keyframes[rng.gen_range(0..index.keyframes.len())])
}

/// Rays from `n_extra_views` distinct views other than `current`, chosen
/// uniformly; all other views are used when there are not enough.
pub fn sample_cross_view_batch(
    dataset: &Dataset,
    index: &FrameIndex,
    current: usize,
    n_extra_views: usize,
    n_rays_per_extra: usize,
    bounds: &Aabb,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<LabeledRay>>> {
    let others: Vec<usize> = (0..index.frames.len()).filter(|&v| v != current).collect();
    let k = n_extra_views.min(others.len());
    let mut chosen: Vec<usize> = sample_indices(rng, others.len(), k).into_iter().map(|i| others[i]).collect();
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|v| sample_view(dataset, index, v, n_rays_per_extra, bounds, rng))
        .collect()
}
