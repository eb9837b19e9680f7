//! Rendering a trained field back into label maps, scoring them, and
//! writing images and meshes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::dataset::{write_png16, write_png8, Dataset};
use crate::error::{Error, Result};
use crate::field::{Aabb, ObjectSdfGrid};
use crate::losses::Mode;
use crate::mesh::TriangleMesh;
use crate::metrics::{ari_views, edge_accuracy, match_scene, miou, pq_rq_scene};
use crate::render::{render_rays, RenderOptions};
use crate::simplex::argmax;
use crate::train::Checkpoint;

/// Rendered maps of one view at `stride` subsampling.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPrediction {
    pub width: usize,
    pub height: usize,
    /// Source pixel index of every predicted pixel.
    pub pixels: Vec<usize>,
    /// Argmax channel of the rendered object opacity.
    pub labels: Vec<u16>,
    pub color: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub normal: Vec<[f64; 3]>,
}

/// Options used for every evaluation render: deterministic bin centers.
pub fn eval_options(train: &RenderOptions) -> RenderOptions {
    RenderOptions {
        stratified: false,
        ..train.clone()
    }
}

/// Label of a rendered opacity vector: its argmax channel.
pub fn label_of(opacity: &[f64]) -> u16 {
    argmax(opacity) as u16
}

pub fn predict_view(
    field: &ObjectSdfGrid,
    camera: &Camera,
    bounds: &Aabb,
    opts: &RenderOptions,
    stride: usize,
) -> Result<ViewPrediction> {
    let k = camera.intrinsics;
    let (w, h) = (k.width.div_ceil(stride), k.height.div_ceil(stride));
    let pixels: Vec<usize> = (0..h)
        .flat_map(|y| (0..w).map(move |x| y * stride * k.width + x * stride))
        .collect();
    let rays = pixels
        .iter()
        .map(|&p| camera.ray_for_pixel(p, bounds))
        .collect::<Result<Vec<_>>>()?;
    let out = render_rays(&rays, field, opts, 0);
    Ok(ViewPrediction {
        width: w,
        height: h,
        labels: out.iter().map(|o| label_of(&o.object_opacity)).collect(),
        color: out.iter().map(|o| o.color).collect(),
        depth: out.iter().map(|o| o.depth).collect(),
        normal: out.iter().map(|o| o.normal).collect(),
        pixels,
    })
}

pub fn predict_all(ckpt: &Checkpoint, dataset: &Dataset) -> Result<Vec<ViewPrediction>> {
    check_compatible(ckpt, dataset)?;
    let opts = eval_options(&ckpt.config.render);
    let bounds = ckpt.field.bounds();
    (0..dataset.views.len())
        .map(|v| predict_view(&ckpt.field, &dataset.camera(v), &bounds, &opts, ckpt.config.eval.stride))
        .collect()
}

fn check_compatible(ckpt: &Checkpoint, dataset: &Dataset) -> Result<()> {
    if dataset.views.is_empty() {
        return Err(Error::Dataset("dataset has no views".into()));
    }
    let bounds = ckpt.field.bounds();
    for (i, v) in dataset.views.iter().enumerate() {
        if !bounds.contains(v.pose.position()) {
            return Err(Error::Dataset(format!("camera {i} lies outside the field bounds")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: Option<Mode>,
    pub views: usize,
    pub pixels: usize,
    pub pq_scene: f64,
    pub rq_scene: f64,
    pub sq_scene: f64,
    pub miou: f64,
    pub ari: f64,
    pub edge_accuracy: f64,
    pub rgb_mae: f64,
}

impl Report {
    /// Flat `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(m) = self.mode {
            let _ = writeln!(s, "mode = {m}");
        }
        for (k, v) in [
            ("views", self.views as f64),
            ("pixels", self.pixels as f64),
            ("pq_scene", self.pq_scene),
            ("rq_scene", self.rq_scene),
            ("sq_scene", self.sq_scene),
            ("miou", self.miou),
            ("ari", self.ari),
            ("edge_accuracy", self.edge_accuracy),
            ("rgb_mae", self.rgb_mae),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Scores predicted maps against ground truth. In instance mode the
/// panoptic scores, ARI and edge accuracy use instance ids; in semantic mode
/// they use classes and mIoU is filled in as well.
pub fn score_maps(mode: Mode, pred: &[Vec<u16>], gt: &[Vec<u16>], width: usize, edge_radius: usize) -> Result<Report> {
    let table = match_scene(pred, gt)?;
    let pan = pq_rq_scene(&table);
    Ok(Report {
        mode: Some(mode),
        views: pred.len(),
        pixels: pred.iter().map(Vec::len).sum(),
        pq_scene: pan.pq,
        rq_scene: pan.rq,
        sq_scene: pan.sq,
        miou: if mode == Mode::Semantic { miou(pred, gt)? } else { 0.0 },
        ari: ari_views(pred, gt)?,
        edge_accuracy: edge_accuracy(pred, gt, width, edge_radius)?,
        rgb_mae: 0.0,
    })
}

/// Renders every view and compares with the dataset's ground truth.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset) -> Result<Report> {
    let preds = predict_all(ckpt, dataset)?;
    evaluate_predictions(ckpt.config.mode, &preds, dataset, ckpt.config.eval.edge_radius)
}

pub fn evaluate_predictions(mode: Mode, preds: &[ViewPrediction], dataset: &Dataset, edge_radius: usize) -> Result<Report> {
    let gt: Vec<Vec<u16>> = preds
        .iter()
        .zip(&dataset.views)
        .map(|(p, v)| {
            let src = match mode {
                Mode::Instance => &v.gt_instance,
                Mode::Semantic => &v.gt_semantic,
            };
            p.pixels.iter().map(|&i| src[i]).collect()
        })
        .collect();
    let pred: Vec<Vec<u16>> = preds.iter().map(|p| p.labels.clone()).collect();
    let mut report = score_maps(mode, &pred, &gt, preds[0].width, edge_radius)?;
    let (mut err, mut n) = (0.0, 0usize);
    for (p, v) in preds.iter().zip(&dataset.views) {
        for (c, &i) in p.color.iter().zip(&p.pixels) {
            let t = v.color_at(i);
            err += (0..3).map(|j| (c[j] - t[j]).abs()).sum::<f64>();
            n += 3;
        }
    }
    report.rgb_mae = err / n.max(1) as f64;
    Ok(report)
}

/// Fixed palette: black background, then well-spread hues.
pub fn palette() -> Vec<[u8; 3]> {
    (0..256)
        .map(|k| {
            if k == 0 {
                return [0, 0, 0];
            }
            let h = (k as f64 * 0.618_033_988_749_895).fract() * 6.0;
            let v = if k % 2 == 0 { 0.75 } else { 1.0 };
            let s = if (k / 2) % 2 == 0 { 0.85 } else { 0.6 };
            let f = h.fract();
            let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
            let rgb = match h as usize {
                0 => [v, t, p],
                1 => [q, v, p],
                2 => [p, v, t],
                3 => [p, q, v],
                4 => [t, p, v],
                _ => [v, p, q],
            };
            rgb.map(|x| (x * 255.0).round() as u8)
        })
        .collect()
}

fn write_indexed(path: &Path, w: usize, h: usize, labels: &[u16]) -> Result<()> {
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette().concat());
    let mut writer = enc.write_header().map_err(fmt)?;
    let data: Vec<u8> = labels.iter().map(|&l| l.min(255) as u8).collect();
    writer.write_image_data(&data).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

/// Writes `rgb/`, `depth/` (16-bit, scaled by the bounds diagonal),
/// `normal/` and `labels/` (indexed color) for every view.
pub fn render_views(ckpt: &Checkpoint, dataset: &Dataset, out: &Path) -> Result<Vec<ViewPrediction>> {
    let preds = predict_all(ckpt, dataset)?;
    for sub in ["rgb", "depth", "normal", "labels"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let e = ckpt.field.bounds().extent();
    let max_depth = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    let to8 = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    for (i, p) in preds.iter().enumerate() {
        let name = format!("{i:04}.png");
        let rgb: Vec<u8> = p.color.iter().flat_map(|c| c.map(to8)).collect();
        write_png8(&out.join("rgb").join(&name), p.width, p.height, png::ColorType::Rgb, &rgb)?;
        let depth: Vec<u16> = p
            .depth
            .iter()
            .map(|d| ((d / max_depth).clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        write_png16(&out.join("depth").join(&name), p.width, p.height, &depth)?;
        let normal: Vec<u8> = p.normal.iter().flat_map(|n| n.map(|x| to8(0.5 * x + 0.5))).collect();
        write_png8(&out.join("normal").join(&name), p.width, p.height, png::ColorType::Rgb, &normal)?;
        write_indexed(&out.join("labels").join(&name), p.width, p.height, &p.labels)?;
    }
    Ok(preds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshEntry {
    pub channel: usize,
    /// File name, absent for an empty channel.
    pub file: Option<String>,
    pub vertices: usize,
    pub triangles: usize,
}

/// Surface of one channel, limited to where that channel is the nearest
/// object: `max(d_i, d_i - min_{j != i} d_j)`. Regions a channel holds only
/// inside another object's interior therefore produce no surface.
pub fn owned_surface(field: &ObjectSdfGrid, channel: usize) -> Result<TriangleMesh> {
    if channel >= field.channels() {
        return Err(Error::InvalidInput(format!("channel {channel} out of range")));
    }
    let values: Vec<f64> = (0..field.node_count())
        .map(|n| {
            let row = field.node_values(n);
            let own = row[channel];
            let other = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != channel)
                .map(|(_, &v)| v)
                .fold(f64::INFINITY, f64::min);
            own.max(own - other)
        })
        .collect();
    Ok(crate::mesh::marching_tetrahedra(
        &values,
        field.resolution(),
        field.bounds().min,
        field.spacing(),
        0.0,
    ))
}

/// Writes `channel_NN.obj` for each non-empty foreground channel and a
/// `manifest.json` listing every channel.
pub fn export_meshes(ckpt: &Checkpoint, out: &Path) -> Result<Vec<MeshEntry>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::new();
    for ch in 1..ckpt.field.channels() {
        let mesh = owned_surface(&ckpt.field, ch)?;
        let file = if mesh.is_empty() {
            None
        } else {
            let name = format!("channel_{ch:02}.obj");
            mesh.write_obj(&out.join(&name))?;
            Some(name)
        };
        entries.push(MeshEntry {
            channel: ch,
            file,
            vertices: mesh.vertices.len(),
            triangles: mesh.triangles.len(),
        });
    }
    let json = serde_json::to_string_pretty(&entries).map_err(|e| Error::Format(e.to_string()))?;
    let path = out.join("manifest.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}
