//! Posed multi-view datasets and their directory format.
//!
//! ```text
//! images/NNNN.png            8-bit RGB
//! labels_instance/NNNN.png   16-bit gray, 0 = background
//! labels_semantic/NNNN.png   16-bit gray
//! confidence/NNNN.png        8-bit gray, 255 = 1.0
//! depth/NNNN.pfm             ray distance to the first surface
//! normal/NNNN.pfm            world-space unit normal
//! gt_instance/NNNN.png       16-bit gray (synthetic data only)
//! gt_semantic/NNNN.png       16-bit gray (synthetic data only)
//! poses.txt                  one row-major camera-to-world 4x4 per line
//! intrinsics.txt             fx fy cx cy width height
//! meta.json
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Intrinsics, Pose};
use crate::error::{Error, Result};
use crate::synth::{CorruptionSpec, SceneSpec};

/// Channel count suggested to training when the manifest does not say.
pub const DEFAULT_CHANNELS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    /// Suggested number of object channels.
    pub channels: usize,
    /// Semantic class names; index 0 is background.
    pub classes: Vec<String>,
    pub scene_seed: u64,
    pub corruption: Option<CorruptionSpec>,
    pub scene: Option<SceneSpec>,
}

impl Meta {
    pub fn from_spec(spec: &SceneSpec) -> Self {
        let objects = spec.primitives.len() + 1;
        Meta {
            channels: DEFAULT_CHANNELS.max(objects),
            classes: std::iter::once("background".to_string())
                .chain(spec.class_names.iter().cloned())
                .collect(),
            scene_seed: spec.seed,
            corruption: None,
            scene: Some(spec.clone()),
        }
    }
}

/// One posed image with its label and geometry maps, all row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub pose: Pose,
    pub rgb: Vec<u8>,
    pub depth: Vec<f32>,
    pub normal: Vec<f32>,
    pub instance: Vec<u16>,
    pub semantic: Vec<u16>,
    pub confidence: Vec<u8>,
    pub gt_instance: Vec<u16>,
    pub gt_semantic: Vec<u16>,
}

impl View {
    pub fn blank(pose: Pose, pixels: usize) -> Self {
        View {
            pose,
            rgb: vec![0; 3 * pixels],
            depth: vec![0.0; pixels],
            normal: vec![0.0; 3 * pixels],
            instance: vec![0; pixels],
            semantic: vec![0; pixels],
            confidence: vec![255; pixels],
            gt_instance: vec![0; pixels],
            gt_semantic: vec![0; pixels],
        }
    }

    pub fn confidence_at(&self, pixel: usize) -> f64 {
        self.confidence[pixel] as f64 / 255.0
    }

    pub fn color_at(&self, pixel: usize) -> [f64; 3] {
        let c = &self.rgb[3 * pixel..3 * pixel + 3];
        [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]
    }

    pub fn normal_at(&self, pixel: usize) -> [f64; 3] {
        let n = &self.normal[3 * pixel..3 * pixel + 3];
        [n[0] as f64, n[1] as f64, n[2] as f64]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: Meta,
    pub intrinsics: Intrinsics,
    pub views: Vec<View>,
}

impl Dataset {
    pub fn camera(&self, view: usize) -> Camera {
        Camera {
            intrinsics: self.intrinsics,
            pose: self.views[view].pose,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.intrinsics.pixel_count()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        for sub in ["images", "labels_instance", "labels_semantic", "confidence", "depth", "normal", "gt_instance", "gt_semantic"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let mut poses = String::new();
        for (i, v) in self.views.iter().enumerate() {
            let name = format!("{i:04}");
            write_png8(&dir.join(format!("images/{name}.png")), w, h, png::ColorType::Rgb, &v.rgb)?;
            write_png16(&dir.join(format!("labels_instance/{name}.png")), w, h, &v.instance)?;
            write_png16(&dir.join(format!("labels_semantic/{name}.png")), w, h, &v.semantic)?;
            write_png8(&dir.join(format!("confidence/{name}.png")), w, h, png::ColorType::Grayscale, &v.confidence)?;
            write_pfm(&dir.join(format!("depth/{name}.pfm")), w, h, 1, &v.depth)?;
            write_pfm(&dir.join(format!("normal/{name}.pfm")), w, h, 3, &v.normal)?;
            write_png16(&dir.join(format!("gt_instance/{name}.png")), w, h, &v.gt_instance)?;
            write_png16(&dir.join(format!("gt_semantic/{name}.png")), w, h, &v.gt_semantic)?;
            let row: Vec<String> = v.pose.0.iter().flatten().map(|x| format!("{x}")).collect();
            poses.push_str(&row.join(" "));
            poses.push('\n');
        }
        write_text(&dir.join("poses.txt"), &poses)?;
        let k = &self.intrinsics;
        write_text(
            &dir.join("intrinsics.txt"),
            &format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height),
        )?;
        let json = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        write_text(&dir.join("meta.json"), &json)
    }

    /// Loads a dataset directory. Ground-truth maps are optional; when absent
    /// they are left as zeros.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Dataset(format!("{} is not a directory", dir.display())));
        }
        let meta: Meta = serde_json::from_str(&read_text(&dir.join("meta.json"))?)
            .map_err(|e| Error::Dataset(format!("meta.json: {e}")))?;
        let intrinsics = parse_intrinsics(&read_text(&dir.join("intrinsics.txt"))?)?;
        let poses = parse_poses(&read_text(&dir.join("poses.txt"))?)?;
        let (w, h) = (intrinsics.width, intrinsics.height);
        let mut views = Vec::with_capacity(poses.len());
        for (i, pose) in poses.into_iter().enumerate() {
            let name = format!("{i:04}");
            let png16 = |sub: &str| read_png16(&dir.join(format!("{sub}/{name}.png")), w, h);
            let optional16 = |sub: &str| {
                let p = dir.join(format!("{sub}/{name}.png"));
                if p.exists() {
                    read_png16(&p, w, h)
                } else {
                    Ok(vec![0; w * h])
                }
            };
            views.push(View {
                pose,
                rgb: read_png8(&dir.join(format!("images/{name}.png")), w, h, png::ColorType::Rgb)?,
                depth: read_pfm(&dir.join(format!("depth/{name}.pfm")), w, h, 1)?,
                normal: read_pfm(&dir.join(format!("normal/{name}.pfm")), w, h, 3)?,
                instance: png16("labels_instance")?,
                semantic: png16("labels_semantic")?,
                confidence: read_png8(&dir.join(format!("confidence/{name}.png")), w, h, png::ColorType::Grayscale)?,
                gt_instance: optional16("gt_instance")?,
                gt_semantic: optional16("gt_semantic")?,
            });
        }
        if views.is_empty() {
            return Err(Error::Dataset("poses.txt lists no views".into()));
        }
        Ok(Dataset { meta, intrinsics, views })
    }
}

fn parse_intrinsics(text: &str) -> Result<Intrinsics> {
    let f: Vec<&str> = text.split_whitespace().collect();
    let bad = || Error::Dataset(format!("intrinsics.txt: expected `fx fy cx cy width height`, got {text:?}"));
    if f.len() != 6 {
        return Err(bad());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
    let k = Intrinsics {
        fx: num(f[0])?,
        fy: num(f[1])?,
        cx: num(f[2])?,
        cy: num(f[3])?,
        width: int(f[4])?,
        height: int(f[5])?,
    };
    if k.width == 0 || k.height == 0 || !(k.fx > 0.0 && k.fy > 0.0) {
        return Err(bad());
    }
    Ok(k)
}

fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Dataset(format!("poses.txt line {}: {e}", i + 1)))?;
            if v.len() != 16 {
                return Err(Error::Dataset(format!("poses.txt line {}: expected 16 numbers", i + 1)));
            }
            let mut m = [[0.0; 4]; 4];
            for (j, x) in v.into_iter().enumerate() {
                m[j / 4][j % 4] = x;
            }
            Ok(Pose(m))
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn encode(path: &Path, w: usize, h: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut enc = png::Encoder::new(create(path)?, w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(data).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

pub(crate) fn write_png8(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    encode(path, w, h, color, png::BitDepth::Eight, data)
}

pub(crate) fn write_png16(path: &Path, w: usize, h: usize, data: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode(path, w, h, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

fn decode(path: &Path, w: usize, h: usize, color: png::ColorType, depth: png::BitDepth) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let fmt = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(fmt)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    if info.width as usize != w || info.height as usize != h {
        return Err(Error::Resolution(format!(
            "{} is {}x{}, expected {w}x{h}",
            path.display(),
            info.width,
            info.height
        )));
    }
    if info.color_type != color || info.bit_depth != depth {
        return Err(Error::Format(format!(
            "{}: expected {color:?} at {depth:?}, found {:?} at {:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok(buf)
}

fn read_png8(path: &Path, w: usize, h: usize, color: png::ColorType) -> Result<Vec<u8>> {
    decode(path, w, h, color, png::BitDepth::Eight)
}

fn read_png16(path: &Path, w: usize, h: usize) -> Result<Vec<u16>> {
    let bytes = decode(path, w, h, png::ColorType::Grayscale, png::BitDepth::Sixteen)?;
    Ok(bytes.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect())
}

/// Portable float map, little endian, rows stored bottom to top.
pub(crate) fn write_pfm(path: &Path, w: usize, h: usize, channels: usize, data: &[f32]) -> Result<()> {
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let mut out = create(path)?;
    let mut bytes = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    for row in (0..h).rev() {
        for v in &data[row * w * channels..(row + 1) * w * channels] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&bytes).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

fn read_pfm(path: &Path, w: usize, h: usize, channels: usize) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
    // Header tokens: tag, width, height, scale.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let c = match fields[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("not a PFM file")),
    };
    if c != channels {
        return Err(bad(&format!("expected {channels} channels, found {c}")));
    }
    let (fw, fh): (usize, usize) = match (fields[1].parse(), fields[2].parse()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(bad("bad size")),
    };
    if (fw, fh) != (w, h) {
        return Err(Error::Resolution(format!("{} is {fw}x{fh}, expected {w}x{h}", path.display())));
    }
    let scale: f32 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let n = w * h * c;
    if bytes.len() < pos + 4 * n {
        return Err(bad("truncated data"));
    }
    let mut out = vec![0f32; n];
    for (i, chunk) in bytes[pos..pos + 4 * n].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (i / (w * c), i % (w * c));
        out[(h - 1 - row) * w * c + col] = v;
    }
    Ok(out)
}
