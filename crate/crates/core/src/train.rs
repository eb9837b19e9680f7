//! Training configuration, the optimization loop and checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::field::{init_field, Aabb, FieldConfig, GridGrad, ObjectSdfGrid, Point3};
use crate::losses::{
    cross_view_loss, fg_bg_loss, gt_opacity_loss, reconstruction_loss, semantic_loss, total_loss, Components,
    LossWeights, Mode, RayTarget, Term, ViewClusters,
};
use crate::optim::{Adam, AdamConfig};
use crate::render::{render_batch, RenderAdjoint, RenderOptions};
use crate::sampler::{
    build_frame_index, next_training_frame, sample_cross_view_batch, sample_view, step_rng, FrameIndex, LabeledRay,
};
use crate::simplex::{clustering_loss, ChannelVector, LabelGroups, ProbVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Final resolution.
    pub resolution: usize,
    /// Steps at which the grid doubles in resolution. Training starts at
    /// `resolution / 2^n` (at least 8) for `n` listed steps.
    pub upsample_steps: Vec<u64>,
    pub half_extent: f64,
    pub background_radius: f64,
    pub beta: f64,
    /// Lower bound on the learned beta; 0 leaves it free. A beta far below
    /// the sample spacing makes the quadrature alias.
    pub beta_min: f64,
    pub radius_jitter: f64,
    pub center_jitter: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let f = FieldConfig::default();
        GridConfig {
            resolution: f.resolution,
            upsample_steps: vec![500, 1500],
            half_extent: f.half_extent,
            background_radius: f.background_radius,
            beta: f.beta,
            beta_min: 0.003,
            // Wider spread than the field default so each object is
            // covered by a distinct channel early on.
            radius_jitter: 0.05,
            center_jitter: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossViewConfig {
    pub extra_views: usize,
    pub rays_per_view: usize,
}

impl Default for CrossViewConfig {
    fn default() -> Self {
        CrossViewConfig {
            extra_views: 2,
            rays_per_view: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate every `stride`-th pixel along each image axis.
    pub stride: usize,
    pub edge_radius: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { stride: 1, edge_radius: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Dataset directory.
    pub data: PathBuf,
    /// Output directory for the checkpoint and loss log.
    pub out: PathBuf,
    /// One epoch is one step per view.
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<u64>,
    pub rays_per_batch: usize,
    /// Steps during which only reconstruction and eikonal gradients are
    /// applied; the clustering terms are still evaluated and logged.
    pub warmup_steps: u64,
    /// When set, the reg weight falls linearly to zero over this many steps
    /// after warm-up.
    pub reg_decay_steps: Option<u64>,
    /// Object channels including background; 0 picks 16 for instance mode
    /// and classes + 1 for semantic mode.
    pub channels: usize,
    pub seed: u64,
    pub grid: GridConfig,
    pub render: RenderOptions,
    pub optimizer: AdamConfig,
    pub weights: LossWeights,
    pub cross_view: CrossViewConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Instance,
            data: PathBuf::from("data"),
            out: PathBuf::from("run"),
            epochs: 200,
            steps: None,
            rays_per_batch: 1024,
            warmup_steps: 200,
            reg_decay_steps: Some(400),
            channels: 0,
            seed: 0,
            grid: GridConfig::default(),
            render: RenderOptions::default(),
            optimizer: AdamConfig::default(),
            weights: LossWeights::default(),
            cross_view: CrossViewConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Parses and validates a config.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths are taken from the config file's directory.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 {
            return Err(Error::Config("rays_per_batch must be positive".into()));
        }
        if self.render.n_samples == 0 {
            return Err(Error::Config("render.n_samples must be positive".into()));
        }
        if self.grid.resolution < 8 {
            return Err(Error::Config("grid.resolution must be at least 8".into()));
        }
        if self.grid.upsample_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("grid.upsample_steps must be increasing".into()));
        }
        if !(self.grid.beta > 0.0 && self.grid.half_extent > 0.0) {
            return Err(Error::Config("grid.beta and grid.half_extent must be positive".into()));
        }
        if !(self.grid.beta_min >= 0.0 && self.grid.beta_min < self.grid.beta) {
            return Err(Error::Config("grid.beta_min must lie in [0, grid.beta)".into()));
        }
        if self.eval.stride == 0 {
            return Err(Error::Config("eval.stride must be positive".into()));
        }
        self.weights.validate()?;
        self.optimizer.validate()
    }

    pub fn total_steps(&self, views: usize) -> u64 {
        self.steps.unwrap_or((self.epochs * views) as u64)
    }

    /// Multiplier on the reg weight at `step`.
    pub fn reg_scale(&self, step: u64) -> f64 {
        match self.reg_decay_steps {
            Some(n) if step >= self.warmup_steps => {
                1.0 - ((step - self.warmup_steps) as f64 / n.max(1) as f64).min(1.0)
            }
            _ => 1.0,
        }
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::cube(self.grid.half_extent)
    }

    /// Channel count for a dataset, checked against its labels.
    pub fn resolve_channels(&self, dataset: &Dataset, index: &FrameIndex) -> Result<usize> {
        let c = match (self.channels, self.mode) {
            (0, Mode::Instance) => 16,
            (0, Mode::Semantic) => dataset.meta.classes.len().max(2),
            (c, _) => c,
        };
        if c < 2 {
            return Err(Error::Config("need at least 2 channels".into()));
        }
        for (v, f) in index.frames.iter().enumerate() {
            let objects = f.object_labels();
            if objects > c - 1 {
                return Err(Error::Config(format!(
                    "channel overflow: view {v} has {objects} labels but only {} object channels",
                    c - 1
                )));
            }
            if self.mode == Mode::Semantic {
                if let Some(&l) = f.labels.iter().find(|&&l| l as usize >= c) {
                    return Err(Error::Config(format!(
                        "channel overflow: semantic class {l} in view {v} needs more than {c} channels"
                    )));
                }
            }
        }
        Ok(c)
    }

    /// Grid resolution after `stage` upsampling steps.
    pub fn resolution_at(&self, stage: usize) -> usize {
        let n = self.grid.upsample_steps.len().saturating_sub(stage).min(16);
        self.grid.resolution.div_ceil(1 << n).max(8)
    }

    /// Initialization of the starting (coarsest) grid.
    pub fn field_config(&self, channels: usize) -> FieldConfig {
        FieldConfig {
            channels,
            resolution: self.resolution_at(0),
            half_extent: self.grid.half_extent,
            background_radius: self.grid.background_radius,
            beta: self.grid.beta,
            seed: self.seed,
            radius_jitter: self.grid.radius_jitter,
            center_jitter: self.grid.center_jitter,
        }
    }
}

/// Every loss component of one step, unweighted except `total`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub view: usize,
    pub total: f64,
    pub color: f64,
    pub depth: f64,
    pub normal: f64,
    pub eikonal: f64,
    pub diff: f64,
    pub onehot: f64,
    pub reg: f64,
    pub fg_bg: f64,
    pub semantic: f64,
    pub cross_view: f64,
    pub gt_opacity: f64,
    pub beta: f64,
}

impl StepLog {
    pub const HEADER: &'static str =
        "step,view,total,color,depth,normal,eikonal,diff,onehot,reg,fg_bg,semantic,cross_view,gt_opacity,beta";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.view,
            self.total,
            self.color,
            self.depth,
            self.normal,
            self.eikonal,
            self.diff,
            self.onehot,
            self.reg,
            self.fg_bg,
            self.semantic,
            self.cross_view,
            self.gt_opacity,
            self.beta
        )
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub dataset: Dataset,
    pub index: FrameIndex,
    pub field: ObjectSdfGrid,
    pub adam: Adam,
    pub step: u64,
    grad: GridGrad,
}

fn groups_of(labels: impl Iterator<Item = u16>) -> LabelGroups {
    LabelGroups::from_labels(&labels.map(u32::from).collect::<Vec<_>>())
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let index = build_frame_index(&dataset, config.mode);
        let channels = config.resolve_channels(&dataset, &index)?;
        let field = init_field(&config.field_config(channels))?;
        let adam = Adam::new(config.optimizer.clone(), &field);
        let grad = GridGrad::new(&field);
        Ok(Trainer {
            config,
            dataset,
            index,
            field,
            adam,
            step: 0,
            grad,
        })
    }

    /// Resumes from a checkpoint; the dataset must be the one it was
    /// trained on.
    pub fn resume(checkpoint: Checkpoint, dataset: Dataset) -> Result<Self> {
        let index = build_frame_index(&dataset, checkpoint.config.mode);
        let grad = GridGrad::new(&checkpoint.field);
        Ok(Trainer {
            config: checkpoint.config,
            dataset,
            index,
            field: checkpoint.field,
            adam: checkpoint.adam,
            step: checkpoint.step,
            grad,
        })
    }

    pub fn total_steps(&self) -> u64 {
        self.config.total_steps(self.dataset.views.len())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            field: self.field.clone(),
            adam: self.adam.clone(),
        }
    }

    fn target(&self, r: &LabeledRay) -> RayTarget {
        let v = &self.dataset.views[r.view];
        RayTarget {
            color: v.color_at(r.pixel),
            depth: v.depth[r.pixel] as f64,
            normal: v.normal_at(r.pixel),
        }
    }

    fn label(&self, r: &LabeledRay) -> u16 {
        match self.config.mode {
            Mode::Instance => r.instance,
            Mode::Semantic => r.semantic,
        }
    }

    /// Runs one optimization step and returns its log line.
    pub fn train_step(&mut self) -> Result<StepLog> {
        if let Some(stage) = self.config.grid.upsample_steps.iter().position(|&s| s == self.step) {
            let r = self.config.resolution_at(stage + 1);
            self.field = self.field.resampled([r; 3])?;
            // Moments of the old nodes mean nothing on the new grid.
            self.adam = Adam::new(self.config.optimizer.clone(), &self.field);
            self.grad = GridGrad::new(&self.field);
        }
        let cfg = &self.config;
        let seed = cfg.seed;
        let bounds = cfg.bounds();
        let view = next_training_frame(&self.index, self.step, seed)?;
        let mut rng = step_rng(seed, self.step);
        let current = sample_view(&self.dataset, &self.index, view, cfg.rays_per_batch, &bounds, &mut rng)?;
        let extras = if cfg.mode == Mode::Instance && cfg.cross_view.extra_views > 0 {
            sample_cross_view_batch(
                &self.dataset,
                &self.index,
                view,
                cfg.cross_view.extra_views,
                cfg.cross_view.rays_per_view,
                &bounds,
                &mut rng,
            )?
        } else {
            Vec::new()
        };
        let all: Vec<&LabeledRay> = current.iter().chain(extras.iter().flatten()).collect();
        let rays: Vec<_> = all.iter().map(|r| r.ray).collect();
        let (outputs, tape) = render_batch(&rays, &self.field, &cfg.render, rng.gen());
        let n = current.len();
        let rows = all.len();
        let c = self.field.channels();
        let raw: Vec<ChannelVector> = outputs
            .iter()
            .map(|o| ChannelVector::new(o.object_opacity.clone()))
            .collect::<Result<_>>()?;
        let soft: Vec<ProbVector> = raw.iter().map(|r| r.softmax()).collect();
        let w = &cfg.weights;
        let mut log = StepLog {
            step: self.step,
            view,
            beta: self.field.beta(),
            ..Default::default()
        };

        // Reconstruction over every rendered ray.
        let targets: Vec<RayTarget> = all.iter().map(|r| self.target(r)).collect();
        let mut rec = Term::zero(rows, c);
        let r = reconstruction_loss(&outputs, &targets, w, &mut rec.grad)?;
        rec.value = r.total;
        (log.color, log.depth, log.normal) = (r.color, r.depth, r.normal);
        if w.gt_opacity > 0.0 {
            let gt: Vec<Vec<f64>> = all
                .iter()
                .map(|r| {
                    let mut m = vec![0.0; c];
                    let id = self.dataset.views[r.view].gt_instance[r.pixel] as usize;
                    m[id.min(c - 1)] = 1.0;
                    m
                })
                .collect();
            let (v, g) = gt_opacity_loss(&raw, &gt)?;
            log.gt_opacity = v;
            rec.add(&Term::from_rows(w.gt_opacity * v, &g.scaled(w.gt_opacity), 0, rows));
        }

        // Clustering and foreground/background on the current view.
        let labels: Vec<u16> = current.iter().map(|r| self.label(r)).collect();
        let groups = groups_of(labels.iter().copied());
        let fg: Vec<usize> = (0..n).filter(|&i| labels[i] != 0).collect();
        let bg: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
        let mut cw = w.clustering();
        cw.reg *= cfg.reg_scale(self.step);
        let cl = clustering_loss(&raw[..n], &soft[..n], &groups, &fg, &cw)?;
        (log.diff, log.onehot, log.reg) = (cl.diff, cl.onehot, cl.reg);
        let clustering = Term::from_rows(cl.total, &cl.grad_raw, 0, rows);
        let (fb, fb_grad) = fg_bg_loss(&raw[..n], &fg, &bg, w.bg, w.fg)?;
        log.fg_bg = fb;
        let fg_bg = Term::from_rows(fb, &fb_grad, 0, rows);

        let mut sem = None;
        let mut cross = None;
        match cfg.mode {
            Mode::Semantic => {
                let conf: Vec<f64> = current.iter().map(|r| r.confidence).collect();
                let (v, g) = semantic_loss(&soft[..n], &groups, &conf, groups.labels())?;
                log.semantic = v;
                let g = g.soft_to_raw(&soft[..n]).scaled(w.semantic);
                sem = Some(Term::from_rows(w.semantic * v, &g, 0, rows));
            }
            Mode::Instance => {
                let mut term = Term::zero(rows, c);
                if !extras.is_empty() {
                    let cur_groups = groups_of(current.iter().map(|r| r.semantic));
                    let mut offsets = Vec::new();
                    let mut ext_groups = Vec::new();
                    let mut off = n;
                    for e in &extras {
                        offsets.push(off);
                        ext_groups.push(groups_of(e.iter().map(|r| r.semantic)));
                        off += e.len();
                    }
                    let ext: Vec<ViewClusters> = extras
                        .iter()
                        .zip(&offsets)
                        .zip(&ext_groups)
                        .map(|((e, &o), g)| ViewClusters {
                            soft: &soft[o..o + e.len()],
                            groups: g,
                        })
                        .collect();
                    let cv = cross_view_loss(
                        ViewClusters {
                            soft: &soft[..n],
                            groups: &cur_groups,
                        },
                        &ext,
                    )?;
                    log.cross_view = cv.value;
                    term = Term::from_rows(
                        w.cross_view * cv.value,
                        &cv.current.soft_to_raw(&soft[..n]).scaled(w.cross_view),
                        0,
                        rows,
                    );
                    for ((g, &o), e) in cv.extras.iter().zip(&offsets).zip(&extras) {
                        let part = Term::from_rows(0.0, &g.soft_to_raw(&soft[o..o + e.len()]).scaled(w.cross_view), o, rows);
                        term.add(&part);
                    }
                }
                cross = Some(term);
            }
        }

        // Eikonal at one point per current ray and as many uniform points.
        self.grad.clear();
        let mut eik_points: Vec<Point3> = current
            .iter()
            .map(|r| r.ray.at(rng.gen_range(r.ray.near..r.ray.far)))
            .collect();
        for _ in 0..n {
            let mut p = [0.0; 3];
            for (a, x) in p.iter_mut().enumerate() {
                *x = rng.gen_range(bounds.min[a]..bounds.max[a]);
            }
            eik_points.push(p);
        }
        let eik = self.field.eikonal_into(&eik_points, w.eikonal, &mut self.grad);
        log.eikonal = eik;

        let mut comps = Components {
            rec,
            sdf: w.eikonal * eik,
            clustering,
            sem,
            cross_view: cross,
            fg_bg,
        };
        if self.step < cfg.warmup_steps {
            let silent = |t: &mut Term| t.grad.iter_mut().for_each(|a| *a = RenderAdjoint::zeros(c));
            silent(&mut comps.clustering);
            silent(&mut comps.fg_bg);
            comps.sem.iter_mut().chain(comps.cross_view.iter_mut()).for_each(silent);
        }
        let total = total_loss(cfg.mode, &comps)?;
        log.total = total.value;
        let adjoints: Vec<RenderAdjoint> = total.grad;
        tape.backward(&self.field, &adjoints, &mut self.grad)?;
        if !log.total.is_finite() {
            return Err(Error::InvalidParameter(format!("loss became {} at step {}", log.total, self.step)));
        }
        self.adam.update(&mut self.field, &self.grad);
        if self.field.beta() < self.config.grid.beta_min {
            self.field.set_beta(self.config.grid.beta_min)?;
        }
        self.step += 1;
        Ok(log)
    }

    /// Trains to `total_steps`, passing each log line to `on_step`.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepLog) -> Result<()>) -> Result<()> {
        let total = self.total_steps();
        while self.step < total {
            let log = self.train_step()?;
            on_step(&log)?;
        }
        Ok(())
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "losses.csv";

/// Loads the dataset named by the config, trains, and writes the checkpoint
/// and loss log into `config.out`.
pub fn train(config: TrainConfig) -> Result<Checkpoint> {
    let dataset = Dataset::load(&config.data)?;
    let out = config.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut trainer = Trainer::new(config, dataset)?;
    let log_path = out.join(LOSS_LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    writeln!(log, "{}", StepLog::HEADER).map_err(|e| Error::io(&log_path, e))?;
    trainer.run(|s| writeln!(log, "{}", s.csv_row()).map_err(|e| Error::io(&log_path, e)))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let ckpt = trainer.checkpoint();
    ckpt.save(&out.join(CHECKPOINT_FILE))?;
    Ok(ckpt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub field: ObjectSdfGrid,
    pub adam: Adam,
}

const MAGIC: &[u8; 8] = b"SDFCKPT1";

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    config: String,
    step: u64,
    adam_step: u64,
    resolution: [usize; 3],
    bounds: Aabb,
    channels: usize,
}

fn put(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = &self.field;
        let header = Header {
            config_hash: self.config.hash(),
            config: self.config.to_toml(),
            step: self.step,
            adam_step: self.adam.step,
            resolution: f.resolution,
            bounds: f.bounds,
            channels: f.channels,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut buf = Vec::with_capacity(json.len() + 8 * (3 * f.values.len() + 3 * f.albedo.len()) + 64);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        let a = &self.adam;
        for part in [&f.values, &f.albedo, &a.m_values, &a.v_values, &a.m_albedo, &a.v_albedo] {
            put(&mut buf, part);
        }
        put(&mut buf, &[f.log_beta, a.m_beta, a.v_beta]);
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let config = TrainConfig::from_toml(&header.config)?;
        if config.hash() != header.config_hash {
            return Err(bad("config hash mismatch"));
        }
        let mut field = ObjectSdfGrid::new(header.resolution, header.bounds, header.channels, 1.0)?;
        let nv = field.values.len();
        let na = field.albedo.len();
        let want = 3 * nv + 3 * na + 3;
        let data = &bytes[16 + hlen..];
        if data.len() != 8 * want {
            return Err(bad("parameter block has the wrong size"));
        }
        let mut floats = data.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
        let mut take = |n: usize| floats.by_ref().take(n).collect::<Vec<f64>>();
        field.values = take(nv);
        field.albedo = take(na);
        let mut adam = Adam::new(config.optimizer.clone(), &field);
        adam.m_values = take(nv);
        adam.v_values = take(nv);
        adam.m_albedo = take(na);
        adam.v_albedo = take(na);
        let tail = take(3);
        field.log_beta = tail[0];
        adam.m_beta = tail[1];
        adam.v_beta = tail[2];
        adam.step = header.adam_step;
        field.refresh_all();
        Ok(Checkpoint {
            config,
            step: header.step,
            field,
            adam,
        })
    }
}
