//! Adam over the grid parameters, updated lazily: only nodes that received
//! a gradient in a step have their moments and values touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridGrad, ObjectSdfGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rates of the albedo and of `log beta`; `None` uses `lr`.
    pub lr_albedo: Option<f64>,
    pub lr_beta: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_albedo: Some(3e-2),
            lr_beta: Some(3e-3),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [Some(self.lr), self.lr_albedo, self.lr_beta];
        if lrs.iter().flatten().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("learning rates must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("moment decays must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m_values: Vec<f64>,
    pub v_values: Vec<f64>,
    pub m_albedo: Vec<f64>,
    pub v_albedo: Vec<f64>,
    pub m_beta: f64,
    pub v_beta: f64,
}

impl Adam {
    pub fn new(config: AdamConfig, grid: &ObjectSdfGrid) -> Self {
        Adam {
            config,
            step: 0,
            m_values: vec![0.0; grid.values.len()],
            v_values: vec![0.0; grid.values.len()],
            m_albedo: vec![0.0; grid.albedo.len()],
            v_albedo: vec![0.0; grid.albedo.len()],
            m_beta: 0.0,
            v_beta: 0.0,
        }
    }

    /// One descent step along `grad`.
    pub fn update(&mut self, grid: &mut ObjectSdfGrid, grad: &GridGrad) {
        self.step += 1;
        let cfg = &self.config;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let scale = |lr: f64| lr * c2.sqrt() / c1;
        let (s_val, s_alb, s_beta) = (
            scale(cfg.lr),
            scale(cfg.lr_albedo.unwrap_or(cfg.lr)),
            scale(cfg.lr_beta.unwrap_or(cfg.lr)),
        );
        let eps = cfg.eps * c2.sqrt();
        let adam = |x: &mut f64, m: &mut f64, v: &mut f64, g: f64, s: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *x -= s * *m / (v.sqrt() + eps);
        };
        let c = grid.channels;
        for &n in grad.touched() {
            for i in n * c..(n + 1) * c {
                adam(&mut grid.values[i], &mut self.m_values[i], &mut self.v_values[i], grad.values[i], s_val);
            }
            for i in n * 3..n * 3 + 3 {
                adam(&mut grid.albedo[i], &mut self.m_albedo[i], &mut self.v_albedo[i], grad.albedo[i], s_alb);
            }
            grid.refresh_node(n);
        }
        adam(&mut grid.log_beta, &mut self.m_beta, &mut self.v_beta, grad.log_beta, s_beta);
    }
}
