//! AdamW with decoupled weight decay and a reduce-on-plateau scheduler.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::HeadParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update over a flat slice.
///
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p`, with `t` the
/// 1-based step number used for bias correction.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Float>(
    p: &mut [T],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    weight_decay: f64,
    cfg: &AdamWConfig,
) {
    assert!(p.len() == g.len() && p.len() == m.len() && p.len() == v.len(), "AdamW slice lengths differ");
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let old = p[i].to_f64().unwrap();
        let new = old - lr * m_hat / (v_hat.sqrt() + cfg.eps) - lr * weight_decay * old;
        p[i] = T::from(new).unwrap();
    }
}

/// First and second moments mirroring [`HeadParams`], the step count and the current rate.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: HeadParams<f64>,
    pub v: HeadParams<f64>,
    pub t: u64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new<T: Float>(p: &HeadParams<T>, lr: f64) -> Self {
        let z = HeadParams::zeros_with_hidden(p.in_dim(), p.hidden());
        Self {
            m: z.clone(),
            v: z,
            t: 0,
            lr,
        }
    }
}

/// Applies one AdamW step to every tensor of `p` and bumps its revision.
pub fn adamw_step<T: Float>(
    p: &mut HeadParams<T>,
    g: &HeadParams<f64>,
    s: &mut OptimizerState,
    weight_decay: f64,
    cfg: &AdamWConfig,
) {
    s.t += 1;
    let (t, lr) = (s.t, s.lr);
    let grads = g.tensors();
    let ms = s.m.tensors_mut();
    let vs = s.v.tensors_mut();
    for (((pt, gt), mt), vt) in p.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        adamw_update(pt, gt, mt, vt, t, lr, weight_decay, cfg);
    }
    p.bump_revision();
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 5,
            min_lr: 1e-6,
        }
    }
}

/// Minimum decrease that counts as an improvement.
pub const PLATEAU_THRESHOLD: f64 = 1e-8;

/// Multiplies the rate by `factor` once the monitored loss has failed to
/// improve for `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    cfg: SchedulerConfig,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, cfg: SchedulerConfig) -> Self {
        Self {
            cfg,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's metric and returns the learning rate for the next epoch.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best - PLATEAU_THRESHOLD {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
