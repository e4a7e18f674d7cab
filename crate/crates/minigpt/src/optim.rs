//! AdamW with decoupled weight decay, global-norm gradient clipping and the
//! learning-rate schedules used for training.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Indices (in parameter enumeration order) split by whether weight decay applies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamGroups {
    pub decay: Vec<usize>,
    pub no_decay: Vec<usize>,
}

/// Matrices decay; vectors (biases, LayerNorm gains and biases) do not.
/// Tied storage is a single tensor and so is listed once.
pub fn partition_params<S: Scalar>(params: &[&Tensor<S>]) -> ParamGroups {
    let (decay, no_decay) = (0..params.len()).partition(|&i| params[i].rank() >= 2);
    ParamGroups { decay, no_decay }
}

/// Linear warmup to `max_lr`, then a half-cosine down to `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub decay_steps: usize,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < min_lr <= max_lr, got min_lr {} and max_lr {}",
                self.min_lr, self.max_lr
            )));
        }
        if self.warmup_steps >= self.decay_steps {
            return Err(Error::InvalidConfig(format!(
                "warmup_steps {} must be below decay_steps {}",
                self.warmup_steps, self.decay_steps
            )));
        }
        Ok(())
    }
}

/// Warmup reaches `max_lr` on step `warmup_steps - 1`; the cosine phase spans
/// `[warmup_steps, decay_steps]` and `min_lr` holds afterwards.
pub fn lr_at(step: usize, s: &ScheduleConfig) -> f64 {
    if step < s.warmup_steps {
        s.max_lr * (step + 1) as f64 / s.warmup_steps as f64
    } else if step <= s.decay_steps {
        let progress = (step - s.warmup_steps) as f64 / (s.decay_steps - s.warmup_steps) as f64;
        s.min_lr + 0.5 * (s.max_lr - s.min_lr) * (1.0 + (PI * progress).cos())
    } else {
        s.min_lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Fixed(f64),
    WarmupCosine(ScheduleConfig),
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        match self {
            LrSchedule::Fixed(lr) => *lr,
            LrSchedule::WarmupCosine(s) => lr_at(step, s),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LrSchedule::Fixed(lr) if !(*lr > 0.0 && lr.is_finite()) => {
                Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")))
            }
            LrSchedule::Fixed(_) => Ok(()),
            LrSchedule::WarmupCosine(s) => s.validate(),
        }
    }
}

/// Scales all gradients jointly so their combined L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_global_norm<S: Scalar>(grads: &mut [Vec<S>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("max_norm must be positive, got {max_norm}")));
    }
    let sq: f64 = grads.iter().flatten().map(|g| g.to_f64() * g.to_f64()).sum();
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm is {norm}")));
    }
    if norm > max_norm {
        let c = S::from_f64(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= c);
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// When set, decay applies only to matrices; otherwise to every tensor.
    pub grouped: bool,
}

impl AdamWConfig {
    /// betas (0.9, 0.99), decay 0.1 on matrices only.
    pub fn stronger() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 0.1, grouped: true }
    }

    /// betas (0.9, 0.999), decay 0.01 on everything.
    pub fn baseline() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, grouped: false }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid AdamW settings {self:?}")))
        }
    }
}

/// Moment buffers mirror the parameters they were built for.
#[derive(Clone, Debug)]
pub struct AdamW<S: Scalar = f32> {
    pub config: AdamWConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    decay: Vec<f64>,
    step_count: u64,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(params: &[&Tensor<S>], config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        let groups = partition_params(params);
        let mut decay = vec![0.0; params.len()];
        for (i, d) in decay.iter_mut().enumerate() {
            if !config.grouped || groups.decay.contains(&i) {
                *d = config.weight_decay;
            }
        }
        Ok(AdamW {
            config,
            m: params.iter().map(|p| vec![S::ZERO; p.numel()]).collect(),
            v: params.iter().map(|p| vec![S::ZERO; p.numel()]).collect(),
            decay,
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Weight decay applied to parameter `i`.
    pub fn decay_of(&self, i: usize) -> f64 {
        self.decay[i]
    }

    /// `θ ← θ − lr·(m̂/(√v̂ + eps) + λθ)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Vec<S>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer holds {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::InvalidArgument(format!("parameter {i} does not match its optimizer state")));
            }
        }
        self.step_count += 1;
        let AdamWConfig { beta1: b1, beta2: b2, eps, .. } = self.config;
        let t = self.step_count as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lambda = self.decay[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut finite = true;
            for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.to_f64();
                let mn = b1 * m.to_f64() + (1.0 - b1) * g;
                let vn = b2 * v.to_f64() + (1.0 - b2) * g * g;
                *m = S::from_f64(mn);
                *v = S::from_f64(vn);
                let th = theta.to_f64();
                let update = (mn / c1) / ((vn / c2).sqrt() + eps) + lambda * th;
                let next = th - lr * update;
                finite &= next.is_finite();
                *theta = S::from_f64(next);
            }
            if !finite {
                return Err(Error::NonFinite(format!("parameter {i} became non-finite after step {t}")));
            }
        }
        Ok(())
    }
}
