use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments for a list of tensors, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamWState {
    /// Zero moments for tensors of the given sizes.
    pub fn new(sizes: &[usize]) -> Self {
        AdamWState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One AdamW update with decoupled weight decay.
///
/// Every gradient is checked before anything is modified, so a non-finite
/// gradient leaves parameters and state untouched.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamWState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::Contract(format!(
            "adamw: {} params, {} grads, {} states",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::dim("adamw", &[p.len()], &[g.len()]));
        }
        if let Some(j) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in tensor {i} at entry {j}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            p[j] -= lr * cfg.weight_decay * p[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= lr * mh / (libm::sqrt(vh) + cfg.eps);
        }
    }
    Ok(())
}

/// Scales all gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut [f64]], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Contract(format!("max_norm must be positive, got {max_norm}")));
    }
    let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum();
    let norm = libm::sqrt(sq);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    Constant,
    Linear,
}

impl Scheduler {
    pub fn name(self) -> &'static str {
        match self {
            Scheduler::Constant => "constant",
            Scheduler::Linear => "linear",
        }
    }
}

impl core::str::FromStr for Scheduler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Scheduler::Constant),
            "linear" => Ok(Scheduler::Linear),
            _ => Err(Error::Contract(format!("unknown scheduler {s:?}"))),
        }
    }
}

/// Learning rate before optimizer step `step` (0-based) of `total`.
pub fn lr_at(step: usize, total: usize, base_lr: f64, scheduler: Scheduler) -> f64 {
    match scheduler {
        Scheduler::Constant => base_lr,
        Scheduler::Linear if total == 0 => base_lr,
        Scheduler::Linear => base_lr * (1.0 - step.min(total) as f64 / total as f64),
    }
}
