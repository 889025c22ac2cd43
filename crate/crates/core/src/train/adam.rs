use sentigan_tensor::Tensor;

use crate::error::{Error, Result};
use crate::nets::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// The learning rate halves every `halve_every` steps.
    pub halve_every: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8, halve_every: 5000 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::contract(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::contract(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::contract(format!("adam eps must be positive, got {}", self.eps)));
        }
        if self.halve_every == 0 {
            return Err(Error::contract("halve_every must be ≥ 1"));
        }
        Ok(())
    }

    /// `lr / 2^floor(step / halve_every)`.
    pub fn lr_at(&self, step: u64) -> f32 {
        let halvings = (step / self.halve_every).min(1000) as i32;
        (self.lr as f64 * 0.5f64.powi(halvings)) as f32
    }
}

/// Moments for a subset of the model's parameters, by layout index.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub indices: Vec<usize>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams, indices: Vec<usize>) -> Self {
        let zeros: Vec<Tensor> = indices.iter().map(|&i| Tensor::zeros(params.tensors()[i].shape().to_vec())).collect();
        Self { indices, m: zeros.clone(), v: zeros, step: 0 }
    }

    /// State over the parameters whose names satisfy `filter`.
    pub fn for_params(params: &ModelParams, filter: impl Fn(&str) -> bool) -> Self {
        let idx = params.iter().enumerate().filter(|(_, (n, _))| filter(n)).map(|(i, _)| i).collect();
        Self::new(params, idx)
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.indices == other.indices
            && self.step == other.step
            && self.m.iter().zip(&other.m).all(|(a, b)| a.bitwise_eq(b))
            && self.v.iter().zip(&other.v).all(|(a, b)| a.bitwise_eq(b))
    }
}

/// One bias-corrected Adam update. `grads` aligns with `state.indices`; a
/// missing gradient counts as zero.
pub fn adam_step(params: &mut ModelParams, grads: &[Option<Tensor>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != state.indices.len() {
        return Err(Error::contract(format!("{} gradients for {} parameters", grads.len(), state.indices.len())));
    }
    let t = state.step + 1;
    let lr = cfg.lr_at(state.step);
    let bc1 = (1.0 - (cfg.beta1 as f64).powf(t as f64)) as f32;
    let bc2 = (1.0 - (cfg.beta2 as f64).powf(t as f64)) as f32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for (k, &pi) in state.indices.iter().enumerate() {
        let p = &params.tensors()[pi];
        if let Some(g) = &grads[k] {
            if g.shape() != p.shape() {
                return Err(Error::Tensor(sentigan_tensor::TensorError::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                ))));
            }
        }
        let mut m = state.m[k].data().to_vec();
        let mut v = state.v[k].data().to_vec();
        let mut w = p.data().to_vec();
        let gd = grads[k].as_ref().map(|g| g.data());
        for j in 0..w.len() {
            let gj = gd.map_or(0.0, |g| g[j]);
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            w[j] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        let shape = p.shape().to_vec();
        state.m[k] = Tensor::new(shape.clone(), m)?;
        state.v[k] = Tensor::new(shape.clone(), v)?;
        params.set(pi, Tensor::new(shape, w)?)?;
    }
    state.step = t;
    Ok(())
}
