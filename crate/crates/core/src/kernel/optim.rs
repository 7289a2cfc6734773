//! AdamW with decoupled weight decay.

use super::array::Array;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    first: Vec<Array>,
    second: Vec<Array>,
}

impl AdamWState {
    pub fn new(params: &[&Array]) -> Self {
        AdamWState {
            step: 0,
            first: params.iter().map(|p| Array::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Array::zeros(p.shape())).collect(),
        }
    }
}

/// One AdamW update. Decay is applied as `p ← p − η·λ·p`, separately from the
/// bias-corrected adaptive step.
pub fn adamw_step(params: &mut [&mut Array], grads: &[Array], state: &mut AdamWState, cfg: &AdamWConfig) {
    assert_eq!(params.len(), grads.len(), "params/grads count");
    assert_eq!(params.len(), state.first.len(), "params/state count");
    state.step += 1;
    // powf, not powi: powi's result depends on how LLVM lowers it.
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (idx, p) in params.iter_mut().enumerate() {
        let g = &grads[idx];
        let m = state.first[idx].data_mut();
        let v = state.second[idx].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            *pv -= cfg.lr * cfg.weight_decay * *pv;
            *pv -= cfg.lr * (*mv / c1) / ((*vv / c2).sqrt() + cfg.eps);
        }
    }
}

/// Scales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Array::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        for g in grads.iter_mut() {
            g.scale(max_norm / norm);
        }
    }
    norm
}
