//! Adam with bias correction, and the cosine learning-rate schedule.

use crate::tensor::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Cosine annealing from `lr_start` at `iter = 0` to `lr_end` at `iter = total`.
pub fn lr_schedule(iter: u64, total: u64, lr_start: f64, lr_end: f64) -> f64 {
    let progress = iter as f64 / total as f64;
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moments for a list of parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments for groups of the given sizes.
    pub fn new(group_sizes: &[usize]) -> Self {
        Self {
            m: group_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: group_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// Advances the shared step counter. Call once per optimizer step, before
    /// any [`update`](Self::update).
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates `params[range]` of group `group` in place with `grads`.
    ///
    /// `offset` locates `params` inside the group, which lets a caller update
    /// a few rows of a large table without touching the rest.
    pub fn update(&mut self, group: usize, offset: usize, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
        assert!(self.step >= 1, "begin_step must precede update");
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let m = &mut self.m[group][offset..offset + params.len()];
        let v = &mut self.v[group][offset..offset + params.len()];
        for k in 0..params.len() {
            let g = grads[k].to_f64().unwrap();
            let mk = BETA1 * m[k].to_f64().unwrap() + (1.0 - BETA1) * g;
            let vk = BETA2 * v[k].to_f64().unwrap() + (1.0 - BETA2) * g * g;
            m[k] = T::lit(mk);
            v[k] = T::lit(vk);
            // Moments are read back at storage precision so a resumed run
            // sees exactly what an uninterrupted one does.
            let m_hat = m[k].to_f64().unwrap() / c1;
            let v_hat = v[k].to_f64().unwrap() / c2;
            let p = params[k].to_f64().unwrap() - lr * m_hat / (v_hat.sqrt() + EPSILON);
            params[k] = T::lit(p);
        }
    }
}
