use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    pub fn update(&mut self, params: &mut [T], grad: &[T], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let (one_b1, one_b2) = (T::c(1.0 - self.beta1), T::c(1.0 - self.beta2));
        let step = T::c(lr / (1.0 - self.beta1.powi(t)));
        let vcorr = T::c(1.0 / (1.0 - self.beta2.powi(t)));
        let decay = T::c(1.0 - lr * self.weight_decay);
        let eps = T::c(self.eps);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            let denom = (self.v[i] * vcorr).sqrt() + eps;
            params[i] = params[i] * decay - step * self.m[i] / denom;
        }
        Ok(())
    }
}

/// Euclidean norm of the whole gradient, accumulated in `f64`.
pub fn global_norm<T: Scalar>(grad: &[T]) -> f64 {
    grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt()
}

/// Rescales `grad` so its global norm is at most `max_norm`; returns the norm
/// before clipping. `max_norm = 0` disables clipping.
pub fn clip_global_norm<T: Scalar>(grad: &mut [T], max_norm: f64) -> f64 {
    let norm = global_norm(grad);
    if max_norm > 0.0 && norm > max_norm {
        let s = T::c(max_norm / (norm + 1e-6));
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
