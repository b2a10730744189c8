use super::params::ParameterStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with global gradient-norm clipping. Moment buffers follow the store's
/// parameter order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: f64,
    clip_norm: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, clip_norm: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(clip_norm > 0.0 && clip_norm.is_finite()) {
            return Err(Error::Config(format!(
                "clip norm must be positive, got {clip_norm}"
            )));
        }
        Ok(Self {
            lr,
            clip_norm,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Clips, applies one update and zeroes the gradients. Returns the
    /// pre-clip global gradient norm.
    pub fn step(&mut self, store: &mut ParameterStore<T>) -> f64 {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        let norm = clip_grad_norm(store, self.clip_norm);
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(BETA1), T::of(BETA2));
        let one = T::one();
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = T::of(self.lr);
        let eps = T::of(EPSILON);
        for (i, (_, p)) in store.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = p.value.data_mut();
            let g = p.grad.data_mut();
            for j in 0..g.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                w[j] -= lr * mhat / (vhat.sqrt() + eps);
                g[j] = T::zero();
            }
        }
        norm
    }
}

/// Scales all gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm<T: Real>(store: &mut ParameterStore<T>, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for (_, p) in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}
