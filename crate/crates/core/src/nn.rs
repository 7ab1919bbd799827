//! Dense layers, parameter traversal and the Adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scalar::{Matrix, Scalar};

/// A set of trainable tensors visited in a fixed order.
pub trait Tensors<T: Scalar> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    fn add_from(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    fn sq_norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(T::zero(), |acc, &x| acc + x * x)
    }

    /// Hex sha256 over all parameters.
    fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        let mut h = Sha256::new();
        for t in self.tensors() {
            buf.clear();
            t.iter().for_each(|x| x.write_bytes(&mut buf));
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }
}

/// `y = W x + b`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dense<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Matrix::zeros(outputs, inputs),
            b: vec![T::zero(); outputs],
        }
    }

    /// Uniform Glorot init, zero bias.
    pub fn random<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let scale = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            w: Matrix::random(outputs, inputs, scale, rng),
            b: vec![T::zero(); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.cols()
    }

    pub fn outputs(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[T], out: &mut [T]) {
        self.w.matvec(x, out);
        for (o, &b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
    }

    /// Accumulate parameter gradients into `grad` and, if given, `dx += W^T dy`.
    pub fn backward(&self, x: &[T], dy: &[T], grad: &mut Dense<T>, dx: Option<&mut [T]>) {
        grad.w.outer_acc(dy, x);
        for (g, &d) in grad.b.iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            self.w.matvec_t_acc(dy, dx);
        }
    }
}

impl<T: Scalar> Tensors<T> for Dense<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![self.w.data(), &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.w.data_mut(), &mut self.b]
    }
}

/// Linear warmup to the peak rate, then linear decay to zero at `total`.
pub fn scheduled_lr(peak: f64, step: usize, total: usize, warmup_ratio: f64) -> f64 {
    let warmup = (warmup_ratio * total as f64).ceil() as usize;
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let rest = total.saturating_sub(warmup).max(1);
    peak * (total.saturating_sub(step) as f64 / rest as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update. Parameters and gradients must list tensors in the same order
    /// on every call.
    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>, lr: f64) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = T::of(lr * c2.sqrt() / c1);
        let eps = T::of(self.eps * c2.sqrt());
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
