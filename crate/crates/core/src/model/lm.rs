//! Small prefix-conditioned language model.
//!
//! The next-token distribution at position `t` is computed from the
//! embeddings of the last `window` tokens, a learned position embedding
//! (counted from the start of the target), a dot-product attention read over
//! the visual prefix queried by the window, the mean prefix vector and the
//! mean embedding of every token so far:
//!
//! ```text
//! w = [E(x_{t-W+1}); ...; E(x_t)]
//! a = softmax(P (Wq w) / sqrt(d)),  r = a^T P
//! s_t = mean(E(x_0), ..., E(x_t))
//! h = tanh(W1 [w; pos_t; r; mean(P); s_t] + b1)
//! logits = Wo h + bo
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Dense, Tensors};
use crate::scalar::{dot, log_sum_exp, softmax_in_place, Matrix, Scalar};

use super::tokenizer::PAD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub d_model: usize,
    pub window: usize,
    pub hidden: usize,
    pub max_positions: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            window: 6,
            hidden: 128,
            max_positions: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LanguageModel<T> {
    pub config: LmConfig,
    pub emb: Matrix<T>,
    pub pos: Matrix<T>,
    pub wq: Matrix<T>,
    pub hidden: Dense<T>,
    pub out: Dense<T>,
}

/// Activations of one position, kept for the backward pass.
struct Activations<T> {
    ids: Vec<u32>,
    window: Vec<T>,
    q: Vec<T>,
    attn: Vec<T>,
    x: Vec<T>,
    h: Vec<T>,
    logits: Vec<T>,
}

/// A token sequence with the loss restricted to `labels[j]` where `mask[j]`.
/// Position `j` predicts the token after `tokens[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossRow {
    pub tokens: Vec<u32>,
    pub labels: Vec<u32>,
    pub mask: Vec<bool>,
    /// Index of the first target token; positions are counted from here.
    pub target_start: usize,
}

impl LossRow {
    /// `[bos] context target [eos]` with the loss on target and `eos` only.
    pub fn new(context: &[u32], target: &[u32]) -> Self {
        let mut tokens = Vec::with_capacity(context.len() + target.len() + 2);
        tokens.push(super::tokenizer::BOS);
        tokens.extend_from_slice(context);
        let target_start = tokens.len();
        tokens.extend_from_slice(target);
        tokens.push(super::tokenizer::EOS);
        let labels = tokens[1..].to_vec();
        let mask = (1..tokens.len()).map(|i| i >= target_start).collect();
        tokens.pop();
        Self {
            tokens,
            labels,
            mask,
            target_start,
        }
    }

    pub fn num_targets(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

impl<T: Scalar> LanguageModel<T> {
    pub fn new<R: Rng>(config: LmConfig, vocab: usize, rng: &mut R) -> Self {
        let d = config.d_model;
        let inputs = Self::input_dim(&config);
        Self {
            emb: Matrix::random(vocab, d, 0.5, rng),
            pos: Matrix::random(config.max_positions, d, 0.5, rng),
            wq: Matrix::random(d, config.window * d, (3.0 / (config.window * d) as f64).sqrt(), rng),
            hidden: Dense::random(inputs, config.hidden, rng),
            out: Dense::random(config.hidden, vocab, rng),
            config,
        }
    }

    fn input_dim(c: &LmConfig) -> usize {
        c.window * c.d_model + 4 * c.d_model
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.config;
        Self {
            emb: Matrix::zeros(self.emb.rows(), c.d_model),
            pos: Matrix::zeros(c.max_positions, c.d_model),
            wq: Matrix::zeros(c.d_model, c.window * c.d_model),
            hidden: Dense::zeros(Self::input_dim(&c), c.hidden),
            out: Dense::zeros(c.hidden, self.emb.rows()),
            config: c,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.emb.rows()
    }

    pub fn embed(&self, id: u32) -> Vec<T> {
        self.emb.row(id as usize).to_vec()
    }

    fn position(&self, t: usize, target_start: usize) -> usize {
        (t + 1).saturating_sub(target_start).min(self.config.max_positions - 1)
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_at(
        &self,
        prefix: &[Vec<T>],
        mean: &[T],
        history: &[T],
        tokens: &[u32],
        t: usize,
        p: usize,
    ) -> Activations<T> {
        let c = self.config;
        let d = c.d_model;
        let ids: Vec<u32> = (0..c.window)
            .map(|w| {
                let back = c.window - 1 - w;
                if back > t {
                    PAD
                } else {
                    tokens[t - back]
                }
            })
            .collect();
        let mut window = Vec::with_capacity(c.window * d);
        for &id in &ids {
            window.extend_from_slice(self.emb.row(id as usize));
        }
        let mut q = vec![T::zero(); d];
        self.wq.matvec(&window, &mut q);
        let inv = T::one() / T::of(d as f64).sqrt();
        q.iter_mut().for_each(|v| *v *= inv);
        let mut attn: Vec<T> = prefix.iter().map(|v| dot(&q, v)).collect();
        let mut r = vec![T::zero(); d];
        if !attn.is_empty() {
            softmax_in_place(&mut attn);
            for (a, v) in attn.iter().zip(prefix) {
                crate::scalar::axpy(*a, v, &mut r);
            }
        }
        let mut x = window.clone();
        x.extend_from_slice(self.pos.row(p));
        x.extend_from_slice(&r);
        x.extend_from_slice(mean);
        x.extend_from_slice(history);
        let mut h = vec![T::zero(); c.hidden];
        self.hidden.forward(&x, &mut h);
        h.iter_mut().for_each(|v| *v = v.tanh());
        let mut logits = vec![T::zero(); self.vocab_size()];
        self.out.forward(&h, &mut logits);
        Activations {
            ids,
            window,
            q,
            attn,
            x,
            h,
            logits,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_at(
        &self,
        act: &Activations<T>,
        dlogits: &[T],
        p: usize,
        prefix: &[Vec<T>],
        grad: &mut Self,
        d_prefix: &mut [Vec<T>],
    ) -> Vec<T> {
        let c = self.config;
        let d = c.d_model;
        let mut dh = vec![T::zero(); c.hidden];
        self.out.backward(&act.h, dlogits, &mut grad.out, Some(&mut dh));
        for (g, &h) in dh.iter_mut().zip(&act.h) {
            *g *= T::one() - h * h;
        }
        let mut dx = vec![T::zero(); act.x.len()];
        self.hidden.backward(&act.x, &dh, &mut grad.hidden, Some(&mut dx));
        let wd = c.window * d;
        let (dwin, rest) = dx.split_at_mut(wd);
        let (dpos, rest) = rest.split_at_mut(d);
        let (dr, rest) = rest.split_at_mut(d);
        let (dmean, dhist) = rest.split_at_mut(d);
        crate::scalar::axpy(T::one(), dpos, grad.pos.row_mut(p));
        if !prefix.is_empty() {
            let n = T::of(prefix.len() as f64);
            let mut da = Vec::with_capacity(prefix.len());
            for ((a, v), dv) in act.attn.iter().zip(prefix).zip(d_prefix.iter_mut()) {
                for k in 0..d {
                    dv[k] += *a * dr[k] + dmean[k] / n;
                }
                da.push(dot(dr, v));
            }
            let avg = dot(&act.attn, &da);
            let mut dq = vec![T::zero(); d];
            for (((a, g), v), dv) in act.attn.iter().zip(&da).zip(prefix).zip(d_prefix.iter_mut()) {
                let ds = *a * (*g - avg);
                crate::scalar::axpy(ds, v, &mut dq);
                crate::scalar::axpy(ds, &act.q, dv);
            }
            let inv = T::one() / T::of(d as f64).sqrt();
            dq.iter_mut().for_each(|v| *v *= inv);
            grad.wq.outer_acc(&dq, &act.window);
            self.wq.matvec_t_acc(&dq, dwin);
        }
        for (w, &id) in act.ids.iter().enumerate() {
            crate::scalar::axpy(T::one(), &dwin[w * d..(w + 1) * d], grad.emb.row_mut(id as usize));
        }
        dhist.to_vec()
    }

    /// Per-position cross-entropy (zero where the mask is off) and, when
    /// `grad` is given, accumulate `scale * d loss_sum` into `grad` and
    /// `d_prefix`.
    pub fn row_losses(
        &self,
        prefix: &[Vec<T>],
        row: &LossRow,
        scale: T,
        mut grad: Option<(&mut Self, &mut [Vec<T>])>,
    ) -> Vec<T> {
        let d = self.config.d_model;
        let mean = mean_of(prefix, d);
        let mut losses = vec![T::zero(); row.labels.len()];
        let mut sum = vec![T::zero(); d];
        // gradient w.r.t. s_j, already divided by j + 1
        let mut d_hist = vec![vec![T::zero(); d]; row.labels.len()];
        for (j, loss) in losses.iter_mut().enumerate() {
            crate::scalar::axpy(T::one(), self.emb.row(row.tokens[j] as usize), &mut sum);
            if !row.mask[j] {
                continue;
            }
            let inv = T::one() / T::of((j + 1) as f64);
            let history: Vec<T> = sum.iter().map(|&v| v * inv).collect();
            let p = self.position(j, row.target_start);
            let act = self.forward_at(prefix, &mean, &history, &row.tokens, j, p);
            let label = row.labels[j] as usize;
            *loss = log_sum_exp(&act.logits) - act.logits[label];
            if let Some((g, dp)) = grad.as_mut() {
                let mut dl = act.logits.clone();
                softmax_in_place(&mut dl);
                dl[label] -= T::one();
                dl.iter_mut().for_each(|v| *v *= scale);
                let dh = self.backward_at(&act, &dl, p, prefix, g, dp);
                d_hist[j] = dh.into_iter().map(|v| v * inv).collect();
            }
        }
        if let Some((g, _)) = grad {
            // token j contributes to every s_t with t >= j
            let mut acc = vec![T::zero(); d];
            for j in (0..row.labels.len()).rev() {
                crate::scalar::axpy(T::one(), &d_hist[j], &mut acc);
                crate::scalar::axpy(T::one(), &acc, g.emb.row_mut(row.tokens[j] as usize));
            }
        }
        losses
    }

    /// Log-probabilities of the token after `tokens`, where the target began
    /// at `target_start`.
    pub fn next_log_probs(&self, prefix: &[Vec<T>], tokens: &[u32], target_start: usize) -> Vec<f64> {
        let d = self.config.d_model;
        let mean = mean_of(prefix, d);
        let mut history = vec![T::zero(); d];
        for &id in tokens {
            crate::scalar::axpy(T::one(), self.emb.row(id as usize), &mut history);
        }
        let inv = T::one() / T::of(tokens.len() as f64);
        history.iter_mut().for_each(|v| *v *= inv);
        let t = tokens.len() - 1;
        let act = self.forward_at(prefix, &mean, &history, tokens, t, self.position(t, target_start));
        let lse = log_sum_exp(&act.logits);
        act.logits
            .iter()
            .map(|&l| (l - lse).to_f64().unwrap_or(f64::NEG_INFINITY))
            .collect()
    }
}

fn mean_of<T: Scalar>(prefix: &[Vec<T>], d: usize) -> Vec<T> {
    let mut m = vec![T::zero(); d];
    if prefix.is_empty() {
        return m;
    }
    for v in prefix {
        crate::scalar::axpy(T::one(), v, &mut m);
    }
    let n = T::of(prefix.len() as f64);
    m.iter_mut().for_each(|x| *x /= n);
    m
}

impl<T: Scalar> Tensors<T> for LanguageModel<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut v = vec![self.emb.data(), self.pos.data(), self.wq.data()];
        v.extend(self.hidden.tensors());
        v.extend(self.out.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = vec![self.emb.data_mut(), self.pos.data_mut(), self.wq.data_mut()];
        v.extend(self.hidden.tensors_mut());
        v.extend(self.out.tensors_mut());
        v
    }
}
