//! Fully connected networks with hand-written backpropagation, plus Adam.
//!
//! Parameters live in one flat vector (per layer: row-major weights, then
//! biases) so optimisers, Polyak averaging and checkpoints treat every
//! network the same way.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let count = Self::param_count(sizes);
        let mut params = Vec::with_capacity(count);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            params.extend((0..fan_in * fan_out).map(|_| dist.sample(rng)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("sizes validated")
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).acts.pop().expect("trace holds at least the input")
    }

    pub fn trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let hidden = l + 1 < self.layers();
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    if hidden {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Trace { acts }
    }

    /// Accumulates `∂(dout·y)/∂params` into `grad` and returns `∂(dout·y)/∂x`.
    pub fn backward(&self, trace: &Trace, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = dout.to_vec();
        let mut offsets = Vec::with_capacity(self.layers());
        let mut off = 0;
        for l in 0..self.layers() {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            if l + 1 < self.layers() {
                for (d, y) in delta.iter_mut().zip(&trace.acts[l + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let input = &trace.acts[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wv;
                }
            }
            delta = prev;
        }
        delta
    }

    /// `self ← τ·source + (1 − τ)·self`.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) {
        assert_eq!(self.sizes, source.sizes, "Polyak update between different shapes");
        if tau == 1.0 {
            self.params.copy_from_slice(&source.params);
            return;
        }
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Adam optimiser state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
