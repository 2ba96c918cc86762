//! Minimal dense network with explicit backward pass, plus Adam.
//!
//! Layers are fully connected with ReLU between them and a linear last
//! layer; heads apply their own output squashing. Everything is f64 and
//! single-threaded, so results are bit-reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major [out_dim x in_dim].
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            w: (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
            b: vec![0.0; out_dim],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-sample activations retained for backprop: `post[0]` is the input,
/// `post[k]` the (activated) output of layer k-1, `pre[k]` the
/// pre-activation of layer k.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Gradient buffers matching an [`Mlp`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros(mlp: &Mlp) -> Self {
        Self {
            w: mlp.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: mlp.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for layer in self.w.iter_mut().chain(self.b.iter_mut()) {
            for g in layer {
                *g *= s;
            }
        }
    }
}

impl Mlp {
    /// `dims = [in, hidden..., out]`, ReLU between layers, linear output.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|d| Linear::init(d[0], d[1], rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Forward pass returning the raw (un-squashed) scalar output.
    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.in_dim());
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if k != last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Forward pass that retains activations for [`Mlp::backward`].
    pub fn forward_cached(&self, x: &[f64], cache: &mut MlpCache) -> f64 {
        debug_assert_eq!(x.len(), self.in_dim());
        cache.pre.resize(self.layers.len(), Vec::new());
        cache.post.resize(self.layers.len() + 1, Vec::new());
        cache.post[0] = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = cache.post.split_at_mut(k + 1);
            layer.forward(&head[k], &mut cache.pre[k]);
            tail[0] = cache.pre[k].clone();
            if k != last {
                for v in tail[0].iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        cache.post[self.layers.len()][0]
    }

    /// Backprop of `d_out` (gradient w.r.t. the raw output) through the
    /// cached sample; accumulates parameter gradients and returns the
    /// gradient w.r.t. the input vector.
    pub fn backward(&self, cache: &MlpCache, d_out: f64, grads: &mut MlpGrads) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut delta = vec![d_out];
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if k != last {
                // ReLU mask on this layer's outputs.
                for (d, &pre) in delta.iter_mut().zip(&cache.pre[k]) {
                    if pre <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.post[k];
            let mut d_input = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                grads.b[k][o] += d;
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut grads.w[k][o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += d * input[i];
                    d_input[i] += d * row[i];
                }
            }
            delta = d_input;
        }
        delta
    }

    /// Applies one optimizer step; `opt` must have been created with
    /// [`Mlp::param_count`] slots.
    pub fn step(&mut self, grads: &MlpGrads, opt: &mut Adam) {
        opt.begin_step();
        let mut offset = 0;
        for (k, layer) in self.layers.iter_mut().enumerate() {
            opt.apply(&mut layer.w, &grads.w[k], offset);
            offset += layer.w.len();
            opt.apply(&mut layer.b, &grads.b[k], offset);
            offset += layer.b.len();
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Learned per-image embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub n: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Embedding {
    pub fn new<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Self {
        Self { n, dim, data: (0..n * dim).map(|_| rng.gen_range(-0.1..0.1)).collect() }
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn step_row(&mut self, id: usize, grad: &[f64], opt: &mut Adam) {
        opt.begin_step();
        let row = &mut self.data[id * self.dim..(id + 1) * self.dim];
        opt.apply(row, grad, id * self.dim);
    }
}

/// Adam over a flat parameter vector (or disjoint windows of one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// Advances the shared timestep; call once per logical step before
    /// [`Adam::apply`].
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates `params` with `grads`, using moment slots starting at
    /// `offset`.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], offset: usize) {
        debug_assert_eq!(params.len(), grads.len());
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let m = &mut self.m[offset + i];
            let v = &mut self.v[offset + i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * grads[i];
            *v = self.beta2 * *v + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Convenience for a whole parameter vector.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.begin_step();
        self.apply(params, grads, 0);
    }
}
