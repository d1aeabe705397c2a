//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector: for each layer the weight matrix
//! (`n_out × n_in`, row-major) followed by the bias vector. Optimizers and
//! checkpoints work on that vector directly.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// `[n_in, h1, ..., n_out]`
    pub sizes: Vec<usize>,
    /// One per layer.
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

/// Activations recorded by a forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `post[0]` is the input; `post[l + 1]` is layer `l`'s output.
    pub post: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("non-empty trace")
    }
}

impl Mlp {
    /// Zero-initialised network.
    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "bad layer spec: sizes {sizes:?}, {} activations",
                activations.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("zero-width layer in {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(sizes, activations)?;
        for l in 0..m.n_layers() {
            let (n_in, n_out) = (m.sizes[l], m.sizes[l + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let (w, _) = m.layer_range(l);
            for p in &mut m.params[w] {
                *p = rng.gen_range(-limit..limit);
            }
        }
        Ok(m)
    }

    /// He-uniform weights (`limit = sqrt(6 / fan_in)`), zero biases.
    pub fn he_uniform(sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(sizes, activations)?;
        for l in 0..m.n_layers() {
            let limit = (6.0 / m.sizes[l] as f64).sqrt();
            let (w, _) = m.layer_range(l);
            for p in &mut m.params[w] {
                *p = rng.gen_range(-limit..limit);
            }
        }
        Ok(m)
    }

    /// Orthogonal weights scaled per layer by `gains`, zero biases.
    pub fn orthogonal(sizes: &[usize], activations: &[Activation], gains: &[f64], rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(sizes, activations)?;
        if gains.len() != m.n_layers() {
            return Err(Error::InvalidArgument("one gain per layer required".into()));
        }
        for (l, &gain) in gains.iter().enumerate() {
            let (n_in, n_out) = (m.sizes[l], m.sizes[l + 1]);
            let q = orthogonal_matrix(n_out, n_in, rng);
            let (w, _) = m.layer_range(l);
            for (p, v) in m.params[w].iter_mut().zip(q) {
                *p = gain * v;
            }
        }
        Ok(m)
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("sizes non-empty")
    }

    /// Ranges of layer `l`'s weights and biases inside `params`.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start: usize = self.sizes[..l + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = start..start + n_in * n_out;
        let b = w.end..w.end + n_out;
        (w, b)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::Width {
                expected: self.n_inputs(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer_range(l);
            let (weights, bias) = (&self.params[w], &self.params[b]);
            let n_in = self.sizes[l];
            let act = self.activations[l];
            a = bias
                .iter()
                .enumerate()
                .map(|(o, &bo)| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    act.apply(bo + row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>())
                })
                .collect();
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut post = Vec::with_capacity(self.n_layers() + 1);
        let mut pre = Vec::with_capacity(self.n_layers());
        post.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (w, b) = self.layer_range(l);
            let (weights, bias) = (&self.params[w], &self.params[b]);
            let n_in = self.sizes[l];
            let input = &post[l];
            let z: Vec<f64> = bias
                .iter()
                .enumerate()
                .map(|(o, &bo)| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    bo + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
                })
                .collect();
            let act = self.activations[l];
            post.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(z);
        }
        Ok(ForwardTrace { post, pre })
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/doutput`, and returns
    /// `dL/dinput`.
    pub fn backward(&self, trace: &ForwardTrace, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta: Vec<f64> = d_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let act = self.activations[l];
            for (o, d) in delta.iter_mut().enumerate() {
                *d *= act.derivative(trace.pre[l][o], trace.post[l + 1][o]);
            }
            let (w, b) = self.layer_range(l);
            let n_in = self.sizes[l];
            let input = &trace.post[l];
            let mut d_in = vec![0.0; n_in];
            let weights = &self.params[w.clone()];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[b.start + o] += d;
                let g_row = &mut grad[w.start + o * n_in..w.start + (o + 1) * n_in];
                let w_row = &weights[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    g_row[i] += d * input[i];
                    d_in[i] += d * w_row[i];
                }
            }
            delta = d_in;
        }
        delta
    }
}

/// Rows-orthonormal (or columns, whichever is shorter) `rows × cols` matrix,
/// row-major, via Gram-Schmidt on a Gaussian draw.
pub fn orthogonal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    let transpose = rows > cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut m: Vec<Vec<f64>> = Vec::with_capacity(r);
    while m.len() < r {
        let mut v: Vec<f64> = (0..c).map(|_| StandardNormal.sample(rng)).collect();
        for u in &m {
            let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            m.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..r {
        for j in 0..c {
            if transpose {
                out[j * cols + i] = m[i][j];
            } else {
                out[i * cols + j] = m[i][j];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Nadam,
}

/// Adam, optionally with Nesterov momentum (NAdam).
#[derive(Debug, Clone)]
pub struct Adam {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(kind: OptimizerKind, n_params: usize, lr: f64, eps: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t);
        let bc1_next = 1.0 - b1.powi(self.t + 1);
        let bc2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let v_hat = self.v[i] / bc2;
            let m_hat = match self.kind {
                OptimizerKind::Adam => self.m[i] / bc1,
                OptimizerKind::Nadam => b1 * self.m[i] / bc1_next + (1.0 - b1) * g / bc1,
            };
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn hand_computed_forward() {
        // 2 -> 2 (relu) -> 1
        let mut m = Mlp::zeros(&[2, 2, 1], &[Activation::Relu, Activation::Identity]).unwrap();
        m.params = vec![
            1.0, 2.0, // h0 = x0 + 2 x1
            -1.0, 1.0, // h1 = -x0 + x1
            0.5, -3.0, // biases
            2.0, 4.0, // out = 2 h0 + 4 h1
            1.0,
        ];
        // x = (1, 1): h0 = 3.5, h1 = max(0, -3) = 0; out = 7 + 0 + 1
        assert_eq!(m.forward(&[1.0, 1.0]).unwrap(), vec![8.0]);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded(3);
        let m = Mlp::glorot(&[3, 5, 4, 2], &[Activation::Tanh, Activation::Relu, Activation::Identity], &mut rng)
            .unwrap();
        let x = [0.3, -0.7, 1.1];
        let w = [0.7, -1.3];
        let loss = |m: &Mlp| -> f64 { m.forward(&x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum() };
        let tr = m.forward_trace(&x).unwrap();
        let mut g = vec![0.0; m.params.len()];
        m.backward(&tr, &w, &mut g);
        for i in 0..m.params.len() {
            let mut p = m.clone();
            p.params[i] += 1e-6;
            let up = loss(&p);
            p.params[i] -= 2e-6;
            let down = loss(&p);
            let num = (up - down) / 2e-6;
            assert!((num - g[i]).abs() < 1e-7, "{i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = seeded(1);
        for (r, c) in [(4, 6), (6, 4), (5, 5)] {
            let q = orthogonal_matrix(r, c, &mut rng);
            let k = r.min(c);
            // Gram matrix of the shorter side.
            for i in 0..k {
                for j in 0..k {
                    let dot: f64 = if r <= c {
                        (0..c).map(|t| q[i * c + t] * q[j * c + t]).sum()
                    } else {
                        (0..r).map(|t| q[t * c + i] * q[t * c + j]).sum()
                    };
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Nadam] {
            let mut opt = Adam::new(kind, 2, 0.05, 1e-8);
            let mut p = vec![3.0, -2.0];
            for _ in 0..2000 {
                let g = vec![2.0 * p[0], 2.0 * p[1]];
                opt.step(&mut p, &g);
            }
            assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2, "{kind:?} {p:?}");
        }
    }

    #[test]
    fn first_adam_step_is_lr_times_sign() {
        let mut opt = Adam::new(OptimizerKind::Adam, 1, 0.001, 1e-8);
        let mut p = vec![1.0];
        opt.step(&mut p, &[5.0]);
        assert!((p[0] - (1.0 - 0.001 * 5.0 / (5.0 + 1e-8))).abs() < 1e-15);
    }
}
