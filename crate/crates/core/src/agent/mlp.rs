//! Fully connected networks over one flat parameter vector, and Adam.
//!
//! Layer `l` maps a row batch `X (batch × d_l)` to `X W_l + b_l` with `W_l`
//! stored row-major as `d_l × d_{l+1}`. Hidden layers use ReLU; the output is
//! a sigmoid or the identity.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{exp, sqrt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    output: OutputActivation,
    params: Vec<f64>,
    /// Start of `W_l` in `params`; `b_l` follows it.
    offsets: Vec<usize>,
}

/// Layer inputs kept by [`Mlp::forward_cached`] for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    batch: usize,
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// `C = A·B + beta·C` where `A` is `m × k` and `B` is `k × n` after optional
/// transposition of the stored row-major operands.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], at: bool, b: &[f64], bt: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices have exactly the extents described by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

impl Mlp {
    /// Zero-initialized network with the given layer widths.
    pub fn zeros(dims: &[usize], output: OutputActivation) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "need at least two positive widths");
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut total = 0;
        for w in dims.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        Self { dims: dims.to_vec(), output, params: vec![0.0; total], offsets }
    }

    /// Uniform fan-in initialization `U(-1/√fan_in, 1/√fan_in)` for weights and
    /// biases; the last layer is scaled by `last_scale`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], output: OutputActivation, last_scale: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(dims, output);
        let layers = net.layers();
        for l in 0..layers {
            let bound = 1.0 / sqrt(dims[l] as f64);
            let scale = if l + 1 == layers { last_scale } else { 1.0 };
            let (start, end) = net.layer_range(l);
            for p in &mut net.params[start..end] {
                *p = scale * rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    fn layer_range(&self, l: usize) -> (usize, usize) {
        let start = self.offsets[l];
        (start, start + self.dims[l] * self.dims[l + 1] + self.dims[l + 1])
    }

    fn weights(&self, l: usize) -> &[f64] {
        let start = self.offsets[l];
        &self.params[start..start + self.dims[l] * self.dims[l + 1]]
    }

    fn bias(&self, l: usize) -> &[f64] {
        let start = self.offsets[l] + self.dims[l] * self.dims[l + 1];
        &self.params[start..start + self.dims[l + 1]]
    }

    /// Forward pass over `batch` rows of `x`, keeping what backprop needs.
    pub fn forward_cached(&self, x: &[f64], batch: usize) -> ForwardCache {
        assert_eq!(x.len(), batch * self.input_dim(), "input dimension mismatch");
        let mut inputs = Vec::with_capacity(self.layers());
        let mut a = x.to_vec();
        for l in 0..self.layers() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let mut z = vec![0.0; batch * dout];
            let bias = self.bias(l);
            for row in z.chunks_exact_mut(dout) {
                row.copy_from_slice(bias);
            }
            gemm(batch, din, dout, &a, false, self.weights(l), false, 1.0, &mut z);
            if l + 1 < self.layers() {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            } else if self.output == OutputActivation::Sigmoid {
                for v in &mut z {
                    *v = sigmoid(*v);
                }
            }
            inputs.push(a);
            a = z;
        }
        ForwardCache { batch, inputs, output: a }
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.forward_cached(x, batch).output
    }

    /// Backpropagate `d_out = ∂L/∂output` (batch × out). Returns the parameter
    /// gradient when `want_params` is set (empty otherwise) and `∂L/∂input`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], want_params: bool) -> (Vec<f64>, Vec<f64>) {
        let batch = cache.batch;
        assert_eq!(d_out.len(), batch * self.output_dim());
        let mut grad = if want_params { vec![0.0; self.params.len()] } else { Vec::new() };
        let mut dz: Vec<f64> = match self.output {
            OutputActivation::Sigmoid => d_out.iter().zip(&cache.output).map(|(g, y)| g * y * (1.0 - y)).collect(),
            OutputActivation::Identity => d_out.to_vec(),
        };
        for l in (0..self.layers()).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let a_in = &cache.inputs[l];
            if want_params {
                let start = self.offsets[l];
                let (gw, gb) = grad[start..start + din * dout + dout].split_at_mut(din * dout);
                gemm(din, batch, dout, a_in, true, &dz, false, 0.0, gw);
                for row in dz.chunks_exact(dout) {
                    for (b, g) in gb.iter_mut().zip(row) {
                        *b += g;
                    }
                }
            }
            let mut da = vec![0.0; batch * din];
            gemm(batch, dout, din, &dz, false, self.weights(l), true, 0.0, &mut da);
            if l > 0 {
                // ReLU: the layer input is the previous post-activation.
                for (g, a) in da.iter_mut().zip(a_in) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            dz = da;
        }
        (grad, dz)
    }

    /// `θ' ← τθ + (1−τ)θ'`
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        assert_eq!(self.dims, source.dims, "shape mismatch");
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
}

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
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (sqrt(vh) + self.eps);
        }
    }
}
