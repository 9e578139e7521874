//! Dense multi-layer perceptron with hand-written reverse-mode gradients.
//!
//! Hidden layers use tanh, the output layer is linear. The forward pass caches
//! every post-activation so the backward pass is exact. Parameters flatten to
//! a single slice (`W1, b1, W2, b2, ...`, weights row-major `[out][in]`) so
//! optimizers and finite-difference checks can treat the network as a vector.

use crate::error::{Error, Result};
use crate::nn::rng::SeededRng;
use crate::nn::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    /// Per layer, row-major `[out][in]`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activation record from [`Mlp::forward`]; holds the input and every layer
/// output, which is exactly what the tanh/linear backward needs.
#[derive(Clone, Debug)]
pub struct MlpCache {
    activations: Vec<Tensor>,
}

impl Mlp {
    /// Uniform init in ±1/sqrt(fan_in) on every layer.
    pub fn new(widths: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(
                "mlp needs at least an input and an output width".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::Config("mlp layer widths must be positive".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            let w: Vec<f64> = (0..n_in * n_out)
                .map(|_| rng.uniform(-bound, bound))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; n_out]);
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    /// All-zero parameters; used when deserializing before reading weights.
    pub fn zeroed(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(
                "mlp needs at least an input and an output width".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::Config("mlp layer widths must be positive".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            weights.push(vec![0.0; widths[l] * widths[l + 1]]);
            biases.push(vec![0.0; widths[l + 1]]);
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    /// Zero the final layer so the network starts as the constant-zero map.
    pub fn zero_final_layer(&mut self) {
        if let Some(w) = self.weights.last_mut() {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        if let Some(b) = self.biases.last_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_in(&self) -> usize {
        self.widths[0]
    }

    pub fn n_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        (0..self.widths.len() - 1)
            .map(|l| self.widths[l] * self.widths[l + 1] + self.widths[l + 1])
            .sum()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
    }

    pub fn read_params(&mut self, src: &[f64]) {
        let mut off = 0;
        for l in 0..self.weights.len() {
            let nw = self.weights[l].len();
            self.weights[l].copy_from_slice(&src[off..off + nw]);
            off += nw;
            let nb = self.biases[l].len();
            self.biases[l].copy_from_slice(&src[off..off + nb]);
            off += nb;
        }
        debug_assert_eq!(off, src.len());
    }

    /// Forward pass over a `[batch, n_in]` tensor.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        if x.shape().len() != 2 || x.cols() != self.n_in() {
            return Err(Error::Config(format!(
                "mlp input width {} does not match first layer width {}",
                if x.shape().len() == 2 { x.cols() } else { 0 },
                self.n_in()
            )));
        }
        let batch = x.rows();
        let n_layers = self.weights.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(x.clone());
        for l in 0..n_layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let prev = &activations[l];
            let mut out = vec![0.0; batch * n_out];
            for n in 0..batch {
                let xin = prev.row(n);
                let orow = &mut out[n * n_out..(n + 1) * n_out];
                for o in 0..n_out {
                    let wrow = &self.weights[l][o * n_in..(o + 1) * n_in];
                    let mut acc = self.biases[l][o];
                    for i in 0..n_in {
                        acc += wrow[i] * xin[i];
                    }
                    orow[o] = acc;
                }
            }
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(Tensor::from_parts(vec![batch, n_out], out));
        }
        let y = activations.last().unwrap().clone();
        Ok((y, MlpCache { activations }))
    }

    /// Reverse-mode pass. Accumulates parameter gradients into `grads`
    /// (layout matching [`Mlp::write_params`]) and returns the input gradient.
    pub fn backward(&self, cache: &MlpCache, dy: &Tensor, grads: &mut [f64]) -> Tensor {
        assert_eq!(grads.len(), self.param_count(), "gradient buffer size");
        assert_eq!(
            cache.activations.len(),
            self.weights.len() + 1,
            "stale mlp cache"
        );
        let batch = dy.rows();
        assert_eq!(dy.cols(), self.n_out(), "cotangent width");
        assert_eq!(cache.activations[0].rows(), batch, "cache batch mismatch");

        // Per-layer gradient slice offsets.
        let mut offsets = Vec::with_capacity(self.weights.len());
        let mut off = 0;
        for l in 0..self.weights.len() {
            offsets.push(off);
            off += self.weights[l].len() + self.biases[l].len();
        }

        let mut delta = dy.data().to_vec();
        for l in (0..self.weights.len()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let a_in = &cache.activations[l];
            let (gw, rest) = grads[offsets[l]..].split_at_mut(n_in * n_out);
            let gb = &mut rest[..n_out];
            let mut d_in = vec![0.0; batch * n_in];
            for n in 0..batch {
                let xin = a_in.row(n);
                let drow = &delta[n * n_out..(n + 1) * n_out];
                let din = &mut d_in[n * n_in..(n + 1) * n_in];
                for o in 0..n_out {
                    let d = drow[o];
                    gb[o] += d;
                    let wrow = &self.weights[l][o * n_in..(o + 1) * n_in];
                    let gwrow = &mut gw[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        gwrow[i] += d * xin[i];
                        din[i] += d * wrow[i];
                    }
                }
            }
            if l > 0 {
                // Previous layer output went through tanh: a = tanh(pre),
                // d(pre) = d(a) * (1 - a^2).
                let a = cache.activations[l].data();
                for (d, &av) in d_in.iter_mut().zip(a.iter()) {
                    *d *= 1.0 - av * av;
                }
            }
            delta = d_in;
        }
        Tensor::from_parts(vec![batch, self.n_in()], delta)
    }
}
