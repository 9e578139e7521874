//! Invertible transformations over R^D with exact log-determinants.
//!
//! A [`FlowModel`] is an ordered stack of invertible layers with a standard
//! normal latent prior. The forward map, its inverse, and the
//! log-determinant all expose exact reverse-mode gradients, so training
//! objectives may differentiate through any composition of the three.

pub mod actnorm;
pub mod coupling;
pub mod invlinear;

pub use actnorm::ActNorm;
pub use coupling::Coupling;
pub use invlinear::InvLinear;

use crate::error::{Error, Result};
use crate::nn::{SeededRng, Tensor};
use crate::numeric::LN_2PI;

#[derive(Clone, Debug)]
pub enum Layer {
    ActNorm(ActNorm),
    InvLinear(InvLinear),
    Coupling(Coupling),
}

pub enum LayerCache {
    ActNorm(actnorm::ActNormCache),
    InvLinear(invlinear::InvLinearCache),
    Coupling(coupling::CouplingCache),
}

pub enum LayerInvCache {
    ActNorm(actnorm::ActNormInvCache),
    InvLinear(invlinear::InvLinearInvCache),
    Coupling(coupling::CouplingInvCache),
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::ActNorm(l) => l.param_count(),
            Layer::InvLinear(l) => l.param_count(),
            Layer::Coupling(l) => l.param_count(),
        }
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            Layer::ActNorm(l) => l.write_params(out),
            Layer::InvLinear(l) => l.write_params(out),
            Layer::Coupling(l) => l.write_params(out),
        }
    }

    pub fn read_params(&mut self, src: &[f64]) {
        match self {
            Layer::ActNorm(l) => l.read_params(src),
            Layer::InvLinear(l) => l.read_params(src),
            Layer::Coupling(l) => l.read_params(src),
        }
    }
}

/// Soft clamp bound for coupling log-scales.
pub const DEFAULT_CLAMP: f64 = 5.0;

/// Sampling mode: draw the full latent, or draw only the first `d`
/// coordinates and zero the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Full,
    Manifold(usize),
}

/// Stack of invertible layers over R^D with latent prior N(0, I_D).
#[derive(Clone, Debug)]
pub struct FlowModel {
    dim: usize,
    pub layers: Vec<Layer>,
}

impl FlowModel {
    pub fn from_layers(dim: usize, layers: Vec<Layer>) -> Result<Self> {
        for (i, layer) in layers.iter().enumerate() {
            let ld = match layer {
                Layer::ActNorm(l) => l.dim(),
                Layer::InvLinear(l) => l.dim(),
                Layer::Coupling(l) => l.dim(),
            };
            if ld != dim {
                return Err(Error::Config(format!(
                    "layer {i} has dimension {ld}, model expects {dim}"
                )));
            }
        }
        Ok(Self { dim, layers })
    }

    /// Standard dense stack: `blocks` repetitions of
    /// [actnorm -> invertible linear -> coupling], coupling masks alternating
    /// parity so every coordinate is transformed. The permutations of the
    /// invertible linear layers are drawn once from `seed`.
    pub fn dense(dim: usize, blocks: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(
                "dense flow needs dim >= 2 (coupling masks require both parts)".into(),
            ));
        }
        if blocks == 0 {
            return Err(Error::Config("dense flow needs at least one block".into()));
        }
        let mut rng = SeededRng::stream(seed, 0);
        let mut layers = Vec::with_capacity(3 * blocks);
        for b in 0..blocks {
            layers.push(Layer::ActNorm(ActNorm::new(dim)));
            layers.push(Layer::InvLinear(InvLinear::with_random_permutation(
                dim, &mut rng,
            )));
            layers.push(Layer::Coupling(Coupling::new(
                dim,
                Coupling::parity_mask(dim, b),
                hidden,
                DEFAULT_CLAMP,
                &mut rng,
            )?));
        }
        Self::from_layers(dim, layers)
    }

    /// Affine-only stack (actnorm + invertible linear), valid for any
    /// dimension including 1. Used for flows on very low-dimensional latents.
    pub fn dense_affine(dim: usize, blocks: usize, seed: u64) -> Result<Self> {
        if dim == 0 || blocks == 0 {
            return Err(Error::Config("affine flow needs dim, blocks >= 1".into()));
        }
        let mut rng = SeededRng::stream(seed, 0);
        let mut layers = Vec::with_capacity(2 * blocks);
        for _ in 0..blocks {
            layers.push(Layer::ActNorm(ActNorm::new(dim)));
            layers.push(Layer::InvLinear(InvLinear::with_random_permutation(
                dim, &mut rng,
            )));
        }
        Self::from_layers(dim, layers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            layer.write_params(&mut out);
        }
        out
    }

    pub fn set_params_flat(&mut self, src: &[f64]) {
        assert_eq!(src.len(), self.param_count(), "flat parameter length");
        let mut off = 0;
        for layer in &mut self.layers {
            let n = layer.param_count();
            layer.read_params(&src[off..off + n]);
            off += n;
        }
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }
        offsets
    }

    fn check_input(&self, x: &Tensor, what: &str) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.dim {
            return Err(Error::Config(format!(
                "{what} expects [batch, {}], got {:?}",
                self.dim,
                x.shape()
            )));
        }
        if !x.all_finite() {
            return Err(Error::Numeric(format!("{what} input contains non-finite values")));
        }
        Ok(())
    }

    /// z = f(x) with per-sample log |det Df(x)|, plus per-layer caches for
    /// the backward pass.
    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<LayerCache>)> {
        self.check_input(x, "flow forward")?;
        let n = x.rows();
        let mut cur = x.clone();
        let mut logdet = vec![0.0; n];
        let mut caches = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let next = match layer {
                Layer::ActNorm(l) => {
                    let (z, ld, c) = l.forward(&cur);
                    logdet.iter_mut().for_each(|v| *v += ld);
                    caches.push(LayerCache::ActNorm(c));
                    z
                }
                Layer::InvLinear(l) => {
                    let (z, ld, c) = l.forward(&cur);
                    logdet.iter_mut().for_each(|v| *v += ld);
                    caches.push(LayerCache::InvLinear(c));
                    z
                }
                Layer::Coupling(l) => {
                    let (z, ld, c) = l.forward(&cur)?;
                    logdet.iter_mut().zip(&ld).for_each(|(v, d)| *v += d);
                    caches.push(LayerCache::Coupling(c));
                    z
                }
            };
            if !next.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value in forward pass at layer {li}"
                )));
            }
            cur = next;
        }
        Ok((cur, logdet, caches))
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (z, logdet, _) = self.forward_cached(x)?;
        Ok((z, logdet))
    }

    pub fn inverse_cached(&self, z: &Tensor) -> Result<(Tensor, Vec<LayerInvCache>)> {
        self.check_input(z, "flow inverse")?;
        let mut cur = z.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let next = match layer {
                Layer::ActNorm(l) => {
                    let (x, c) = l.inverse(&cur);
                    caches.push(LayerInvCache::ActNorm(c));
                    x
                }
                Layer::InvLinear(l) => {
                    let (x, c) = l.inverse(&cur);
                    caches.push(LayerInvCache::InvLinear(c));
                    x
                }
                Layer::Coupling(l) => {
                    let (x, c) = l.inverse(&cur)?;
                    caches.push(LayerInvCache::Coupling(c));
                    x
                }
            };
            if !next.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value in inverse pass at layer {li}"
                )));
            }
            cur = next;
        }
        // Caches were pushed in reverse layer order (last layer first).
        Ok((cur, caches))
    }

    pub fn inverse(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.inverse_cached(z)?.0)
    }

    /// log p(x) under the change of variables
    /// `log p(x) = log N(f(x); 0, I) + log |det Df(x)|`.
    pub fn log_prob(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (z, logdet) = self.forward(x)?;
        let d = self.dim as f64;
        Ok((0..z.rows())
            .map(|i| {
                let sq: f64 = z.row(i).iter().map(|v| v * v).sum();
                -0.5 * sq - 0.5 * d * LN_2PI + logdet[i]
            })
            .collect())
    }

    /// Draw samples by inverting latent draws. `Manifold(d)` zeroes the last
    /// `D - d` latent coordinates before inversion.
    pub fn sample(&self, n: usize, mode: SampleMode, seed: u64) -> Result<Tensor> {
        let d_on = match mode {
            SampleMode::Full => self.dim,
            SampleMode::Manifold(d) => {
                if d == 0 || d > self.dim {
                    return Err(Error::Config(format!(
                        "manifold sample dimension {d} outside 1..={}",
                        self.dim
                    )));
                }
                d
            }
        };
        let mut rng = SeededRng::stream(seed, 1);
        let mut z = vec![0.0; n * self.dim];
        for r in 0..n {
            for j in 0..d_on {
                z[r * self.dim + j] = rng.normal();
            }
        }
        if n == 0 {
            return Ok(Tensor::from_parts(vec![0, self.dim], z));
        }
        self.inverse(&Tensor::from_parts(vec![n, self.dim], z))
    }

    /// Reverse-mode pass through the forward map. `dz` and `d_logdet` are the
    /// cotangents of the outputs of [`FlowModel::forward_cached`]; parameter
    /// gradients accumulate into `grads` and the input gradient is returned.
    pub fn backward_forward(
        &self,
        caches: &[LayerCache],
        dz: &Tensor,
        d_logdet: &[f64],
        grads: &mut [f64],
    ) -> Tensor {
        assert_eq!(grads.len(), self.param_count());
        assert_eq!(caches.len(), self.layers.len(), "stale forward cache");
        let offsets = self.layer_offsets();
        let mut cur = dz.clone();
        for li in (0..self.layers.len()).rev() {
            let gslice = &mut grads[offsets[li]..offsets[li] + self.layers[li].param_count()];
            cur = match (&self.layers[li], &caches[li]) {
                (Layer::ActNorm(l), LayerCache::ActNorm(c)) => {
                    l.vjp_forward(c, &cur, d_logdet, gslice)
                }
                (Layer::InvLinear(l), LayerCache::InvLinear(c)) => {
                    l.vjp_forward(c, &cur, d_logdet, gslice)
                }
                (Layer::Coupling(l), LayerCache::Coupling(c)) => {
                    l.vjp_forward(c, &cur, d_logdet, gslice)
                }
                _ => panic!("forward cache does not match layer stack"),
            };
        }
        cur
    }

    /// Reverse-mode pass through the inverse map. `dx` is the cotangent of
    /// the reconstructed input; returns the cotangent of the latent.
    pub fn backward_inverse(
        &self,
        caches: &[LayerInvCache],
        dx: &Tensor,
        grads: &mut [f64],
    ) -> Tensor {
        assert_eq!(grads.len(), self.param_count());
        assert_eq!(caches.len(), self.layers.len(), "stale inverse cache");
        let offsets = self.layer_offsets();
        let mut cur = dx.clone();
        // The inverse applied layers last-to-first, so its VJP walks them
        // first-to-last; caches[k] belongs to layer `len - 1 - k`.
        for li in 0..self.layers.len() {
            let gslice = &mut grads[offsets[li]..offsets[li] + self.layers[li].param_count()];
            let cache = &caches[self.layers.len() - 1 - li];
            cur = match (&self.layers[li], cache) {
                (Layer::ActNorm(l), LayerInvCache::ActNorm(c)) => l.vjp_inverse(c, &cur, gslice),
                (Layer::InvLinear(l), LayerInvCache::InvLinear(c)) => {
                    l.vjp_inverse(c, &cur, gslice)
                }
                (Layer::Coupling(l), LayerInvCache::Coupling(c)) => l.vjp_inverse(c, &cur, gslice),
                _ => panic!("inverse cache does not match layer stack"),
            };
        }
        cur
    }

    /// Gradients of `sum_i -log p(x_i)` with respect to all parameters.
    /// Returns (gradients, input gradient, total negative log-likelihood).
    pub fn backprop_logprob(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor, f64)> {
        let (z, logdet, caches) = self.forward_cached(x)?;
        let n = z.rows();
        let d = self.dim as f64;
        let mut total_nll = 0.0;
        for i in 0..n {
            let sq: f64 = z.row(i).iter().map(|v| v * v).sum();
            total_nll += 0.5 * sq + 0.5 * d * LN_2PI - logdet[i];
        }
        // d(-log p)/dz = z, d(-log p)/dlogdet = -1.
        let dz = z.clone();
        let d_logdet = vec![-1.0; n];
        let mut grads = vec![0.0; self.param_count()];
        let dx = self.backward_forward(&caches, &dz, &d_logdet, &mut grads);
        Ok((grads, dx, total_nll))
    }

    /// Data-dependent actnorm initialization: propagates the batch through
    /// the stack, initializing every uninitialized actnorm from its incoming
    /// activations.
    pub fn init_actnorm(&mut self, batch: &Tensor) -> Result<()> {
        self.check_input(batch, "actnorm init")?;
        let mut cur = batch.clone();
        for layer in &mut self.layers {
            match layer {
                Layer::ActNorm(l) => {
                    if !l.initialized {
                        l.init_from_batch(&cur)?;
                    }
                    let (z, _, _) = l.forward(&cur);
                    cur = z;
                }
                Layer::InvLinear(l) => {
                    let (z, _, _) = l.forward(&cur);
                    cur = z;
                }
                Layer::Coupling(l) => {
                    let (z, _, _) = l.forward(&cur)?;
                    cur = z;
                }
            }
        }
        Ok(())
    }
}
