//! Activation normalization: per-dimension affine `z = s * x + b`.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Per-dimension scale and bias. Starts as the identity; the first training
/// batch sets scale and bias so the layer output has mean 0 and variance 1
/// per dimension.
#[derive(Clone, Debug)]
pub struct ActNorm {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
    pub initialized: bool,
}

pub struct ActNormCache {
    x: Tensor,
}

pub struct ActNormInvCache {
    x_out: Tensor,
}

impl ActNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            bias: vec![0.0; dim],
            initialized: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.scale);
        out.extend_from_slice(&self.bias);
    }

    pub fn read_params(&mut self, src: &[f64]) {
        let d = self.dim();
        self.scale.copy_from_slice(&src[..d]);
        self.bias.copy_from_slice(&src[d..2 * d]);
    }

    /// Data-dependent init: post-init output has per-dimension mean 0 and
    /// variance 1 on the given batch.
    pub fn init_from_batch(&mut self, x: &Tensor) -> Result<()> {
        let (n, d) = (x.rows(), x.cols());
        if n < 2 {
            return Err(Error::Config(
                "actnorm init needs at least two samples".into(),
            ));
        }
        for j in 0..d {
            let mut mean = 0.0;
            for i in 0..n {
                mean += x.row(i)[j];
            }
            mean /= n as f64;
            let mut var = 0.0;
            for i in 0..n {
                let c = x.row(i)[j] - mean;
                var += c * c;
            }
            var /= n as f64;
            let std = var.sqrt().max(1e-6);
            self.scale[j] = 1.0 / std;
            self.bias[j] = -mean / std;
        }
        self.initialized = true;
        Ok(())
    }

    /// Log-determinant contribution, identical for every sample.
    pub fn log_det(&self) -> f64 {
        self.scale.iter().map(|s| s.abs().ln()).sum()
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, f64, ActNormCache) {
        let (n, d) = (x.rows(), x.cols());
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let xr = x.row(i);
            for j in 0..d {
                out[i * d + j] = self.scale[j] * xr[j] + self.bias[j];
            }
        }
        (
            Tensor::from_parts(vec![n, d], out),
            self.log_det(),
            ActNormCache { x: x.clone() },
        )
    }

    pub fn inverse(&self, z: &Tensor) -> (Tensor, ActNormInvCache) {
        let (n, d) = (z.rows(), z.cols());
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let zr = z.row(i);
            for j in 0..d {
                out[i * d + j] = (zr[j] - self.bias[j]) / self.scale[j];
            }
        }
        let x_out = Tensor::from_parts(vec![n, d], out);
        (x_out.clone(), ActNormInvCache { x_out })
    }

    /// VJP through the forward map. `d_logdet` is the per-sample cotangent of
    /// this layer's log-det contribution.
    pub fn vjp_forward(
        &self,
        cache: &ActNormCache,
        dz: &Tensor,
        d_logdet: &[f64],
        grads: &mut [f64],
    ) -> Tensor {
        let (n, d) = (dz.rows(), dz.cols());
        let (gs, gb) = grads.split_at_mut(d);
        let mut dx = vec![0.0; n * d];
        let d_logdet_sum: f64 = d_logdet.iter().sum();
        for i in 0..n {
            let dzr = dz.row(i);
            let xr = cache.x.row(i);
            for j in 0..d {
                gs[j] += dzr[j] * xr[j];
                gb[j] += dzr[j];
                dx[i * d + j] = self.scale[j] * dzr[j];
            }
        }
        for j in 0..d {
            // d(sum log|s|)/ds = 1/s.
            gs[j] += d_logdet_sum / self.scale[j];
        }
        Tensor::from_parts(vec![n, d], dx)
    }

    /// VJP through the inverse map `x = (z - b) / s`.
    pub fn vjp_inverse(
        &self,
        cache: &ActNormInvCache,
        dx_out: &Tensor,
        grads: &mut [f64],
    ) -> Tensor {
        let (n, d) = (dx_out.rows(), dx_out.cols());
        let (gs, gb) = grads.split_at_mut(d);
        let mut dz = vec![0.0; n * d];
        for i in 0..n {
            let dr = dx_out.row(i);
            let xr = cache.x_out.row(i);
            for j in 0..d {
                let g = dr[j] / self.scale[j];
                dz[i * d + j] = g;
                gb[j] -= g;
                gs[j] -= g * xr[j];
            }
        }
        Tensor::from_parts(vec![n, d], dz)
    }
}
