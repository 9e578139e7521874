//! Latent split, zero-padded projection, reconstruction through the inverse
//! flow, element-wise penalties, and the joint training loss.
//!
//! The latent `z = f(x)` splits into an on-manifold part `u` (first `d`
//! coordinates) and an off-manifold part `v`. Reconstruction maps a point
//! onto the learned manifold: `x_rec = f^{-1}(proj(f(x)))` with
//! `proj(z) = (u, 0)`. The training loss adds a weighted element-wise penalty
//! on `x - x_rec` to the flow negative log-likelihood; gradients flow through
//! both the forward and the inverse occurrence of the flow parameters.

pub mod train;

use crate::error::{Error, Result};
use crate::flow::{FlowModel, SampleMode};
use crate::nn::{SeededRng, Tensor};
use crate::numeric::LN_2PI;

/// Partition of an R^D latent into the first `d` on-manifold coordinates and
/// the remaining `D - d` off-manifold coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentSplit {
    d: usize,
    dim: usize,
}

impl LatentSplit {
    pub fn new(d: usize, dim: usize) -> Result<Self> {
        if d == 0 || d > dim {
            return Err(Error::Config(format!(
                "latent split needs 1 <= d <= D, got d={d}, D={dim}"
            )));
        }
        Ok(Self { d, dim })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn off_dim(&self) -> usize {
        self.dim - self.d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyKind {
    Mse,
    Huber,
}

/// Penalty applied to reconstruction residuals: mean squared error or the
/// element-wise Huber function with threshold `delta`, weighted by
/// `lambda_train` in the training loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub delta: f64,
    pub lambda_train: f64,
}

impl PenaltySpec {
    pub fn huber(delta: f64, lambda_train: f64) -> Result<Self> {
        if delta <= 0.0 {
            return Err(Error::Config("huber delta must be positive".into()));
        }
        if lambda_train < 0.0 {
            return Err(Error::Config("lambda_train must be non-negative".into()));
        }
        Ok(Self {
            kind: PenaltyKind::Huber,
            delta,
            lambda_train,
        })
    }

    pub fn mse(lambda_train: f64) -> Result<Self> {
        if lambda_train < 0.0 {
            return Err(Error::Config("lambda_train must be non-negative".into()));
        }
        Ok(Self {
            kind: PenaltyKind::Mse,
            delta: 0.0,
            lambda_train,
        })
    }
}

/// The Huber function: quadratic below `delta`, linear above, C^1 at the
/// switch.
pub fn huber_fn(e: f64, delta: f64) -> f64 {
    debug_assert!(e >= 0.0 && delta > 0.0);
    if e < delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

/// d/de of [`huber_fn`] for e >= 0.
fn huber_fn_deriv(e: f64, delta: f64) -> f64 {
    if e < delta {
        e
    } else {
        delta
    }
}

/// Split a `[batch, D]` latent into `(u, v)`.
pub fn split(z: &Tensor, split: LatentSplit) -> Result<(Tensor, Tensor)> {
    if z.shape().len() != 2 || z.cols() != split.dim() {
        return Err(Error::Config(format!(
            "split expects width {}, got {:?}",
            split.dim(),
            z.shape()
        )));
    }
    let (n, d) = (z.rows(), split.d());
    let off = split.off_dim();
    let mut u = vec![0.0; n * d];
    let mut v = vec![0.0; n * off];
    for r in 0..n {
        let zr = z.row(r);
        u[r * d..(r + 1) * d].copy_from_slice(&zr[..d]);
        v[r * off..(r + 1) * off].copy_from_slice(&zr[d..]);
    }
    Ok((
        Tensor::from_parts(vec![n, d], u),
        Tensor::from_parts(vec![n, off], v),
    ))
}

/// Zero the off-manifold coordinates: `(u, v) -> (u, 0)`. Idempotent.
pub fn project(z: &Tensor, split: LatentSplit) -> Result<Tensor> {
    if z.shape().len() != 2 || z.cols() != split.dim() {
        return Err(Error::Config(format!(
            "project expects width {}, got {:?}",
            split.dim(),
            z.shape()
        )));
    }
    let mut out = z.data().to_vec();
    let dim = split.dim();
    for r in 0..z.rows() {
        for j in split.d()..dim {
            out[r * dim + j] = 0.0;
        }
    }
    Ok(Tensor::from_parts(vec![z.rows(), dim], out))
}

/// Mean element-wise penalty between a sample and its reconstruction.
pub fn penalty(x: &[f64], x_rec: &[f64], spec: &PenaltySpec) -> f64 {
    debug_assert_eq!(x.len(), x_rec.len());
    let d = x.len() as f64;
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(x_rec) {
        let e = (a - b).abs();
        acc += match spec.kind {
            PenaltyKind::Mse => e * e,
            PenaltyKind::Huber => huber_fn(e, spec.delta),
        };
    }
    acc / d
}

/// Per-sample decomposition of the training loss.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    /// -log p_U(u), through the manifold flow when one is attached.
    pub nll_u: f64,
    /// -log p_V(v) under N(0, I).
    pub nll_v: f64,
    /// log |det Df(x)| of the base flow.
    pub logdet: f64,
    /// Element-wise reconstruction penalty (unweighted).
    pub penalty: f64,
    /// Penalty weight used in `loss`.
    pub lambda: f64,
}

impl LossParts {
    /// Flow negative log-likelihood (no penalty term).
    pub fn nll(&self) -> f64 {
        self.nll_u + self.nll_v - self.logdet
    }

    pub fn loss(&self) -> f64 {
        self.nll() + self.lambda * self.penalty
    }
}

/// Base flow over R^D plus the latent split, the training penalty, and an
/// optional second flow modeling the on-manifold density.
#[derive(Clone, Debug)]
pub struct ManifoldFlowModel {
    pub flow: FlowModel,
    pub split: LatentSplit,
    pub manifold_flow: Option<FlowModel>,
    pub penalty: PenaltySpec,
}

impl ManifoldFlowModel {
    pub fn new(
        flow: FlowModel,
        split: LatentSplit,
        manifold_flow: Option<FlowModel>,
        penalty: PenaltySpec,
    ) -> Result<Self> {
        if split.dim() != flow.dim() {
            return Err(Error::Config(format!(
                "split is over R^{} but flow is over R^{}",
                split.dim(),
                flow.dim()
            )));
        }
        if let Some(mf) = &manifold_flow {
            if mf.dim() != split.d() {
                return Err(Error::Config(format!(
                    "manifold flow is over R^{} but split.d = {}",
                    mf.dim(),
                    split.d()
                )));
            }
        }
        Ok(Self {
            flow,
            split,
            manifold_flow,
            penalty,
        })
    }

    pub fn dim(&self) -> usize {
        self.flow.dim()
    }

    pub fn param_count(&self) -> usize {
        self.flow.param_count()
            + self
                .manifold_flow
                .as_ref()
                .map_or(0, |m| m.param_count())
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.flow.params_flat();
        if let Some(mf) = &self.manifold_flow {
            p.extend(mf.params_flat());
        }
        p
    }

    pub fn set_params_flat(&mut self, src: &[f64]) {
        let nf = self.flow.param_count();
        self.flow.set_params_flat(&src[..nf]);
        if let Some(mf) = &mut self.manifold_flow {
            mf.set_params_flat(&src[nf..]);
        }
    }

    /// `x_rec = f^{-1}(proj(f(x)))`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let (z, _) = self.flow.forward(x)?;
        let z_proj = project(&z, self.split)?;
        self.flow.inverse(&z_proj)
    }

    /// Per-sample penalty between `x` and its reconstruction.
    pub fn reconstruction_penalty(&self, x: &Tensor) -> Result<Vec<f64>> {
        let x_rec = self.reconstruct(x)?;
        Ok((0..x.rows())
            .map(|i| penalty(x.row(i), x_rec.row(i), &self.penalty))
            .collect())
    }

    /// Element-wise absolute reconstruction residuals |x - x_rec|, pooled
    /// over samples and coordinates. This is the error set the scale fit
    /// consumes.
    pub fn reconstruction_errors(&self, x: &Tensor) -> Result<Vec<f64>> {
        let x_rec = self.reconstruct(x)?;
        Ok(x.data()
            .iter()
            .zip(x_rec.data())
            .map(|(a, b)| (a - b).abs())
            .collect())
    }

    /// Training loss decomposition per sample (no gradients).
    pub fn training_loss(&self, x: &Tensor) -> Result<Vec<LossParts>> {
        let (parts, _, _) = self.loss_internal(x, false)?;
        Ok(parts)
    }

    /// Training loss plus exact gradients of the summed loss with respect to
    /// all parameters (base flow first, then manifold flow) and the input.
    pub fn training_loss_backward(&self, x: &Tensor) -> Result<(Vec<LossParts>, Vec<f64>, Tensor)> {
        let (parts, grads, dx) = self.loss_internal(x, true)?;
        Ok((parts, grads.unwrap(), dx.unwrap()))
    }

    fn loss_internal(
        &self,
        x: &Tensor,
        with_grad: bool,
    ) -> Result<(Vec<LossParts>, Option<Vec<f64>>, Option<Tensor>)> {
        let n = x.rows();
        let dim = self.dim();
        let d_on = self.split.d();
        let lambda = self.penalty.lambda_train;

        let (z, logdet_f, caches_f) = self.flow.forward_cached(x)?;
        let (u, v) = split(&z, self.split)?;

        // On-manifold density, optionally through the manifold flow.
        let mut mflow_data = None;
        let (u_density, logdet_h): (Tensor, Vec<f64>) = match &self.manifold_flow {
            Some(mf) => {
                let (u2, ld, caches_h) = mf.forward_cached(&u)?;
                if with_grad {
                    mflow_data = Some(caches_h);
                }
                (u2, ld)
            }
            None => (u.clone(), vec![0.0; n]),
        };

        // Reconstruction path. Skip when the penalty cannot contribute
        // (degenerate d = D keeps the loss equal to the plain flow NLL).
        let needs_reconstruction = d_on < dim;
        let (x_rec, caches_inv) = if needs_reconstruction {
            let z_proj = project(&z, self.split)?;
            let (x_rec, caches_inv) = self.flow.inverse_cached(&z_proj)?;
            (Some(x_rec), Some(caches_inv))
        } else {
            (None, None)
        };

        let mut parts = Vec::with_capacity(n);
        for i in 0..n {
            let su: f64 = u_density.row(i).iter().map(|t| t * t).sum();
            let sv: f64 = v.row(i).iter().map(|t| t * t).sum();
            let nll_u = 0.5 * su + 0.5 * d_on as f64 * LN_2PI - logdet_h[i];
            let nll_v = 0.5 * sv + 0.5 * (dim - d_on) as f64 * LN_2PI;
            let pen = match &x_rec {
                Some(xr) => penalty(x.row(i), xr.row(i), &self.penalty),
                None => 0.0,
            };
            let p = LossParts {
                nll_u,
                nll_v,
                logdet: logdet_f[i],
                penalty: pen,
                lambda,
            };
            if !p.loss().is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at sample {i}: nll_u={} nll_v={} logdet={} penalty={}",
                    p.nll_u, p.nll_v, p.logdet, p.penalty
                )));
            }
            parts.push(p);
        }

        if !with_grad {
            return Ok((parts, None, None));
        }

        let n_flow = self.flow.param_count();
        let mut grads = vec![0.0; self.param_count()];

        // Penalty path: d(sum loss)/d(x_rec), then back through the inverse
        // flow to the projected latent.
        let mut du_pen = Tensor::zeros(vec![n, d_on]);
        let mut dx_pen = Tensor::zeros(vec![n, dim]);
        if let (Some(xr), Some(caches_inv)) = (&x_rec, &caches_inv) {
            let mut d_xrec = vec![0.0; n * dim];
            for i in 0..n {
                let xi = x.row(i);
                let ri = xr.row(i);
                for j in 0..dim {
                    let r = ri[j] - xi[j];
                    let g = match self.penalty.kind {
                        PenaltyKind::Mse => 2.0 * r,
                        PenaltyKind::Huber => huber_fn_deriv(r.abs(), self.penalty.delta)
                            * if r >= 0.0 { 1.0 } else { -1.0 },
                    } * lambda
                        / dim as f64;
                    d_xrec[i * dim + j] = g;
                    // x appears directly in the residual with opposite sign.
                    dx_pen.data_mut()[i * dim + j] = -g;
                }
            }
            let d_xrec = Tensor::from_parts(vec![n, dim], d_xrec);
            let dz_proj = self
                .flow
                .backward_inverse(caches_inv, &d_xrec, &mut grads[..n_flow]);
            // The projection passes the u part through and blocks v.
            for i in 0..n {
                du_pen.row_mut(i).copy_from_slice(&dz_proj.row(i)[..d_on]);
            }
        }

        // Density path on u, through the manifold flow when present.
        let du_density = match (&self.manifold_flow, &mflow_data) {
            (Some(mf), Some(caches_h)) => {
                let d_logdet_h = vec![-1.0; n];
                mf.backward_forward(caches_h, &u_density, &d_logdet_h, &mut grads[n_flow..])
            }
            _ => u_density.clone(),
        };

        // Assemble dz for the base flow: u gets density + penalty cotangents,
        // v gets its Gaussian cotangent.
        let mut dz = vec![0.0; n * dim];
        for i in 0..n {
            for j in 0..d_on {
                dz[i * dim + j] = du_density.row(i)[j] + du_pen.row(i)[j];
            }
            for j in d_on..dim {
                dz[i * dim + j] = v.row(i)[j - d_on];
            }
        }
        let dz = Tensor::from_parts(vec![n, dim], dz);
        let d_logdet_f = vec![-1.0; n];
        let dx_flow = self
            .flow
            .backward_forward(&caches_f, &dz, &d_logdet_f, &mut grads[..n_flow]);

        let mut dx = dx_flow.into_data();
        for (a, b) in dx.iter_mut().zip(dx_pen.data()) {
            *a += b;
        }
        Ok((
            parts,
            Some(grads),
            Some(Tensor::from_parts(vec![n, dim], dx)),
        ))
    }

    /// Negative log-likelihood decomposition used for scoring:
    /// `-log p_U(u) - log p_V(v) - log |det Df(x)|` per sample.
    pub fn nll_parts(&self, x: &Tensor) -> Result<Vec<LossParts>> {
        // Same computation as the training loss with the same penalty spec;
        // callers pick the terms they need.
        self.training_loss(x)
    }

    /// Draw samples. `Manifold(d)` zeroes the off-manifold latent part; when
    /// a manifold flow is attached its inverse shapes the on-manifold draw
    /// and `d` must equal the split dimension.
    pub fn sample(&self, n: usize, mode: SampleMode, seed: u64) -> Result<Tensor> {
        match &self.manifold_flow {
            None => self.flow.sample(n, mode, seed),
            Some(mf) => {
                let d_on = match mode {
                    SampleMode::Full => self.split.d(),
                    SampleMode::Manifold(d) => {
                        if d != self.split.d() {
                            return Err(Error::Config(format!(
                                "manifold sampling with an attached manifold flow requires d = {}, got {d}",
                                self.split.d()
                            )));
                        }
                        d
                    }
                };
                let dim = self.dim();
                let mut rng = SeededRng::stream(seed, 1);
                let mut u_prime = vec![0.0; n * d_on];
                for t in u_prime.iter_mut() {
                    *t = rng.normal();
                }
                let u = mf.inverse(&Tensor::from_parts(vec![n, d_on], u_prime))?;
                let mut z = vec![0.0; n * dim];
                for r in 0..n {
                    z[r * dim..r * dim + d_on].copy_from_slice(u.row(r));
                    if mode == SampleMode::Full {
                        for j in d_on..dim {
                            z[r * dim + j] = rng.normal();
                        }
                    }
                }
                if n == 0 {
                    return Ok(Tensor::from_parts(vec![0, dim], z));
                }
                self.flow.inverse(&Tensor::from_parts(vec![n, dim], z))
            }
        }
    }
}
