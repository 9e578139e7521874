//! Affine coupling layer.
//!
//! A binary mask splits coordinates into a conditioning part `x_a` (passed
//! through unchanged) and a transformed part `x_b`. An MLP maps `x_a` to a
//! log-scale `s` and shift `t`, and the layer computes
//! `z_b = x_b * exp(s) + t`. The log-scale is soft-clamped through
//! `s = c * tanh(s_raw / c)` so `exp(s)` stays within `exp(±c)`.

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpCache, SeededRng, Tensor};

#[derive(Clone, Debug)]
pub struct Coupling {
    dim: usize,
    /// `true` = conditioning coordinate (pass-through).
    pub mask: Vec<bool>,
    pub conditioner: Mlp,
    pub clamp: f64,
    idx_a: Vec<usize>,
    idx_b: Vec<usize>,
}

pub struct CouplingCache {
    x_b: Tensor,
    s_raw: Tensor,
    s: Tensor,
    mlp: MlpCache,
}

pub struct CouplingInvCache {
    x_b: Tensor,
    s_raw: Tensor,
    s: Tensor,
    mlp: MlpCache,
}

impl Coupling {
    /// Builds the conditioner as `[n_a, hidden.., 2 * n_b]` with the final
    /// layer zeroed, so a fresh layer is the identity map.
    pub fn new(
        dim: usize,
        mask: Vec<bool>,
        hidden: &[usize],
        clamp: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if mask.len() != dim {
            return Err(Error::Config("coupling mask length != dim".into()));
        }
        let idx_a: Vec<usize> = (0..dim).filter(|&i| mask[i]).collect();
        let idx_b: Vec<usize> = (0..dim).filter(|&i| !mask[i]).collect();
        if idx_a.is_empty() || idx_b.is_empty() {
            return Err(Error::Config(
                "coupling mask needs at least one masked and one unmasked coordinate".into(),
            ));
        }
        if clamp <= 0.0 {
            return Err(Error::Config("coupling clamp must be positive".into()));
        }
        let mut widths = vec![idx_a.len()];
        widths.extend_from_slice(hidden);
        widths.push(2 * idx_b.len());
        let mut conditioner = Mlp::new(&widths, rng)?;
        conditioner.zero_final_layer();
        Ok(Self {
            dim,
            mask,
            conditioner,
            clamp,
            idx_a,
            idx_b,
        })
    }

    /// Alternating-parity mask: coordinate `i` conditions when
    /// `i % 2 == parity`.
    pub fn parity_mask(dim: usize, parity: usize) -> Vec<bool> {
        (0..dim).map(|i| i % 2 == parity % 2).collect()
    }

    /// Rebuild from serialized structure with zeroed parameters; weights load
    /// separately through [`Coupling::read_params`].
    pub fn from_saved(dim: usize, mask: Vec<bool>, widths: &[usize], clamp: f64) -> Result<Self> {
        let idx_a: Vec<usize> = (0..dim).filter(|&i| mask[i]).collect();
        let idx_b: Vec<usize> = (0..dim).filter(|&i| !mask[i]).collect();
        if mask.len() != dim || idx_a.is_empty() || idx_b.is_empty() {
            return Err(Error::Format("coupling descriptor mask invalid".into()));
        }
        if widths.first() != Some(&idx_a.len()) || widths.last() != Some(&(2 * idx_b.len())) {
            return Err(Error::Format(
                "coupling conditioner widths do not match the mask".into(),
            ));
        }
        if clamp <= 0.0 {
            return Err(Error::Format("coupling clamp must be positive".into()));
        }
        Ok(Self {
            dim,
            mask,
            conditioner: Mlp::zeroed(widths)?,
            clamp,
            idx_a,
            idx_b,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_transformed(&self) -> usize {
        self.idx_b.len()
    }

    pub fn param_count(&self) -> usize {
        self.conditioner.param_count()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        self.conditioner.write_params(out);
    }

    pub fn read_params(&mut self, src: &[f64]) {
        self.conditioner.read_params(src);
    }

    fn gather(&self, x: &Tensor, idx: &[usize]) -> Tensor {
        let n = x.rows();
        let mut out = vec![0.0; n * idx.len()];
        for r in 0..n {
            let xr = x.row(r);
            for (k, &i) in idx.iter().enumerate() {
                out[r * idx.len() + k] = xr[i];
            }
        }
        Tensor::from_parts(vec![n, idx.len()], out)
    }

    /// Conditioner outputs `[s_raw | t]`, each `n_b` wide.
    fn condition(&self, x_a: &Tensor) -> Result<(Tensor, Tensor, Tensor, MlpCache)> {
        let (out, mlp_cache) = self.conditioner.forward(x_a)?;
        let (n, nb) = (out.rows(), self.idx_b.len());
        let mut s_raw = vec![0.0; n * nb];
        let mut t = vec![0.0; n * nb];
        let mut s = vec![0.0; n * nb];
        for r in 0..n {
            let orow = out.row(r);
            for k in 0..nb {
                s_raw[r * nb + k] = orow[k];
                t[r * nb + k] = orow[nb + k];
                s[r * nb + k] = self.clamp * (orow[k] / self.clamp).tanh();
            }
        }
        Ok((
            Tensor::from_parts(vec![n, nb], s_raw),
            Tensor::from_parts(vec![n, nb], s),
            Tensor::from_parts(vec![n, nb], t),
            mlp_cache,
        ))
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>, CouplingCache)> {
        let n = x.rows();
        let nb = self.idx_b.len();
        let x_a = self.gather(x, &self.idx_a);
        let x_b = self.gather(x, &self.idx_b);
        let (s_raw, s, t, mlp) = self.condition(&x_a)?;
        let mut z = x.data().to_vec();
        let mut logdet = vec![0.0; n];
        for r in 0..n {
            let srow = s.row(r);
            let trow = t.row(r);
            let xbr = x_b.row(r);
            for k in 0..nb {
                z[r * self.dim + self.idx_b[k]] = xbr[k] * srow[k].exp() + trow[k];
                logdet[r] += srow[k];
            }
        }
        Ok((
            Tensor::from_parts(vec![n, self.dim], z),
            logdet,
            CouplingCache {
                x_b,
                s_raw,
                s,
                mlp,
            },
        ))
    }

    pub fn inverse(&self, z: &Tensor) -> Result<(Tensor, CouplingInvCache)> {
        let n = z.rows();
        let nb = self.idx_b.len();
        let z_a = self.gather(z, &self.idx_a);
        let z_b = self.gather(z, &self.idx_b);
        let (s_raw, s, t, mlp) = self.condition(&z_a)?;
        let mut x = z.data().to_vec();
        let mut x_b = vec![0.0; n * nb];
        for r in 0..n {
            let srow = s.row(r);
            let trow = t.row(r);
            let zbr = z_b.row(r);
            for k in 0..nb {
                let v = (zbr[k] - trow[k]) * (-srow[k]).exp();
                x[r * self.dim + self.idx_b[k]] = v;
                x_b[r * nb + k] = v;
            }
        }
        Ok((
            Tensor::from_parts(vec![n, self.dim], x),
            CouplingInvCache {
                x_b: Tensor::from_parts(vec![n, nb], x_b),
                s_raw,
                s,
                mlp,
            },
        ))
    }

    /// VJP through the forward map, including the log-det path.
    pub fn vjp_forward(
        &self,
        cache: &CouplingCache,
        dz: &Tensor,
        d_logdet: &[f64],
        grads: &mut [f64],
    ) -> Tensor {
        let n = dz.rows();
        let nb = self.idx_b.len();
        let na = self.idx_a.len();
        let mut d_out = vec![0.0; n * 2 * nb];
        let mut dx = vec![0.0; n * self.dim];
        for r in 0..n {
            let dzr = dz.row(r);
            let srow = cache.s.row(r);
            let srawr = cache.s_raw.row(r);
            let xbr = cache.x_b.row(r);
            for k in 0..nb {
                let dzb = dzr[self.idx_b[k]];
                let es = srow[k].exp();
                // z_b = x_b e^s + t.
                let ds = dzb * xbr[k] * es + d_logdet[r];
                let dt = dzb;
                dx[r * self.dim + self.idx_b[k]] = dzb * es;
                let th = (srawr[k] / self.clamp).tanh();
                d_out[r * 2 * nb + k] = ds * (1.0 - th * th);
                d_out[r * 2 * nb + nb + k] = dt;
            }
        }
        let d_out = Tensor::from_parts(vec![n, 2 * nb], d_out);
        let dx_a_mlp = self.conditioner.backward(&cache.mlp, &d_out, grads);
        for r in 0..n {
            let dzr = dz.row(r);
            let dmr = dx_a_mlp.row(r);
            for k in 0..na {
                dx[r * self.dim + self.idx_a[k]] = dzr[self.idx_a[k]] + dmr[k];
            }
        }
        Tensor::from_parts(vec![n, self.dim], dx)
    }

    /// VJP through the inverse map `x_b = (z_b - t) exp(-s)`.
    pub fn vjp_inverse(
        &self,
        cache: &CouplingInvCache,
        dx_out: &Tensor,
        grads: &mut [f64],
    ) -> Tensor {
        let n = dx_out.rows();
        let nb = self.idx_b.len();
        let na = self.idx_a.len();
        let mut d_out = vec![0.0; n * 2 * nb];
        let mut dz = vec![0.0; n * self.dim];
        for r in 0..n {
            let dxr = dx_out.row(r);
            let srow = cache.s.row(r);
            let srawr = cache.s_raw.row(r);
            let xbr = cache.x_b.row(r);
            for k in 0..nb {
                let dxb = dxr[self.idx_b[k]];
                let ems = (-srow[k]).exp();
                let dzb = dxb * ems;
                dz[r * self.dim + self.idx_b[k]] = dzb;
                let dt = -dzb;
                let ds = -dxb * xbr[k];
                let th = (srawr[k] / self.clamp).tanh();
                d_out[r * 2 * nb + k] = ds * (1.0 - th * th);
                d_out[r * 2 * nb + nb + k] = dt;
            }
        }
        let d_out = Tensor::from_parts(vec![n, 2 * nb], d_out);
        let dz_a_mlp = self.conditioner.backward(&cache.mlp, &d_out, grads);
        for r in 0..n {
            let dxr = dx_out.row(r);
            let dmr = dz_a_mlp.row(r);
            for k in 0..na {
                dz[r * self.dim + self.idx_a[k]] = dxr[self.idx_a[k]] + dmr[k];
            }
        }
        Tensor::from_parts(vec![n, self.dim], dz)
    }
}
