//! Synthetic dataset generators, IDX image ingestion, and the binary tensor
//! container.

pub mod container;
pub mod idx;

pub use container::{load_tensor, read_sidecar, save_tensor, write_sidecar};
pub use idx::load_idx;

use crate::error::{Error, Result};
use crate::nn::{SeededRng, Tensor};

/// Angle distribution over [0, pi] for the semicircle generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaProfile {
    Uniform,
    /// Raised-cosine density `p(t) = (1 - cos 2t) / pi`: unimodal around
    /// pi/2 with genuinely low density near the arc ends.
    Concentrated,
}

impl ThetaProfile {
    pub fn name(&self) -> &'static str {
        match self {
            ThetaProfile::Uniform => "uniform",
            ThetaProfile::Concentrated => "concentrated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ThetaProfile::Uniform),
            "concentrated" => Ok(ThetaProfile::Concentrated),
            other => Err(Error::Config(format!("unknown theta profile {other:?}"))),
        }
    }
}

/// Optional coordinate-wise map applied after the linear embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    None,
    /// `t + tanh(t)`: smooth, strictly monotone.
    Smooth,
}

impl Nonlinearity {
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::None => "none",
            Nonlinearity::Smooth => "smooth",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Nonlinearity::None),
            "smooth" => Ok(Nonlinearity::Smooth),
            other => Err(Error::Config(format!("unknown nonlinearity {other:?}"))),
        }
    }
}

/// Generator provenance. For the synthetic generators this is sufficient to
/// regenerate the dataset bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub enum GenMeta {
    Semicircle {
        n: usize,
        noise_sigma: f64,
        profile: ThetaProfile,
        seed: u64,
    },
    Embedded {
        n: usize,
        d: usize,
        dim: usize,
        nonlinearity: Nonlinearity,
        noise_sigma: f64,
        seed: u64,
    },
    Idx {
        source: String,
        n: usize,
        dim: usize,
    },
    /// Model samples written by the sampling command.
    Sample {
        checkpoint: String,
        mode: String,
        n: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub tensor: Tensor,
    pub meta: GenMeta,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.tensor.rows()
    }

    pub fn dim(&self) -> usize {
        self.tensor.cols()
    }
}

/// Inverse CDF of the raised-cosine profile by bisection on
/// `F(t) = (t - sin(2t)/2) / pi`.
fn raised_cosine_inverse_cdf(u: f64) -> f64 {
    let target = u * std::f64::consts::PI;
    let (mut lo, mut hi) = (0.0f64, std::f64::consts::PI);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        let f = mid - 0.5 * (2.0 * mid).sin();
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Noisy semicircle in R^2: angle from the chosen profile over [0, pi],
/// radius `1 + eps` with `eps ~ N(0, noise_sigma^2)`.
pub fn gen_semicircle(
    n: usize,
    noise_sigma: f64,
    profile: ThetaProfile,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("semicircle generator needs n > 0".into()));
    }
    if noise_sigma < 0.0 {
        return Err(Error::Config("noise_sigma must be non-negative".into()));
    }
    let mut rng = SeededRng::stream(seed, 0);
    let mut v = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let u = rng.next_f64();
        let theta = match profile {
            ThetaProfile::Uniform => u * std::f64::consts::PI,
            ThetaProfile::Concentrated => raised_cosine_inverse_cdf(u),
        };
        let r = 1.0 + noise_sigma * rng.normal();
        v.push(theta.cos() * r);
        v.push(theta.sin() * r);
    }
    Ok(Dataset {
        tensor: Tensor::new(vec![n, 2], v)?,
        meta: GenMeta::Semicircle {
            n,
            noise_sigma,
            profile,
            seed,
        },
    })
}

/// Latent `g ~ N(0, I_d)` pushed through a seeded random linear embedding
/// into R^D (optionally composed with a smooth coordinate-wise map), plus
/// isotropic Gaussian noise.
pub fn gen_embedded_manifold(
    n: usize,
    d: usize,
    dim: usize,
    nonlinearity: Nonlinearity,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("embedded generator needs n > 0".into()));
    }
    if d == 0 || d >= dim {
        return Err(Error::Config(format!(
            "embedded manifold needs 1 <= d < D, got d={d}, D={dim}"
        )));
    }
    if noise_sigma < 0.0 {
        return Err(Error::Config("noise_sigma must be non-negative".into()));
    }
    let mut rng = SeededRng::stream(seed, 0);
    // Fixed embedding matrix, then per-sample latent and noise draws.
    let scale = 1.0 / (d as f64).sqrt();
    let embed: Vec<f64> = (0..dim * d).map(|_| rng.normal() * scale).collect();
    let mut v = Vec::with_capacity(n * dim);
    let mut g = vec![0.0; d];
    for _ in 0..n {
        for gj in g.iter_mut() {
            *gj = rng.normal();
        }
        for i in 0..dim {
            let mut acc = 0.0;
            for j in 0..d {
                acc += embed[i * d + j] * g[j];
            }
            if nonlinearity == Nonlinearity::Smooth {
                acc += acc.tanh();
            }
            acc += noise_sigma * rng.normal();
            v.push(acc);
        }
    }
    Ok(Dataset {
        tensor: Tensor::new(vec![n, dim], v)?,
        meta: GenMeta::Embedded {
            n,
            d,
            dim,
            nonlinearity,
            noise_sigma,
            seed,
        },
    })
}

/// Regenerate a dataset from its metadata. Identity for generator-backed
/// datasets; IDX-backed metadata cannot be regenerated.
pub fn regenerate(meta: &GenMeta) -> Result<Dataset> {
    match meta {
        GenMeta::Semicircle {
            n,
            noise_sigma,
            profile,
            seed,
        } => gen_semicircle(*n, *noise_sigma, *profile, *seed),
        GenMeta::Embedded {
            n,
            d,
            dim,
            nonlinearity,
            noise_sigma,
            seed,
        } => gen_embedded_manifold(*n, *d, *dim, *nonlinearity, *noise_sigma, *seed),
        GenMeta::Idx { source, .. } => Err(Error::Config(format!(
            "dataset loaded from {source} cannot be regenerated from metadata"
        ))),
        GenMeta::Sample { checkpoint, .. } => Err(Error::Config(format!(
            "samples from {checkpoint} regenerate through the sampling command, not the data generators"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::sym_eigenvalues;

    #[test]
    fn zero_noise_points_on_unit_circle() {
        let ds = gen_semicircle(500, 0.0, ThetaProfile::Uniform, 3).unwrap();
        for i in 0..ds.n() {
            let r = ds.tensor.row(i);
            let rad = (r[0] * r[0] + r[1] * r[1]).sqrt();
            assert!((rad - 1.0).abs() < 1e-12);
            assert!(r[1] >= -1e-12, "y = {} below the semicircle", r[1]);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_semicircle(4, 0.05, ThetaProfile::Concentrated, 9).unwrap();
        let b = gen_semicircle(4, 0.05, ThetaProfile::Concentrated, 9).unwrap();
        assert_eq!(a.tensor.data(), b.tensor.data());
        let c = gen_embedded_manifold(8, 2, 5, Nonlinearity::Smooth, 0.01, 11).unwrap();
        let d = regenerate(&c.meta).unwrap();
        assert_eq!(c.tensor.data(), d.tensor.data());
    }

    #[test]
    fn concentrated_profile_peaks_at_center() {
        let n = 100_000;
        let ds = gen_semicircle(n, 0.0, ThetaProfile::Concentrated, 21).unwrap();
        let mut hist = [0usize; 10];
        for i in 0..n {
            let r = ds.tensor.row(i);
            let theta = r[1].atan2(r[0]);
            let theta = if theta < 0.0 { 0.0 } else { theta };
            let bin = ((theta / std::f64::consts::PI) * 10.0).min(9.0) as usize;
            hist[bin] += 1;
        }
        // Density near pi/2 (bins 4-5) at least 3x the density near 0 (bin 0).
        let center = (hist[4] + hist[5]) as f64 / 2.0;
        let edge = hist[0].max(1) as f64;
        assert!(center / edge >= 3.0, "center {center} edge {edge}");
    }

    #[test]
    fn linear_embedding_has_numerical_rank_d() {
        let (n, d, dim) = (400, 3, 8);
        let ds = gen_embedded_manifold(n, d, dim, Nonlinearity::None, 0.0, 5).unwrap();
        let sv = crate::numeric::singular_values(ds.tensor.data(), n, dim);
        assert!(
            sv[d] / sv[d - 1] < 1e-10,
            "singular values {sv:?} do not drop after {d}"
        );
    }

    #[test]
    fn pca_residual_matches_noise_floor() {
        let (n, d, dim, sigma) = (4000, 3, 8, 0.01);
        let ds = gen_embedded_manifold(n, d, dim, Nonlinearity::None, sigma, 7).unwrap();
        let mut mean = vec![0.0; dim];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(ds.tensor.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; dim * dim];
        for r in 0..n {
            let row = ds.tensor.row(r);
            for i in 0..dim {
                for j in 0..dim {
                    cov[i * dim + j] += (row[i] - mean[i]) * (row[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= n as f64);
        let eig = sym_eigenvalues(&cov, dim);
        let resid: f64 = eig[d..].iter().sum::<f64>() / (dim - d) as f64;
        let floor = sigma * sigma;
        assert!(
            resid > floor / 2.0 && resid < floor * 2.0,
            "residual {resid} vs noise floor {floor}"
        );
    }

    #[test]
    fn embedded_validates_dimensions() {
        assert!(gen_embedded_manifold(10, 4, 4, Nonlinearity::None, 0.0, 0).is_err());
        assert!(gen_embedded_manifold(10, 0, 4, Nonlinearity::None, 0.0, 0).is_err());
        assert!(gen_embedded_manifold(0, 2, 4, Nonlinearity::None, 0.0, 0).is_err());
    }

    #[test]
    fn profile_and_nonlinearity_parse() {
        assert_eq!(ThetaProfile::parse("uniform").unwrap(), ThetaProfile::Uniform);
        assert!(ThetaProfile::parse("bogus").is_err());
        assert_eq!(Nonlinearity::parse("smooth").unwrap(), Nonlinearity::Smooth);
        assert!(Nonlinearity::parse("bogus").is_err());
    }
}
