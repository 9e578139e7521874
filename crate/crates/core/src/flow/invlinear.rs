//! Invertible dense linear layer stored as a PLU factorization.
//!
//! `z = P L U x` with a fixed permutation `P`, unit-lower-triangular `L`, and
//! upper-triangular `U` whose diagonal is stored as sign and log-magnitude.
//! The factored form keeps the map invertible by construction and makes the
//! log-determinant the plain sum of the stored log-magnitudes.

use crate::nn::{SeededRng, Tensor};

#[derive(Clone, Debug)]
pub struct InvLinear {
    dim: usize,
    /// Forward gather: `z[i] = y2[perm[i]]`.
    pub perm: Vec<usize>,
    /// Strict lower triangle of `L`, packed row-major (i > j).
    pub lower: Vec<f64>,
    /// Strict upper triangle of `U`, packed row-major (i < j).
    pub upper: Vec<f64>,
    /// log |U_ii|, trained.
    pub log_diag: Vec<f64>,
    /// Fixed sign of `U_ii`.
    pub diag_sign: Vec<f64>,
}

pub struct InvLinearCache {
    x: Tensor,
    y1: Tensor,
}

pub struct InvLinearInvCache {
    y1: Tensor,
    x_out: Tensor,
}

fn tri_len(dim: usize) -> usize {
    dim * (dim - 1) / 2
}

/// Packed index for a strict lower triangle entry (i > j), row-major.
fn lo_idx(i: usize, j: usize) -> usize {
    i * (i - 1) / 2 + j
}

/// Packed index for a strict upper triangle entry (i < j), row-major, in a
/// matrix of width `dim`.
fn up_idx(dim: usize, i: usize, j: usize) -> usize {
    // Row i holds dim-1-i entries, starting after the rows above it.
    i * dim - i * (i + 1) / 2 + (j - i - 1)
}

impl InvLinear {
    /// Identity map (identity permutation, L = U = I).
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            perm: (0..dim).collect(),
            lower: vec![0.0; tri_len(dim)],
            upper: vec![0.0; tri_len(dim)],
            log_diag: vec![0.0; dim],
            diag_sign: vec![1.0; dim],
        }
    }

    /// Random fixed permutation, L = U = I (so the layer starts as a pure
    /// permutation with zero log-det).
    pub fn with_random_permutation(dim: usize, rng: &mut SeededRng) -> Self {
        let mut layer = Self::identity(dim);
        rng.shuffle(&mut layer.perm);
        layer
    }

    /// Rebuild from serialized structure; parameters load separately through
    /// [`InvLinear::read_params`].
    pub fn from_saved(
        dim: usize,
        perm: Vec<usize>,
        diag_sign: Vec<f64>,
    ) -> crate::error::Result<Self> {
        use crate::error::Error;
        if perm.len() != dim || diag_sign.len() != dim {
            return Err(Error::Format("invlinear descriptor length mismatch".into()));
        }
        let mut seen = vec![false; dim];
        for &p in &perm {
            if p >= dim || seen[p] {
                return Err(Error::Format("invlinear descriptor is not a permutation".into()));
            }
            seen[p] = true;
        }
        if diag_sign.iter().any(|s| s.abs() != 1.0) {
            return Err(Error::Format("invlinear diagonal signs must be +-1".into()));
        }
        Ok(Self {
            dim,
            perm,
            lower: vec![0.0; tri_len(dim)],
            upper: vec![0.0; tri_len(dim)],
            log_diag: vec![0.0; dim],
            diag_sign,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_count(&self) -> usize {
        2 * tri_len(self.dim) + self.dim
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.lower);
        out.extend_from_slice(&self.upper);
        out.extend_from_slice(&self.log_diag);
    }

    pub fn read_params(&mut self, src: &[f64]) {
        let t = tri_len(self.dim);
        self.lower.copy_from_slice(&src[..t]);
        self.upper.copy_from_slice(&src[t..2 * t]);
        self.log_diag.copy_from_slice(&src[2 * t..2 * t + self.dim]);
    }

    pub fn log_det(&self) -> f64 {
        self.log_diag.iter().sum()
    }

    fn diag(&self, i: usize) -> f64 {
        self.diag_sign[i] * self.log_diag[i].exp()
    }

    /// y1 = U x for one row.
    fn apply_upper(&self, x: &[f64], y: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut acc = self.diag(i) * x[i];
            for j in i + 1..d {
                acc += self.upper[up_idx(d, i, j)] * x[j];
            }
            y[i] = acc;
        }
    }

    /// y2 = L y1 for one row.
    fn apply_lower(&self, y1: &[f64], y2: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut acc = y1[i];
            for j in 0..i {
                acc += self.lower[lo_idx(i, j)] * y1[j];
            }
            y2[i] = acc;
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, f64, InvLinearCache) {
        let (n, d) = (x.rows(), x.cols());
        let mut y1 = vec![0.0; n * d];
        let mut z = vec![0.0; n * d];
        let mut y2_row = vec![0.0; d];
        for r in 0..n {
            self.apply_upper(x.row(r), &mut y1[r * d..(r + 1) * d]);
            self.apply_lower(&y1[r * d..(r + 1) * d], &mut y2_row);
            for i in 0..d {
                z[r * d + i] = y2_row[self.perm[i]];
            }
        }
        (
            Tensor::from_parts(vec![n, d], z),
            self.log_det(),
            InvLinearCache {
                x: x.clone(),
                y1: Tensor::from_parts(vec![n, d], y1),
            },
        )
    }

    pub fn inverse(&self, z: &Tensor) -> (Tensor, InvLinearInvCache) {
        let (n, d) = (z.rows(), z.cols());
        let mut y1 = vec![0.0; n * d];
        let mut x = vec![0.0; n * d];
        let mut y2 = vec![0.0; d];
        for r in 0..n {
            let zr = z.row(r);
            for i in 0..d {
                y2[self.perm[i]] = zr[i];
            }
            // Solve L y1 = y2 (unit diagonal, forward substitution).
            let y1r = &mut y1[r * d..(r + 1) * d];
            for i in 0..d {
                let mut acc = y2[i];
                for j in 0..i {
                    acc -= self.lower[lo_idx(i, j)] * y1r[j];
                }
                y1r[i] = acc;
            }
            // Solve U x = y1 (back substitution).
            let xr = &mut x[r * d..(r + 1) * d];
            for i in (0..d).rev() {
                let mut acc = y1r[i];
                for j in i + 1..d {
                    acc -= self.upper[up_idx(d, i, j)] * xr[j];
                }
                xr[i] = acc / self.diag(i);
            }
        }
        let x_out = Tensor::from_parts(vec![n, d], x);
        (
            x_out.clone(),
            InvLinearInvCache {
                y1: Tensor::from_parts(vec![n, d], y1),
                x_out,
            },
        )
    }

    pub fn vjp_forward(
        &self,
        cache: &InvLinearCache,
        dz: &Tensor,
        d_logdet: &[f64],
        grads: &mut [f64],
    ) -> Tensor {
        let (n, d) = (dz.rows(), dz.cols());
        let t = tri_len(d);
        let (g_lower, rest) = grads.split_at_mut(t);
        let (g_upper, g_logdiag) = rest.split_at_mut(t);
        let mut dx = vec![0.0; n * d];
        let mut dy2 = vec![0.0; d];
        let mut dy1 = vec![0.0; d];
        let d_logdet_sum: f64 = d_logdet.iter().sum();
        for r in 0..n {
            let dzr = dz.row(r);
            for i in 0..d {
                dy2[self.perm[i]] = dzr[i];
            }
            let y1r = cache.y1.row(r);
            let xr = cache.x.row(r);
            // dL_{ij} += dy2_i * y1_j ; dy1 = L^T dy2.
            for j in 0..d {
                let mut acc = dy2[j];
                for i in j + 1..d {
                    acc += self.lower[lo_idx(i, j)] * dy2[i];
                }
                dy1[j] = acc;
            }
            for i in 0..d {
                for j in 0..i {
                    g_lower[lo_idx(i, j)] += dy2[i] * y1r[j];
                }
            }
            // dU_{ij} += dy1_i * x_j ; diagonal chains through exp.
            for i in 0..d {
                for j in i + 1..d {
                    g_upper[up_idx(d, i, j)] += dy1[i] * xr[j];
                }
                g_logdiag[i] += dy1[i] * xr[i] * self.diag(i);
            }
            // dx = U^T dy1.
            let dxr = &mut dx[r * d..(r + 1) * d];
            for j in 0..d {
                let mut acc = self.diag(j) * dy1[j];
                for i in 0..j {
                    acc += self.upper[up_idx(d, i, j)] * dy1[i];
                }
                dxr[j] = acc;
            }
        }
        for i in 0..d {
            g_logdiag[i] += d_logdet_sum;
        }
        Tensor::from_parts(vec![n, d], dx)
    }

    pub fn vjp_inverse(
        &self,
        cache: &InvLinearInvCache,
        dx_out: &Tensor,
        grads: &mut [f64],
    ) -> Tensor {
        let (n, d) = (dx_out.rows(), dx_out.cols());
        let t = tri_len(d);
        let (g_lower, rest) = grads.split_at_mut(t);
        let (g_upper, g_logdiag) = rest.split_at_mut(t);
        let mut dz = vec![0.0; n * d];
        let mut gy1 = vec![0.0; d];
        let mut gy2 = vec![0.0; d];
        for r in 0..n {
            let gx = dx_out.row(r);
            let xr = cache.x_out.row(r);
            let y1r = cache.y1.row(r);
            // Solve U^T gy1 = gx (U^T lower triangular, forward substitution).
            for i in 0..d {
                let mut acc = gx[i];
                for j in 0..i {
                    acc -= self.upper[up_idx(d, j, i)] * gy1[j];
                }
                gy1[i] = acc / self.diag(i);
            }
            // gU = -gy1 x^T on the upper triangle.
            for i in 0..d {
                for j in i + 1..d {
                    g_upper[up_idx(d, i, j)] -= gy1[i] * xr[j];
                }
                g_logdiag[i] -= gy1[i] * xr[i] * self.diag(i);
            }
            // Solve L^T gy2 = gy1 (unit upper triangular, back substitution).
            for i in (0..d).rev() {
                let mut acc = gy1[i];
                for j in i + 1..d {
                    acc -= self.lower[lo_idx(j, i)] * gy2[j];
                }
                gy2[i] = acc;
            }
            // gL = -gy2 y1^T on the strict lower triangle.
            for i in 0..d {
                for j in 0..i {
                    g_lower[lo_idx(i, j)] -= gy2[i] * y1r[j];
                }
            }
            let dzr = &mut dz[r * d..(r + 1) * d];
            for i in 0..d {
                dzr[i] = gy2[self.perm[i]];
            }
        }
        Tensor::from_parts(vec![n, d], dz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_layer(dim: usize, seed: u64) -> InvLinear {
        let mut rng = SeededRng::new(seed);
        let mut layer = InvLinear::with_random_permutation(dim, &mut rng);
        for v in layer.lower.iter_mut().chain(layer.upper.iter_mut()) {
            *v = rng.uniform(-0.6, 0.6);
        }
        for v in layer.log_diag.iter_mut() {
            *v = rng.uniform(-0.3, 0.3);
        }
        layer
    }

    #[test]
    fn identity_is_identity() {
        let layer = InvLinear::identity(4);
        let x = Tensor::new(vec![1, 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let (z, ld, _) = layer.forward(&x);
        assert_eq!(z.data(), x.data());
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn round_trip() {
        let layer = random_layer(5, 17);
        let mut rng = SeededRng::new(3);
        let x = Tensor::new(vec![3, 5], (0..15).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
        let (z, _, _) = layer.forward(&x);
        let (back, _) = layer.inverse(&z);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn log_det_matches_dense_lu() {
        let layer = random_layer(6, 5);
        // Build the dense matrix by applying the layer to basis vectors.
        let d = 6;
        let mut dense = vec![0.0; d * d];
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let (z, _, _) = layer.forward(&Tensor::new(vec![1, d], e).unwrap());
            for i in 0..d {
                dense[i * d + j] = z.data()[i];
            }
        }
        let lu = crate::numeric::lu_log_abs_det(&dense, d).unwrap();
        assert!((lu - layer.log_det()).abs() < 1e-10, "{lu} vs {}", layer.log_det());
    }

    #[test]
    fn packed_index_layout() {
        // dim 4 strict upper: (0,1)(0,2)(0,3)(1,2)(1,3)(2,3).
        assert_eq!(up_idx(4, 0, 1), 0);
        assert_eq!(up_idx(4, 0, 3), 2);
        assert_eq!(up_idx(4, 1, 2), 3);
        assert_eq!(up_idx(4, 2, 3), 5);
        assert_eq!(lo_idx(1, 0), 0);
        assert_eq!(lo_idx(3, 2), 5);
    }
}
