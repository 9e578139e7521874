//! Small numerical support routines shared by the library and its test
//! oracles: the standard normal CDF, a dense LU log-determinant, composite
//! Simpson quadrature, and a Jacobi eigensolver for symmetric matrices.

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// erf(x), re-exported for callers that want the raw function.
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// log |det A| of a dense row-major `n x n` matrix by LU with partial
/// pivoting. Returns `None` for (numerically) singular input.
pub fn lu_log_abs_det(a: &[f64], n: usize) -> Option<f64> {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut log_det = 0.0;
    for col in 0..n {
        let mut piv = col;
        let mut best = m[col * n + col].abs();
        for r in col + 1..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return None;
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
        }
        let diag = m[col * n + col];
        log_det += diag.abs().ln();
        for r in col + 1..n {
            let f = m[r * n + col] / diag;
            m[r * n + col] = 0.0;
            for c in col + 1..n {
                m[r * n + c] -= f * m[col * n + c];
            }
        }
    }
    Some(log_det)
}

/// Composite Simpson rule on [a, b] with `n` subintervals (rounded up to
/// even). The integrand should be smooth on the interval; split at kinks.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}

/// Singular values of a row-major `rows x cols` matrix by one-sided Jacobi
/// rotations on the columns, returned in descending order. Avoids forming the
/// Gram matrix, so tiny singular values keep full relative precision.
pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    // Column-major working copy.
    let mut m: Vec<f64> = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[c * rows + r] = a[r * cols + c];
        }
    }
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for r in 0..rows {
                    let (xp, xq) = (m[p * rows + r], m[q * rows + r]);
                    app += xp * xp;
                    aqq += xq * xq;
                    apq += xp * xq;
                }
                if apq.abs() <= 1e-30 + 1e-15 * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let (xp, xq) = (m[p * rows + r], m[q * rows + r]);
                    m[p * rows + r] = c * xp - s * xq;
                    m[q * rows + r] = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..cols)
        .map(|c| {
            (0..rows)
                .map(|r| m[c * rows + r] * m[c * rows + r])
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Eigenvalues of a symmetric row-major `n x n` matrix by cyclic Jacobi
/// rotations, returned in descending order.
pub fn sym_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig
}
