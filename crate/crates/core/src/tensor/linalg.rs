use super::Tensor;
use crate::error::{Error, Result};

/// Default diagonal jitter added before factorizing kernel matrices.
pub const DEFAULT_JITTER: f64 = 1e-6;
/// Largest jitter the escalation loop will try.
pub const JITTER_CAP: f64 = 1e-2;

/// Lower-triangular factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    l: Tensor,
    jitter: f64,
}

impl CholeskyFactor {
    pub fn l(&self) -> &Tensor {
        &self.l
    }

    pub fn into_l(self) -> Tensor {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Jitter that was actually applied (after escalation).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solve `A x = b` with the factored matrix.
    pub fn solve(&self, b: &Tensor) -> Tensor {
        solve_upper_t(&self.l, &solve_lower(&self.l, b))
    }

    pub fn reconstruct(&self) -> Tensor {
        Tensor::matmul_t(&self.l, false, &self.l, true)
    }
}

/// Factor `a + jitter·I`, escalating the jitter tenfold on failure up to
/// [`JITTER_CAP`].
pub fn cholesky(a: &Tensor, jitter: f64) -> Result<CholeskyFactor> {
    cholesky_with_cap(a, jitter, JITTER_CAP)
}

pub fn cholesky_with_cap(a: &Tensor, jitter: f64, cap: f64) -> Result<CholeskyFactor> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let scale = a.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-10 * scale {
                return Err(Error::NotSymmetric);
            }
        }
    }
    let mut j = jitter.max(0.0);
    loop {
        if let Some(l) = try_factor(a, j) {
            return Ok(CholeskyFactor { l, jitter: j });
        }
        j = if j == 0.0 { 1e-10 } else { j * 10.0 };
        if j > cap * (1.0 + 1e-12) {
            return Err(Error::NotPositiveDefinite { jitter: j / 10.0 });
        }
    }
}

fn try_factor(a: &Tensor, jitter: f64) -> Option<Tensor> {
    let n = a.rows();
    let mut l = Tensor::zeros(n, n);
    let ld = l.as_mut_slice();
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            let (ri, rj) = (&ld[i * n..i * n + j], &ld[j * n..j * n + j]);
            for k in 0..j {
                s -= ri[k] * rj[k];
            }
            if i == j {
                s += jitter;
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                ld[i * n + i] = s.sqrt();
            } else {
                ld[i * n + j] = s / ld[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &Tensor, b: &Tensor) -> Tensor {
    let n = l.rows();
    assert_eq!(n, b.rows(), "solve_lower: {}x{} vs {:?}", n, l.cols(), b.shape());
    let m = b.cols();
    let mut x = b.clone();
    let xd = x.as_mut_slice();
    for i in 0..n {
        let (done, rest) = xd.split_at_mut(i * m);
        let xi = &mut rest[..m];
        for k in 0..i {
            let lik = l.get(i, k);
            if lik != 0.0 {
                let xk = &done[k * m..(k + 1) * m];
                for (a, b) in xi.iter_mut().zip(xk) {
                    *a -= lik * b;
                }
            }
        }
        let inv = 1.0 / l.get(i, i);
        for a in xi.iter_mut() {
            *a *= inv;
        }
    }
    x
}

/// Solve `Lᵀ X = B` for lower-triangular `L`.
pub fn solve_upper_t(l: &Tensor, b: &Tensor) -> Tensor {
    let n = l.rows();
    assert_eq!(n, b.rows(), "solve_upper_t: {}x{} vs {:?}", n, l.cols(), b.shape());
    let m = b.cols();
    let mut x = b.clone();
    let xd = x.as_mut_slice();
    for i in (0..n).rev() {
        let (head, tail) = xd.split_at_mut((i + 1) * m);
        let xi = &mut head[i * m..];
        for k in i + 1..n {
            let lki = l.get(k, i);
            if lki != 0.0 {
                let xk = &tail[(k - i - 1) * m..(k - i) * m];
                for (a, b) in xi.iter_mut().zip(xk) {
                    *a -= lki * b;
                }
            }
        }
        let inv = 1.0 / l.get(i, i);
        for a in xi.iter_mut() {
            *a *= inv;
        }
    }
    x
}
