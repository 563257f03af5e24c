//! Squared-exponential kernel with automatic relevance determination.
//!
//! `k(x, x') = ν_f · exp(-½ Σ_k (x_k - x'_k)² / ℓ_k²)`, with the lengthscales
//! `ℓ` and the signal variance `ν_f` stored as logarithms.

use crate::error::{Error, Result};
use crate::params::{join, Binder, Parameterized};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct SeArdKernel {
    /// `1 x d` row of log-lengthscales.
    pub log_lengthscales: Tensor,
    /// `1 x 1` log signal variance.
    pub log_variance: Tensor,
}

impl SeArdKernel {
    /// Unit lengthscales and unit signal variance.
    pub fn new(dim: usize) -> Self {
        SeArdKernel { log_lengthscales: Tensor::zeros(1, dim), log_variance: Tensor::scalar(0.0) }
    }

    pub fn with_params(lengthscales: &[f64], variance: f64) -> Self {
        assert!(lengthscales.iter().all(|&l| l > 0.0) && variance > 0.0);
        SeArdKernel {
            log_lengthscales: Tensor::row(lengthscales.iter().map(|l| l.ln()).collect()),
            log_variance: Tensor::scalar(variance.ln()),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.cols()
    }

    pub fn variance(&self) -> f64 {
        self.log_variance.item().exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.as_slice().iter().map(|v| v.exp()).collect()
    }

    fn check(&self, a: &Tensor) -> Result<()> {
        if a.cols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "kernel of dimension {} applied to inputs with {} columns",
                self.dim(),
                a.cols()
            )));
        }
        Ok(())
    }

    /// Cross-covariance matrix `k(A, B)`.
    pub fn gram(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        let tape = Tape::new();
        let kv = self.bind(&Binder::constant(&tape), "");
        Ok(kv.gram(tape.constant(a.clone()), tape.constant(b.clone())).value())
    }

    /// Diagonal of `k(A, A)`, which is the constant `ν_f`.
    pub fn gram_diag(&self, a: &Tensor) -> Tensor {
        Tensor::full(a.rows(), 1, self.variance())
    }

    pub fn bind<'t>(&self, binder: &Binder<'t>, prefix: &str) -> KernelVars<'t> {
        KernelVars {
            log_lengthscales: binder.param(&join(prefix, "log_lengthscales"), &self.log_lengthscales),
            log_variance: binder.param(&join(prefix, "log_variance"), &self.log_variance),
        }
    }

    pub fn visit_prefixed(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "log_lengthscales"), &self.log_lengthscales);
        f(&join(prefix, "log_variance"), &self.log_variance);
    }

    pub fn visit_prefixed_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "log_lengthscales"), &mut self.log_lengthscales);
        f(&join(prefix, "log_variance"), &mut self.log_variance);
    }
}

impl Parameterized for SeArdKernel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.visit_prefixed("", f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.visit_prefixed_mut("", f)
    }
}

/// Kernel parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct KernelVars<'t> {
    pub log_lengthscales: Var<'t>,
    pub log_variance: Var<'t>,
}

impl<'t> KernelVars<'t> {
    pub fn variance(&self) -> Var<'t> {
        self.log_variance.exp()
    }

    /// `k(a, b)` for `n x d` and `m x d` inputs.
    pub fn gram(&self, a: Var<'t>, b: Var<'t>) -> Var<'t> {
        let inv_ls = self.log_lengthscales.neg().exp();
        let a_s = a * inv_ls;
        let b_s = if a.id() == b.id() { a_s } else { b * inv_ls };
        let d = a_s.sq_dist(b_s);
        d.scale(-0.5).add(self.log_variance).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_std_normal, RngState};

    fn naive_gram(ls: &[f64], var: f64, a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(a.rows(), b.rows());
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += (a.get(i, k) - b.get(j, k)).powi(2) / (ls[k] * ls[k]);
                }
                out.set(i, j, var * (-0.5 * s).exp());
            }
        }
        out
    }

    #[test]
    fn zero_distance_gives_signal_variance() {
        let k = SeArdKernel::new(1);
        let x = Tensor::column(vec![0.3]);
        assert!((k.gram(&x, &x).unwrap().item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scaled_variance_cancels_ln2_distance() {
        let k = SeArdKernel::with_params(&[1.0], 2.0);
        let a = Tensor::column(vec![0.0]);
        let b = Tensor::column(vec![(2.0 * 2f64.ln()).sqrt()]);
        assert!((k.gram(&a, &b).unwrap().item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_double_loop() {
        let mut rng = RngState::new(9);
        let a = sample_std_normal(&mut rng, 5, 3);
        let b = sample_std_normal(&mut rng, 4, 3);
        let ls = [0.7, 1.3, 2.1];
        let k = SeArdKernel::with_params(&ls, 1.4);
        let got = k.gram(&a, &b).unwrap();
        let expect = naive_gram(&ls, 1.4, &a, &b);
        assert!(got.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn diag_is_constant_and_consistent() {
        let mut rng = RngState::new(10);
        let a = sample_std_normal(&mut rng, 6, 2);
        let k = SeArdKernel::with_params(&[0.5, 0.9], 1.7);
        let d = k.gram_diag(&a);
        assert!(d.as_slice().iter().all(|&v| (v - 1.7).abs() < 1e-14));
        let full = k.gram(&a, &a).unwrap();
        for i in 0..6 {
            assert!((full.get(i, i) - d.get(i, 0)).abs() < 1e-14);
        }
        assert!(k.gram_diag(&Tensor::zeros(0, 2)).is_empty());
    }

    #[test]
    fn dimension_mismatch_errors() {
        let k = SeArdKernel::new(2);
        let a = Tensor::zeros(3, 3);
        assert!(matches!(k.gram(&a, &a), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn gram_plus_jitter_is_pd_and_permutes() {
        let mut rng = RngState::new(11);
        let a = sample_std_normal(&mut rng, 7, 2);
        let k = SeArdKernel::with_params(&[0.8, 1.1], 1.0);
        let g = k.gram(&a, &a).unwrap();
        assert!(crate::tensor::cholesky_with_cap(&g, 1e-6, 1e-6).is_ok());
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let gp = k.gram(&a.select_rows(&perm), &a.select_rows(&perm)).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert!((gp.get(i, j) - g.get(perm[i], perm[j])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_wrt_log_lengthscales_fd() {
        let mut rng = RngState::new(12);
        let a = sample_std_normal(&mut rng, 4, 2);
        let b = sample_std_normal(&mut rng, 3, 2);
        let base = SeArdKernel::with_params(&[0.9, 1.4], 1.3);
        let eval = |ll: &Tensor| {
            let mut k = base.clone();
            k.log_lengthscales = ll.clone();
            k.gram(&a, &b).unwrap().as_slice().iter().map(|v| v * v).sum::<f64>()
        };
        let tape = Tape::new();
        let binder = Binder::new(&tape);
        let kv = base.bind(&binder, "k");
        let y = kv.gram(tape.constant(a.clone()), tape.constant(b.clone())).square().sum();
        let g = tape.grad(y, &[kv.log_lengthscales]).unwrap().remove(0);
        let h = 1e-5;
        for i in 0..2 {
            let mut p = base.log_lengthscales.clone();
            p.as_mut_slice()[i] += h;
            let mut m = base.log_lengthscales.clone();
            m.as_mut_slice()[i] -= h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            assert!((fd - g.as_slice()[i]).abs() <= 1e-4 * fd.abs().max(1e-8));
        }
    }
}
