//! Dense reference computations shared by the integration tests. Nothing
//! here goes through the library's own linear algebra or autodiff.

#![allow(dead_code)]

use modgp::{Binder, InducingBlock, Parameterized, SeArdKernel, Tape, Tensor, Var};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

pub fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.as_slice())
}

/// `ν_f exp(-½ Σ (a - b)² / ℓ²)` evaluated entry by entry.
pub fn se_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, lengthscales: &[f64], variance: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let r2: f64 = (0..a.ncols()).map(|k| ((a[(i, k)] - b[(j, k)]) / lengthscales[k]).powi(2)).sum();
        variance * (-0.5 * r2).exp()
    })
}

pub fn kernel_gram(k: &SeArdKernel, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    se_gram(a, b, &k.lengthscales(), k.variance())
}

/// Marginal mean and variance of `q(f(x)) = ∫ p(f | u) q(u) du`, computed
/// from the unwhitened moments of `q(u)`.
pub fn dense_marginals(block: &InducingBlock, x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let z = to_dmatrix(&block.z);
    let xd = to_dmatrix(x);
    let m = block.num_inducing();
    let kmm = kernel_gram(&block.kernel, &z, &z) + DMatrix::identity(m, m) * block.jitter;
    let kmn = kernel_gram(&block.kernel, &z, &xd);
    let mu0 = block.prior_mean.item();
    let mean_u = DVector::from_column_slice(block.u_mean().unwrap().as_slice());
    let s = to_dmatrix(&block.covariance().unwrap());
    let chol = kmm.cholesky().expect("jittered K_MM is positive definite");
    let a = chol.solve(&kmn);
    let mean = a.transpose() * (mean_u.add_scalar(-mu0));
    let var: Vec<f64> = (0..x.rows())
        .map(|i| {
            let ai = a.column(i);
            let kii = block.kernel.variance();
            kii - kmn.column(i).dot(&ai) + (ai.transpose() * &s * ai)[(0, 0)]
        })
        .collect();
    (mean.iter().map(|v| v + mu0).collect(), var)
}

/// Exact GP log marginal likelihood `log N(y | 0, K + σ² I)`.
pub fn exact_log_marginal(x: &Tensor, y: &[f64], kernel: &SeArdKernel, noise: f64) -> f64 {
    let xd = to_dmatrix(x);
    let n = y.len();
    let k = kernel_gram(kernel, &xd, &xd) + DMatrix::identity(n, n) * noise;
    let chol = k.cholesky().expect("K + σ²I is positive definite");
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * yv.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * PI).ln()
}

pub fn log_normal_pdf(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (y - mean).powi(2) / var
}

/// Largest element-wise relative error between tape gradients of `f` and
/// central finite differences, with relative errors taken against
/// `max(|analytic|, |numeric|, floor)`.
pub fn gradient_check<M, F>(model: &M, step: f64, floor: f64, f: F) -> GradientReport
where
    M: Parameterized + Clone,
    F: for<'t> Fn(&M, &Binder<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let binder = Binder::new(&tape);
    let out = f(model, &binder);
    let bound = binder.bound();
    let grads = tape.grad(out, &bound.iter().map(|(_, v)| *v).collect::<Vec<_>>()).unwrap();
    let value = |m: &M| {
        let t = Tape::new();
        f(m, &Binder::constant(&t)).item()
    };
    let mut report = GradientReport { worst: 0.0, worst_name: String::new(), checked: 0 };
    for ((name, _), g) in bound.iter().zip(&grads) {
        for k in 0..g.len() {
            let shifted = |delta: f64| {
                let mut m = model.clone();
                m.visit_mut(&mut |n, t| {
                    if n == name {
                        t.as_mut_slice()[k] += delta;
                    }
                });
                value(&m)
            };
            let numeric = (shifted(step) - shifted(-step)) / (2.0 * step);
            let analytic = g.as_slice()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.worst {
                report.worst = rel;
                report.worst_name = format!("{name}[{k}] analytic {analytic:.6e} numeric {numeric:.6e}");
            }
        }
    }
    report
}

#[derive(Clone, Debug)]
pub struct GradientReport {
    pub worst: f64,
    pub worst_name: String,
    pub checked: usize,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Mean silhouette of 1-D points under the given two-way labelling. `None`
/// when either cluster is empty.
pub fn silhouette(values: &[f64], upper: &[bool]) -> Option<f64> {
    let count = upper.iter().filter(|u| **u).count();
    if count == 0 || count == values.len() {
        return None;
    }
    let mut total = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let (mut same, mut other, mut n_same, mut n_other) = (0.0, 0.0, 0usize, 0usize);
        for (j, &w) in values.iter().enumerate() {
            if i == j {
                continue;
            }
            if upper[j] == upper[i] {
                same += (v - w).abs();
                n_same += 1;
            } else {
                other += (v - w).abs();
                n_other += 1;
            }
        }
        if n_same == 0 {
            continue;
        }
        let a = same / n_same as f64;
        let b = other / n_other as f64;
        total += (b - a) / a.max(b);
    }
    Some(total / values.len() as f64)
}
