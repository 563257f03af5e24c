//! Gauss-Hermite quadrature.

use std::f64::consts::PI;

/// Nodes and weights for `∫ exp(-x²) f(x) dx ≈ Σ w_i f(x_i)`, found by
/// Newton iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one quadrature node is required");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = (j + 1) as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E[g(v)]` for `v ~ N(mean, var)`.
pub fn normal_expectation(n: usize, mean: f64, var: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite(n);
    let s = (2.0 * var.max(0.0)).sqrt();
    x.iter().zip(&w).map(|(xi, wi)| wi * g(mean + s * xi)).sum::<f64>() / PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [1, 2, 5, 20, 40] {
            let (_, w) = gauss_hermite(n);
            assert!((w.iter().sum::<f64>() - PI.sqrt()).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn two_point_rule_is_exact() {
        let (x, w) = gauss_hermite(2);
        let r = 0.5f64.sqrt();
        assert!((x[0] - r).abs() < 1e-14 && (x[1] + r).abs() < 1e-14);
        assert!((w[0] - PI.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_moments_and_lognormal_mean() {
        let m4 = normal_expectation(20, 0.0, 1.0, |v| v.powi(4));
        assert!((m4 - 3.0).abs() < 1e-10);
        let ln = normal_expectation(20, 0.3, 0.4, f64::exp);
        assert!((ln - (0.3f64 + 0.2).exp()).abs() < 1e-10);
    }
}
