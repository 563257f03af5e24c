//! Heteroscedastic GP: `y = exp(w(x)) f(x) + ε`, `ε ~ N(0, c · exp(2 w(x)))`.
//!
//! Both `f` and the log-modulator `w` are sparse GPs. The expected
//! log-likelihood under `q(f) q(w)` has a closed form, so training needs no
//! sampling. Prediction integrates over `w*` with Gauss-Hermite quadrature.

use crate::error::{Error, Result};
use crate::evalkit::PredictiveSampleSet;
use crate::kernels::SeArdKernel;
use crate::model::{Batch, Model, ModelKind};
use crate::params::{Binder, Parameterized};
use crate::quadrature::gauss_hermite;
use crate::svgp::{batch_scale, InducingBlock};
use crate::tensor::{RngState, Tensor, Var};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
pub const DEFAULT_GH_POINTS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct ShgpModel {
    pub f: InducingBlock,
    /// Log-modulator block; its prior mean is the learned constant `μ₀`.
    pub w: InducingBlock,
    /// `1 x 1` log of the noise scale `c`.
    pub log_c: Tensor,
    pub gh_points: usize,
}

/// Per-point closed-form `E_{q(f)q(w)}[log p(y | f, w)]`, an `n x 1` column.
pub fn shgp_expected_loglik_terms<'t>(
    y: Var<'t>,
    mu_f: Var<'t>,
    var_f: Var<'t>,
    mu_w: Var<'t>,
    var_w: Var<'t>,
    c: Var<'t>,
) -> Var<'t> {
    let r1 = (var_w.scale(2.0) - mu_w.scale(2.0)).exp();
    let r2 = (var_w.scale(0.5) - mu_w).exp();
    let quad = r1 * y.square() - (y * r2 * mu_f).scale(2.0) + mu_f.square() + var_f;
    (c.ln() + LN_2PI).scale(-0.5) - mu_w - quad / c.scale(2.0)
}

impl ShgpModel {
    /// Independent unit kernels for `f` and `w`, `c = 1`, `μ₀ = 0`.
    pub fn new(z: Tensor) -> Result<Self> {
        let d = z.cols();
        Ok(ShgpModel {
            f: InducingBlock::new(z.clone(), SeArdKernel::new(d))?,
            w: InducingBlock::new(z, SeArdKernel::new(d))?.with_prior_mean(0.0, true),
            log_c: Tensor::scalar(0.0),
            gh_points: DEFAULT_GH_POINTS,
        })
    }

    pub fn c(&self) -> f64 {
        self.log_c.item().exp()
    }

    /// Scaled expected log-likelihood of a batch, without KL terms.
    pub fn expected_loglik<'t>(&self, binder: &Binder<'t>, batch: &Batch, n_total: usize) -> Result<Var<'t>> {
        Ok(self.terms(binder, batch, n_total)?.0)
    }

    fn terms<'t>(&self, binder: &Binder<'t>, batch: &Batch, n_total: usize) -> Result<(Var<'t>, Var<'t>)> {
        self.check_dim(&batch.x)?;
        let scale = batch_scale(n_total, batch.len())?;
        let tape = binder.tape();
        let f = self.f.bind(binder, "f").prepare()?;
        let w = self.w.bind(binder, "w").prepare()?;
        let c = binder.param("log_c", &self.log_c).exp();
        let x = tape.constant(batch.x.clone());
        let y = tape.constant(batch.y.clone());
        let mf = f.marginals(x);
        let mw = w.marginals(x);
        let ell = shgp_expected_loglik_terms(y, mf.mean, mf.variance, mw.mean, mw.variance, c).sum().scale(scale);
        Ok((ell, f.kl() + w.kl()))
    }

    fn check_dim(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.f.dim() {
            return Err(Error::DimensionMismatch(format!("model expects {} inputs, got {}", self.f.dim(), x.cols())));
        }
        Ok(())
    }

    /// Posterior noise standard deviation `√c · exp(μ_w(x))`.
    pub fn noise_std(&self, x: &Tensor) -> Result<Vec<f64>> {
        let sc = self.c().sqrt();
        Ok(self.w.marginals(x, false)?.mean.as_slice().iter().map(|m| sc * m.exp()).collect())
    }

    /// Predictive mean and variance from lognormal moments of `exp(w*)`.
    pub fn predictive_moments(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let gf = self.f.marginals(x, false)?;
        let gw = self.w.marginals(x, false)?;
        let c = self.c();
        let mut mean = Vec::with_capacity(x.rows());
        let mut var = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let (mf, vf) = (gf.mean.get(i, 0), gf.variance.get(i, 0));
            let (mw, vw) = (gw.mean.get(i, 0), gw.variance.get(i, 0));
            let m = mf * (mw + 0.5 * vw).exp();
            let second = (2.0 * mw + 2.0 * vw).exp() * (mf * mf + vf + c);
            mean.push(m);
            var.push(second - m * m);
        }
        Ok((mean, var))
    }

    /// Predictive density `p(y* | x*)` on a grid of `y` values for each test
    /// point, by Gauss-Hermite quadrature over `w*`. Returns `n x g`.
    pub fn predictive_density(&self, x: &Tensor, y_grid: &[f64]) -> Result<Tensor> {
        let gf = self.f.marginals(x, false)?;
        let gw = self.w.marginals(x, false)?;
        let c = self.c();
        let (nodes, weights) = gauss_hermite(self.gh_points);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        Ok(Tensor::from_fn(x.rows(), y_grid.len(), |i, g| {
            let (mf, vf) = (gf.mean.get(i, 0), gf.variance.get(i, 0));
            let (mw, vw) = (gw.mean.get(i, 0), gw.variance.get(i, 0));
            let y = y_grid[g];
            nodes
                .iter()
                .zip(&weights)
                .map(|(t, wt)| {
                    let wv = mw + (2.0 * vw).sqrt() * t;
                    let s2 = (2.0 * wv).exp() * (vf + c);
                    let d = y - mf * wv.exp();
                    wt / sqrt_pi * (-0.5 * d * d / s2).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
                })
                .sum()
        }))
    }
}

impl Parameterized for ShgpModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.f.visit_prefixed("f", f);
        self.w.visit_prefixed("w", f);
        f("log_c", &self.log_c);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.f.visit_prefixed_mut("f", f);
        self.w.visit_prefixed_mut("w", f);
        f("log_c", &mut self.log_c);
    }
}

impl Model for ShgpModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Shgp
    }

    fn input_dim(&self) -> usize {
        self.f.dim()
    }

    fn elbo<'t>(&self, binder: &Binder<'t>, batch: &Batch, n_total: usize, _rng: &mut RngState) -> Result<Var<'t>> {
        let (ell, kl) = self.terms(binder, batch, n_total)?;
        Ok(ell - kl)
    }

    /// Draws `w*`, then `y* | w* ~ N(μ_f e^{w*}, e^{2w*} (ν_f + c))`.
    fn predict(&self, x: &Tensor, samples_per_point: usize, rng: &mut RngState) -> Result<PredictiveSampleSet> {
        self.check_dim(x)?;
        let gf = self.f.marginals(x, false)?;
        let gw = self.w.marginals(x, false)?;
        let c = self.c();
        let mut ys = Tensor::zeros(x.rows(), samples_per_point);
        let mut fs = Tensor::zeros(x.rows(), samples_per_point);
        for i in 0..x.rows() {
            let (mf, vf) = (gf.mean.get(i, 0), gf.variance.get(i, 0));
            let (mw, vw) = (gw.mean.get(i, 0), gw.variance.get(i, 0));
            for s in 0..samples_per_point {
                let w = mw + vw.sqrt() * rng.normal();
                let f = mf + vf.sqrt() * rng.normal();
                let scale = w.exp();
                fs.set(i, s, scale * f);
                ys.set(i, s, scale * (f + c.sqrt() * rng.normal()));
            }
        }
        PredictiveSampleSet::new(ys, Some(fs), ModelKind::Shgp)
    }
}
