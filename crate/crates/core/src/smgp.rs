//! Mixture of GP experts with GP-distributed assignment logits.
//!
//! Each of the `T` experts is a sparse GP with its own Gaussian noise, and
//! each expert has an assignment GP whose values act as logits. Training
//! marginalizes the assignments: the bound is
//! `E_{q(A)}[log E_{p(W|A)} exp(L̃_W)] - KL`, where `L̃_W` is the expected
//! log-likelihood under `q(F)` with assignments `W`. Assignments are drawn
//! from a Concrete relaxation so that the estimate is differentiable.
//!
//! Given `A`, the rows of `W` are independent and `L̃_W` is a sum over
//! points, so `log E exp(L̃_W)` splits into one log-mean-exp per point. This
//! is the estimator used for training; the joint form is available for
//! comparisons.

use crate::error::{Error, Result};
use crate::evalkit::PredictiveSampleSet;
use crate::kernels::SeArdKernel;
use crate::model::{Batch, Model, ModelKind};
use crate::params::{Binder, Parameterized};
use crate::svgp::{batch_scale, gaussian_expected_loglik, InducingBlock, PreparedBlock};
use crate::tensor::{sample_gumbel, sample_std_normal, RngState, Tape, Tensor, Var};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

/// Relaxed one-hot rows, each non-negative and summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentSample {
    pub weights: Tensor,
}

/// `softmax((logits + g) / λ)` row-wise for given Gumbel noise `g`.
pub fn concrete_relax<'t>(logits: Var<'t>, gumbel: &Tensor, temperature: f64) -> Var<'t> {
    let g = logits.tape().constant(gumbel.clone());
    (logits + g).scale(1.0 / temperature).softmax_rows()
}

pub fn concrete_sample(logits: &Tensor, temperature: f64, rng: &mut RngState) -> AssignmentSample {
    assert!(temperature > 0.0, "temperature must be positive");
    let g = sample_gumbel(rng, logits.rows(), logits.cols());
    let tape = Tape::new();
    AssignmentSample { weights: concrete_relax(tape.constant(logits.clone()), &g, temperature).value() }
}

/// How `log E_{p(W|A)} exp(L̃_W)` is estimated from `S` draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerEstimator {
    /// One log-mean-exp per point (used for training).
    PerPoint,
    /// A single log-mean-exp of the summed batch bound.
    Joint,
}

/// The standard-normal and Gumbel noise behind one ELBO evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SmgpNoise {
    /// `n x T` noise for the reparameterized assignment draw.
    pub eps_a: Tensor,
    /// `S` Gumbel matrices of shape `n x T`.
    pub gumbel: Vec<Tensor>,
}

impl SmgpNoise {
    pub fn draw(rng: &mut RngState, n: usize, t: usize, samples: usize) -> Self {
        let eps_a = sample_std_normal(rng, n, t);
        let gumbel = (0..samples).map(|_| sample_gumbel(rng, n, t)).collect();
        SmgpNoise { eps_a, gumbel }
    }
}

/// Pieces of one ELBO evaluation.
#[derive(Clone, Copy, Debug)]
pub struct SmgpTerms<'t> {
    /// Scaled log-mean-exp estimate of the marginalized likelihood term.
    pub inner: Var<'t>,
    /// Scaled mean of `L̃_W` over the same draws (the Jensen lower value).
    pub jensen: Var<'t>,
    /// Sum of KL terms over all `2T` blocks.
    pub kl: Var<'t>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmgpModel {
    pub experts: Vec<InducingBlock>,
    pub assignments: Vec<InducingBlock>,
    /// `1 x T` log noise variances of the experts.
    pub log_noise: Tensor,
    pub temperature: f64,
    pub mc_samples: usize,
}

impl SmgpModel {
    /// `T` experts sharing initial inducing inputs. Expert means start at
    /// independent standard-normal values so the experts are not identical.
    pub fn new(z: Tensor, experts: usize, noise_variance: f64, rng: &mut RngState) -> Result<Self> {
        if experts == 0 {
            return Err(Error::InvalidConfig("at least one expert is required".into()));
        }
        let d = z.cols();
        let m = z.rows();
        let mut ex = Vec::with_capacity(experts);
        let mut asg = Vec::with_capacity(experts);
        for _ in 0..experts {
            let mut b = InducingBlock::new(z.clone(), SeArdKernel::new(d))?;
            b.mean = sample_std_normal(rng, m, 1);
            ex.push(b);
            asg.push(InducingBlock::new(z.clone(), SeArdKernel::new(d))?);
        }
        Ok(SmgpModel {
            experts: ex,
            assignments: asg,
            log_noise: Tensor::full(1, experts, noise_variance.ln()),
            temperature: DEFAULT_TEMPERATURE,
            mc_samples: 10,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn noise_variances(&self) -> Vec<f64> {
        self.log_noise.as_slice().iter().map(|v| v.exp()).collect()
    }

    fn prepare<'t>(&self, binder: &Binder<'t>) -> Result<(Vec<PreparedBlock<'t>>, Vec<PreparedBlock<'t>>, Var<'t>)> {
        let ex = self
            .experts
            .iter()
            .enumerate()
            .map(|(t, b)| b.bind(binder, &format!("expert{t}")).prepare())
            .collect::<Result<Vec<_>>>()?;
        let asg = self
            .assignments
            .iter()
            .enumerate()
            .map(|(t, b)| b.bind(binder, &format!("assign{t}")).prepare())
            .collect::<Result<Vec<_>>>()?;
        let noise = binder.param("log_noise", &self.log_noise).exp();
        Ok((ex, asg, noise))
    }

    /// `n x T` matrix of per-point, per-expert expected log-likelihoods.
    fn expert_terms<'t>(experts: &[PreparedBlock<'t>], noise: Var<'t>, x: Var<'t>, y: Var<'t>) -> Var<'t> {
        let tape = x.tape();
        let ms: Vec<_> = experts.iter().map(|e| e.marginals(x)).collect();
        let mean = tape.hcat(&ms.iter().map(|m| m.mean).collect::<Vec<_>>());
        let var = tape.hcat(&ms.iter().map(|m| m.variance).collect::<Vec<_>>());
        gaussian_expected_loglik(y, mean, var, noise)
    }

    /// Means and variances of the assignment GPs, each `n x T`.
    fn assignment_moments<'t>(assign: &[PreparedBlock<'t>], x: Var<'t>) -> (Var<'t>, Var<'t>) {
        let tape = x.tape();
        let ms: Vec<_> = assign.iter().map(|a| a.marginals(x)).collect();
        (
            tape.hcat(&ms.iter().map(|m| m.mean).collect::<Vec<_>>()),
            tape.hcat(&ms.iter().map(|m| m.variance).collect::<Vec<_>>()),
        )
    }

    /// `N/|B| Σ_i Σ_t w_it ℓ_it` for fixed relaxed assignments.
    pub fn partial_bound(&self, w: &AssignmentSample, batch: &Batch, n_total: usize) -> Result<f64> {
        let scale = batch_scale(n_total, batch.len())?;
        if w.weights.shape() != [batch.len(), self.num_experts()] {
            return Err(Error::DimensionMismatch("assignment rows must align with the batch".into()));
        }
        let tape = Tape::new();
        let binder = Binder::constant(&tape);
        let (ex, _, noise) = self.prepare(&binder)?;
        let e = Self::expert_terms(&ex, noise, tape.constant(batch.x.clone()), tape.constant(batch.y.clone()));
        Ok((e * tape.constant(w.weights.clone())).sum().item() * scale)
    }

    /// ELBO pieces for explicit noise draws.
    pub fn terms_with_noise<'t>(
        &self,
        binder: &Binder<'t>,
        batch: &Batch,
        n_total: usize,
        noise_draws: &SmgpNoise,
        estimator: InnerEstimator,
    ) -> Result<SmgpTerms<'t>> {
        let scale = batch_scale(n_total, batch.len())?;
        let n = batch.len();
        let t = self.num_experts();
        if noise_draws.eps_a.shape() != [n, t] || noise_draws.gumbel.iter().any(|g| g.shape() != [n, t]) {
            return Err(Error::DimensionMismatch("noise draws do not match batch and expert count".into()));
        }
        let s = noise_draws.gumbel.len();
        if s == 0 {
            return Err(Error::InvalidConfig("at least one Concrete sample is required".into()));
        }
        let tape = binder.tape();
        let (ex, asg, noise) = self.prepare(binder)?;
        let x = tape.constant(batch.x.clone());
        let y = tape.constant(batch.y.clone());
        let e = Self::expert_terms(&ex, noise, x, y);
        let (ma, va) = Self::assignment_moments(&asg, x);
        let a = ma + va.sqrt() * tape.constant(noise_draws.eps_a.clone());
        let per_draw: Vec<Var<'t>> = noise_draws
            .gumbel
            .iter()
            .map(|g| (concrete_relax(a, g, self.temperature) * e).sum_cols())
            .collect();
        let p = tape.hcat(&per_draw);
        let ln_s = (s as f64).ln();
        let inner = match estimator {
            InnerEstimator::PerPoint => (p.logsumexp_rows() - ln_s).sum().scale(scale),
            InnerEstimator::Joint => (p.sum_rows().scale(scale).logsumexp_rows() - ln_s).sum(),
        };
        let jensen = p.sum().scale(scale / s as f64);
        let kl = ex.iter().chain(&asg).map(|b| b.kl()).reduce(|a, b| a + b).expect("non-empty");
        Ok(SmgpTerms { inner, jensen, kl })
    }

    /// Exact `log E_{p(W|A)} exp(L̃_W)` for a hard multinomial `W` and a
    /// given `A`, by enumerating all `T^n` assignments. Only for tiny `n`.
    pub fn enumerate_inner(&self, batch: &Batch, n_total: usize, a: &Tensor) -> Result<f64> {
        let scale = batch_scale(n_total, batch.len())?;
        let (n, t) = (batch.len(), self.num_experts());
        let tape = Tape::new();
        let binder = Binder::constant(&tape);
        let (ex, _, noise) = self.prepare(&binder)?;
        let e = Self::expert_terms(&ex, noise, tape.constant(batch.x.clone()), tape.constant(batch.y.clone())).value();
        let logp = tape.constant(a.clone()).softmax_rows().ln().value();
        let total = t.pow(n as u32);
        let mut terms = Vec::with_capacity(total);
        for code in 0..total {
            let (mut c, mut lp, mut l) = (code, 0.0, 0.0);
            for i in 0..n {
                let k = c % t;
                c /= t;
                lp += logp.get(i, k);
                l += e.get(i, k);
            }
            terms.push(lp + scale * l);
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln())
    }
}

impl Parameterized for SmgpModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (t, b) in self.experts.iter().enumerate() {
            b.visit_prefixed(&format!("expert{t}"), f);
        }
        for (t, b) in self.assignments.iter().enumerate() {
            b.visit_prefixed(&format!("assign{t}"), f);
        }
        f("log_noise", &self.log_noise);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (t, b) in self.experts.iter_mut().enumerate() {
            b.visit_prefixed_mut(&format!("expert{t}"), f);
        }
        for (t, b) in self.assignments.iter_mut().enumerate() {
            b.visit_prefixed_mut(&format!("assign{t}"), f);
        }
        f("log_noise", &mut self.log_noise);
    }
}

impl Model for SmgpModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Smgp
    }

    fn input_dim(&self) -> usize {
        self.experts[0].dim()
    }

    fn elbo<'t>(&self, binder: &Binder<'t>, batch: &Batch, n_total: usize, rng: &mut RngState) -> Result<Var<'t>> {
        let noise = SmgpNoise::draw(rng, batch.len(), self.num_experts(), self.mc_samples);
        let terms = self.terms_with_noise(binder, batch, n_total, &noise, InnerEstimator::PerPoint)?;
        Ok(terms.inner - terms.kl)
    }

    /// Hard multinomial assignment per sample, then the chosen expert's
    /// latent draw plus its noise.
    fn predict(&self, x: &Tensor, samples_per_point: usize, rng: &mut RngState) -> Result<PredictiveSampleSet> {
        let ef: Vec<_> = self.experts.iter().map(|b| b.marginals(x, false)).collect::<Result<_>>()?;
        let ea: Vec<_> = self.assignments.iter().map(|b| b.marginals(x, false)).collect::<Result<_>>()?;
        let noise_sd: Vec<f64> = self.noise_variances().iter().map(|v| v.sqrt()).collect();
        let t = self.num_experts();
        let mut ys = Tensor::zeros(x.rows(), samples_per_point);
        let mut fs = Tensor::zeros(x.rows(), samples_per_point);
        let mut logits = vec![0.0; t];
        for i in 0..x.rows() {
            for s in 0..samples_per_point {
                for k in 0..t {
                    logits[k] = ea[k].mean.get(i, 0) + ea[k].variance.get(i, 0).sqrt() * rng.normal();
                }
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let probs: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let total: f64 = probs.iter().sum();
                let mut u = rng.uniform_open() * total;
                let mut k = t - 1;
                for (j, p) in probs.iter().enumerate() {
                    if u < *p {
                        k = j;
                        break;
                    }
                    u -= p;
                }
                let f = ef[k].mean.get(i, 0) + ef[k].variance.get(i, 0).sqrt() * rng.normal();
                fs.set(i, s, f);
                ys.set(i, s, f + noise_sd[k] * rng.normal());
            }
        }
        PredictiveSampleSet::new(ys, Some(fs), ModelKind::Smgp)
    }
}
