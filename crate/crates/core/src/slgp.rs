//! Latent-input GP with a stochastic encoder.
//!
//! Inputs are augmented with a latent `w` (amortized prior `p(w|x)` and
//! posterior `q(w|x,y)`), then mapped by a Gaussian encoder `q(h|[x,w])`
//! onto the space where the GP lives. The encoder is tied to the prior
//! `p(h|w) = N(φ(x,w), ν₀ I)` with strength `β`.
//!
//! All `S` importance samples of a batch are stacked into one `S·n`-row
//! matrix, sample-major, so that the GP and the networks run once.

use crate::error::{Error, Result};
use crate::evalkit::PredictiveSampleSet;
use crate::kernels::SeArdKernel;
use crate::model::{Batch, Model, ModelKind};
use crate::nn::{MlpFunction, MlpVars, Positivity};
use crate::params::{Binder, Parameterized};
use crate::svgp::{batch_scale, gaussian_expected_loglik, InducingBlock, NoiseParam};
use crate::tensor::{sample_std_normal, RngState, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
pub const NOISE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlgpBound {
    Hybrid,
    Iwvi,
    Vi,
}

/// Which conditional of `h` given `w*` is used at prediction time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictPath {
    /// The trained encoder `q(h | x*, w*)`.
    Encoder,
    /// The prior `p(h | w*) = N(φ(x*, w*), ν₀ I)`.
    Prior,
}

/// `[x, w]` padded with zeros to `d_h` columns.
pub fn phi(x: &Tensor, w: &Tensor, d_h: usize) -> Result<Tensor> {
    check_phi(x.cols(), w.cols(), d_h)?;
    let pad = Tensor::zeros(x.rows(), d_h - x.cols() - w.cols());
    Ok(Tensor::hcat(&[x, w, &pad]))
}

fn check_phi(d_x: usize, d_w: usize, d_h: usize) -> Result<()> {
    if d_h < d_x + d_w {
        return Err(Error::UnsupportedDimension(format!(
            "encoder dimension {d_h} is below d_x + d_w = {}",
            d_x + d_w
        )));
    }
    Ok(())
}

fn phi_var<'t>(x: Var<'t>, w: Var<'t>, d_h: usize) -> Var<'t> {
    let tape = x.tape();
    let pad = d_h - x.cols() - w.cols();
    if pad == 0 {
        tape.hcat(&[x, w])
    } else {
        tape.hcat(&[x, w, tape.constant(Tensor::zeros(x.rows(), pad))])
    }
}

/// Row sums of `log N(v | mean, var)` over columns.
fn diag_log_normal<'t>(v: Var<'t>, mean: Var<'t>, var: Var<'t>) -> Var<'t> {
    ((v - mean).square() / var + var.ln() + LN_2PI).scale(-0.5).sum_cols()
}

/// Row sums of `KL(N(m1, v1) ‖ N(m2, v2))` for diagonal Gaussians.
fn diag_kl<'t>(m1: Var<'t>, v1: Var<'t>, m2: Var<'t>, v2: Var<'t>) -> Var<'t> {
    ((v1 + (m1 - m2).square()) / v2 + v2.ln() - v1.ln() - 1.0).scale(0.5).sum_cols()
}

/// Standard-normal noise for the reparameterized `w` and `h` draws.
#[derive(Clone, Debug, PartialEq)]
pub struct SlgpNoise {
    pub samples: usize,
    /// `S·n x d_w`, sample-major.
    pub eps_w: Tensor,
    /// `S·n x d_h`, sample-major.
    pub eps_h: Tensor,
}

impl SlgpNoise {
    pub fn draw(rng: &mut RngState, n: usize, samples: usize, d_w: usize, d_h: usize) -> Self {
        let eps_w = sample_std_normal(rng, samples * n, d_w);
        let eps_h = sample_std_normal(rng, samples * n, d_h);
        SlgpNoise { samples, eps_w, eps_h }
    }

    /// Reorder samples within each point: sample `s` takes the noise of
    /// sample `perm[s]`.
    pub fn permute_samples(&self, perm: &[usize]) -> Self {
        let n = self.eps_w.rows() / self.samples;
        let idx: Vec<usize> = perm.iter().flat_map(|&p| (0..n).map(move |i| p * n + i)).collect();
        SlgpNoise { samples: self.samples, eps_w: self.eps_w.select_rows(&idx), eps_h: self.eps_h.select_rows(&idx) }
    }
}

/// Reparameterized draws for a batch with their log-density ledger. Every
/// per-draw quantity is an `n x S` matrix, one column per sample.
#[derive(Clone, Copy, Debug)]
pub struct LatentBatchDraw<'t> {
    pub w: Var<'t>,
    pub h: Var<'t>,
    pub log_pw: Var<'t>,
    pub log_qw: Var<'t>,
    pub log_ph: Var<'t>,
    pub log_qh: Var<'t>,
    pub kl_h: Var<'t>,
    /// Analytic `KL(q(w) ‖ p(w))` per point, `n x 1`.
    pub kl_w: Var<'t>,
    /// Expected log-likelihood under `q(f | h)`.
    pub ell: Var<'t>,
    /// `KL(q(u) ‖ p(u))`.
    pub kl_u: Var<'t>,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlgpModel {
    pub block: InducingBlock,
    pub noise: NoiseParam,
    pub prior_net: MlpFunction,
    pub post_net: MlpFunction,
    pub encoder: MlpFunction,
    /// `1 x 1` log of the shared encoder scale `ν₀`.
    pub log_nu0: Tensor,
    pub d_x: usize,
    pub d_w: usize,
    pub d_h: usize,
    pub beta: f64,
    pub samples: usize,
    pub bound: SlgpBound,
    pub predict_path: PredictPath,
}

/// Shape and training settings for [`SlgpModel::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct SlgpSettings {
    pub d_w: usize,
    /// Defaults to `d_x + d_w` when `None`.
    pub d_h: Option<usize>,
    pub hidden: Vec<usize>,
    pub beta: f64,
    pub samples: usize,
    pub bound: SlgpBound,
    pub noise_variance: f64,
    pub nu0: f64,
}

impl Default for SlgpSettings {
    fn default() -> Self {
        SlgpSettings {
            d_w: 1,
            d_h: None,
            hidden: vec![100, 100, 100],
            beta: 1.0,
            samples: 10,
            bound: SlgpBound::Hybrid,
            noise_variance: 0.1,
            nu0: 0.01,
        }
    }
}

impl SlgpModel {
    /// `z_x` gives the input-space coordinates of the inducing points; the
    /// extra encoder coordinates are drawn standard-normal.
    pub fn new(z_x: &Tensor, settings: &SlgpSettings, rng: &mut RngState) -> Result<Self> {
        let d_x = z_x.cols();
        let d_w = settings.d_w;
        let d_h = settings.d_h.unwrap_or(d_x + d_w);
        check_phi(d_x, d_w, d_h)?;
        if !(0.0..=1.0).contains(&settings.beta) {
            return Err(Error::InvalidConfig(format!("β = {} is outside [0, 1]", settings.beta)));
        }
        if settings.samples == 0 {
            return Err(Error::InvalidConfig("at least one importance sample is required".into()));
        }
        let extra = sample_std_normal(rng, z_x.rows(), d_h - d_x);
        let z = Tensor::hcat(&[z_x, &extra]);
        let hidden = &settings.hidden;
        Ok(SlgpModel {
            block: InducingBlock::new(z, SeArdKernel::new(d_h))?,
            noise: NoiseParam::new(settings.noise_variance).with_floor(NOISE_FLOOR),
            prior_net: MlpFunction::new(d_x, hidden, d_w, rng),
            post_net: MlpFunction::new(d_x + 1, hidden, d_w, rng),
            encoder: MlpFunction::new(d_x + d_w, hidden, d_h, rng),
            log_nu0: Tensor::scalar(settings.nu0.ln()),
            d_x,
            d_w,
            d_h,
            beta: settings.beta,
            samples: settings.samples,
            bound: settings.bound,
            predict_path: PredictPath::Encoder,
        })
    }

    pub fn nu0(&self) -> f64 {
        self.log_nu0.item().exp()
    }

    fn check_x(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.d_x {
            return Err(Error::DimensionMismatch(format!("model expects {} inputs, got {}", self.d_x, x.cols())));
        }
        Ok(())
    }

    /// Record the draws and all density terms for one batch.
    pub fn draw<'t>(&self, binder: &Binder<'t>, batch: &Batch, n_total: usize, noise: &SlgpNoise) -> Result<LatentBatchDraw<'t>> {
        self.check_x(&batch.x)?;
        let n = batch.len();
        let s = noise.samples;
        if s == 0 || noise.eps_w.shape() != [s * n, self.d_w] || noise.eps_h.shape() != [s * n, self.d_h] {
            return Err(Error::DimensionMismatch("noise draws do not match the batch".into()));
        }
        let scale = batch_scale(n_total, n)?;
        let tape = binder.tape();
        let prepared = self.block.bind(binder, "gp").prepare()?;
        let noise_var = self.noise.bind(binder, "noise.log_variance");
        let prior: MlpVars<'t> = self.prior_net.bind(binder, "prior");
        let post = self.post_net.bind(binder, "post");
        let enc = self.encoder.bind(binder, "encoder");
        let nu0 = binder.param("log_nu0", &self.log_nu0).exp();

        let x = tape.constant(batch.x.clone());
        let y = tape.constant(batch.y.clone());
        let (mp, vp) = prior.gaussian_head(x, Positivity::Softplus, None)?;
        let (mq, vq) = post.gaussian_head(tape.hcat(&[x, y]), Positivity::Softplus, None)?;
        let kl_w = diag_kl(mq, vq, mp, vp);

        let xs = x.tile_rows(s);
        let ys = y.tile_rows(s);
        let (mp_s, vp_s, mq_s, vq_s) = (mp.tile_rows(s), vp.tile_rows(s), mq.tile_rows(s), vq.tile_rows(s));
        let w = mq_s + vq_s.sqrt() * tape.constant(noise.eps_w.clone());
        let (mh, vh) = enc.gaussian_head(tape.hcat(&[xs, w]), Positivity::ScaledSigmoid, Some(nu0))?;
        let h = mh + vh.sqrt() * tape.constant(noise.eps_h.clone());
        let prior_h = phi_var(xs, w, self.d_h);

        let to_cols = |v: Var<'t>| v.reshape(s, n).t();
        let log_pw = to_cols(diag_log_normal(w, mp_s, vp_s));
        let log_qw = to_cols(diag_log_normal(w, mq_s, vq_s));
        let log_ph = to_cols(diag_log_normal(h, prior_h, nu0));
        let log_qh = to_cols(diag_log_normal(h, mh, vh));
        let kl_h = to_cols(diag_kl(mh, vh, prior_h, nu0));
        let mv = prepared.marginals(h);
        let ell = to_cols(gaussian_expected_loglik(ys, mv.mean, mv.variance, noise_var));
        Ok(LatentBatchDraw { w, h, log_pw, log_qw, log_ph, log_qh, kl_h, kl_w, ell, kl_u: prepared.kl(), scale })
    }

    /// Evaluate one of the three bounds on recorded draws.
    pub fn bound_from_draw<'t>(&self, d: &LatentBatchDraw<'t>, bound: SlgpBound) -> Var<'t> {
        let s = d.ell.cols() as f64;
        let per_point = match bound {
            SlgpBound::Hybrid => {
                let iw = (d.ell + d.log_pw - d.log_qw).logsumexp_rows() - s.ln();
                iw - d.kl_h.sum_cols().scale(self.beta / s)
            }
            SlgpBound::Iwvi => {
                let ratio = (d.log_ph - d.log_qh).scale(self.beta);
                (d.ell + d.log_pw - d.log_qw + ratio).logsumexp_rows() - s.ln()
            }
            SlgpBound::Vi => (d.ell - d.kl_h.scale(self.beta)).sum_cols().scale(1.0 / s) - d.kl_w,
        };
        per_point.sum().scale(d.scale) - d.kl_u
    }

    pub fn bound_with_noise<'t>(
        &self,
        binder: &Binder<'t>,
        batch: &Batch,
        n_total: usize,
        noise: &SlgpNoise,
        bound: SlgpBound,
    ) -> Result<Var<'t>> {
        let d = self.draw(binder, batch, n_total, noise)?;
        Ok(self.bound_from_draw(&d, bound))
    }

    /// Deterministic GP mean at `φ(x*, prior mean of w*)`.
    pub fn mean_path(&self, x: &Tensor) -> Result<Tensor> {
        self.check_x(x)?;
        let (mw, _) = crate::nn::gaussian_head(&self.prior_net, x, Positivity::Softplus, None)?;
        Ok(self.block.marginals(&phi(x, &mw, self.d_h)?, false)?.mean)
    }
}

impl Parameterized for SlgpModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.block.visit_prefixed("gp", f);
        f("noise.log_variance", &self.noise.log_variance);
        self.prior_net.visit("prior", f);
        self.post_net.visit("post", f);
        self.encoder.visit("encoder", f);
        f("log_nu0", &self.log_nu0);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.block.visit_prefixed_mut("gp", f);
        f("noise.log_variance", &mut self.noise.log_variance);
        self.prior_net.visit_mut("prior", f);
        self.post_net.visit_mut("post", f);
        self.encoder.visit_mut("encoder", f);
        f("log_nu0", &mut self.log_nu0);
    }
}

impl Model for SlgpModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Slgp
    }

    fn input_dim(&self) -> usize {
        self.d_x
    }

    fn elbo<'t>(&self, binder: &Binder<'t>, batch: &Batch, n_total: usize, rng: &mut RngState) -> Result<Var<'t>> {
        let noise = SlgpNoise::draw(rng, batch.len(), self.samples, self.d_w, self.d_h);
        self.bound_with_noise(binder, batch, n_total, &noise, self.bound)
    }

    /// `w* ~ p(w|x*)`, `h*` from the configured path, `f* ~ q(f|h*)`, plus
    /// observation noise. Latent `f*` samples are kept alongside.
    fn predict(&self, x: &Tensor, samples_per_point: usize, rng: &mut RngState) -> Result<PredictiveSampleSet> {
        self.check_x(x)?;
        let n = x.rows();
        let s = samples_per_point;
        let tape = Tape::new();
        let binder = Binder::constant(&tape);
        let prior = self.prior_net.bind(&binder, "prior");
        let enc = self.encoder.bind(&binder, "encoder");
        let nu0 = tape.scalar(self.nu0());
        let xs = tape.constant(x.clone()).tile_rows(s);
        let (mp, vp) = prior.gaussian_head(xs, Positivity::Softplus, None)?;
        let w = mp + vp.sqrt() * tape.constant(sample_std_normal(rng, s * n, self.d_w));
        let (mh, vh) = match self.predict_path {
            PredictPath::Encoder => enc.gaussian_head(tape.hcat(&[xs, w]), Positivity::ScaledSigmoid, Some(nu0))?,
            PredictPath::Prior => (phi_var(xs, w, self.d_h), nu0),
        };
        let h = (mh + vh.sqrt() * tape.constant(sample_std_normal(rng, s * n, self.d_h))).value();
        let g = self.block.marginals(&h, false)?;
        let sd_e = self.noise.variance().sqrt();
        let mut ys = Tensor::zeros(n, s);
        let mut fs = Tensor::zeros(n, s);
        for k in 0..s {
            for i in 0..n {
                let r = k * n + i;
                let f = g.mean.get(r, 0) + g.variance.get(r, 0).sqrt() * rng.normal();
                fs.set(i, k, f);
                ys.set(i, k, f + sd_e * rng.normal());
            }
        }
        PredictiveSampleSet::new(ys, Some(fs), ModelKind::Slgp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64, samples: usize) -> (SlgpModel, Batch) {
        let mut rng = RngState::new(seed);
        let settings = SlgpSettings { hidden: vec![6], samples, beta: 0.5, ..Default::default() };
        let model = SlgpModel::new(&sample_std_normal(&mut rng, 4, 1), &settings, &mut rng).unwrap();
        let batch = Batch::new(sample_std_normal(&mut rng, 5, 1), sample_std_normal(&mut rng, 5, 1)).unwrap();
        (model, batch)
    }

    fn eval(model: &SlgpModel, batch: &Batch, noise: &SlgpNoise, b: SlgpBound) -> f64 {
        let tape = Tape::new();
        model.bound_with_noise(&Binder::constant(&tape), batch, 10, noise, b).unwrap().item()
    }

    #[test]
    fn phi_concatenates_and_pads() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]);
        let w = Tensor::from_rows(&[vec![3.0]]);
        assert_eq!(phi(&x, &w, 5).unwrap().as_slice(), &[1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(phi(&x, &w, 3).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        assert!(matches!(phi(&x, &w, 2), Err(Error::UnsupportedDimension(_))));
    }

    #[test]
    fn single_sample_hybrid_is_vi_integrand() {
        let (model, batch) = tiny(1, 1);
        let noise = SlgpNoise::draw(&mut RngState::new(2), 5, 1, 1, 2);
        let tape = Tape::new();
        let d = model.draw(&Binder::constant(&tape), &batch, 10, &noise).unwrap();
        let hybrid = model.bound_from_draw(&d, SlgpBound::Hybrid).item();
        let expect = ((d.ell + d.log_pw - d.log_qw - d.kl_h.scale(model.beta)).sum().scale(2.0) - d.kl_u).item();
        assert!((hybrid - expect).abs() < 1e-10);
    }

    #[test]
    fn iwvi_ratio_regrouping_holds_per_draw() {
        let (model, batch) = tiny(3, 4);
        let noise = SlgpNoise::draw(&mut RngState::new(4), 5, 4, 1, 2);
        let tape = Tape::new();
        let d = model.draw(&Binder::constant(&tape), &batch, 10, &noise).unwrap();
        // log p_β - log q = β (log p - log q) for p_β = p^β q^(1-β).
        let b = model.beta;
        let lhs = (d.log_ph.scale(b) + d.log_qh.scale(1.0 - b) - d.log_qh).value();
        let rhs = (d.log_ph - d.log_qh).scale(b).value();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn bounds_invariant_to_sample_order() {
        let (model, batch) = tiny(5, 3);
        let noise = SlgpNoise::draw(&mut RngState::new(6), 5, 3, 1, 2);
        let perm = noise.permute_samples(&[2, 0, 1]);
        for b in [SlgpBound::Hybrid, SlgpBound::Iwvi, SlgpBound::Vi] {
            assert!((eval(&model, &batch, &noise, b) - eval(&model, &batch, &perm, b)).abs() < 1e-9);
        }
    }

    #[test]
    fn beta_zero_ignores_encoder_prior() {
        let (mut model, batch) = tiny(7, 3);
        model.beta = 0.0;
        let noise = SlgpNoise::draw(&mut RngState::new(8), 5, 3, 1, 2);
        let base = eval(&model, &batch, &noise, SlgpBound::Hybrid);
        // ν₀ enters the encoder variance too, so compare through the terms.
        let tape = Tape::new();
        let d = model.draw(&Binder::constant(&tape), &batch, 10, &noise).unwrap();
        let no_h = ((d.ell + d.log_pw - d.log_qw).logsumexp_rows() - 3f64.ln()).sum().scale(2.0) - d.kl_u;
        assert!((base - no_h.item()).abs() < 1e-10);
    }

    #[test]
    fn encoder_kl_matches_numerical_integration() {
        let tape = Tape::new();
        let (m1, v1, m2, v2) = (0.3, 0.02, -0.1, 0.05);
        let k = |v: f64| tape.scalar(v);
        let kl = diag_kl(k(m1), k(v1), k(m2), k(v2)).item();
        let logn = |x: f64, m: f64, v: f64| -0.5 * ((x - m).powi(2) / v + v.ln() + LN_2PI);
        let (lo, hi, steps) = (-3.0, 3.0, 600_000);
        let dx = (hi - lo) / steps as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let x = lo + (i as f64 + 0.5) * dx;
            let lq = logn(x, m1, v1);
            acc += lq.exp() * (lq - logn(x, m2, v2)) * dx;
        }
        assert!((kl - acc).abs() < 1e-6, "{kl} vs {acc}");
    }

    #[test]
    fn prior_path_collapses_to_mean_path() {
        let (mut model, _) = tiny(9, 1);
        model.predict_path = PredictPath::Prior;
        model.log_nu0 = Tensor::scalar(-60.0);
        model.noise = NoiseParam::new(1e-30);
        model.prior_net.var_head.bias = Tensor::full(1, 1, -80.0);
        model.prior_net.var_head.weight = Tensor::zeros(6, 1);
        model.block.set_covariance(&Tensor::eye(4).scale(1e-20)).unwrap();
        let x = Tensor::column(vec![-0.5, 0.2]);
        let draws = 20_000;
        let s = model.predict(&x, draws, &mut RngState::new(1)).unwrap();
        let mean = model.mean_path(&x).unwrap();
        for i in 0..2 {
            let p = s.point(i);
            let m = p.iter().sum::<f64>() / draws as f64;
            let sd = (p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / draws as f64).sqrt();
            assert!((m - mean.get(i, 0)).abs() < 4.0 * sd / (draws as f64).sqrt() + 1e-9);
        }
    }

    #[test]
    fn visit_and_bind_agree() {
        let (model, batch) = tiny(10, 2);
        let tape = Tape::new();
        let binder = Binder::new(&tape);
        model.elbo(&binder, &batch, 5, &mut RngState::new(0)).unwrap();
        let bound: Vec<String> = binder.bound().into_iter().map(|(n, _)| n).collect();
        let mut sorted_bound = bound.clone();
        sorted_bound.sort();
        let mut names = model.param_names();
        names.sort();
        assert_eq!(sorted_bound, names);
    }
}
