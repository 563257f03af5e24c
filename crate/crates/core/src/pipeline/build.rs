use super::kmeans::kmeans_init;
use crate::error::{Error, Result};
use crate::evalkit::PredictiveSampleSet;
use crate::model::{Batch, Model, ModelKind};
use crate::params::{Binder, Parameterized};
use crate::shgp::{ShgpModel, DEFAULT_GH_POINTS};
use crate::slgp::{PredictPath, SlgpBound, SlgpModel, SlgpSettings};
use crate::smgp::{SmgpModel, DEFAULT_TEMPERATURE};
use crate::svgp::{InducingBlock, SvgpModel};
use crate::tensor::{sample_std_normal, RngState, Tensor, Var};
use serde::{Deserialize, Serialize};

/// RNG stream for parameter initialization.
pub const INIT_STREAM: u64 = 0;

/// Everything needed to rebuild a model's structure. Fields that do not
/// apply to `kind` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub num_inducing: usize,
    pub noise_variance: f64,
    pub experts: usize,
    pub temperature: f64,
    pub mc_samples: usize,
    pub beta: f64,
    pub d_w: usize,
    pub d_h: Option<usize>,
    pub hidden: Vec<usize>,
    pub bound: SlgpBound,
    pub predict_path: PredictPath,
    pub gh_points: usize,
    /// Train inducing blocks in whitened coordinates.
    pub whiten: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Svgp,
            num_inducing: 100,
            noise_variance: 0.1,
            experts: 4,
            temperature: DEFAULT_TEMPERATURE,
            mc_samples: 10,
            beta: 1.0,
            d_w: 1,
            d_h: None,
            hidden: vec![100, 100, 100],
            bound: SlgpBound::Hybrid,
            predict_path: PredictPath::Encoder,
            gh_points: DEFAULT_GH_POINTS,
            whiten: true,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig { kind, ..Self::default() }
    }

    /// Toy-case defaults: 50 inducing points.
    pub fn toy(kind: ModelKind) -> Self {
        ModelConfig { kind, num_inducing: 50, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_inducing == 0 {
            return bad("at least one inducing point is required".into());
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return bad(format!("initial noise variance must be positive, got {}", self.noise_variance));
        }
        match self.kind {
            ModelKind::Smgp if self.experts == 0 => bad("at least one expert is required".into()),
            ModelKind::Smgp if !(self.temperature > 0.0) => bad("temperature must be positive".into()),
            ModelKind::Smgp | ModelKind::Slgp if self.mc_samples == 0 => bad("at least one sample is required".into()),
            ModelKind::Slgp if !(0.0..=1.0).contains(&self.beta) => bad(format!("β = {} is outside [0, 1]", self.beta)),
            ModelKind::Shgp if self.gh_points == 0 => bad("at least one quadrature node is required".into()),
            _ => Ok(()),
        }
    }

    fn slgp_settings(&self) -> SlgpSettings {
        SlgpSettings {
            d_w: self.d_w,
            d_h: self.d_h,
            hidden: self.hidden.clone(),
            beta: self.beta,
            samples: self.mc_samples,
            bound: self.bound,
            noise_variance: self.noise_variance,
            ..SlgpSettings::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Svgp(SvgpModel),
    Shgp(ShgpModel),
    Smgp(SmgpModel),
    Slgp(SlgpModel),
}

macro_rules! each {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyModel::Svgp($m) => $body,
            AnyModel::Shgp($m) => $body,
            AnyModel::Smgp($m) => $body,
            AnyModel::Slgp($m) => $body,
        }
    };
}

impl Parameterized for AnyModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        each!(self, m => m.visit(f))
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        each!(self, m => m.visit_mut(f))
    }
}

impl Model for AnyModel {
    fn kind(&self) -> ModelKind {
        each!(self, m => m.kind())
    }

    fn input_dim(&self) -> usize {
        each!(self, m => m.input_dim())
    }

    fn elbo<'t>(&self, binder: &Binder<'t>, batch: &Batch, n_total: usize, rng: &mut RngState) -> Result<Var<'t>> {
        each!(self, m => m.elbo(binder, batch, n_total, rng))
    }

    fn predict(&self, x: &Tensor, samples_per_point: usize, rng: &mut RngState) -> Result<PredictiveSampleSet> {
        each!(self, m => m.predict(x, samples_per_point, rng))
    }
}

fn whiten(b: &mut InducingBlock) -> Result<()> {
    *b = b.clone().whitened()?;
    Ok(())
}

fn assemble(cfg: &ModelConfig, z: Tensor, rng: &mut RngState) -> Result<AnyModel> {
    cfg.validate()?;
    let mut model = match cfg.kind {
        ModelKind::Svgp => AnyModel::Svgp(SvgpModel::new(z, cfg.noise_variance)?),
        ModelKind::Shgp => {
            let mut m = ShgpModel::new(z)?;
            m.log_c = Tensor::scalar(cfg.noise_variance.ln());
            m.gh_points = cfg.gh_points;
            AnyModel::Shgp(m)
        }
        ModelKind::Smgp => {
            let mut m = SmgpModel::new(z, cfg.experts, cfg.noise_variance, rng)?;
            m.temperature = cfg.temperature;
            m.mc_samples = cfg.mc_samples;
            AnyModel::Smgp(m)
        }
        ModelKind::Slgp => {
            let mut m = SlgpModel::new(&z, &cfg.slgp_settings(), rng)?;
            m.predict_path = cfg.predict_path;
            AnyModel::Slgp(m)
        }
    };
    if cfg.whiten {
        match &mut model {
            AnyModel::Svgp(m) => whiten(&mut m.block)?,
            AnyModel::Shgp(m) => {
                whiten(&mut m.f)?;
                whiten(&mut m.w)?;
            }
            AnyModel::Smgp(m) => {
                for b in m.experts.iter_mut() {
                    // Distinct expert means, drawn in whitened space.
                    whiten(b)?;
                    b.mean = sample_std_normal(rng, b.num_inducing(), 1);
                }
                for b in m.assignments.iter_mut() {
                    whiten(b)?;
                }
            }
            AnyModel::Slgp(m) => whiten(&mut m.block)?,
        }
    }
    Ok(model)
}

/// Initializes a model for `x_train`, with inducing inputs from k-means.
/// The number of inducing points is capped at the number of rows.
pub fn build_model(cfg: &ModelConfig, x_train: &Tensor, seed: u64) -> Result<AnyModel> {
    let m = cfg.num_inducing.min(x_train.rows());
    if m < cfg.num_inducing {
        log::warn!("only {} training points; using {m} inducing points", x_train.rows());
    }
    let z = kmeans_init(x_train, m, seed)?;
    assemble(cfg, z, &mut RngState::for_stream(seed, INIT_STREAM))
}

/// A model with the right parameter shapes and placeholder values, to be
/// filled from a checkpoint.
pub fn build_skeleton(cfg: &ModelConfig, input_dim: usize, num_inducing: usize) -> Result<AnyModel> {
    let mut rng = RngState::new(0);
    let z = sample_std_normal(&mut rng, num_inducing, input_dim);
    assemble(cfg, z, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_every_kind_with_matching_dims() {
        let x = sample_std_normal(&mut RngState::new(0), 40, 2);
        for kind in ModelKind::ALL {
            let cfg = ModelConfig { num_inducing: 6, hidden: vec![8], ..ModelConfig::new(kind) };
            let m = build_model(&cfg, &x, 1).unwrap();
            assert_eq!(m.kind(), kind);
            assert_eq!(m.input_dim(), 2);
            let batch = Batch::new(x.clone(), Tensor::zeros(40, 1)).unwrap();
            assert!(m.elbo_value(&batch, 40, &mut RngState::new(2)).unwrap().is_finite());
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let x = sample_std_normal(&mut RngState::new(0), 10, 1);
        let bad = [
            ModelConfig { num_inducing: 0, ..ModelConfig::new(ModelKind::Svgp) },
            ModelConfig { experts: 0, ..ModelConfig::new(ModelKind::Smgp) },
            ModelConfig { beta: 1.5, ..ModelConfig::new(ModelKind::Slgp) },
            ModelConfig { noise_variance: -1.0, ..ModelConfig::new(ModelKind::Shgp) },
        ];
        for cfg in bad {
            assert!(matches!(build_model(&cfg, &x, 0), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn inducing_count_is_capped_and_build_is_deterministic() {
        let x = sample_std_normal(&mut RngState::new(3), 5, 1);
        let cfg = ModelConfig::toy(ModelKind::Smgp);
        let a = build_model(&cfg, &x, 7).unwrap();
        assert_eq!(a, build_model(&cfg, &x, 7).unwrap());
        match a {
            AnyModel::Smgp(m) => assert_eq!(m.experts[0].num_inducing(), 5),
            _ => unreachable!(),
        }
    }

    #[test]
    fn skeleton_has_the_same_parameter_layout() {
        let x = sample_std_normal(&mut RngState::new(4), 30, 3);
        for kind in ModelKind::ALL {
            let cfg = ModelConfig { num_inducing: 7, hidden: vec![5, 5], ..ModelConfig::new(kind) };
            let shapes = |m: &AnyModel| {
                let mut v = Vec::new();
                m.visit(&mut |n, t| v.push((n.to_string(), t.shape())));
                v
            };
            assert_eq!(shapes(&build_model(&cfg, &x, 0).unwrap()), shapes(&build_skeleton(&cfg, 3, 7).unwrap()));
        }
    }
}
