use super::build::{build_skeleton, AnyModel, ModelConfig};
use super::data::Standardization;
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::params::Parameterized;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major values.
    pub values: Vec<f64>,
}

/// Self-describing JSON snapshot of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub train: Option<TrainConfig>,
    pub input_dim: usize,
    pub num_inducing: usize,
    pub standardization: Option<Standardization>,
    pub seed: u64,
    pub config_hash: String,
    pub params: Vec<ParamRecord>,
}

fn inducing_count(model: &AnyModel) -> usize {
    match model {
        AnyModel::Svgp(m) => m.block.num_inducing(),
        AnyModel::Shgp(m) => m.f.num_inducing(),
        AnyModel::Smgp(m) => m.experts[0].num_inducing(),
        AnyModel::Slgp(m) => m.block.num_inducing(),
    }
}

impl Checkpoint {
    pub fn capture(
        model: &AnyModel,
        config: &ModelConfig,
        train: Option<&TrainConfig>,
        standardization: Option<&Standardization>,
        seed: u64,
        config_hash: &str,
    ) -> Self {
        let mut params = Vec::new();
        model.visit(&mut |name, t| {
            params.push(ParamRecord { name: name.to_string(), shape: t.shape(), values: t.as_slice().to_vec() })
        });
        Checkpoint {
            format_version: FORMAT_VERSION,
            kind: model.kind(),
            config: config.clone(),
            train: train.cloned(),
            input_dim: model.input_dim(),
            num_inducing: inducing_count(model),
            standardization: standardization.cloned(),
            seed,
            config_hash: config_hash.to_string(),
            params,
        }
    }

    /// Rebuilds the model and fills in every parameter by name.
    pub fn restore(&self) -> Result<AnyModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", self.format_version)));
        }
        if self.kind != self.config.kind {
            return Err(Error::Checkpoint(format!("kind tag {} disagrees with config {}", self.kind, self.config.kind)));
        }
        let mut model = build_skeleton(&self.config, self.input_dim, self.num_inducing)?;
        let mut by_name: HashMap<&str, &ParamRecord> = HashMap::new();
        for p in &self.params {
            if by_name.insert(p.name.as_str(), p).is_some() {
                return Err(Error::Checkpoint(format!("parameter `{}` appears twice", p.name)));
            }
        }
        let mut problem: Option<String> = None;
        let mut used = 0;
        model.visit_mut(&mut |name, t| {
            if problem.is_some() {
                return;
            }
            match by_name.get(name) {
                None => problem = Some(format!("missing parameter `{name}`")),
                Some(p) if p.shape != t.shape() || p.values.len() != t.len() => {
                    problem = Some(format!("parameter `{name}` has shape {:?}, expected {:?}", p.shape, t.shape()))
                }
                Some(p) => {
                    *t = Tensor::from_vec(p.shape[0], p.shape[1], p.values.clone());
                    used += 1;
                }
            }
        });
        if let Some(p) = problem {
            return Err(Error::Checkpoint(p));
        }
        if used != self.params.len() {
            return Err(Error::Checkpoint(format!("{} unknown parameters", self.params.len() - used)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Batch;
    use crate::pipeline::build::build_model;
    use crate::tensor::{sample_std_normal, RngState};

    fn trained_like(kind: ModelKind) -> (AnyModel, ModelConfig) {
        let mut rng = RngState::new(9);
        let x = sample_std_normal(&mut rng, 25, 2);
        let cfg = ModelConfig { num_inducing: 5, hidden: vec![6], ..ModelConfig::new(kind) };
        let mut m = build_model(&cfg, &x, 1).unwrap();
        // Perturb so defaults cannot mask a missed parameter.
        m.visit_mut(&mut |_, t| t.as_mut_slice().iter_mut().for_each(|v| *v += 1e-3 * rng.normal()));
        (m, cfg)
    }

    #[test]
    fn round_trip_is_bit_exact_for_every_kind() {
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let (m, cfg) = trained_like(kind);
            let ck = Checkpoint::capture(&m, &cfg, None, None, 1, "abc");
            let path = dir.path().join(format!("{kind}.json"));
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap().restore().unwrap();
            assert_eq!(back, m);
            let x = sample_std_normal(&mut RngState::new(3), 8, 2);
            let y = Tensor::column(vec![0.1, -0.2, 0.3, 0.0, 1.0, -1.0, 0.5, 0.2]);
            let batch = Batch::new(x, y).unwrap();
            let a = m.elbo_value(&batch, 8, &mut RngState::new(5)).unwrap();
            let b = back.elbo_value(&batch, 8, &mut RngState::new(5)).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let (m, cfg) = trained_like(ModelKind::Svgp);
        let ck = Checkpoint::capture(&m, &cfg, None, None, 1, "abc");
        let mut missing = ck.clone();
        missing.params.pop();
        assert!(matches!(missing.restore(), Err(Error::Checkpoint(_))));
        let mut shape = ck.clone();
        shape.params[0].shape = [1, 1];
        assert!(shape.restore().is_err());
        let mut version = ck.clone();
        version.format_version = 99;
        assert!(version.restore().is_err());
        let mut extra = ck;
        extra.params.push(ParamRecord { name: "bogus".into(), shape: [1, 1], values: vec![0.0] });
        assert!(extra.restore().is_err());
    }
}
