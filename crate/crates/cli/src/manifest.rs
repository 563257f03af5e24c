//! Run manifests. Every invocation is reduced to a [`Task`], written out as
//! TOML and hashed, so a run can be repeated from its manifest alone.

use modgp::pipeline::ToyCase;
use modgp::{Error, ModelConfig, Result, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub path: PathBuf,
    /// Target column; the last column when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl DataSpec {
    /// Dataset label used in reports: the file stem.
    pub fn name(&self) -> String {
        self.path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
    }

    pub fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .map_err(|_| Error::InvalidConfig(format!("delimiter `{}` is not a single byte", self.delimiter)))
    }
}

/// Evenly spaced 1-D prediction inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl std::str::FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [lo, hi, n] = parts.as_slice() else {
            return Err(format!("expected `lo,hi,n`, got `{s}`"));
        };
        let num = |v: &str| v.parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
        let grid = Grid { lo: num(lo)?, hi: num(hi)?, n: n.parse().map_err(|e| format!("`{n}`: {e}"))? };
        if !(grid.lo < grid.hi) || grid.n < 2 {
            return Err(format!("grid needs lo < hi and at least two points, got `{s}`"));
        }
        Ok(grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    GenToy {
        case: ToyCase,
        n: usize,
        seed: u64,
    },
    Train {
        data: DataSpec,
        model: ModelConfig,
        train: TrainConfig,
    },
    Predict {
        checkpoint: PathBuf,
        samples: usize,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<Grid>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<DataSpec>,
    },
    Evaluate {
        checkpoint: PathBuf,
        samples: usize,
        seed: u64,
        data: DataSpec,
    },
    Benchmark {
        splits: usize,
        threads: usize,
        samples: usize,
        /// One benchmark per value; empty means the model's own β.
        #[serde(default)]
        betas: Vec<f64>,
        data: DataSpec,
        model: ModelConfig,
        train: TrainConfig,
    },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::GenToy { .. } => "gen-toy",
            Task::Train { .. } => "train",
            Task::Predict { .. } => "predict",
            Task::Evaluate { .. } => "evaluate",
            Task::Benchmark { .. } => "benchmark",
        }
    }

    /// Rewrites file references as absolute paths so the manifest does not
    /// depend on the working directory.
    pub fn canonicalize_paths(&mut self) -> Result<()> {
        let abs = |p: &mut PathBuf| -> Result<()> {
            *p = std::fs::canonicalize(&*p)
                .map_err(|e| Error::InvalidConfig(format!("cannot open {}: {e}", p.display())))?;
            Ok(())
        };
        match self {
            Task::GenToy { .. } => Ok(()),
            Task::Train { data, .. } | Task::Benchmark { data, .. } => abs(&mut data.path),
            Task::Evaluate { checkpoint, data, .. } => {
                abs(checkpoint)?;
                abs(&mut data.path)
            }
            Task::Predict { checkpoint, data, .. } => {
                abs(checkpoint)?;
                data.as_mut().map_or(Ok(()), |d| abs(&mut d.path))
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("cannot serialize manifest: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("bad manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical manifest text.
    pub fn config_hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }

    /// Writes the manifest with its hash on a trailing comment line.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = format!("{}\n# config_hash: {}\n", self.to_toml()?, self.config_hash()?);
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
