use super::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{RngState, Tensor};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyCase {
    Heteroscedastic,
    Step,
    Moon,
}

impl ToyCase {
    pub fn default_size(self) -> usize {
        match self {
            ToyCase::Heteroscedastic => 1000,
            ToyCase::Step => 500,
            ToyCase::Moon => 200,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ToyCase::Heteroscedastic => "heteroscedastic",
            ToyCase::Step => "step",
            ToyCase::Moon => "moon",
        }
    }

    /// Input range used for evenly spaced prediction grids.
    pub fn domain(self) -> (f64, f64) {
        match self {
            ToyCase::Heteroscedastic => (-2.0, 2.0),
            ToyCase::Step => (0.0, 1.0),
            ToyCase::Moon => (-1.0, 2.0),
        }
    }
}

impl FromStr for ToyCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "heteroscedastic" => Ok(ToyCase::Heteroscedastic),
            "step" => Ok(ToyCase::Step),
            "moon" => Ok(ToyCase::Moon),
            _ => Err(Error::InvalidConfig(format!("unknown toy case `{s}`"))),
        }
    }
}

pub const MOON_NOISE: f64 = 0.1;
pub const STEP_NOISE_STD: f64 = 0.01;

pub fn hetero_mean(x: f64) -> f64 {
    (5.0 * x).cos() * (-0.5 * x).exp()
}

/// True noise standard deviation of the heteroscedastic case.
pub fn hetero_noise_std(x: f64) -> f64 {
    (0.25 * (6.0 * x + 1.0).cos() * (-x).exp()).abs()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Two interleaved half circles as `(first, second)` coordinates, with
/// Gaussian noise on both. Matches the usual `make_moons` construction.
pub fn make_moons(n: usize, noise: f64, rng: &mut RngState) -> Vec<(f64, f64)> {
    let n_out = n / 2;
    let n_in = n - n_out;
    let mut pts: Vec<(f64, f64)> = linspace(0.0, PI, n_out).into_iter().map(|t| (t.cos(), t.sin())).collect();
    pts.extend(linspace(0.0, PI, n_in).into_iter().map(|t| (1.0 - t.cos(), 1.0 - t.sin() - 0.5)));
    rng.shuffle(&mut pts);
    pts.into_iter().map(|(a, b)| (a + noise * rng.normal(), b + noise * rng.normal())).collect()
}

pub fn gen_toy(case: ToyCase, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("toy data needs at least one point".into()));
    }
    let mut rng = RngState::for_stream(seed, 11);
    let (xs, ys): (Vec<f64>, Vec<f64>) = match case {
        ToyCase::Heteroscedastic => (0..n)
            .map(|_| {
                let x = -2.0 + 4.0 * rng.uniform_open();
                (x, hetero_mean(x) + 0.25 * (6.0 * x + 1.0).cos() * (-x).exp() * rng.normal())
            })
            .unzip(),
        ToyCase::Step => (0..n)
            .map(|_| {
                let x = rng.uniform_open();
                let level = if x < 0.5 { 0.0 } else { 1.0 };
                (x, level + STEP_NOISE_STD * rng.normal())
            })
            .unzip(),
        ToyCase::Moon => make_moons(n, MOON_NOISE, &mut rng).into_iter().unzip(),
    };
    Dataset::new(Tensor::column(xs), Tensor::column(ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hetero_formula_at_zero() {
        assert_eq!(hetero_mean(0.0), 1.0);
        assert!((hetero_noise_std(0.0) - 0.25 * 1f64.cos()).abs() < 1e-15);
        assert!((hetero_noise_std(0.0) - 0.1351).abs() < 1e-4);
    }

    #[test]
    fn default_sizes_and_ranges() {
        let h = gen_toy(ToyCase::Heteroscedastic, 1000, 0).unwrap();
        assert_eq!(h.len(), 1000);
        assert!(h.x.as_slice().iter().all(|x| (-2.0..=2.0).contains(x)));
        let s = gen_toy(ToyCase::Step, 500, 0).unwrap();
        for i in 0..s.len() {
            let (x, y) = (s.x.get(i, 0), s.y.get(i, 0));
            let level = if x < 0.5 { 0.0 } else { 1.0 };
            assert!((y - level).abs() < 0.06);
        }
        assert_eq!(gen_toy(ToyCase::Moon, 200, 0).unwrap().len(), 200);
        assert!(gen_toy(ToyCase::Moon, 0, 0).is_err());
    }

    #[test]
    fn moon_is_bimodal_at_mid_range() {
        let ds = gen_toy(ToyCase::Moon, 10_000, 1).unwrap();
        let mid: Vec<f64> =
            (0..ds.len()).filter(|&i| (ds.x.get(i, 0) - 0.5).abs() < 0.1).map(|i| ds.y.get(i, 0)).collect();
        let upper: Vec<f64> = mid.iter().copied().filter(|y| *y > 0.25).collect();
        let lower: Vec<f64> = mid.iter().copied().filter(|y| *y <= 0.25).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(upper.len() > 100 && lower.len() > 100);
        assert!(mean(&upper) - mean(&lower) > 0.8);
    }

    #[test]
    fn deterministic_by_seed() {
        assert_eq!(gen_toy(ToyCase::Step, 20, 5).unwrap(), gen_toy(ToyCase::Step, 20, 5).unwrap());
        assert_ne!(gen_toy(ToyCase::Step, 20, 5).unwrap(), gen_toy(ToyCase::Step, 20, 6).unwrap());
    }
}
