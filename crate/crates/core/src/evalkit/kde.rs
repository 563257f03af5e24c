use super::PredictiveSampleSet;
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bandwidth {
    pub h: f64,
    /// True when all samples coincide and the fallback width was used.
    pub fallback: bool,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb `0.9 · min(σ, IQR/1.34) · n^(-1/5)`.
///
/// A zero IQR with positive spread falls back to `σ`; identical samples
/// give `1e-3 · (1 + |mean|)` and set the fallback flag.
pub fn silverman_bandwidth(samples: &[f64]) -> Bandwidth {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sigma = var.sqrt();
    if !(sigma > 0.0) {
        return Bandwidth { h: 1e-3 * (1.0 + mean.abs()), fallback: true };
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    Bandwidth { h: 0.9 * spread * n.powf(-0.2), fallback: false }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KdeNll {
    pub per_point: Vec<f64>,
    pub bandwidths: Vec<Bandwidth>,
    pub mean: f64,
}

impl KdeNll {
    pub fn fallback_count(&self) -> usize {
        self.bandwidths.iter().filter(|b| b.fallback).count()
    }
}

fn point_nll(samples: &[f64], y: f64, h: f64) -> f64 {
    let logs: Vec<f64> = samples.iter().map(|s| -0.5 * ((y - s) / h).powi(2)).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    -(lse - (samples.len() as f64).ln() - h.ln() - LN_SQRT_2PI)
}

/// Negative log density of each truth under a Gaussian KDE of its samples.
pub fn kde_nll(set: &PredictiveSampleSet, y_true: &[f64]) -> Result<KdeNll> {
    if y_true.len() != set.num_points() {
        return Err(Error::DimensionMismatch(format!(
            "{} truths for {} test points",
            y_true.len(),
            set.num_points()
        )));
    }
    if set.samples_per_point() < 2 {
        return Err(Error::InvalidConfig("density estimation needs at least two samples per point".into()));
    }
    let mut per_point = Vec::with_capacity(y_true.len());
    let mut bandwidths = Vec::with_capacity(y_true.len());
    for (i, &y) in y_true.iter().enumerate() {
        let s = set.point(i);
        let bw = silverman_bandwidth(s);
        per_point.push(point_nll(s, y, bw.h));
        bandwidths.push(bw);
    }
    let mean = per_point.iter().sum::<f64>() / per_point.len().max(1) as f64;
    Ok(KdeNll { per_point, bandwidths, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::tensor::{sample_std_normal, RngState, Tensor};

    fn set(rows: &[Vec<f64>]) -> PredictiveSampleSet {
        PredictiveSampleSet::new(Tensor::from_rows(rows), None, ModelKind::Svgp).unwrap()
    }

    #[test]
    fn identical_samples_use_flagged_fallback() {
        let s = set(&[vec![2.0; 5]]);
        let r = kde_nll(&s, &[2.0]).unwrap();
        let h = 1e-3 * 3.0;
        assert!(r.bandwidths[0].fallback);
        assert!((r.per_point[0] - (h * (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-12);
        assert_eq!(r.fallback_count(), 1);
    }

    #[test]
    fn standard_normal_samples_give_known_density() {
        let mut rng = RngState::new(3);
        let draws = sample_std_normal(&mut rng, 1, 10_000);
        let s = PredictiveSampleSet::new(draws, None, ModelKind::Svgp).unwrap();
        let r = kde_nll(&s, &[0.0]).unwrap();
        assert!((r.mean - LN_SQRT_2PI).abs() < 0.05, "{}", r.mean);
    }

    #[test]
    fn identical_rows_give_identical_nll_and_permutation_invariance() {
        let row = vec![0.3, -1.2, 0.8, 2.0, 0.1];
        let mut rev = row.clone();
        rev.reverse();
        let r = kde_nll(&set(&[row.clone(), row, rev]), &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(r.per_point[0], r.per_point[1]);
        assert!((r.per_point[0] - r.per_point[2]).abs() < 1e-14);
    }

    #[test]
    fn shift_and_scale_correction_matches_original_units() {
        let mut rng = RngState::new(4);
        let draws = sample_std_normal(&mut rng, 3, 50);
        let truth = [0.2, -0.4, 1.1];
        let std_set = PredictiveSampleSet::new(draws, None, ModelKind::Svgp).unwrap();
        let std_nll = kde_nll(&std_set, &truth).unwrap();
        let mut orig = std_set.clone();
        orig.destandardize(5.0, 2.5).unwrap();
        let truth_orig: Vec<f64> = truth.iter().map(|t| 5.0 + 2.5 * t).collect();
        let orig_nll = kde_nll(&orig, &truth_orig).unwrap();
        for i in 0..3 {
            assert!((std_nll.per_point[i] + 2.5f64.ln() - orig_nll.per_point[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_iqr_with_spread_uses_sigma() {
        let s = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let bw = silverman_bandwidth(&s);
        assert!(!bw.fallback);
        let mean = 1.0 / 8.0;
        let sigma = ((7.0 * mean * mean + (1.0 - mean) * (1.0 - mean)) / 7.0f64).sqrt();
        assert!((bw.h - 0.9 * sigma * 8f64.powf(-0.2)).abs() < 1e-14);
    }

    #[test]
    fn errors_on_bad_shapes() {
        assert!(kde_nll(&set(&[vec![1.0, 2.0]]), &[1.0, 2.0]).is_err());
        assert!(kde_nll(&set(&[vec![1.0]]), &[1.0]).is_err());
    }
}
