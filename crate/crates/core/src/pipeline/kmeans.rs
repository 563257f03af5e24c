use crate::error::{Error, Result};
use crate::tensor::{RngState, Tensor};

pub const KMEANS_ITERATIONS: usize = 50;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's algorithm from k-means++ seeds. Returns `M x d` centroids.
pub fn kmeans_init(x: &Tensor, m: usize, seed: u64) -> Result<Tensor> {
    let n = x.rows();
    if m == 0 || m > n {
        return Err(Error::InvalidConfig(format!("cannot pick {m} centroids from {n} points")));
    }
    let mut rng = RngState::for_stream(seed, 5);
    let mut centers: Vec<Vec<f64>> = vec![x.row_slice(rng.below(n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq(x.row_slice(i), &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform_open() * total;
            let mut k = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    k = i;
                    break;
                }
                u -= d;
            }
            k
        } else {
            rng.below(n)
        };
        let c = x.row_slice(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq(x.row_slice(i), &c));
        }
        centers.push(c);
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let xi = x.row_slice(i);
            let best = (0..m)
                .map(|k| (k, sq(xi, &centers[k])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k)
                .expect("m >= 1");
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let d = x.cols();
        let mut sums = vec![vec![0.0; d]; m];
        let mut counts = vec![0usize; m];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x.row_slice(i)) {
                *s += v;
            }
        }
        for k in 0..m {
            if counts[k] > 0 {
                centers[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
    }
    Ok(Tensor::from_rows(&centers))
}
