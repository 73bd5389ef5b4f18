//! Two-component Gaussian mixture with a symmetric Dirichlet weight prior,
//! used to split a loading vector into in-group (larger mean) and out-group.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.5;

const MAX_ITER: usize = 1000;
const LOGLIK_TOL: f64 = 1e-8;
/// Variance floor on the max-scaled data.
const REG_VAR: f64 = 1e-6;
const MEAN_SEPARATION: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BgmmSplit {
    /// In-group membership; all false when degenerate.
    pub mask: Vec<bool>,
    /// Component means on the input scale, `[lower, higher]`.
    pub posterior_means: [f64; 2],
    /// Expected mixture weights, aligned with `posterior_means`.
    pub weights: [f64; 2],
    pub degenerate: bool,
}

impl BgmmSplit {
    fn degenerate(n: usize, mean: f64) -> Self {
        BgmmSplit {
            mask: vec![false; n],
            posterior_means: [mean, mean],
            weights: [0.5, 0.5],
            degenerate: true,
        }
    }

    pub fn in_indices(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
    }
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

/// 1-D two-means from a seeded first centre and the point farthest from it.
fn two_means_init(x: &[f64], rng: &mut ChaCha8Rng) -> [f64; 2] {
    let first = x[rng.random_range(0..x.len())];
    let second = x
        .iter()
        .copied()
        .fold(first, |best, v| if (v - first).abs() > (best - first).abs() { v } else { best });
    let mut c = if first <= second { [first, second] } else { [second, first] };
    for _ in 0..100 {
        let mut sum = [0.0; 2];
        let mut cnt = [0usize; 2];
        for &v in x {
            let k = usize::from((v - c[1]).abs() < (v - c[0]).abs());
            sum[k] += v;
            cnt[k] += 1;
        }
        let mut next = c;
        for k in 0..2 {
            if cnt[k] > 0 {
                next[k] = sum[k] / cnt[k] as f64;
            }
        }
        if next == c {
            break;
        }
        c = next;
    }
    c
}

/// Fits the mixture by EM. Weights use the Dirichlet(γ, γ) posterior mean
/// `(N_k + γ) / (n + 2γ)` in each M-step. The data are divided by their
/// maximum first, so the split does not depend on the loading scale.
pub fn bgmm_in_group(loadings: &[f64], gamma: f64, seed: u64) -> Result<BgmmSplit> {
    let n = loadings.len();
    if n < 2 {
        return Err(Error::param(format!("need at least 2 loadings, got {n}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::param(format!("gamma must be positive, got {gamma}")));
    }
    if let Some(bad) = loadings.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidInput(format!("loadings must be finite and nonnegative, found {bad}")));
    }
    let scale = loadings.iter().fold(0.0f64, |m, v| m.max(*v));
    if scale == 0.0 {
        return Ok(BgmmSplit::degenerate(n, 0.0));
    }
    let x: Vec<f64> = loadings.iter().map(|v| v / scale).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = two_means_init(&x, &mut rng);
    let overall_mean = x.iter().sum::<f64>() / n as f64;
    let overall_var = x.iter().map(|v| (v - overall_mean).powi(2)).sum::<f64>() / n as f64 + REG_VAR;
    let mut var = [overall_var; 2];
    let mut weight = [0.5f64; 2];
    let mut resp = vec![[0.0; 2]; n];
    let mut prev_ll = f64::NEG_INFINITY;

    for _ in 0..MAX_ITER {
        // E-step
        let mut ll = 0.0;
        for (i, &v) in x.iter().enumerate() {
            let l0 = weight[0].ln() + log_normal_pdf(v, mean[0], var[0]);
            let l1 = weight[1].ln() + log_normal_pdf(v, mean[1], var[1]);
            let m = l0.max(l1);
            let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
            resp[i] = [(l0 - lse).exp(), (l1 - lse).exp()];
            ll += lse;
        }
        // M-step
        for k in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if nk < 1e-12 {
                return Ok(BgmmSplit::degenerate(n, overall_mean * scale));
            }
            weight[k] = (nk + gamma) / (n as f64 + 2.0 * gamma);
            mean[k] = resp.iter().zip(&x).map(|(r, v)| r[k] * v).sum::<f64>() / nk;
            var[k] = resp.iter().zip(&x).map(|(r, v)| r[k] * (v - mean[k]).powi(2)).sum::<f64>() / nk + REG_VAR;
        }
        if (ll - prev_ll).abs() < LOGLIK_TOL {
            break;
        }
        prev_ll = ll;
    }

    let hi = usize::from(mean[1] > mean[0]);
    let lo = 1 - hi;
    if (mean[hi] - mean[lo]).abs() < MEAN_SEPARATION {
        return Ok(BgmmSplit::degenerate(n, overall_mean * scale));
    }
    let mask: Vec<bool> = resp.iter().map(|r| r[hi] > r[lo]).collect();
    let members = mask.iter().filter(|m| **m).count();
    if members == 0 || members == n {
        return Ok(BgmmSplit::degenerate(n, overall_mean * scale));
    }
    Ok(BgmmSplit {
        mask,
        posterior_means: [mean[lo] * scale, mean[hi] * scale],
        weights: [weight[lo], weight[hi]],
        degenerate: false,
    })
}
