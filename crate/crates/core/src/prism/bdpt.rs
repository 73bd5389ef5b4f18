//! Bayesian difference-in-proportions test.
//!
//! Each group's rate gets a Beta(1, 1) prior and a Binomial likelihood, so the
//! posterior is Beta(y + 1, n − y + 1). The posterior of `θ_in − θ_out` is
//! summarized from paired independent draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ROPE: f64 = 0.01;
pub const DEFAULT_DRAWS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdptConfig {
    /// Half-width of the region of practical equivalence around zero.
    pub rope: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for BdptConfig {
    fn default() -> Self {
        BdptConfig {
            rope: DEFAULT_ROPE,
            draws: DEFAULT_DRAWS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdptResult {
    /// Posterior mean of `θ_in − θ_out`.
    pub delta_theta_mean: f64,
    /// Central 95% credible interval of the difference.
    pub credible_interval: (f64, f64),
    /// `P(|θ_in − θ_out| > rope)`.
    pub p_outside_rope: f64,
    pub p_above_rope: f64,
    pub p_below_rope: f64,
    pub theta_in_mean: f64,
    pub theta_out_mean: f64,
    pub rope: f64,
    pub samples_used: usize,
    pub seed: u64,
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn bdpt(in_support: u64, in_total: u64, out_support: u64, out_total: u64, cfg: &BdptConfig) -> Result<BdptResult> {
    if in_total == 0 || out_total == 0 {
        return Err(Error::param("group totals must be at least 1"));
    }
    if in_support > in_total || out_support > out_total {
        return Err(Error::param(format!(
            "support exceeds total: in {in_support}/{in_total}, out {out_support}/{out_total}"
        )));
    }
    if cfg.draws < 2 {
        return Err(Error::param("need at least 2 posterior draws"));
    }
    if !(cfg.rope >= 0.0) {
        return Err(Error::param(format!("rope must be nonnegative, got {}", cfg.rope)));
    }
    let posterior = |y: u64, n: u64| {
        Beta::new((y + 1) as f64, (n - y + 1) as f64).map_err(|e| Error::param(e.to_string()))
    };
    let post_in = posterior(in_support, in_total)?;
    let post_out = posterior(out_support, out_total)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut deltas = Vec::with_capacity(cfg.draws);
    let (mut sum_in, mut sum_out) = (0.0, 0.0);
    let (mut above, mut below) = (0usize, 0usize);
    for _ in 0..cfg.draws {
        let t_in = post_in.sample(&mut rng);
        let t_out = post_out.sample(&mut rng);
        let d = t_in - t_out;
        sum_in += t_in;
        sum_out += t_out;
        if d > cfg.rope {
            above += 1;
        } else if d < -cfg.rope {
            below += 1;
        }
        deltas.push(d);
    }
    let n = cfg.draws as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    deltas.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&deltas, 0.025).min(mean);
    let hi = quantile_sorted(&deltas, 0.975).max(mean);
    Ok(BdptResult {
        delta_theta_mean: mean,
        credible_interval: (lo, hi),
        p_outside_rope: (above + below) as f64 / n,
        p_above_rope: above as f64 / n,
        p_below_rope: below as f64 / n,
        theta_in_mean: sum_in / n,
        theta_out_mean: sum_out / n,
        rope: cfg.rope,
        samples_used: cfg.draws,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn beta_sd(a: f64, b: f64) -> f64 {
        (a * b / ((a + b).powi(2) * (a + b + 1.0))).sqrt()
    }

    #[test]
    fn analytic_example() {
        let r = bdpt(30, 100, 10, 200, &BdptConfig { seed: 17, ..Default::default() }).unwrap();
        let analytic: f64 = 31.0 / 102.0 - 11.0 / 202.0;
        assert!((analytic - 0.2495).abs() < 1e-4);
        // MC standard error of the difference of means
        let se = (beta_sd(31.0, 71.0).powi(2) + beta_sd(11.0, 191.0).powi(2)).sqrt() / (4000f64).sqrt();
        assert!((r.delta_theta_mean - analytic).abs() < 3.0 * se);
        assert!(r.p_outside_rope > 0.999);
        assert!(r.credible_interval.0 <= r.delta_theta_mean && r.delta_theta_mean <= r.credible_interval.1);
        assert_eq!(r.samples_used, 4000);
    }

    #[test]
    fn equal_groups_are_symmetric() {
        let r = bdpt(40, 400, 40, 400, &BdptConfig { seed: 3, ..Default::default() }).unwrap();
        let sd = beta_sd(41.0, 361.0) * 2f64.sqrt();
        assert!(r.delta_theta_mean.abs() < 4.0 * sd / (4000f64).sqrt());
        assert!((r.p_above_rope - r.p_below_rope).abs() < 0.05);
    }

    #[test]
    fn support_above_total_is_rejected() {
        assert!(matches!(bdpt(5, 4, 0, 1, &BdptConfig::default()), Err(Error::InvalidParameter(_))));
        assert!(bdpt(0, 0, 0, 1, &BdptConfig::default()).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = BdptConfig { seed: 99, ..Default::default() };
        assert_eq!(bdpt(3, 50, 9, 70, &cfg).unwrap(), bdpt(3, 50, 9, 70, &cfg).unwrap());
    }

    proptest! {
        #[test]
        fn rope_monotone(y1 in 0u64..50, y2 in 0u64..50, seed in 0u64..100) {
            let mut last = f64::INFINITY;
            for rope in [0.0, 0.005, 0.01, 0.05, 0.1, 0.3] {
                let r = bdpt(y1, 60, y2, 80, &BdptConfig { rope, draws: 500, seed }).unwrap();
                prop_assert!(r.p_outside_rope <= last);
                prop_assert!((0.0..=1.0).contains(&r.p_outside_rope));
                last = r.p_outside_rope;
            }
        }

        #[test]
        fn swap_negates_mean(y1 in 0u64..60, y2 in 0u64..60, seed in 0u64..100) {
            let cfg = BdptConfig { draws: 4000, seed, ..Default::default() };
            let a = bdpt(y1, 60, y2, 80, &cfg).unwrap();
            let b = bdpt(y2, 80, y1, 60, &cfg).unwrap();
            let sd = (beta_sd((y1 + 1) as f64, (60 - y1 + 1) as f64).powi(2)
                + beta_sd((y2 + 1) as f64, (80 - y2 + 1) as f64).powi(2)).sqrt();
            let mc = 2f64.sqrt() * sd / (4000f64).sqrt();
            prop_assert!((a.delta_theta_mean + b.delta_theta_mean).abs() < 4.0 * mc);
            prop_assert!((a.p_outside_rope - b.p_outside_rope).abs() < 0.05);
        }
    }
}
