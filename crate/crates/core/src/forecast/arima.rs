//! ARIMA(p, d, q) fitted by conditional sum of squares.
//!
//! AR and MA coefficients are optimised through partial autocorrelations
//! (`r = tanh(u)`) so every candidate is stationary and invertible. The
//! optimiser is Nelder-Mead from several seeded starting points.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::cost::CostSeries;
use crate::seed::derive_seed;

pub const DEFAULT_INITIAL_WINDOW: usize = 24;
pub const DEFAULT_HORIZONS: [usize; 2] = [1, 6];
pub const MAX_P: usize = 8;
pub const MAX_Q: usize = 6;

const RANDOM_STARTS: usize = 4;
const MAX_EVALS_PER_DIM: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub intercept: bool,
}

impl ArimaSpec {
    /// Intercept on for `d <= 1`, off otherwise.
    pub fn new(p: usize, d: usize, q: usize) -> Result<Self> {
        Self::with_intercept(p, d, q, d <= 1)
    }

    pub fn with_intercept(p: usize, d: usize, q: usize, intercept: bool) -> Result<Self> {
        if p + q == 0 && d == 0 && !intercept {
            return Err(Error::param("ARIMA(0,0,0) without intercept has nothing to fit"));
        }
        if p > MAX_P || q > MAX_Q {
            return Err(Error::param(format!("order ({p},{d},{q}) exceeds p <= {MAX_P}, q <= {MAX_Q}")));
        }
        Ok(ArimaSpec { p, d, q, intercept })
    }

    fn n_params(&self) -> usize {
        self.p + self.q + usize::from(self.intercept)
    }

    /// Shortest series that leaves at least one conditional residual beyond
    /// the parameter count.
    pub fn min_length(&self) -> usize {
        self.p + self.d + self.q + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaFit {
    pub spec: ArimaSpec,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Mean of the differenced series; zero without intercept.
    pub intercept: f64,
    pub sigma2: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    /// Number of conditional residuals.
    pub n_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub step: usize,
    pub mean: f64,
    pub variance: f64,
    /// Mean minus one standard deviation.
    pub lo: f64,
    pub hi: f64,
}

/// Applies first differences `d` times.
pub fn difference(series: &[f64], d: usize) -> Vec<f64> {
    let mut out = series.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    out
}

/// Inverts [`difference`] given the first `d` values of each level
/// (`heads[k]` is the first value of the `k`-times differenced series).
pub fn integrate(diffed: &[f64], heads: &[f64]) -> Vec<f64> {
    let mut out = diffed.to_vec();
    for &h in heads.iter().rev() {
        let mut level = Vec::with_capacity(out.len() + 1);
        level.push(h);
        for v in &out {
            let last = *level.last().unwrap();
            level.push(last + v);
        }
        out = level;
    }
    out
}

/// Maps partial autocorrelations to AR coefficients of a stationary
/// polynomial `1 - sum phi_i z^i` (Durbin-Levinson step-up).
pub(crate) fn pacf_to_ar(r: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(r.len());
    for (k, &rk) in r.iter().enumerate() {
        let prev = phi.clone();
        for j in 0..k {
            phi[j] = prev[j] - rk * prev[k - 1 - j];
        }
        phi.push(rk);
    }
    phi
}

/// Inverse of [`pacf_to_ar`]; `None` if the polynomial is not stationary.
pub(crate) fn ar_to_pacf(phi: &[f64]) -> Option<Vec<f64>> {
    let mut a = phi.to_vec();
    let mut r = vec![0.0; phi.len()];
    for k in (1..=phi.len()).rev() {
        let rk = a[k - 1];
        if !rk.is_finite() || rk.abs() >= 1.0 {
            return None;
        }
        r[k - 1] = rk;
        let denom = 1.0 - rk * rk;
        let prev: Vec<f64> = (0..k - 1).map(|j| (a[j] + rk * a[k - 2 - j]) / denom).collect();
        a = prev;
    }
    Some(r)
}

pub fn is_stationary(phi: &[f64]) -> bool {
    ar_to_pacf(phi).is_some()
}

/// MA polynomial `1 + sum theta_j z^j` is invertible iff `-theta` is a
/// stationary AR polynomial.
pub fn is_invertible(theta: &[f64]) -> bool {
    let neg: Vec<f64> = theta.iter().map(|t| -t).collect();
    is_stationary(&neg)
}

struct Unpacked {
    ar: Vec<f64>,
    ma: Vec<f64>,
    mu: f64,
}

fn unpack(spec: &ArimaSpec, x: &[f64], fixed_mu: f64) -> Unpacked {
    let ar = pacf_to_ar(&x[..spec.p].iter().map(|u| u.tanh()).collect::<Vec<_>>());
    let ma: Vec<f64> = pacf_to_ar(&x[spec.p..spec.p + spec.q].iter().map(|u| u.tanh()).collect::<Vec<_>>())
        .into_iter()
        .map(|v| -v)
        .collect();
    let mu = if spec.intercept { x[spec.p + spec.q] } else { fixed_mu };
    Unpacked { ar, ma, mu }
}

/// Conditional residuals: the first `p` are fixed at zero and pre-sample
/// innovations are zero.
fn css_residuals(w: &[f64], ar: &[f64], ma: &[f64], mu: f64) -> Vec<f64> {
    let p = ar.len();
    let mut e = vec![0.0; w.len()];
    for t in p..w.len() {
        let mut v = w[t] - mu;
        for (i, phi) in ar.iter().enumerate() {
            v -= phi * (w[t - 1 - i] - mu);
        }
        for (j, theta) in ma.iter().enumerate() {
            if t > j {
                v -= theta * e[t - 1 - j];
            }
        }
        e[t] = v;
    }
    e
}

fn css(w: &[f64], ar: &[f64], ma: &[f64], mu: f64) -> f64 {
    css_residuals(w, ar, ma, mu)[ar.len()..].iter().map(|v| v * v).sum()
}

struct NelderMeadOutcome {
    x: Vec<f64>,
    f: f64,
    converged: bool,
}

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], steps: &[f64], ftol_abs: f64, max_evals: usize) -> NelderMeadOutcome {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= 1e-10 * values[0].abs() + ftol_abs || diameter < 1e-10 {
            return NelderMeadOutcome { x: simplex[0].clone(), f: values[0], converged: true };
        }
        if evals >= max_evals {
            return NelderMeadOutcome { x: simplex[0].clone(), f: values[0], converged: false };
        }

        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect() };

        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = (0..n).map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k])).collect();
                    values[i] = f(&shrunk);
                    simplex[i] = shrunk;
                }
                evals += n;
            }
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fits `spec` to `series` by minimising the conditional sum of squares.
pub fn arima_fit(series: &[f64], spec: &ArimaSpec, seed: u64) -> Result<ArimaFit> {
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("series contains non-finite values".into()));
    }
    if series.len() < spec.min_length() {
        return Err(Error::SeriesTooShort { needed: spec.min_length(), got: series.len() });
    }
    let w = difference(series, spec.d);
    let w_mean = mean(&w);
    let scale = w.iter().map(|v| v * v).sum::<f64>() + f64::MIN_POSITIVE;
    let n_par = spec.n_params();

    let (ar, ma, mu, ss) = if spec.p + spec.q == 0 {
        let mu = if spec.intercept { w_mean } else { 0.0 };
        (vec![], vec![], mu, css(&w, &[], &[], mu))
    } else {
        let objective = |x: &[f64]| {
            let u = unpack(spec, x, 0.0);
            let v = css(&w, &u.ar, &u.ma, u.mu);
            if v.is_finite() { v } else { f64::INFINITY }
        };
        let sd = (w.iter().map(|v| (v - w_mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let mut steps = vec![0.5; n_par];
        if spec.intercept {
            steps[n_par - 1] = 0.1 * sd.max(1e-3 * w_mean.abs()).max(1e-8);
        }
        let mut starts: Vec<Vec<f64>> = Vec::with_capacity(RANDOM_STARTS + 1);
        let mut base = vec![0.0; n_par];
        if spec.intercept {
            base[n_par - 1] = w_mean;
        }
        starts.push(base.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "arima/starts"));
        for _ in 0..RANDOM_STARTS {
            let mut x = base.clone();
            for v in x.iter_mut().take(spec.p + spec.q) {
                let z: f64 = rng.sample(StandardNormal);
                *v = 0.7 * z;
            }
            starts.push(x);
        }

        let ftol_abs = 1e-14 * scale;
        let max_evals = MAX_EVALS_PER_DIM * n_par;
        let mut best: Option<NelderMeadOutcome> = None;
        let mut any_converged = false;
        for x0 in &starts {
            let mut out = nelder_mead(&objective, x0, &steps, ftol_abs, max_evals);
            if out.converged {
                // a restart from the optimum guards against a collapsed simplex
                let again = nelder_mead(&objective, &out.x, &steps, ftol_abs, max_evals);
                if again.f <= out.f {
                    out = again;
                }
            }
            any_converged |= out.converged;
            if best.as_ref().is_none_or(|b| out.f < b.f) {
                best = Some(out);
            }
        }
        let best = best.unwrap();
        if !any_converged || !best.f.is_finite() {
            return Err(Error::NotConverged(format!(
                "ARIMA({},{},{}) CSS optimisation did not converge from {} starts; best objective {}",
                spec.p,
                spec.d,
                spec.q,
                starts.len(),
                best.f
            )));
        }
        let u = unpack(spec, &best.x, 0.0);
        (u.ar, u.ma, u.mu, best.f)
    };

    let n_used = w.len() - spec.p;
    let sigma2 = ss / n_used as f64;
    let log_likelihood = -0.5 * n_used as f64 * ((2.0 * std::f64::consts::PI * sigma2.max(1e-300)).ln() + 1.0);
    let k = (n_par + 1) as f64;
    Ok(ArimaFit {
        spec: *spec,
        ar,
        ma,
        intercept: mu,
        sigma2,
        log_likelihood,
        aic: -2.0 * log_likelihood + 2.0 * k,
        bic: -2.0 * log_likelihood + k * (n_used as f64).ln(),
        n_used,
    })
}

/// Psi weights of the integrated process: `psi_0 = 1`, then `horizon - 1`
/// more.
pub fn psi_weights(fit: &ArimaFit, horizon: usize) -> Vec<f64> {
    // (1 - sum phi_i B^i)(1 - B)^d = 1 - sum phi*_i B^i
    let mut poly = vec![1.0];
    poly.extend(fit.ar.iter().map(|v| -v));
    for _ in 0..fit.spec.d {
        let mut next = vec![0.0; poly.len() + 1];
        for (i, c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c;
        }
        poly = next;
    }
    let phi_star: Vec<f64> = poly[1..].iter().map(|v| -v).collect();
    let mut psi = vec![0.0; horizon.max(1)];
    psi[0] = 1.0;
    for j in 1..psi.len() {
        let mut v = fit.ma.get(j - 1).copied().unwrap_or(0.0);
        for i in 1..=phi_star.len().min(j) {
            v += phi_star[i - 1] * psi[j - i];
        }
        psi[j] = v;
    }
    psi.truncate(horizon);
    psi
}

/// Forecasts `horizon` steps past the end of `history` on the original scale.
pub fn arima_forecast(fit: &ArimaFit, history: &[f64], horizon: usize) -> Result<Vec<ForecastPoint>> {
    let spec = fit.spec;
    if history.len() < spec.d + spec.p + 1 {
        return Err(Error::SeriesTooShort { needed: spec.d + spec.p + 1, got: history.len() });
    }
    let w = difference(history, spec.d);
    let e = css_residuals(&w, &fit.ar, &fit.ma, fit.intercept);
    let mut z: Vec<f64> = w.iter().map(|v| v - fit.intercept).collect();
    let mut e_ext = e.clone();
    // last value of each differencing level
    let mut levels: Vec<f64> = (0..spec.d).map(|k| *difference(history, k).last().unwrap()).collect();
    let psi = psi_weights(fit, horizon);
    let mut out = Vec::with_capacity(horizon);
    let mut var_acc = 0.0;
    for h in 0..horizon {
        let t = z.len();
        let mut v = 0.0;
        for (i, phi) in fit.ar.iter().enumerate() {
            v += phi * z[t - 1 - i];
        }
        for (j, theta) in fit.ma.iter().enumerate() {
            if t > j {
                v += theta * e_ext[t - 1 - j];
            }
        }
        z.push(v);
        e_ext.push(0.0);
        let mut value = v + fit.intercept;
        for k in (0..spec.d).rev() {
            levels[k] += value;
            value = levels[k];
        }
        var_acc += psi[h] * psi[h];
        let variance = fit.sigma2 * var_acc;
        let sd = variance.sqrt();
        out.push(ForecastPoint { step: h + 1, mean: value, variance, lo: value - sd, hi: value + sd });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingForecast {
    /// Index of the forecast target in the series.
    pub target: usize,
    pub actual: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonEval {
    pub horizon: usize,
    pub rmse: f64,
    pub forecasts: Vec<RollingForecast>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingEval {
    pub spec: ArimaSpec,
    pub initial: usize,
    pub horizons: Vec<HorizonEval>,
}

impl RollingEval {
    pub fn horizon(&self, h: usize) -> Option<&HorizonEval> {
        self.horizons.iter().find(|e| e.horizon == h)
    }
}

/// Refits on every expanding window `series[..o]` for `o >= initial` and
/// scores the `h`-step forecasts; each horizon yields
/// `len - initial - h + 1` forecasts.
pub fn rolling_origin_eval(series: &[f64], spec: &ArimaSpec, initial: usize, horizons: &[usize], seed: u64) -> Result<RollingEval> {
    let max_h = horizons.iter().copied().max().ok_or_else(|| Error::param("no horizons given"))?;
    if horizons.contains(&0) {
        return Err(Error::param("horizons must be positive"));
    }
    if initial < spec.min_length() {
        return Err(Error::param(format!("initial window {initial} is shorter than the {} points ARIMA needs", spec.min_length())));
    }
    if series.len() < initial + max_h {
        return Err(Error::SeriesTooShort { needed: initial + max_h, got: series.len() });
    }
    let mut per: Vec<HorizonEval> = horizons
        .iter()
        .map(|&h| HorizonEval { horizon: h, rmse: 0.0, forecasts: vec![] })
        .collect();
    for origin in initial..series.len() {
        let steps = max_h.min(series.len() - origin);
        let history = &series[..origin];
        let fit = arima_fit(history, spec, seed)?;
        let fc = arima_forecast(&fit, history, steps)?;
        for eval in per.iter_mut() {
            let h = eval.horizon;
            if h <= steps {
                let p = &fc[h - 1];
                let target = origin + h - 1;
                eval.forecasts.push(RollingForecast { target, actual: series[target], mean: p.mean, lo: p.lo, hi: p.hi });
            }
        }
    }
    for eval in per.iter_mut() {
        eval.rmse = rmse(eval.forecasts.iter().map(|f| f.actual - f.mean));
    }
    Ok(RollingEval { spec: *spec, initial, horizons: per })
}

fn rmse(errors: impl Iterator<Item = f64>) -> f64 {
    let (mut ss, mut n) = (0.0, 0usize);
    for e in errors {
        ss += e * e;
        n += 1;
    }
    if n == 0 { f64::NAN } else { (ss / n as f64).sqrt() }
}

/// RMSE of the last-value forecast over the same targets as
/// [`rolling_origin_eval`].
pub fn naive_rmse(series: &[f64], initial: usize, horizon: usize) -> f64 {
    rmse((initial..=series.len().saturating_sub(horizon)).map(|o| series[o + horizon - 1] - series[o - 1]))
}

/// Grid search over `p <= max_p`, `q <= max_q` at fixed `d`, minimising AIC.
/// Orders that fail to fit are skipped.
pub fn select_order(series: &[f64], d: usize, max_p: usize, max_q: usize, seed: u64) -> Result<ArimaFit> {
    let mut best: Option<ArimaFit> = None;
    for p in 0..=max_p.min(MAX_P) {
        for q in 0..=max_q.min(MAX_Q) {
            let Ok(spec) = ArimaSpec::new(p, d, q) else { continue };
            match arima_fit(series, &spec, seed) {
                Ok(fit) => {
                    if best.as_ref().is_none_or(|b| fit.aic < b.aic) {
                        best = Some(fit);
                    }
                }
                Err(e) => log::debug!("ARIMA({p},{d},{q}) skipped: {e}"),
            }
        }
    }
    best.ok_or_else(|| Error::NotConverged(format!("no ARIMA order with d = {d} could be fitted")))
}

/// Writes one row per rolling forecast: month, actual, forecast_mean, lo68,
/// hi68, horizon.
pub fn write_forecast_csv(series: &CostSeries, eval: &RollingEval, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["month", "actual", "forecast_mean", "lo68", "hi68", "horizon"])?;
    for h in &eval.horizons {
        for f in &h.forecasts {
            let month = series.months.get(f.target).map(|m| m.to_string()).unwrap_or_default();
            w.write_record([
                month,
                f.actual.to_string(),
                f.mean.to_string(),
                f.lo.to_string(),
                f.hi.to_string(),
                h.horizon.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
