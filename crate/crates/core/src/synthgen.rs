//! Synthetic fleets with planted factor structure and planted
//! characteristic n-grams, plus scoring of how well the analysis recovers
//! them.
//!
//! Job counts per (vehicle, system, month) cell are Poisson with mean
//! `sum_f intensity_f * [i in V_f] * [j in S_f] * profile_f[k]`; cells off
//! every factor's support use `background_noise_rate` instead. Planted
//! n-grams are spliced into each vehicle's sequence so that their expected
//! share among same-length n-grams equals the group rate.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::arima::{is_invertible, is_stationary};
use crate::ingest::{clean_and_filter, FleetDataset, MaintenanceRecord, StatusCode, VehicleRecord, YearMonth, DEFAULT_CUTOFF_YEAR};
use crate::money::Money;
use crate::parafac::FactorModel;
use crate::prism::{in_group_assignment, PrismReport};
use crate::seed::derive_seed;
use crate::tensor::{AxisMaps, Tensor3, TimeEncoding};

const MAKES_MODELS: [(&str, &str); 4] = [
    ("FORD", "CROWN VICTORIA"),
    ("CHEVROLET", "TAHOE"),
    ("DODGE", "CHARGER"),
    ("INTERNATIONAL", "4300"),
];
const DEPARTMENTS: [(&str, &str); 4] = [("37", "POLICE"), ("41", "FIRE"), ("19", "DPW"), ("28", "TRANSPORTATION")];
const COST_SIGMA: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFactor {
    pub vehicle_group: Vec<usize>,
    pub system_group: Vec<usize>,
    /// Length `n_months`, nonnegative.
    pub time_profile: Vec<f64>,
    /// Mean jobs per cell at unit profile.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedNGram {
    /// System indices.
    pub ngram: Vec<usize>,
    pub in_rate: f64,
    pub out_rate: f64,
    /// Factor whose vehicle group is the in-group.
    #[serde(default)]
    pub factor: usize,
}

fn default_start_year() -> i32 {
    2014
}
fn default_start_month() -> u32 {
    1
}
fn default_departments() -> usize {
    3
}
fn default_cost_mean() -> f64 {
    250.0
}
fn default_disposed_fraction() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n_vehicles: usize,
    pub n_systems: usize,
    pub n_months: usize,
    pub factors: Vec<PlantedFactor>,
    #[serde(default)]
    pub planted_ngrams: Vec<PlantedNGram>,
    pub background_noise_rate: f64,
    pub seed: u64,
    #[serde(default = "default_start_year")]
    pub start_year: i32,
    #[serde(default = "default_start_month")]
    pub start_month: u32,
    #[serde(default = "default_departments")]
    pub n_departments: usize,
    /// Mean cost of one job in USD (log-normal).
    #[serde(default = "default_cost_mean")]
    pub cost_mean: f64,
    #[serde(default = "default_disposed_fraction")]
    pub disposed_fraction: f64,
}

impl PlantedSpec {
    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles == 0 || self.n_systems == 0 || self.n_months == 0 {
            return Err(Error::param("n_vehicles, n_systems and n_months must be positive"));
        }
        if !(1..=12).contains(&self.start_month) {
            return Err(Error::param(format!("start_month {} is not a month", self.start_month)));
        }
        if self.n_departments == 0 || self.n_departments > DEPARTMENTS.len() {
            return Err(Error::param(format!("n_departments must be in 1..={}", DEPARTMENTS.len())));
        }
        if !(self.background_noise_rate >= 0.0 && self.background_noise_rate.is_finite()) {
            return Err(Error::param("background_noise_rate must be finite and >= 0"));
        }
        if !(self.cost_mean > 0.0 && self.cost_mean.is_finite()) {
            return Err(Error::param("cost_mean must be positive"));
        }
        if !(0.0..=1.0).contains(&self.disposed_fraction) {
            return Err(Error::param("disposed_fraction must lie in [0, 1]"));
        }
        for (f, pf) in self.factors.iter().enumerate() {
            if pf.vehicle_group.is_empty() || pf.system_group.is_empty() {
                return Err(Error::param(format!("factor {f}: empty vehicle or system group")));
            }
            if let Some(&i) = pf.vehicle_group.iter().find(|&&i| i >= self.n_vehicles) {
                return Err(Error::param(format!("factor {f}: vehicle index {i} out of range")));
            }
            if let Some(&j) = pf.system_group.iter().find(|&&j| j >= self.n_systems) {
                return Err(Error::param(format!("factor {f}: system index {j} out of range")));
            }
            if pf.time_profile.len() != self.n_months {
                return Err(Error::param(format!(
                    "factor {f}: time profile has {} entries for {} months",
                    pf.time_profile.len(),
                    self.n_months
                )));
            }
            if pf.time_profile.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || pf.time_profile.iter().all(|v| *v == 0.0) {
                return Err(Error::param(format!("factor {f}: time profile must be nonnegative with some mass")));
            }
            if !(pf.intensity >= 0.0 && pf.intensity.is_finite()) {
                return Err(Error::param(format!("factor {f}: intensity must be >= 0")));
            }
        }
        let mut load_in = 0.0;
        let mut load_out = 0.0;
        for (g, pn) in self.planted_ngrams.iter().enumerate() {
            if pn.ngram.is_empty() {
                return Err(Error::param(format!("planted n-gram {g} is empty")));
            }
            if let Some(&j) = pn.ngram.iter().find(|&&j| j >= self.n_systems) {
                return Err(Error::param(format!("planted n-gram {g}: system index {j} out of range")));
            }
            if !(0.0..=1.0).contains(&pn.in_rate) || !(0.0..=1.0).contains(&pn.out_rate) {
                return Err(Error::param(format!("planted n-gram {g}: rates must lie in [0, 1]")));
            }
            if pn.factor >= self.factors.len() {
                return Err(Error::param(format!("planted n-gram {g}: factor {} does not exist", pn.factor)));
            }
            let len = pn.ngram.len() as f64;
            load_in += len * pn.in_rate.max(pn.out_rate);
            load_out += len * pn.out_rate;
        }
        if load_in >= 1.0 || load_out >= 1.0 {
            return Err(Error::param("planted n-gram rates times lengths must sum below 1"));
        }
        Ok(())
    }

    fn month(&self, k: usize) -> YearMonth {
        YearMonth::from_ordinal(YearMonth::new(self.start_year, self.start_month).ordinal() + k as i64)
    }

    /// Expected count for every (vehicle, system, month) cell.
    pub fn rates(&self) -> Array3<f64> {
        let mut lambda = Array3::<f64>::zeros((self.n_vehicles, self.n_systems, self.n_months));
        for f in &self.factors {
            for &i in &f.vehicle_group {
                for &j in &f.system_group {
                    for (k, p) in f.time_profile.iter().enumerate() {
                        lambda[[i, j, k]] += f.intensity * p;
                    }
                }
            }
        }
        if self.background_noise_rate > 0.0 {
            lambda.mapv_inplace(|v| if v == 0.0 { self.background_noise_rate } else { v });
        }
        lambda
    }
}

pub fn unit_label(i: usize) -> String {
    format!("U{i:04}")
}

pub fn system_label(j: usize) -> String {
    format!("S{j:02}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueFactor {
    pub vehicle_loading: Vec<f64>,
    pub system_loading: Vec<f64>,
    pub time_loading: Vec<f64>,
    pub intensity: f64,
    pub vehicle_mask: Vec<bool>,
    pub system_mask: Vec<bool>,
    pub time_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedNGramTruth {
    pub codes: Vec<String>,
    pub in_rate: f64,
    pub out_rate: f64,
    pub factor: usize,
}

/// Planted structure, indexed in generator order (`unit_ids`,
/// `system_codes`, `months`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub unit_ids: Vec<String>,
    pub system_codes: Vec<String>,
    pub months: Vec<String>,
    pub factors: Vec<TrueFactor>,
    pub planted_ngrams: Vec<PlantedNGramTruth>,
}

impl GroundTruth {
    pub fn from_spec(spec: &PlantedSpec) -> Self {
        let factors = spec
            .factors
            .iter()
            .map(|f| {
                let mut v = vec![0.0; spec.n_vehicles];
                for &i in &f.vehicle_group {
                    v[i] = 1.0;
                }
                let mut s = vec![0.0; spec.n_systems];
                for &j in &f.system_group {
                    s[j] = 1.0;
                }
                TrueFactor {
                    vehicle_mask: v.iter().map(|x| *x > 0.0).collect(),
                    system_mask: s.iter().map(|x| *x > 0.0).collect(),
                    time_mask: f.time_profile.iter().map(|x| *x > 0.0).collect(),
                    vehicle_loading: v,
                    system_loading: s,
                    time_loading: f.time_profile.clone(),
                    intensity: f.intensity,
                }
            })
            .collect();
        GroundTruth {
            unit_ids: (0..spec.n_vehicles).map(unit_label).collect(),
            system_codes: (0..spec.n_systems).map(system_label).collect(),
            months: (0..spec.n_months).map(|k| spec.month(k).to_string()).collect(),
            factors,
            planted_ngrams: spec
                .planted_ngrams
                .iter()
                .map(|g| PlantedNGramTruth {
                    codes: g.ngram.iter().map(|&j| system_label(j)).collect(),
                    in_rate: g.in_rate,
                    out_rate: g.out_rate,
                    factor: g.factor,
                })
                .collect(),
        }
    }

    /// Axis labels in generator order under absolute-month encoding.
    pub fn axis_maps(&self) -> AxisMaps {
        AxisMaps {
            vehicles: self.unit_ids.clone(),
            systems: self.system_codes.clone(),
            time_bins: self.months.clone(),
            encoding: TimeEncoding::AbsoluteMonth,
        }
    }

    /// The planted factors as a Kruskal model in generator order; the time
    /// loading carries the intensity.
    pub fn factor_model(&self) -> Result<FactorModel> {
        let r = self.factors.len();
        if r == 0 {
            return Err(Error::param("ground truth has no factors"));
        }
        let build = |rows: usize, col: &dyn Fn(&TrueFactor) -> Vec<f64>| {
            let mut m = Array2::<f64>::zeros((rows, r));
            for (f, tf) in self.factors.iter().enumerate() {
                for (i, v) in col(tf).into_iter().enumerate() {
                    m[[i, f]] = v;
                }
            }
            m
        };
        FactorModel::new(
            build(self.unit_ids.len(), &|f| f.vehicle_loading.clone()),
            build(self.system_codes.len(), &|f| f.system_loading.clone()),
            build(self.months.len(), &|f| f.time_loading.iter().map(|v| v * f.intensity).collect()),
        )
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Expected-count tensor of `spec` in generator order.
pub fn expected_tensor(spec: &PlantedSpec) -> Result<Tensor3> {
    spec.validate()?;
    Tensor3::from_array(spec.rates())
}

fn stochastic_round(x: f64, rng: &mut ChaCha8Rng) -> usize {
    if x <= 0.0 {
        return 0;
    }
    let base = x.floor();
    base as usize + usize::from(rng.random::<f64>() < x - base)
}

fn log_normal_cents(mean: f64, rng: &mut ChaCha8Rng) -> Money {
    let mu = mean.ln() - COST_SIGMA * COST_SIGMA / 2.0;
    let dist = LogNormal::new(mu, COST_SIGMA).expect("valid log-normal");
    Money::from_dollars(dist.sample(rng))
}

/// Samples a fleet from `spec`. Same spec, same output.
pub fn generate_fleet(spec: &PlantedSpec) -> Result<(FleetDataset, GroundTruth)> {
    spec.validate()?;
    let truth = GroundTruth::from_spec(spec);
    let lambda = spec.rates();

    // background items per vehicle: (month, system)
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synthgen/counts"));
    let mut items: Vec<Vec<(usize, usize)>> = vec![Vec::new(); spec.n_vehicles];
    for i in 0..spec.n_vehicles {
        for k in 0..spec.n_months {
            let start = items[i].len();
            for j in 0..spec.n_systems {
                let l = lambda[[i, j, k]];
                if l > 0.0 {
                    let n = Poisson::new(l).expect("positive Poisson mean").sample(&mut rng) as usize;
                    items[i].extend(std::iter::repeat_n((k, j), n));
                }
            }
            items[i][start..].shuffle(&mut rng);
        }
    }

    // splice planted n-grams so that each one's expected share of
    // same-length n-grams equals its group rate
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synthgen/ngrams"));
    let groups: Vec<HashSet<usize>> = spec.factors.iter().map(|f| f.vehicle_group.iter().copied().collect()).collect();
    for (i, seq) in items.iter_mut().enumerate() {
        let b = seq.len() as f64;
        if seq.is_empty() || spec.planted_ngrams.is_empty() {
            continue;
        }
        let rates: Vec<f64> = spec
            .planted_ngrams
            .iter()
            .map(|g| if groups[g.factor].contains(&i) { g.in_rate } else { g.out_rate })
            .collect();
        let load: f64 = spec.planted_ngrams.iter().zip(&rates).map(|(g, p)| g.ngram.len() as f64 * p).sum();
        let inserted: f64 = spec
            .planted_ngrams
            .iter()
            .zip(&rates)
            .map(|(g, p)| g.ngram.len() as f64 * p * (b - g.ngram.len() as f64 + 1.0))
            .sum::<f64>()
            / (1.0 - load);
        let mut blocks: Vec<usize> = Vec::new();
        for (gi, (g, p)) in spec.planted_ngrams.iter().zip(&rates).enumerate() {
            let expected = p * (b + inserted - g.ngram.len() as f64 + 1.0);
            blocks.extend(std::iter::repeat_n(gi, stochastic_round(expected, &mut rng)));
        }
        blocks.shuffle(&mut rng);
        for gi in blocks {
            let gap = rng.random_range(0..=seq.len());
            let month = if gap > 0 { seq[gap - 1].0 } else { seq[0].0 };
            let block: Vec<(usize, usize)> = spec.planted_ngrams[gi].ngram.iter().map(|&j| (month, j)).collect();
            seq.splice(gap..gap, block);
        }
    }

    // vehicles
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synthgen/vehicles"));
    let mut vehicles = Vec::with_capacity(spec.n_vehicles);
    for i in 0..spec.n_vehicles {
        let (dept, desc) = DEPARTMENTS[i % spec.n_departments];
        let (make, model) = MAKES_MODELS[i % MAKES_MODELS.len()];
        let disposed = rng.random::<f64>() < spec.disposed_fraction;
        vehicles.push(VehicleRecord {
            unit_id: unit_label(i),
            dept_code: dept.into(),
            dept_desc: desc.into(),
            make: make.into(),
            model: model.into(),
            model_year: spec.start_year - rng.random_range(0..=6),
            purchase_cost: log_normal_cents(30_000.0, &mut rng),
            status: if disposed { StatusCode::Disposed } else { StatusCode::Active },
            ltd_maint_cost: Money::ZERO,
            ltd_fuel_cost: log_normal_cents(8_000.0, &mut rng),
        });
    }

    // records
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synthgen/records"));
    let mut records = Vec::new();
    let mut job = 0usize;
    for (i, seq) in items.iter().enumerate() {
        let mut odometer = rng.random_range(1_000..40_000i64);
        let mut pos = 0;
        let mut maint_total = Money::ZERO;
        while pos < seq.len() {
            let k = seq[pos].0;
            let end = pos + seq[pos..].iter().take_while(|it| it.0 == k).count();
            let ym = spec.month(k);
            let mut days: Vec<u32> = (pos..end).map(|_| rng.random_range(1..=ym.days())).collect();
            days.sort_unstable();
            for (idx, day) in (pos..end).zip(days) {
                job += 1;
                let system = seq[idx].1;
                let completed = NaiveDate::from_ymd_opt(ym.year, ym.month, day).expect("day within month");
                let open = completed - chrono::Duration::days(rng.random_range(0..=3));
                let labor = log_normal_cents(0.6 * spec.cost_mean, &mut rng);
                let part = log_normal_cents(0.35 * spec.cost_mean, &mut rng);
                let commercial = if rng.random::<f64>() < 0.1 {
                    log_normal_cents(0.5 * spec.cost_mean, &mut rng)
                } else {
                    Money::ZERO
                };
                let job_cost = labor + part + commercial;
                maint_total = maint_total + job_cost;
                odometer += rng.random_range(50..1_500i64);
                records.push(MaintenanceRecord {
                    job_id: format!("J{job:07}"),
                    unit_id: unit_label(i),
                    work_order_id: format!("W{job:07}"),
                    completed_date: completed,
                    open_date: open,
                    system_code: system_label(system),
                    system_desc: format!("SYSTEM {system:02}"),
                    job_reason: if rng.random::<f64>() < 0.3 { "P".into() } else { "B".into() },
                    labor_cost: labor,
                    commercial_cost: commercial,
                    part_cost: part,
                    job_cost,
                    odometer: Some(odometer),
                });
            }
            pos = end;
        }
        vehicles[i].ltd_maint_cost = maint_total;
    }

    Ok((clean_and_filter(records, vehicles, DEFAULT_CUTOFF_YEAR.min(spec.start_year)), truth))
}

/// Simulates ARIMA(p, d, q) with unit-free innovations `sigma * N(0, 1)`.
/// The ARMA part runs a burn-in before the kept `n` points, then is
/// integrated `d` times from zero. The innovation stream depends only on the
/// seed, so the same seed with `d = 1` is the running sum of `d = 0`.
pub fn generate_arima_series(phi: &[f64], theta: &[f64], d: usize, n: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !is_stationary(phi) {
        return Err(Error::param(format!("AR coefficients {phi:?} are not stationary")));
    }
    if !is_invertible(theta) {
        return Err(Error::param(format!("MA coefficients {theta:?} are not invertible")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma must be finite and >= 0"));
    }
    const BURN_IN: usize = 200;
    let total = n + BURN_IN;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Vec<f64> = (0..total)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sigma * z
        })
        .collect();
    let mut x = vec![0.0; total];
    for t in 0..total {
        let mut v = e[t];
        for (i, a) in phi.iter().enumerate() {
            if t > i {
                v += a * x[t - 1 - i];
            }
        }
        for (j, b) in theta.iter().enumerate() {
            if t > j {
                v += b * e[t - 1 - j];
            }
        }
        x[t] = v;
    }
    let mut out = x.split_off(BURN_IN);
    for _ in 0..d {
        let mut acc = 0.0;
        for v in out.iter_mut() {
            acc += *v;
            *v = acc;
        }
    }
    Ok(out)
}

/// Corpus from a random order-`order` Markov source over `vocab_size`
/// symbols. Each context's next-symbol distribution is a
/// Dirichlet(`concentration`) draw, so small concentrations give peaked
/// transitions.
pub fn generate_markov_corpus(
    vocab_size: usize,
    order: usize,
    n_sequences: usize,
    seq_len: usize,
    concentration: f64,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    if vocab_size == 0 || order == 0 || seq_len == 0 {
        return Err(Error::param("vocab_size, order and seq_len must be positive"));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::param(format!("concentration: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    let labels: Vec<String> = (0..vocab_size).map(|s| format!("s{s:02}")).collect();
    let mut corpus = Vec::with_capacity(n_sequences);
    for _ in 0..n_sequences {
        // usize::MAX pads the start
        let mut ctx = vec![usize::MAX; order];
        let mut seq = Vec::with_capacity(seq_len);
        for _ in 0..seq_len {
            let probs = transitions.entry(ctx.clone()).or_insert_with(|| {
                let g: Vec<f64> = (0..vocab_size).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = g.iter().sum();
                if total > 0.0 {
                    g.iter().map(|v| v / total).collect()
                } else {
                    vec![1.0 / vocab_size as f64; vocab_size]
                }
            });
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = vocab_size - 1;
            for (s, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = s;
                    break;
                }
            }
            seq.push(labels[next].clone());
            ctx.remove(0);
            ctx.push(next);
        }
        corpus.push(seq);
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScores {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRecovery {
    pub truth_index: usize,
    pub matched_factor: usize,
    pub cosine: f64,
    pub vehicle: ModeScores,
    pub system: ModeScores,
    pub time: ModeScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramRecovery {
    pub codes: Vec<String>,
    /// Planted with different in/out rates.
    pub differential: bool,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub factors: Vec<FactorRecovery>,
    pub ngrams: Vec<NGramRecovery>,
    /// Share of differential planted n-grams reported for their matched
    /// factor; `None` without a PRISM report or without such n-grams.
    pub ngram_detection_rate: Option<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
}

fn align(labels: &[String], truth_labels: &[String], values: &[f64]) -> Vec<f64> {
    let index: HashMap<&str, usize> = truth_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    labels.iter().map(|l| index.get(l.as_str()).map_or(0.0, |&i| values[i])).collect()
}

fn mode_scores(predicted: &[bool], truth: &[bool]) -> ModeScores {
    let tp = predicted.iter().zip(truth).filter(|(p, t)| **p && **t).count() as f64;
    let np = predicted.iter().filter(|p| **p).count() as f64;
    let nt = truth.iter().filter(|t| **t).count() as f64;
    ModeScores {
        precision: if np == 0.0 { if nt == 0.0 { 1.0 } else { 0.0 } } else { tp / np },
        recall: if nt == 0.0 { 1.0 } else { tp / nt },
    }
}

/// Matches recovered factors to planted ones and scores them.
///
/// Similarity is the cosine of the concatenated, per-mode unit-normalised
/// loading vectors (the mean of the three per-mode cosines), computed on
/// the labels of `maps`. Under lifetime encoding the time mode is left out.
/// Matching is greedy on the highest remaining similarity; ties go to the
/// lower planted index, then the lower recovered index. In-group masks come
/// from `prism` when given, otherwise from the BGMM split of the model.
pub fn score_recovery(truth: &GroundTruth, model: &FactorModel, maps: &AxisMaps, prism: Option<&PrismReport>) -> Result<RecoveryScore> {
    if model.dims() != maps.dims() {
        return Err(Error::DimensionMismatch(format!("model {:?} vs axis maps {:?}", model.dims(), maps.dims())));
    }
    if let Some(report) = prism {
        if report.factors.len() != model.rank() {
            return Err(Error::DimensionMismatch(format!(
                "PRISM report has {} factors, model has {}",
                report.factors.len(),
                model.rank()
            )));
        }
    }
    let use_time = maps.encoding == TimeEncoding::AbsoluteMonth;
    let aligned: Vec<[Vec<f64>; 3]> = truth
        .factors
        .iter()
        .map(|f| {
            [
                align(&maps.vehicles, &truth.unit_ids, &f.vehicle_loading),
                align(&maps.systems, &truth.system_codes, &f.system_loading),
                if use_time { align(&maps.time_bins, &truth.months, &f.time_loading) } else { vec![] },
            ]
        })
        .collect();
    let similarity = |f: usize, r: usize| {
        let mut total = 0.0;
        let modes = if use_time { 3 } else { 2 };
        for (mode, truth_vec) in aligned[f].iter().enumerate().take(modes) {
            let col = model.factor(mode).column(r).to_vec();
            total += cosine(truth_vec, &col);
        }
        total / modes as f64
    };

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for f in 0..truth.factors.len() {
        for r in 0..model.rank() {
            pairs.push((similarity(f, r), f, r));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_truth = HashSet::new();
    let mut used_model = HashSet::new();
    let mut matches: Vec<(usize, usize, f64)> = Vec::new();
    for (s, f, r) in pairs {
        if used_truth.contains(&f) || used_model.contains(&r) {
            continue;
        }
        used_truth.insert(f);
        used_model.insert(r);
        matches.push((f, r, s));
    }
    matches.sort_by_key(|m| m.0);

    let bool_align = |labels: &[String], truth_labels: &[String], mask: &[bool]| -> Vec<bool> {
        let vals: Vec<f64> = mask.iter().map(|m| f64::from(u8::from(*m))).collect();
        align(labels, truth_labels, &vals).into_iter().map(|v| v > 0.0).collect()
    };
    let mut factors = Vec::with_capacity(matches.len());
    for &(f, r, cos) in &matches {
        let (pv, ps, pt) = match prism {
            Some(report) => {
                let g = &report.factors[r].groups;
                (g.vehicle.mask.clone(), g.system.mask.clone(), g.time.mask.clone())
            }
            None => {
                let g = in_group_assignment(model, r, crate::prism::bgmm::DEFAULT_GAMMA, 0)?;
                (g.vehicle.mask, g.system.mask, g.time.mask)
            }
        };
        let tf = &truth.factors[f];
        let time = if use_time {
            mode_scores(&pt, &bool_align(&maps.time_bins, &truth.months, &tf.time_mask))
        } else {
            ModeScores { precision: f64::NAN, recall: f64::NAN }
        };
        factors.push(FactorRecovery {
            truth_index: f,
            matched_factor: r,
            cosine: cos,
            vehicle: mode_scores(&pv, &bool_align(&maps.vehicles, &truth.unit_ids, &tf.vehicle_mask)),
            system: mode_scores(&ps, &bool_align(&maps.systems, &truth.system_codes, &tf.system_mask)),
            time,
        });
    }

    let matched: HashMap<usize, usize> = matches.iter().map(|m| (m.0, m.1)).collect();
    let ngrams: Vec<NGramRecovery> = truth
        .planted_ngrams
        .iter()
        .map(|g| {
            let detected = prism.is_some_and(|report| {
                matched.get(&g.factor).is_some_and(|&r| report.factors[r].subsequences.iter().any(|s| s.ngram == g.codes))
            });
            NGramRecovery { codes: g.codes.clone(), differential: g.in_rate != g.out_rate, detected }
        })
        .collect();
    let differential: Vec<&NGramRecovery> = ngrams.iter().filter(|g| g.differential).collect();
    let ngram_detection_rate = (prism.is_some() && !differential.is_empty())
        .then(|| differential.iter().filter(|g| g.detected).count() as f64 / differential.len() as f64);
    Ok(RecoveryScore { factors, ngrams, ngram_detection_rate })
}

/// Block-structured spec used by examples and tests: disjoint vehicle and
/// system groups, one time window per factor.
pub fn block_spec(n_vehicles: usize, n_systems: usize, n_months: usize, rank: usize, intensity: f64, seed: u64) -> PlantedSpec {
    let chunk = |n: usize, f: usize| -> Vec<usize> {
        let size = (n / (rank + 1)).max(1);
        (f * size..((f + 1) * size).min(n)).collect()
    };
    let factors = (0..rank)
        .map(|f| {
            let window: BTreeSet<usize> = chunk(n_months, f).into_iter().chain(chunk(n_months, f + 1)).collect();
            PlantedFactor {
                vehicle_group: chunk(n_vehicles, f),
                system_group: chunk(n_systems, f),
                time_profile: (0..n_months).map(|k| if window.contains(&k) { 1.0 } else { 0.0 }).collect(),
                intensity,
            }
        })
        .collect();
    PlantedSpec {
        n_vehicles,
        n_systems,
        n_months,
        factors,
        planted_ngrams: vec![],
        background_noise_rate: 0.0,
        seed,
        start_year: default_start_year(),
        start_month: default_start_month(),
        n_departments: default_departments(),
        cost_mean: default_cost_mean(),
        disposed_fraction: default_disposed_fraction(),
    }
}

/// Returns a copy of `model` whose loadings are multiplied by
/// `1 + noise * N(0, 1)`, clipped at zero.
pub fn perturb_model(model: &FactorModel, noise: f64, seed: u64) -> Result<FactorModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |m: &Array2<f64>| {
        m.mapv(|v| {
            let z: f64 = rng.sample(StandardNormal);
            (v * (1.0 + noise * z)).max(0.0)
        })
    };
    let a = jitter(&model.a);
    let b = jitter(&model.b);
    let c = jitter(&model.c);
    FactorModel::with_weights(Array1::from(model.weights.to_vec()), a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::extract_sequences;
    use crate::parafac::{cp_nmu_fit, NmuConfig};

    fn one_factor(noise: f64) -> PlantedSpec {
        let mut spec = block_spec(40, 10, 12, 1, 0.8, 3);
        spec.background_noise_rate = noise;
        spec
    }

    #[test]
    fn zero_noise_records_lie_on_support() {
        let spec = one_factor(0.0);
        let (ds, truth) = generate_fleet(&spec).unwrap();
        assert!(!ds.records.is_empty());
        let f = &truth.factors[0];
        for r in &ds.records {
            let i = truth.unit_ids.iter().position(|u| *u == r.unit_id).unwrap();
            let j = truth.system_codes.iter().position(|s| *s == r.system_code).unwrap();
            let k = truth.months.iter().position(|m| *m == r.completed_month().to_string()).unwrap();
            assert!(f.vehicle_mask[i] && f.system_mask[j] && f.time_mask[k]);
        }
    }

    #[test]
    fn records_are_clean() {
        let (ds, _) = generate_fleet(&one_factor(0.02)).unwrap();
        assert!(ds.flags.inconsistent_dates.is_empty());
        assert!(ds.flags.duplicate_job_ids.is_empty());
        assert!(ds.orphans.is_empty());
        for r in &ds.records {
            assert!(r.open_date <= r.completed_date);
            assert_eq!(r.job_cost, r.labor_cost + r.part_cost + r.commercial_cost);
            assert!(r.job_cost.cents() > 0);
        }
    }

    #[test]
    fn same_seed_same_fleet() {
        let spec = one_factor(0.02);
        let a = serde_json::to_string(&generate_fleet(&spec).unwrap().0).unwrap();
        let b = serde_json::to_string(&generate_fleet(&spec).unwrap().0).unwrap();
        assert_eq!(a, b);
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(a, serde_json::to_string(&generate_fleet(&other).unwrap().0).unwrap());
    }

    #[test]
    fn planted_ngram_proportions_match_rates() {
        let mut spec = block_spec(300, 30, 24, 1, 0.25, 11);
        spec.background_noise_rate = 0.02;
        spec.planted_ngrams = vec![PlantedNGram { ngram: vec![0, 1, 2], in_rate: 0.15, out_rate: 0.02, factor: 0 }];
        let (ds, truth) = generate_fleet(&spec).unwrap();
        let in_group: HashSet<&str> = truth
            .unit_ids
            .iter()
            .zip(&truth.factors[0].vehicle_mask)
            .filter(|(_, m)| **m)
            .map(|(u, _)| u.as_str())
            .collect();
        let target = truth.planted_ngrams[0].codes.clone();
        let (mut hits, mut totals, mut seqs) = ([0usize; 2], [0usize; 2], [0usize; 2]);
        for s in extract_sequences(&ds) {
            let g = usize::from(!in_group.contains(s.unit_id.as_str()));
            let codes = s.codes();
            seqs[g] += 1;
            for w in codes.windows(3) {
                totals[g] += 1;
                hits[g] += usize::from(w == target.as_slice());
            }
        }
        assert!(seqs[0] + seqs[1] >= 200);
        let p_in = hits[0] as f64 / totals[0] as f64;
        let p_out = hits[1] as f64 / totals[1] as f64;
        assert!((p_in - 0.15).abs() <= 0.03, "in-group proportion {p_in}");
        assert!((p_out - 0.02).abs() <= 0.03, "out-group proportion {p_out}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = one_factor(0.0);
        spec.factors[0].vehicle_group.clear();
        assert!(matches!(generate_fleet(&spec), Err(Error::InvalidParameter(_))));
        let mut spec = one_factor(0.0);
        spec.planted_ngrams = vec![PlantedNGram { ngram: vec![0, 1], in_rate: 1.5, out_rate: 0.0, factor: 0 }];
        assert!(spec.validate().is_err());
        let mut spec = one_factor(0.0);
        spec.factors[0].time_profile.pop();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn single_factor_expected_tensor_is_rank_one() {
        let spec = block_spec(20, 8, 10, 1, 1.5, 0);
        let x = expected_tensor(&spec).unwrap();
        let cfg = NmuConfig { rank: 1, tol: 1e-10, max_iter: 500, seed: 1 };
        let (_, trace) = cp_nmu_fit(&x, &cfg).unwrap();
        assert!(trace.final_fit().unwrap() >= 0.999);
    }

    #[test]
    fn arima_series_special_cases() {
        assert!(generate_arima_series(&[], &[], 0, 50, 0.0, 1).unwrap().iter().all(|v| *v == 0.0));
        let noise = generate_arima_series(&[], &[], 0, 50, 1.0, 7).unwrap();
        let walk = generate_arima_series(&[], &[], 1, 50, 1.0, 7).unwrap();
        let mut acc = 0.0;
        for (n, w) in noise.iter().zip(&walk) {
            acc += n;
            assert!((acc - w).abs() < 1e-12);
        }
        assert!(generate_arima_series(&[1.1], &[], 0, 10, 1.0, 0).is_err());
    }

    #[test]
    fn arima_series_lag_one_autocorrelation() {
        let x = generate_arima_series(&[0.8], &[], 0, 5000, 1.0, 21).unwrap();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let c1: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        let rho = c1 / c0;
        assert!((0.75..=0.85).contains(&rho), "rho = {rho}");
    }

    #[test]
    fn exact_recovery_scores_one() {
        let spec = block_spec(30, 12, 12, 3, 1.0, 0);
        let truth = GroundTruth::from_spec(&spec);
        let model = truth.factor_model().unwrap();
        let score = score_recovery(&truth, &model, &truth.axis_maps(), None).unwrap();
        for f in &score.factors {
            assert!((f.cosine - 1.0).abs() < 1e-12);
            assert_eq!(f.truth_index, f.matched_factor);
            for m in [&f.vehicle, &f.system, &f.time] {
                assert_eq!((m.precision, m.recall), (1.0, 1.0));
            }
        }
    }

    #[test]
    fn permuted_recovery_scores_identically() {
        let spec = block_spec(30, 12, 12, 3, 1.0, 0);
        let truth = GroundTruth::from_spec(&spec);
        let model = truth.factor_model().unwrap();
        let maps = truth.axis_maps();
        let base = score_recovery(&truth, &model, &maps, None).unwrap();
        let perm = score_recovery(&truth, &model.permuted(&[2, 0, 1]), &maps, None).unwrap();
        for (a, b) in base.factors.iter().zip(&perm.factors) {
            assert_eq!(a.cosine, b.cosine);
            assert_eq!(a.vehicle, b.vehicle);
        }
        assert_eq!(perm.factors[0].matched_factor, 1);
    }

    #[test]
    fn perturbed_recovery_stays_close() {
        let spec = block_spec(30, 12, 12, 3, 1.0, 0);
        let truth = GroundTruth::from_spec(&spec);
        let noisy = perturb_model(&truth.factor_model().unwrap(), 0.05, 9).unwrap();
        let score = score_recovery(&truth, &noisy, &truth.axis_maps(), None).unwrap();
        for f in &score.factors {
            assert!(f.cosine >= 0.9, "cosine {}", f.cosine);
        }
    }

    #[test]
    fn markov_corpus_is_deterministic() {
        let a = generate_markov_corpus(10, 2, 5, 20, 0.2, 4).unwrap();
        assert_eq!(a, generate_markov_corpus(10, 2, 5, 20, 0.2, 4).unwrap());
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|s| s.len() == 20));
    }
}
