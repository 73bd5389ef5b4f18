//! PARAFAC-informed sequence mining.
//!
//! For every factor `r` of a fitted model:
//!
//! 1. split each loading vector (`a_r`, `b_r`, `c_r`) into in/out-groups with
//!    a two-component Bayesian Gaussian mixture ([`bgmm`]);
//! 2. divide the vehicle sequences into in-group and out-group, optionally
//!    keep only jobs in in-group time bins, mine n-grams in both groups and
//!    keep in-group n-grams that touch at least one in-group system
//!    ([`ngram`]);
//! 3. compare each n-gram's share of same-length n-grams between the groups
//!    with a Bayesian difference-in-proportions test ([`bdpt`]) and report
//!    those whose probability of lying outside the ROPE reaches a threshold.
//!
//! [`dsm`] holds the frequentist i-ratio baseline.

pub mod bdpt;
pub mod bgmm;
pub mod dsm;
pub mod ngram;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FleetDataset, MaintenanceSequence};
use crate::parafac::FactorModel;
use crate::seed::derive_seed;
use crate::tensor::{time_label, AxisMaps};

pub use bdpt::{bdpt, BdptConfig, BdptResult};
pub use bgmm::{bgmm_in_group, BgmmSplit};
pub use dsm::{dsm_baseline, DsmResult};
pub use ngram::{mine_ngrams, NGram, NGramTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrismConfig {
    pub rope: f64,
    pub max_len: usize,
    /// Minimum `p_outside_rope` for an n-gram to be reported.
    pub threshold: f64,
    pub draws: usize,
    pub gamma: f64,
    /// n-grams with fewer in-group occurrences are not tested.
    pub min_support: u64,
    /// Keep only jobs that fall in the factor's in-group time bins.
    pub restrict_time: bool,
    pub seed: u64,
}

impl Default for PrismConfig {
    fn default() -> Self {
        PrismConfig {
            rope: bdpt::DEFAULT_ROPE,
            max_len: ngram::DEFAULT_MAX_LEN,
            threshold: 0.95,
            draws: bdpt::DEFAULT_DRAWS,
            gamma: bgmm::DEFAULT_GAMMA,
            min_support: 5,
            restrict_time: true,
            seed: 0,
        }
    }
}

/// Per-mode in-group split for one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InGroupAssignment {
    pub factor_index: usize,
    pub vehicle: BgmmSplit,
    pub system: BgmmSplit,
    pub time: BgmmSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicSubsequence {
    pub factor_index: usize,
    pub ngram: NGram,
    pub in_support: u64,
    pub out_support: u64,
    /// Number of in-group n-grams of the same length.
    pub in_total: u64,
    pub out_total: u64,
    pub in_proportion: f64,
    pub out_proportion: f64,
    pub bdpt: BdptResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub factor_index: usize,
    pub groups: InGroupAssignment,
    /// Set when the vehicle mode has no usable split; no n-grams are tested.
    pub degenerate: bool,
    pub in_vehicles: Vec<String>,
    pub in_systems: Vec<String>,
    pub in_time_bins: Vec<String>,
    /// Sequence counts per group.
    pub in_sequences: usize,
    pub out_sequences: usize,
    pub in_ngram_totals: Vec<u64>,
    pub out_ngram_totals: Vec<u64>,
    pub tested: usize,
    pub subsequences: Vec<CharacteristicSubsequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrismReport {
    pub config: PrismConfig,
    pub factors: Vec<FactorReport>,
}

impl PrismReport {
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

pub fn in_group_assignment(model: &FactorModel, r: usize, gamma: f64, seed: u64) -> Result<InGroupAssignment> {
    let split = |mode: usize, label: &str| {
        let col: Vec<f64> = model.factor(mode).column(r).to_vec();
        if col.len() < 2 {
            // a single index cannot be split; treat it as the whole group
            return Ok(BgmmSplit {
                mask: vec![col.first().copied().unwrap_or(0.0) > 0.0; col.len()],
                posterior_means: [0.0, col.first().copied().unwrap_or(0.0)],
                weights: [0.0, 1.0],
                degenerate: true,
            });
        }
        bgmm_in_group(&col, gamma, derive_seed(seed, label))
    };
    Ok(InGroupAssignment {
        factor_index: r,
        vehicle: split(0, "bgmm/vehicle")?,
        system: split(1, "bgmm/system")?,
        time: split(2, "bgmm/time")?,
    })
}

fn pick(labels: &[String], mask: &[bool]) -> Vec<String> {
    labels
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| l.clone())
        .collect()
}

/// Splits vehicle sequences into a factor's in-group and out-group, keeping
/// only jobs in the in-group time bins when `restrict_time` is set and the
/// time split is usable. Empty sequences are dropped.
pub fn group_sequences(
    report: &FactorReport,
    sequences: &[MaintenanceSequence],
    maps: &AxisMaps,
    dataset: &FleetDataset,
    restrict_time: bool,
) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let vehicle_set: HashSet<&str> = report.in_vehicles.iter().map(String::as_str).collect();
    let time_set: Option<HashSet<&str>> = (restrict_time && !report.groups.time.degenerate)
        .then(|| report.in_time_bins.iter().map(String::as_str).collect());
    let mut in_seqs: Vec<Vec<String>> = Vec::new();
    let mut out_seqs: Vec<Vec<String>> = Vec::new();
    for seq in sequences {
        let codes: Vec<String> = match &time_set {
            Some(bins) => seq
                .items
                .iter()
                .filter(|it| {
                    time_label(&seq.unit_id, it.completed_date, dataset, maps.encoding)
                        .is_some_and(|l| bins.contains(l.as_str()))
                })
                .map(|it| it.system_code.clone())
                .collect(),
            None => seq.codes(),
        };
        if codes.is_empty() {
            continue;
        }
        if vehicle_set.contains(seq.unit_id.as_str()) {
            in_seqs.push(codes);
        } else {
            out_seqs.push(codes);
        }
    }
    (in_seqs, out_seqs)
}

/// Runs the three PRISM steps on every factor of `model`.
pub fn prism_run(
    model: &FactorModel,
    sequences: &[MaintenanceSequence],
    maps: &AxisMaps,
    dataset: &FleetDataset,
    cfg: &PrismConfig,
) -> Result<PrismReport> {
    if model.dims() != maps.dims() {
        return Err(Error::DimensionMismatch(format!(
            "model {:?} vs axis maps {:?}",
            model.dims(),
            maps.dims()
        )));
    }
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(Error::param(format!("threshold must lie in [0, 1], got {}", cfg.threshold)));
    }
    let factors = (0..model.rank())
        .map(|r| prism_factor(model, r, sequences, maps, dataset, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrismReport {
        config: cfg.clone(),
        factors,
    })
}

fn prism_factor(
    model: &FactorModel,
    r: usize,
    sequences: &[MaintenanceSequence],
    maps: &AxisMaps,
    dataset: &FleetDataset,
    cfg: &PrismConfig,
) -> Result<FactorReport> {
    let factor_seed = derive_seed(cfg.seed, &format!("prism/factor/{r}"));
    // S1
    let groups = in_group_assignment(model, r, cfg.gamma, factor_seed)?;
    let in_vehicles = pick(&maps.vehicles, &groups.vehicle.mask);
    let in_systems = pick(&maps.systems, &groups.system.mask);
    let in_time_bins = pick(&maps.time_bins, &groups.time.mask);
    let mut report = FactorReport {
        factor_index: r,
        degenerate: groups.vehicle.degenerate,
        groups: groups.clone(),
        in_vehicles,
        in_systems,
        in_time_bins,
        in_sequences: 0,
        out_sequences: 0,
        in_ngram_totals: vec![],
        out_ngram_totals: vec![],
        tested: 0,
        subsequences: vec![],
    };
    if groups.vehicle.degenerate {
        log::warn!("factor {r}: degenerate vehicle loadings, no in-group");
        return Ok(report);
    }

    // S2
    let (in_seqs, out_seqs) = group_sequences(&report, sequences, maps, dataset, cfg.restrict_time);
    report.in_sequences = in_seqs.len();
    report.out_sequences = out_seqs.len();
    let in_table = mine_ngrams(&in_seqs, cfg.max_len)?;
    let out_table = mine_ngrams(&out_seqs, cfg.max_len)?;
    report.in_ngram_totals = in_table.totals.clone();
    report.out_ngram_totals = out_table.totals.clone();

    // S3
    let system_set: Option<HashSet<&str>> =
        (!groups.system.degenerate).then(|| report.in_systems.iter().map(String::as_str).collect());
    for (ngram, &in_support) in &in_table.counts {
        if in_support < cfg.min_support {
            continue;
        }
        if let Some(systems) = &system_set {
            if !ngram.iter().any(|s| systems.contains(s.as_str())) {
                continue;
            }
        }
        let in_total = in_table.total(ngram.len());
        let out_total = out_table.total(ngram.len());
        if out_total == 0 {
            continue;
        }
        let out_support = out_table.count(ngram);
        let bdpt_cfg = BdptConfig {
            rope: cfg.rope,
            draws: cfg.draws,
            seed: derive_seed(factor_seed, &format!("bdpt/{}", ngram.join("\u{1f}"))),
        };
        let result = bdpt(in_support, in_total, out_support, out_total, &bdpt_cfg)?;
        report.tested += 1;
        if result.p_outside_rope >= cfg.threshold {
            report.subsequences.push(CharacteristicSubsequence {
                factor_index: r,
                ngram: ngram.clone(),
                in_support,
                out_support,
                in_total,
                out_total,
                in_proportion: in_support as f64 / in_total as f64,
                out_proportion: out_support as f64 / out_total as f64,
                bdpt: result,
            });
        }
    }
    report.subsequences.sort_by(|a, b| {
        b.bdpt
            .delta_theta_mean
            .total_cmp(&a.bdpt.delta_theta_mean)
            .then_with(|| a.ngram.cmp(&b.ngram))
    });
    Ok(report)
}
