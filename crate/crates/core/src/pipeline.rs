//! Stage drivers behind the `fleet-prism` binary.
//!
//! Every stage reads its inputs from the configured CSVs and from artifacts
//! earlier stages left in `out_dir`, writes machine-readable outputs there,
//! and finishes with a `<stage>_log.json` run log holding the fully resolved
//! config, the derived seeds and a short summary. Outputs contain no
//! timestamps, so identical configs give identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{CostGrouping, RunConfig};
use crate::error::{Error, Result};
use crate::forecast::{
    build_cost_series, fit_sequence_model, naive_rmse, perplexity, rolling_origin_eval, select_order, write_forecast_csv,
    CostSeries, Grouping, SequenceVariant,
};
use crate::ingest::{clean_and_filter, extract_sequences, parse_maintenance, parse_vehicles, write_maintenance, write_vehicles, FleetDataset};
use crate::parafac::{cp_nmu_fit, three_way_export, write_factor_plots, FactorModel};
use crate::prism::dsm::write_dsm_csv;
use crate::prism::{dsm_baseline, group_sequences, prism_run, PrismReport};
use crate::seed::derive_seed;
use crate::synthgen::{generate_fleet, PlantedSpec};
use crate::tensor::{build_tensor, export_tensor, import_tensor};

pub mod artifacts {
    pub const VEHICLES: &str = "vehicles.csv";
    pub const MAINTENANCE: &str = "maintenance.csv";
    pub const GROUND_TRUTH: &str = "ground_truth.json";
    pub const TENSOR: &str = "tensor.json";
    pub const MODEL: &str = "model.json";
    pub const CONVERGENCE: &str = "convergence.csv";
    pub const FACTOR_DIR: &str = "factors";
    pub const PRISM_REPORT: &str = "prism_report.json";
    pub const PRISM_TABLE: &str = "prism_subsequences.csv";
    pub const DSM_TABLE: &str = "dsm.csv";
    pub const COST_DIR: &str = "forecast_cost";
    pub const COST_SUMMARY: &str = "forecast_cost_summary.json";
    pub const SEQ_SUMMARY: &str = "forecast_seq_summary.json";
    pub const ORDER_SELECTION: &str = "select_order.json";
}

#[derive(Debug, Serialize)]
struct RunLog<'a> {
    stage: &'a str,
    config: &'a RunConfig,
    seeds: BTreeMap<&'a str, u64>,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn relative(cfg: &RunConfig, path: &Path) -> String {
    path.strip_prefix(&cfg.out_dir).unwrap_or(path).display().to_string()
}

fn finish(cfg: &RunConfig, stage: &str, seeds: BTreeMap<&str, u64>, outputs: &[PathBuf], summary: serde_json::Value) -> Result<()> {
    let log = RunLog {
        stage,
        config: cfg,
        seeds,
        outputs: outputs.iter().map(|p| relative(cfg, p)).collect(),
        summary,
    };
    let path = cfg.out_dir.join(format!("{}_log.json", stage.replace('-', "_")));
    write_json(&path, &log)?;
    log::info!("{stage}: wrote {} outputs and {}", outputs.len(), path.display());
    Ok(())
}

/// Seed for a stage, derived from the master seed and the stage name.
pub fn stage_seed(cfg: &RunConfig, stage: &str) -> u64 {
    derive_seed(cfg.master_seed, stage)
}

/// `gen`: writes the two input CSVs and the ground truth for a planted spec.
pub fn gen(spec_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    require(spec_path)?;
    let spec = PlantedSpec::load_json(spec_path)?;
    let (dataset, truth) = generate_fleet(&spec)?;
    ensure_dir(out_dir)?;
    let vehicles: Vec<_> = dataset.vehicles.values().cloned().collect();
    let paths = vec![
        out_dir.join(artifacts::VEHICLES),
        out_dir.join(artifacts::MAINTENANCE),
        out_dir.join(artifacts::GROUND_TRUTH),
    ];
    write_vehicles(&paths[0], &vehicles)?;
    write_maintenance(&paths[1], &dataset.records)?;
    truth.save_json(&paths[2])?;
    log::info!("gen: {} vehicles, {} jobs", vehicles.len(), dataset.records.len());
    Ok(paths)
}

/// Parses and cleans the configured CSVs.
pub fn load_dataset(cfg: &RunConfig) -> Result<FleetDataset> {
    require(&cfg.vehicles_csv)?;
    require(&cfg.maintenance_csv)?;
    let vehicles = parse_vehicles(&cfg.vehicles_csv)?;
    let records = parse_maintenance(&cfg.maintenance_csv)?;
    let ds = clean_and_filter(records, vehicles, cfg.cutoff_year);
    if !ds.orphans.is_empty() {
        log::warn!("{} jobs reference units missing from the vehicles table", ds.orphans.len());
    }
    Ok(ds)
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    ensure_dir(&cfg.out_dir)
}

/// `decompose`: builds the tensor and fits the nonnegative CP model.
pub fn decompose(cfg: &RunConfig) -> Result<FactorModel> {
    prepare(cfg)?;
    let ds = load_dataset(cfg)?;
    let built = build_tensor(&ds, cfg.time_encoding, cfg.transform)?;
    let seed = stage_seed(cfg, "decompose");
    let (model, trace) = cp_nmu_fit(&built.tensor, &cfg.nmu(seed))?;

    let out = &cfg.out_dir;
    let tensor_path = out.join(artifacts::TENSOR);
    let model_path = out.join(artifacts::MODEL);
    let trace_path = out.join(artifacts::CONVERGENCE);
    export_tensor(&built.tensor, &built.maps, &tensor_path)?;
    model.save_json(&model_path)?;
    trace.write_csv(&trace_path)?;
    let factor_dir = out.join(artifacts::FACTOR_DIR);
    ensure_dir(&factor_dir)?;
    let plots = three_way_export(&model, &built.maps, true)?;
    let mut outputs = vec![tensor_path, model_path, trace_path];
    outputs.extend(write_factor_plots(&plots, &factor_dir)?);

    let summary = json!({
        "dims": built.tensor.dims(),
        "records": ds.records.len(),
        "orphans": ds.orphans.len(),
        "excluded_jobs": built.excluded_jobs.len(),
        "dropped_before_cutoff": ds.flags.dropped_before_cutoff,
        "duplicate_job_ids": ds.flags.duplicate_job_ids.len(),
        "inconsistent_dates": ds.flags.inconsistent_dates.len(),
        "final_fit": trace.final_fit(),
        "iterations": trace.iterations_run,
        "converged": trace.converged,
    });
    if !trace.converged {
        log::warn!("decompose: stopped at max_iter = {} before reaching tol", cfg.max_iter);
    }
    finish(cfg, "decompose", BTreeMap::from([("decompose", seed)]), &outputs, summary)?;
    Ok(model)
}

/// `prism`: in-groups and characteristic subsequences for every factor.
pub fn prism(cfg: &RunConfig) -> Result<PrismReport> {
    prepare(cfg)?;
    let model_path = cfg.out_dir.join(artifacts::MODEL);
    let tensor_path = cfg.out_dir.join(artifacts::TENSOR);
    require(&model_path)?;
    require(&tensor_path)?;
    let model = FactorModel::load_json(&model_path)?;
    let (_, maps) = import_tensor(&tensor_path)?;
    let ds = load_dataset(cfg)?;
    let sequences = extract_sequences(&ds);
    let seed = stage_seed(cfg, "prism");
    let report = prism_run(&model, &sequences, &maps, &ds, &cfg.prism(seed))?;

    let report_path = cfg.out_dir.join(artifacts::PRISM_REPORT);
    let table_path = cfg.out_dir.join(artifacts::PRISM_TABLE);
    report.save_json(&report_path)?;
    write_prism_table(&report, &table_path)?;
    let summary = json!({
        "factors": report.factors.len(),
        "degenerate_factors": report.factors.iter().filter(|f| f.degenerate).count(),
        "tested": report.factors.iter().map(|f| f.tested).sum::<usize>(),
        "reported": report.factors.iter().map(|f| f.subsequences.len()).sum::<usize>(),
    });
    finish(cfg, "prism", BTreeMap::from([("prism", seed)]), &[report_path, table_path], summary)?;
    Ok(report)
}

fn write_prism_table(report: &PrismReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "factor",
        "ngram",
        "in_support",
        "in_total",
        "out_support",
        "out_total",
        "delta_theta_mean",
        "ci_lo",
        "ci_hi",
        "p_outside_rope",
    ])?;
    for f in &report.factors {
        for s in &f.subsequences {
            w.write_record([
                f.factor_index.to_string(),
                s.ngram.join(" "),
                s.in_support.to_string(),
                s.in_total.to_string(),
                s.out_support.to_string(),
                s.out_total.to_string(),
                s.bdpt.delta_theta_mean.to_string(),
                s.bdpt.credible_interval.0.to_string(),
                s.bdpt.credible_interval.1.to_string(),
                s.bdpt.p_outside_rope.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `dsm`: i-ratio baseline on the PRISM in-groups.
pub fn dsm(cfg: &RunConfig) -> Result<usize> {
    prepare(cfg)?;
    let report_path = cfg.out_dir.join(artifacts::PRISM_REPORT);
    let tensor_path = cfg.out_dir.join(artifacts::TENSOR);
    require(&report_path)?;
    require(&tensor_path)?;
    let report = PrismReport::load_json(&report_path)?;
    let (_, maps) = import_tensor(&tensor_path)?;
    let ds = load_dataset(cfg)?;
    let sequences = extract_sequences(&ds);

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for f in &report.factors {
        let (in_seqs, out_seqs) = group_sequences(f, &sequences, &maps, &ds, cfg.restrict_time);
        if f.degenerate || in_seqs.is_empty() || out_seqs.is_empty() {
            skipped.push(f.factor_index);
            continue;
        }
        rows.extend(dsm_baseline(&in_seqs, &out_seqs, cfg.max_len)?.into_iter().map(|r| (f.factor_index, r)));
    }
    let path = cfg.out_dir.join(artifacts::DSM_TABLE);
    write_dsm_csv(&rows, &path)?;
    let summary = json!({ "rows": rows.len(), "skipped_factors": skipped });
    finish(cfg, "dsm", BTreeMap::new(), &[path], summary)?;
    Ok(rows.len())
}

fn groupings(ds: &FleetDataset, kind: CostGrouping) -> Vec<Grouping> {
    let mut out: Vec<Grouping> = ds
        .vehicles
        .values()
        .map(|v| match kind {
            CostGrouping::Department => Grouping::Department(v.dept_code.clone()),
            CostGrouping::MakeModel => Grouping::MakeModel {
                make: v.make.clone(),
                model: v.model.clone(),
            },
        })
        .collect();
    out.sort_by_key(|g| serde_json::to_string(g).unwrap_or_default());
    out.dedup();
    out
}

fn slug(g: &Grouping) -> String {
    let raw = match g {
        Grouping::Department(code) => format!("department_{code}"),
        Grouping::MakeModel { make, model } => format!("make_model_{make}_{model}"),
    };
    raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn write_series_csv(series: &CostSeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["month", "avg_cost_per_vehicle", "active_vehicles"])?;
    for ((m, v), d) in series.months.iter().zip(&series.values).zip(&series.denominators) {
        w.write_record([m.to_string(), v.to_string(), d.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `forecast-cost`: rolling-origin ARIMA on each group's cost series.
pub fn forecast_cost(cfg: &RunConfig) -> Result<serde_json::Value> {
    prepare(cfg)?;
    let ds = load_dataset(cfg)?;
    let spec = cfg.arima_spec()?;
    let seed = stage_seed(cfg, "forecast-cost");
    let dir = cfg.out_dir.join(artifacts::COST_DIR);
    ensure_dir(&dir)?;
    let needed = cfg.initial_window + cfg.horizons.iter().max().copied().unwrap_or(1);
    let mut groups = Vec::new();
    let mut skipped = Vec::new();
    let mut outputs = Vec::new();
    for g in groupings(&ds, cfg.cost_grouping) {
        let series = match build_cost_series(&ds, &g) {
            Ok(s) => s,
            Err(Error::EmptyGroup(msg)) => {
                skipped.push(json!({ "group": g, "reason": msg }));
                continue;
            }
            Err(e) => return Err(e),
        };
        if series.len() < needed {
            log::warn!("{g}: {} months, need {needed}; skipped", series.len());
            skipped.push(json!({ "group": g, "reason": format!("{} months, need {needed}", series.len()) }));
            continue;
        }
        let eval = rolling_origin_eval(&series.values, &spec, cfg.initial_window, &cfg.horizons, seed)?;
        let series_path = dir.join(format!("{}_series.csv", slug(&g)));
        let fc_path = dir.join(format!("{}_forecast.csv", slug(&g)));
        write_series_csv(&series, &series_path)?;
        write_forecast_csv(&series, &eval, &fc_path)?;
        outputs.push(series_path);
        outputs.push(fc_path);
        let per_h: Vec<_> = eval
            .horizons
            .iter()
            .map(|h| {
                json!({
                    "horizon": h.horizon,
                    "forecasts": h.forecasts.len(),
                    "rmse": h.rmse,
                    "naive_rmse": naive_rmse(&series.values, cfg.initial_window, h.horizon),
                })
            })
            .collect();
        groups.push(json!({ "group": g, "label": g.to_string(), "months": series.len(), "horizons": per_h }));
    }
    let summary = json!({ "spec": spec, "initial_window": cfg.initial_window, "groups": groups, "skipped": skipped });
    let path = cfg.out_dir.join(artifacts::COST_SUMMARY);
    write_json(&path, &summary)?;
    outputs.push(path);
    finish(cfg, "forecast-cost", BTreeMap::from([("forecast-cost", seed)]), &outputs, summary.clone())?;
    Ok(summary)
}

/// Vehicle split: 50% train, 25% validation, 25% test.
pub fn split_units(units: &[String], seed: u64) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut shuffled = units.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = units.len() / 2;
    let n_val = units.len() / 4;
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    (shuffled, val, test)
}

/// `forecast-seq`: frequency-matched and Markov next-job models scored by
/// perplexity on held-out vehicles.
pub fn forecast_seq(cfg: &RunConfig) -> Result<serde_json::Value> {
    prepare(cfg)?;
    let ds = load_dataset(cfg)?;
    let sequences = extract_sequences(&ds);
    let seed = stage_seed(cfg, "forecast-seq");
    let units: Vec<String> = sequences.iter().map(|s| s.unit_id.clone()).collect();
    let (train_u, val_u, test_u) = split_units(&units, seed);
    if train_u.is_empty() || val_u.is_empty() || test_u.is_empty() {
        return Err(Error::InvalidInput(format!("{} vehicles with jobs are too few for a 50/25/25 split", units.len())));
    }
    let by_unit: BTreeMap<&str, Vec<String>> = sequences.iter().map(|s| (s.unit_id.as_str(), s.codes())).collect();
    let pick = |us: &[String]| -> Vec<Vec<String>> { us.iter().map(|u| by_unit[u.as_str()].clone()).collect() };
    let (train, val, test) = (pick(&train_u), pick(&val_u), pick(&test_u));
    let vocab = ds.system_codes();

    let variants = [
        ("frequency_matched", SequenceVariant::FrequencyMatched { alpha: cfg.markov_alpha }),
        ("markov", SequenceVariant::Markov { order: cfg.markov_k, alpha: cfg.markov_alpha }),
    ];
    let mut models = Vec::new();
    for (name, variant) in variants {
        let model = fit_sequence_model(&train, variant, &vocab)?;
        models.push(json!({
            "model": name,
            "variant": variant,
            "validation_perplexity": perplexity(&model, &val)?,
            "test_perplexity": perplexity(&model, &test)?,
        }));
    }
    let summary = json!({
        "vocabulary_size": vocab.len(),
        "vehicles": { "train": train_u.len(), "validation": val_u.len(), "test": test_u.len() },
        "models": models,
    });
    let path = cfg.out_dir.join(artifacts::SEQ_SUMMARY);
    write_json(&path, &summary)?;
    let mut log_summary = summary.clone();
    log_summary["split"] = json!({ "train": train_u, "validation": val_u, "test": test_u });
    finish(cfg, "forecast-seq", BTreeMap::from([("forecast-seq", seed)]), &[path], log_summary)?;
    Ok(summary)
}

/// `select-order`: AIC grid search over `p <= max_p`, `q <= max_q` at the
/// configured `d`, per cost group.
pub fn select_order_stage(cfg: &RunConfig, max_p: usize, max_q: usize) -> Result<serde_json::Value> {
    prepare(cfg)?;
    let ds = load_dataset(cfg)?;
    let seed = stage_seed(cfg, "select-order");
    let mut groups = Vec::new();
    for g in groupings(&ds, cfg.cost_grouping) {
        let Ok(series) = build_cost_series(&ds, &g) else { continue };
        match select_order(&series.values, cfg.arima_d, max_p, max_q, seed) {
            Ok(fit) => groups.push(json!({ "group": g, "label": g.to_string(), "best": fit })),
            Err(e) => groups.push(json!({ "group": g, "label": g.to_string(), "error": e.to_string() })),
        }
    }
    let summary = json!({ "d": cfg.arima_d, "max_p": max_p, "max_q": max_q, "groups": groups });
    let path = cfg.out_dir.join(artifacts::ORDER_SELECTION);
    write_json(&path, &summary)?;
    finish(cfg, "select-order", BTreeMap::from([("select-order", seed)]), &[path], summary.clone())?;
    Ok(summary)
}

/// decompose, prism, dsm, forecast-cost and forecast-seq in order.
pub fn run_all(cfg: &RunConfig) -> Result<()> {
    decompose(cfg)?;
    prism(cfg)?;
    dsm(cfg)?;
    forecast_cost(cfg)?;
    forecast_seq(cfg)?;
    Ok(())
}
