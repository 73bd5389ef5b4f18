//! Run configuration shared by every pipeline stage.
//!
//! A run is configured by an optional JSON file mirroring [`RunConfig`];
//! every field can then be overridden by a long flag of the same name
//! (`--cutoff-year` or `--cutoff_year`).

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::arima::{ArimaSpec, DEFAULT_HORIZONS, DEFAULT_INITIAL_WINDOW};
use crate::ingest::DEFAULT_CUTOFF_YEAR;
use crate::parafac::{NmuConfig, DEFAULT_MAX_ITER, DEFAULT_RANK, DEFAULT_TOL};
use crate::prism::{bdpt, bgmm, ngram, PrismConfig};
use crate::tensor::{TimeEncoding, Transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CostGrouping {
    Department,
    MakeModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vehicles_csv: PathBuf,
    pub maintenance_csv: PathBuf,
    pub out_dir: PathBuf,
    pub cutoff_year: i32,
    pub time_encoding: TimeEncoding,
    pub transform: Transform,
    pub rank: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub rope: f64,
    pub max_len: usize,
    pub bdpt_draws: usize,
    pub prism_threshold: f64,
    pub gamma: f64,
    pub min_support: u64,
    pub restrict_time: bool,
    pub arima_p: usize,
    pub arima_d: usize,
    pub arima_q: usize,
    pub initial_window: usize,
    pub horizons: Vec<usize>,
    pub cost_grouping: CostGrouping,
    pub markov_k: usize,
    pub markov_alpha: f64,
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            vehicles_csv: PathBuf::from("vehicles.csv"),
            maintenance_csv: PathBuf::from("maintenance.csv"),
            out_dir: PathBuf::from("out"),
            cutoff_year: DEFAULT_CUTOFF_YEAR,
            time_encoding: TimeEncoding::AbsoluteMonth,
            transform: Transform::Log1p,
            rank: DEFAULT_RANK,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            rope: bdpt::DEFAULT_ROPE,
            max_len: ngram::DEFAULT_MAX_LEN,
            bdpt_draws: bdpt::DEFAULT_DRAWS,
            prism_threshold: 0.95,
            gamma: bgmm::DEFAULT_GAMMA,
            min_support: 5,
            restrict_time: true,
            arima_p: 6,
            arima_d: 2,
            arima_q: 4,
            initial_window: DEFAULT_INITIAL_WINDOW,
            horizons: DEFAULT_HORIZONS.to_vec(),
            cost_grouping: CostGrouping::Department,
            markov_k: 2,
            markov_alpha: 0.1,
            master_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load_json(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn nmu(&self, seed: u64) -> NmuConfig {
        NmuConfig {
            rank: self.rank,
            tol: self.tol,
            max_iter: self.max_iter,
            seed,
        }
    }

    pub fn prism(&self, seed: u64) -> PrismConfig {
        PrismConfig {
            rope: self.rope,
            max_len: self.max_len,
            threshold: self.prism_threshold,
            draws: self.bdpt_draws,
            gamma: self.gamma,
            min_support: self.min_support,
            restrict_time: self.restrict_time,
            seed,
        }
    }

    pub fn arima_spec(&self) -> Result<ArimaSpec> {
        ArimaSpec::new(self.arima_p, self.arima_d, self.arima_q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::param("rank must be at least 1"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::param("tol must be positive and max_iter at least 1"));
        }
        if !(0.0..=1.0).contains(&self.prism_threshold) {
            return Err(Error::param("prism_threshold must lie in [0, 1]"));
        }
        if self.max_len == 0 || self.bdpt_draws == 0 {
            return Err(Error::param("max_len and bdpt_draws must be positive"));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::param("horizons must be a non-empty list of positive integers"));
        }
        if self.markov_k == 0 || !(self.markov_alpha >= 0.0) {
            return Err(Error::param("markov_k must be >= 1 and markov_alpha >= 0"));
        }
        self.arima_spec()?;
        Ok(())
    }

    pub fn apply(&mut self, o: &ConfigOverrides) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &o.$field { self.$field = v.clone(); })*
            };
        }
        set!(
            vehicles_csv,
            maintenance_csv,
            out_dir,
            cutoff_year,
            time_encoding,
            transform,
            rank,
            tol,
            max_iter,
            rope,
            max_len,
            bdpt_draws,
            prism_threshold,
            gamma,
            min_support,
            restrict_time,
            arima_p,
            arima_d,
            arima_q,
            initial_window,
            cost_grouping,
            markov_k,
            markov_alpha,
            master_seed
        );
        if !o.horizons.is_empty() {
            self.horizons = o.horizons.clone();
        }
    }
}

/// Command-line overrides for [`RunConfig`]; unset flags keep the file or
/// default value.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    #[arg(long, alias = "vehicles_csv")]
    pub vehicles_csv: Option<PathBuf>,
    #[arg(long, alias = "maintenance_csv")]
    pub maintenance_csv: Option<PathBuf>,
    #[arg(long, alias = "out_dir")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, alias = "cutoff_year")]
    pub cutoff_year: Option<i32>,
    #[arg(long, alias = "time_encoding", value_enum)]
    pub time_encoding: Option<TimeEncoding>,
    #[arg(long, value_enum)]
    pub transform: Option<Transform>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, alias = "max_iter")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub rope: Option<f64>,
    #[arg(long, alias = "max_len")]
    pub max_len: Option<usize>,
    #[arg(long, alias = "bdpt_draws")]
    pub bdpt_draws: Option<usize>,
    #[arg(long, alias = "prism_threshold")]
    pub prism_threshold: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, alias = "min_support")]
    pub min_support: Option<u64>,
    #[arg(long, alias = "restrict_time")]
    pub restrict_time: Option<bool>,
    #[arg(long, alias = "arima_p")]
    pub arima_p: Option<usize>,
    #[arg(long, alias = "arima_d")]
    pub arima_d: Option<usize>,
    #[arg(long, alias = "arima_q")]
    pub arima_q: Option<usize>,
    #[arg(long, alias = "initial_window")]
    pub initial_window: Option<usize>,
    /// Comma-separated, e.g. `1,6`.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Vec<usize>,
    #[arg(long, alias = "cost_grouping", value_enum)]
    pub cost_grouping: Option<CostGrouping>,
    #[arg(long, alias = "markov_k")]
    pub markov_k: Option<usize>,
    #[arg(long, alias = "markov_alpha")]
    pub markov_alpha: Option<f64>,
    #[arg(long, alias = "master_seed")]
    pub master_seed: Option<u64>,
}
