//! Dense vehicle × system × time count tensors.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FleetDataset, YearMonth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TimeEncoding {
    /// Calendar months, contiguous from the earliest to the latest completion.
    AbsoluteMonth,
    /// Years since the vehicle's model year (bin 0 is the purchase year).
    LifetimeYear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Raw,
    Log1p,
}

/// Nonnegative, finite 3-way array. Stored mode-1-major: `[i, j, k]` lives at
/// `(i * J + j) * K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    data: Array3<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self> {
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::param(format!("tensor dims must be positive, got {dims:?}")));
        }
        Ok(Tensor3 {
            data: Array3::zeros(dims),
        })
    }

    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        let (i, j, k) = data.dim();
        if i == 0 || j == 0 || k == 0 {
            return Err(Error::param("tensor dims must be positive"));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "tensor entries must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Tensor3 {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn from_vec(dims: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        let arr = Array3::from_shape_vec(dims, values)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Self::from_array(arr)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[[i, j, k]]
    }

    pub(crate) fn add_at(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[[i, j, k]] += v;
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }

    /// Values in mode-1-major order.
    pub fn values(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn sum(&self) -> f64 {
        self.data.sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_array(self.data.mapv(f))
    }
}

/// Frobenius norm.
pub fn tensor_norm(t: &Tensor3) -> f64 {
    t.values().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Labels for each tensor mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisMaps {
    /// Mode 1, sorted by (model year, unit id); vehicles without a vehicles
    /// table row sort last.
    pub vehicles: Vec<String>,
    pub systems: Vec<String>,
    pub time_bins: Vec<String>,
    pub encoding: TimeEncoding,
}

impl AxisMaps {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.vehicles.len(), self.systems.len(), self.time_bins.len())
    }
}

/// Result of [`build_tensor`]: the tensor, its labels, and jobs left out
/// because their time bin could not be placed.
#[derive(Debug, Clone)]
pub struct BuiltTensor {
    pub tensor: Tensor3,
    pub maps: AxisMaps,
    pub excluded_jobs: Vec<String>,
}

pub fn lifetime_label(index: i64) -> String {
    format!("year{index}")
}

/// Time-bin label of a job under an encoding, or `None` when the record
/// cannot be placed (unknown vehicle or job before the model year under
/// lifetime encoding).
pub fn time_label(
    unit_id: &str,
    completed: NaiveDate,
    dataset: &FleetDataset,
    encoding: TimeEncoding,
) -> Option<String> {
    match encoding {
        TimeEncoding::AbsoluteMonth => Some(YearMonth::of(completed).to_string()),
        TimeEncoding::LifetimeYear => {
            let v = dataset.vehicles.get(unit_id)?;
            let idx = completed.year() as i64 - v.model_year as i64;
            (idx >= 0).then(|| lifetime_label(idx))
        }
    }
}

/// Counts jobs per (vehicle, system, time bin). Only vehicles and systems with
/// at least one contributing record get an index; time bins are contiguous.
pub fn build_tensor(
    dataset: &FleetDataset,
    encoding: TimeEncoding,
    transform: Transform,
) -> Result<BuiltTensor> {
    let mut excluded_jobs = Vec::new();
    // (unit, system, bin ordinal)
    let mut cells: Vec<(&str, &str, i64)> = Vec::with_capacity(dataset.records.len());
    for r in &dataset.records {
        let bin = match encoding {
            TimeEncoding::AbsoluteMonth => Some(r.completed_month().ordinal()),
            TimeEncoding::LifetimeYear => dataset.vehicles.get(&r.unit_id).and_then(|v| {
                let idx = r.completed_date.year() as i64 - v.model_year as i64;
                (idx >= 0).then_some(idx)
            }),
        };
        match bin {
            Some(b) => cells.push((&r.unit_id, &r.system_code, b)),
            None => excluded_jobs.push(r.job_id.clone()),
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyTensor);
    }

    let units: BTreeSet<&str> = cells.iter().map(|c| c.0).collect();
    let mut vehicles: Vec<&str> = units.into_iter().collect();
    vehicles.sort_by_key(|u| {
        let year = dataset.vehicles.get(*u).map(|v| v.model_year);
        (year.is_none(), year, *u)
    });
    let systems: Vec<&str> = cells
        .iter()
        .map(|c| c.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (lo, hi) = cells
        .iter()
        .fold((i64::MAX, i64::MIN), |(lo, hi), c| (lo.min(c.2), hi.max(c.2)));
    let lo = match encoding {
        TimeEncoding::AbsoluteMonth => lo,
        TimeEncoding::LifetimeYear => 0,
    };
    let time_bins: Vec<String> = (lo..=hi)
        .map(|b| match encoding {
            TimeEncoding::AbsoluteMonth => YearMonth::from_ordinal(b).to_string(),
            TimeEncoding::LifetimeYear => lifetime_label(b),
        })
        .collect();

    let v_index: BTreeMap<&str, usize> = vehicles.iter().enumerate().map(|(i, u)| (*u, i)).collect();
    let s_index: BTreeMap<&str, usize> = systems.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut tensor = Tensor3::zeros((vehicles.len(), systems.len(), time_bins.len()))?;
    for (u, s, b) in &cells {
        tensor.add_at(v_index[u], s_index[s], (b - lo) as usize, 1.0);
    }
    if transform == Transform::Log1p {
        tensor = tensor.map(f64::ln_1p)?;
    }
    Ok(BuiltTensor {
        tensor,
        maps: AxisMaps {
            vehicles: vehicles.into_iter().map(String::from).collect(),
            systems: systems.into_iter().map(String::from).collect(),
            time_bins,
            encoding,
        },
        excluded_jobs,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TensorDocument {
    pub dims: [usize; 3],
    pub encoding: TimeEncoding,
    pub vehicles: Vec<String>,
    pub systems: Vec<String>,
    pub time_bins: Vec<String>,
    /// Mode-1-major.
    pub values: Vec<f64>,
}

pub fn export_tensor(t: &Tensor3, maps: &AxisMaps, path: &Path) -> Result<()> {
    if t.dims() != maps.dims() {
        return Err(Error::DimensionMismatch(format!(
            "tensor {:?} vs axis maps {:?}",
            t.dims(),
            maps.dims()
        )));
    }
    let (i, j, k) = t.dims();
    let doc = TensorDocument {
        dims: [i, j, k],
        encoding: maps.encoding,
        vehicles: maps.vehicles.clone(),
        systems: maps.systems.clone(),
        time_bins: maps.time_bins.clone(),
        values: t.values().to_vec(),
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), &doc)?;
    Ok(())
}

pub fn import_tensor(path: &Path) -> Result<(Tensor3, AxisMaps)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let doc: TensorDocument = serde_json::from_reader(std::io::BufReader::new(file))?;
    let t = Tensor3::from_vec((doc.dims[0], doc.dims[1], doc.dims[2]), doc.values)?;
    let maps = AxisMaps {
        vehicles: doc.vehicles,
        systems: doc.systems,
        time_bins: doc.time_bins,
        encoding: doc.encoding,
    };
    if t.dims() != maps.dims() {
        return Err(Error::DimensionMismatch("axis labels do not match dims".into()));
    }
    Ok((t, maps))
}
