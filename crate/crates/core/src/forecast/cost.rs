//! Monthly average maintenance cost per active vehicle.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FleetDataset, StatusCode, VehicleRecord, YearMonth};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Department(String),
    MakeModel { make: String, model: String },
}

impl Grouping {
    pub fn contains(&self, v: &VehicleRecord) -> bool {
        match self {
            Grouping::Department(code) => v.dept_code == *code,
            Grouping::MakeModel { make, model } => v.make == *make && v.model == *model,
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grouping::Department(code) => write!(f, "department {code}"),
            Grouping::MakeModel { make, model } => write!(f, "{make} {model}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSeries {
    pub grouping: Grouping,
    /// Contiguous months from the group's first to last job.
    pub months: Vec<YearMonth>,
    /// Average cost per active vehicle, USD.
    pub values: Vec<f64>,
    pub denominators: Vec<usize>,
}

impl CostSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Builds the cost series for one vehicle grouping.
///
/// A vehicle is active in month `M` from the earlier of January of its model
/// year and its first job, until (for disposed vehicles) the month of its
/// last job. Months with no active vehicle carry a zero value, which only
/// happens when no job falls in them either.
pub fn build_cost_series(dataset: &FleetDataset, grouping: &Grouping) -> Result<CostSeries> {
    let members: BTreeMap<&str, &VehicleRecord> = dataset
        .vehicles
        .iter()
        .filter(|(_, v)| grouping.contains(v))
        .map(|(k, v)| (k.as_str(), v))
        .collect();
    let records: Vec<_> = dataset
        .records
        .iter()
        .filter(|r| members.contains_key(r.unit_id.as_str()))
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyGroup(format!("no maintenance records for {grouping}")));
    }

    let mut first_last: BTreeMap<&str, (i64, i64)> = BTreeMap::new();
    let mut totals: BTreeMap<i64, i64> = BTreeMap::new();
    for r in &records {
        let m = r.completed_month().ordinal();
        let e = first_last.entry(r.unit_id.as_str()).or_insert((m, m));
        e.0 = e.0.min(m);
        e.1 = e.1.max(m);
        *totals.entry(m).or_insert(0) += r.job_cost.cents();
    }
    let lo = *totals.keys().next().unwrap();
    let hi = *totals.keys().next_back().unwrap();

    let spans: Vec<(i64, i64)> = members
        .iter()
        .map(|(unit, v)| {
            let model_start = YearMonth::new(v.model_year, 1).ordinal();
            match first_last.get(unit) {
                Some(&(first, last)) => {
                    let end = if v.status == StatusCode::Disposed { last } else { i64::MAX };
                    (model_start.min(first), end)
                }
                None if v.status == StatusCode::Disposed => (1, 0),
                None => (model_start, i64::MAX),
            }
        })
        .collect();

    let months = YearMonth::range(YearMonth::from_ordinal(lo), YearMonth::from_ordinal(hi));
    let mut values = Vec::with_capacity(months.len());
    let mut denominators = Vec::with_capacity(months.len());
    for m in &months {
        let o = m.ordinal();
        let active = spans.iter().filter(|(s, e)| *s <= o && o <= *e).count();
        let cents = totals.get(&o).copied().unwrap_or(0);
        values.push(if active == 0 { 0.0 } else { cents as f64 / 100.0 / active as f64 });
        denominators.push(active);
    }
    Ok(CostSeries {
        grouping: grouping.clone(),
        months,
        values,
        denominators,
    })
}
