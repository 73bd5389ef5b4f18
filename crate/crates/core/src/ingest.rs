//! Vehicle and maintenance tables: parsing, cleaning, and per-vehicle
//! maintenance sequences.
//!
//! Column headers are matched case-insensitively after trimming, collapsing
//! whitespace, dropping `.` and treating `_` as a space, so `LTD Maint. Cost`,
//! `ltd maint cost` and `LTD_MAINT_COST` all resolve to the same field.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::money::Money;

pub const DEFAULT_CUTOFF_YEAR: i32 = 2010;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatusCode {
    Active,
    Disposed,
}

impl StatusCode {
    fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_uppercase().as_str() {
            "A" | "ACTIVE" | "ACTIVE UNIT" => Some(StatusCode::Active),
            "S" | "D" | "DISPOSED" => Some(StatusCode::Disposed),
            _ => None,
        }
    }

    fn code(self) -> &'static str {
        match self {
            StatusCode::Active => "A",
            StatusCode::Disposed => "S",
        }
    }

    fn description(self) -> &'static str {
        match self {
            StatusCode::Active => "Active Unit",
            StatusCode::Disposed => "Disposed",
        }
    }
}

/// One row of the vehicles table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub unit_id: String,
    pub dept_code: String,
    pub dept_desc: String,
    pub make: String,
    pub model: String,
    pub model_year: i32,
    pub purchase_cost: Money,
    pub status: StatusCode,
    pub ltd_maint_cost: Money,
    pub ltd_fuel_cost: Money,
}

/// One row of the maintenance table. `job_cost` is always the sum of the
/// three cost columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceRecord {
    pub job_id: String,
    pub unit_id: String,
    pub work_order_id: String,
    pub completed_date: NaiveDate,
    pub open_date: NaiveDate,
    pub system_code: String,
    pub system_desc: String,
    pub job_reason: String,
    pub labor_cost: Money,
    pub commercial_cost: Money,
    pub part_cost: Money,
    pub job_cost: Money,
    pub odometer: Option<i64>,
}

impl MaintenanceRecord {
    pub fn completed_month(&self) -> YearMonth {
        YearMonth::of(self.completed_date)
    }
}

/// Calendar month, ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        YearMonth { year, month }
    }

    pub fn of(date: NaiveDate) -> Self {
        YearMonth {
            year: date.year(),
            month: date.month(),
        }
    }

    /// Months since year 0, used for contiguous indexing.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        YearMonth {
            year: ordinal.div_euclid(12) as i32,
            month: (ordinal.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn succ(self) -> Self {
        Self::from_ordinal(self.ordinal() + 1)
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month")
    }

    pub fn days(self) -> u32 {
        let next = self.succ().first_day();
        (next - self.first_day()).num_days() as u32
    }

    /// Inclusive contiguous range `from..=to`.
    pub fn range(from: YearMonth, to: YearMonth) -> Vec<YearMonth> {
        (from.ordinal()..=to.ordinal()).map(Self::from_ordinal).collect()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// A maintenance record whose unit id has no row in the vehicles table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrphanRecord {
    pub job_id: String,
    pub unit_id: String,
}

/// Data-quality findings that do not remove records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityFlags {
    /// Jobs whose completion precedes their open date.
    pub inconsistent_dates: Vec<String>,
    /// Job ids seen more than once; later copies were dropped.
    pub duplicate_job_ids: Vec<String>,
    pub dropped_before_cutoff: usize,
}

/// Cleaned fleet data: every record is on or after `cutoff_year`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetDataset {
    pub cutoff_year: i32,
    pub vehicles: BTreeMap<String, VehicleRecord>,
    pub records: Vec<MaintenanceRecord>,
    pub orphans: Vec<OrphanRecord>,
    pub flags: QualityFlags,
}

impl FleetDataset {
    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    /// Sorted, de-duplicated system codes across all records.
    pub fn system_codes(&self) -> Vec<String> {
        let mut codes: Vec<String> = self
            .records
            .iter()
            .map(|r| r.system_code.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        codes.sort();
        codes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceItem {
    pub system_code: String,
    pub completed_date: NaiveDate,
    pub job_id: String,
}

/// Time-ordered repairs for one vehicle; ties on date are broken by job id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceSequence {
    pub unit_id: String,
    pub items: Vec<SequenceItem>,
}

impl MaintenanceSequence {
    pub fn codes(&self) -> Vec<String> {
        self.items.iter().map(|i| i.system_code.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn normalize_header(h: &str) -> String {
    h.replace('_', " ")
        .replace('.', "")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    /// Later duplicates win, so a table with two `Completed Date` columns
    /// resolves to the job-level one that follows the work-order one.
    fn new(headers: &csv::StringRecord) -> Self {
        let mut index = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            index.insert(normalize_header(h), i);
        }
        Columns { index }
    }

    fn find(&self, aliases: &[&str]) -> Option<usize> {
        aliases.iter().find_map(|a| self.index.get(*a).copied())
    }

    fn require(&self, aliases: &[&str]) -> Result<usize> {
        self.find(aliases).ok_or_else(|| Error::MissingColumn {
            column: aliases[0].to_string(),
        })
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn row_err(row: usize, message: impl Into<String>) -> Error {
    Error::Row {
        row,
        message: message.into(),
    }
}

fn field(rec: &csv::StringRecord, idx: usize, row: usize) -> Result<&str> {
    rec.get(idx)
        .ok_or_else(|| row_err(row, format!("missing field at column {}", idx + 1)))
}

fn money_field(rec: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<Money> {
    let raw = field(rec, idx, row)?;
    let value = Money::parse(raw).ok_or_else(|| row_err(row, format!("unparseable {name} `{raw}`")))?;
    if value.is_negative() {
        return Err(row_err(row, format!("negative {name} `{raw}`")));
    }
    Ok(value)
}

/// Accepts `YYYY-MM-DD` and `YYYY-MM-DD HH:MM:SS`.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S").ok().map(|dt| dt.date()))
}

fn date_field(rec: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<NaiveDate> {
    let raw = field(rec, idx, row)?;
    parse_date(raw).ok_or_else(|| row_err(row, format!("malformed {name} `{raw}`")))
}

/// Parses the vehicles table. Row numbers in errors count data rows from 1.
pub fn parse_vehicles(path: &Path) -> Result<Vec<VehicleRecord>> {
    let mut reader = open_csv(path)?;
    let cols = Columns::new(reader.headers()?);
    let unit = cols.require(&["unit#", "unit #", "unit no", "unit id", "unit"])?;
    let dept = cols.require(&["dept#", "dept #", "dept code", "dept"])?;
    let dept_desc = cols.require(&["dept desc", "dept description"])?;
    let make = cols.require(&["make"])?;
    let model = cols.require(&["model"])?;
    let year = cols.require(&["year", "model year"])?;
    let purchase = cols.require(&["purchase cost"])?;
    let status = cols.require(&["status code", "status"])?;
    let maint = cols.require(&["ltd maint cost", "ltd maintenance cost"])?;
    let fuel = cols.require(&["ltd fuel cost"])?;

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| row_err(row, e.to_string()))?;
        let unit_id = field(&rec, unit, row)?.to_string();
        if unit_id.is_empty() {
            return Err(row_err(row, "empty unit id"));
        }
        if !seen.insert(unit_id.clone()) {
            return Err(Error::DuplicateUnit(unit_id));
        }
        let year_raw = field(&rec, year, row)?;
        let model_year: i32 = year_raw
            .parse()
            .map_err(|_| row_err(row, format!("unparseable year `{year_raw}`")))?;
        if !(1900..=2100).contains(&model_year) {
            return Err(row_err(row, format!("model year {model_year} outside [1900, 2100]")));
        }
        let status_raw = field(&rec, status, row)?;
        let status = StatusCode::parse(status_raw)
            .ok_or_else(|| row_err(row, format!("unknown status code `{status_raw}`")))?;
        out.push(VehicleRecord {
            unit_id,
            dept_code: field(&rec, dept, row)?.to_string(),
            dept_desc: field(&rec, dept_desc, row)?.to_string(),
            make: field(&rec, make, row)?.to_string(),
            model: field(&rec, model, row)?.to_string(),
            model_year,
            purchase_cost: money_field(&rec, purchase, row, "purchase cost")?,
            status,
            ltd_maint_cost: money_field(&rec, maint, row, "LTD maintenance cost")?,
            ltd_fuel_cost: money_field(&rec, fuel, row, "LTD fuel cost")?,
        });
    }
    Ok(out)
}

/// Parses the maintenance table. Records keep file order; nothing is
/// de-duplicated here.
pub fn parse_maintenance(path: &Path) -> Result<Vec<MaintenanceRecord>> {
    let mut reader = open_csv(path)?;
    let cols = Columns::new(reader.headers()?);
    let job = cols.require(&["job id"])?;
    let unit = cols.require(&["unit no", "unit#", "unit #", "unit id", "unit"])?;
    let work_order = cols.require(&["work order no", "work order id", "work order"])?;
    let completed = cols.require(&["completed date", "job completed date"])?;
    let open = cols.require(&["job open date", "open date"])?;
    let system = cols.require(&["job system", "system code"])?;
    let labor = cols.require(&["actual labor cost", "labor cost"])?;
    let commercial = cols.require(&["commercial cost"])?;
    let part = cols.require(&["part cost"])?;
    let system_desc = cols.find(&["syst descr", "system descr", "system desc", "system description"]);
    let reason = cols.find(&["job reason", "job reason code"]);
    let meter = cols.find(&["primary meter", "odometer"]);

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| row_err(row, e.to_string()))?;
        let system_code = field(&rec, system, row)?.to_string();
        if system_code.is_empty() {
            return Err(row_err(row, "empty system code"));
        }
        let job_id = field(&rec, job, row)?.to_string();
        if job_id.is_empty() {
            return Err(row_err(row, "empty job id"));
        }
        let labor_cost = money_field(&rec, labor, row, "labor cost")?;
        let commercial_cost = money_field(&rec, commercial, row, "commercial cost")?;
        let part_cost = money_field(&rec, part, row, "part cost")?;
        let odometer = match meter {
            Some(idx) => {
                let raw = field(&rec, idx, row)?;
                if raw.is_empty() {
                    None
                } else {
                    let v: f64 = raw
                        .replace(',', "")
                        .parse()
                        .map_err(|_| row_err(row, format!("unparseable odometer `{raw}`")))?;
                    Some(v.round() as i64)
                }
            }
            None => None,
        };
        out.push(MaintenanceRecord {
            job_id,
            unit_id: field(&rec, unit, row)?.to_string(),
            work_order_id: field(&rec, work_order, row)?.to_string(),
            completed_date: date_field(&rec, completed, row, "completed date")?,
            open_date: date_field(&rec, open, row, "open date")?,
            system_code,
            system_desc: match system_desc {
                Some(idx) => field(&rec, idx, row)?.to_string(),
                None => String::new(),
            },
            job_reason: match reason {
                Some(idx) => field(&rec, idx, row)?.to_string(),
                None => String::new(),
            },
            labor_cost,
            commercial_cost,
            part_cost,
            job_cost: labor_cost + commercial_cost + part_cost,
            odometer,
        });
    }
    Ok(out)
}

pub const VEHICLE_COLUMNS: [&str; 14] = [
    "Unit#",
    "Dept#",
    "Dept Desc",
    "Make",
    "Model",
    "Year",
    "Last Meter",
    "Last Fuel Date",
    "Purchase Cost",
    "Status Code",
    "Status Desc",
    "LTD Maint. Cost",
    "LTD Fuel Cost",
    "LTD Fuel Gallons",
];

pub const MAINTENANCE_COLUMNS: [&str; 16] = [
    "Job ID",
    "Year Completed",
    "Unit No",
    "Work Order No",
    "Open Date",
    "Job Reason",
    "Completed Date",
    "Actual Labor Cost",
    "Commercial Cost",
    "Part Cost",
    "Primary Meter",
    "Job Status",
    "Job System",
    "Syst. Descr.",
    "Job Open Date",
    "Work Order Loc.",
];

/// Writes the vehicles table using the standard column names. Columns the
/// model does not track are left empty.
pub fn write_vehicles(path: &Path, vehicles: &[VehicleRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(VEHICLE_COLUMNS)?;
    for v in vehicles {
        w.write_record([
            v.unit_id.as_str(),
            &v.dept_code,
            &v.dept_desc,
            &v.make,
            &v.model,
            &v.model_year.to_string(),
            "",
            "",
            &format!("${}", v.purchase_cost),
            v.status.code(),
            v.status.description(),
            &format!("${}", v.ltd_maint_cost),
            &format!("${}", v.ltd_fuel_cost),
            "",
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_maintenance(path: &Path, records: &[MaintenanceRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(MAINTENANCE_COLUMNS)?;
    for r in records {
        let open = r.open_date.format("%Y-%m-%d").to_string();
        w.write_record([
            r.job_id.as_str(),
            &r.completed_date.year().to_string(),
            &r.unit_id,
            &r.work_order_id,
            &open,
            &r.job_reason,
            &r.completed_date.format("%Y-%m-%d").to_string(),
            &format!("${}", r.labor_cost),
            &format!("${}", r.commercial_cost),
            &format!("${}", r.part_cost),
            &r.odometer.map(|o| o.to_string()).unwrap_or_default(),
            "DON",
            &r.system_code,
            &r.system_desc,
            &open,
            "",
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Drops records completed before `cutoff_year` and exact job-id repeats,
/// then reports orphans and inconsistent dates without removing them.
pub fn clean_and_filter(
    records: Vec<MaintenanceRecord>,
    vehicles: Vec<VehicleRecord>,
    cutoff_year: i32,
) -> FleetDataset {
    let vehicles: BTreeMap<String, VehicleRecord> =
        vehicles.into_iter().map(|v| (v.unit_id.clone(), v)).collect();
    let mut flags = QualityFlags::default();
    let mut seen_jobs = HashSet::new();
    let mut kept = Vec::with_capacity(records.len());
    for rec in records {
        if rec.completed_date.year() < cutoff_year {
            flags.dropped_before_cutoff += 1;
            continue;
        }
        if !seen_jobs.insert(rec.job_id.clone()) {
            flags.duplicate_job_ids.push(rec.job_id);
            continue;
        }
        if rec.completed_date < rec.open_date {
            flags.inconsistent_dates.push(rec.job_id.clone());
        }
        kept.push(rec);
    }
    let orphans = kept
        .iter()
        .filter(|r| !vehicles.contains_key(&r.unit_id))
        .map(|r| OrphanRecord {
            job_id: r.job_id.clone(),
            unit_id: r.unit_id.clone(),
        })
        .collect();
    FleetDataset {
        cutoff_year,
        vehicles,
        records: kept,
        orphans,
        flags,
    }
}

/// One sequence per vehicle with at least one record, ordered by unit id.
pub fn extract_sequences(dataset: &FleetDataset) -> Vec<MaintenanceSequence> {
    sequences_from_records(dataset.records.iter())
}

pub(crate) fn sequences_from_records<'a>(
    records: impl Iterator<Item = &'a MaintenanceRecord>,
) -> Vec<MaintenanceSequence> {
    let mut by_unit: BTreeMap<&str, Vec<SequenceItem>> = BTreeMap::new();
    for r in records {
        by_unit.entry(r.unit_id.as_str()).or_default().push(SequenceItem {
            system_code: r.system_code.clone(),
            completed_date: r.completed_date,
            job_id: r.job_id.clone(),
        });
    }
    by_unit
        .into_iter()
        .map(|(unit, mut items)| {
            items.sort_by(|a, b| {
                a.completed_date
                    .cmp(&b.completed_date)
                    .then_with(|| a.job_id.cmp(&b.job_id))
            });
            MaintenanceSequence {
                unit_id: unit.to_string(),
                items,
            }
        })
        .collect()
}
