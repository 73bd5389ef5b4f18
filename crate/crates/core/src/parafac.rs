//! Nonnegative CP (PARAFAC) decomposition by multiplicative updates.
//!
//! The model is `X ≈ Σ_r λ_r a_r ∘ b_r ∘ c_r` with nonnegative loading
//! matrices `A` (vehicles), `B` (systems) and `C` (time). Each sweep updates the
//! three factor matrices in turn with the Lee–Seung rule
//!
//! ```text
//! A ← A ⊙ MTTKRP(X, B, C) ⊘ max(A (BᵀB ⊙ CᵀC), 1e-12)
//! ```
//!
//! which never increases `‖X − P‖²` and keeps every entry nonnegative.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{tensor_norm, AxisMaps, Tensor3};

pub const DEFAULT_RANK: usize = 25;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 500;

const DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmuConfig {
    pub rank: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for NmuConfig {
    fn default() -> Self {
        NmuConfig {
            rank: DEFAULT_RANK,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
        }
    }
}

/// Rank-R Kruskal model. Columns of `a`, `b`, `c` are the factor loadings.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub weights: Array1<f64>,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
}

impl FactorModel {
    /// Builds a model with unit weights, validating shapes and signs.
    pub fn new(a: Array2<f64>, b: Array2<f64>, c: Array2<f64>) -> Result<Self> {
        let r = a.ncols();
        Self::with_weights(Array1::ones(r), a, b, c)
    }

    pub fn with_weights(weights: Array1<f64>, a: Array2<f64>, b: Array2<f64>, c: Array2<f64>) -> Result<Self> {
        let r = weights.len();
        if r == 0 {
            return Err(Error::param("rank must be at least 1"));
        }
        if a.ncols() != r || b.ncols() != r || c.ncols() != r {
            return Err(Error::DimensionMismatch(format!(
                "factor column counts {}, {}, {} do not match {} weights",
                a.ncols(),
                b.ncols(),
                c.ncols(),
                r
            )));
        }
        let all = weights.iter().chain(a.iter()).chain(b.iter()).chain(c.iter());
        for v in all {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidInput(format!("factor entries must be finite and nonnegative, found {v}")));
            }
        }
        Ok(FactorModel { weights, a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    /// Loading matrix for mode 0 (vehicles), 1 (systems) or 2 (time).
    pub fn factor(&self, mode: usize) -> &Array2<f64> {
        match mode {
            0 => &self.a,
            1 => &self.b,
            2 => &self.c,
            _ => panic!("mode {mode} out of range"),
        }
    }

    /// Reorders factor columns (and weights) by `order`.
    pub fn permuted(&self, order: &[usize]) -> FactorModel {
        let pick = |m: &Array2<f64>| m.select(Axis(1), order);
        FactorModel {
            weights: self.weights.select(Axis(0), order),
            a: pick(&self.a),
            b: pick(&self.b),
            c: pick(&self.c),
        }
    }

    pub fn min_entry(&self) -> f64 {
        self.a
            .iter()
            .chain(self.b.iter())
            .chain(self.c.iter())
            .fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let doc = ModelDocument::from(self);
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &doc)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let doc: ModelDocument = serde_json::from_reader(std::io::BufReader::new(file))?;
        doc.try_into()
    }
}

/// On-disk model layout: matrices are written row by row.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelDocument {
    pub dims: [usize; 3],
    pub rank: usize,
    pub weights: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>, ncols: usize) -> Result<Array2<f64>> {
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, ncols), flat).map_err(|e| Error::DimensionMismatch(e.to_string()))
}

impl From<&FactorModel> for ModelDocument {
    fn from(m: &FactorModel) -> Self {
        let (i, j, k) = m.dims();
        ModelDocument {
            dims: [i, j, k],
            rank: m.rank(),
            weights: m.weights.to_vec(),
            a: rows(&m.a),
            b: rows(&m.b),
            c: rows(&m.c),
        }
    }
}

impl TryFrom<ModelDocument> for FactorModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let model = FactorModel::with_weights(
            Array1::from(doc.weights),
            from_rows(doc.a, doc.rank)?,
            from_rows(doc.b, doc.rank)?,
            from_rows(doc.c, doc.rank)?,
        )?;
        if model.dims() != (doc.dims[0], doc.dims[1], doc.dims[2]) {
            return Err(Error::DimensionMismatch("model dims do not match matrices".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// Fit after each sweep.
    pub fits: Vec<f64>,
    /// `‖X − P‖²` after each sweep, summed directly.
    pub objectives: Vec<f64>,
    pub initial_objective: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl ConvergenceTrace {
    pub fn final_fit(&self) -> Option<f64> {
        self.fits.last().copied()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let mut out = String::from("iteration,fit,fit_change,objective\n");
        let mut prev = None;
        for (i, (fit, obj)) in self.fits.iter().zip(&self.objectives).enumerate() {
            let change = prev.map(|p: f64| (fit - p).abs()).unwrap_or(f64::NAN);
            out.push_str(&format!("{},{:.12e},{:.12e},{:.12e}\n", i + 1, fit, change, obj));
            prev = Some(*fit);
        }
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Dense reconstruction `Σ_r λ_r a_r ∘ b_r ∘ c_r`.
pub fn reconstruct(m: &FactorModel) -> Tensor3 {
    let (ni, nj, nk) = m.dims();
    let r = m.rank();
    let mut out = Array3::<f64>::zeros((ni, nj, nk));
    let mut w = vec![0.0; r];
    {
        let buf = out.as_slice_mut().expect("standard layout");
        for i in 0..ni {
            for j in 0..nj {
                for q in 0..r {
                    w[q] = m.weights[q] * m.a[[i, q]] * m.b[[j, q]];
                }
                let base = (i * nj + j) * nk;
                for k in 0..nk {
                    let mut p = 0.0;
                    for q in 0..r {
                        p += w[q] * m.c[[k, q]];
                    }
                    buf[base + k] = p;
                }
            }
        }
    }
    Tensor3::from_array(out).expect("products of nonnegative finite factors")
}

struct FitStats {
    fit: f64,
    objective: f64,
}

fn fit_stats(x: &Tensor3, m: &FactorModel) -> Result<FitStats> {
    if x.dims() != m.dims() {
        return Err(Error::DimensionMismatch(format!("tensor {:?} vs model {:?}", x.dims(), m.dims())));
    }
    let p = reconstruct(m);
    let (mut xx, mut pp, mut xp, mut direct) = (0.0, 0.0, 0.0, 0.0);
    for (xv, pv) in x.values().iter().zip(p.values()) {
        xx += xv * xv;
        pp += pv * pv;
        xp += xv * pv;
        direct += (xv - pv) * (xv - pv);
    }
    if xx == 0.0 {
        return Err(Error::InvalidInput("fit metric undefined for a zero tensor".into()));
    }
    let residual = (xx + pp - 2.0 * xp).max(0.0).sqrt();
    Ok(FitStats {
        fit: 1.0 - residual / xx.sqrt(),
        objective: direct,
    })
}

/// `1 − √(‖X‖² + ‖P‖² − 2⟨X, P⟩) / ‖X‖`, i.e. one minus the relative
/// residual norm. Equals 1 for an exact reconstruction.
pub fn fit_metric(x: &Tensor3, m: &FactorModel) -> Result<f64> {
    Ok(fit_stats(x, m)?.fit)
}

/// Matricized-tensor times Khatri–Rao product for `mode`.
fn mttkrp(x: &Tensor3, a: &Array2<f64>, b: &Array2<f64>, c: &Array2<f64>, mode: usize) -> Array2<f64> {
    let (ni, nj, nk) = x.dims();
    let r = a.ncols();
    let xs = x.values();
    let rows = [ni, nj, nk][mode];
    let mut out = Array2::<f64>::zeros((rows, r));
    let mut t = vec![0.0; r];
    for i in 0..ni {
        for j in 0..nj {
            let fiber = &xs[(i * nj + j) * nk..(i * nj + j + 1) * nk];
            if mode == 2 {
                for q in 0..r {
                    t[q] = a[[i, q]] * b[[j, q]];
                }
                for (k, xv) in fiber.iter().enumerate() {
                    if *xv != 0.0 {
                        for q in 0..r {
                            out[[k, q]] += xv * t[q];
                        }
                    }
                }
                continue;
            }
            t.iter_mut().for_each(|v| *v = 0.0);
            let mut any = false;
            for (k, xv) in fiber.iter().enumerate() {
                if *xv != 0.0 {
                    any = true;
                    for q in 0..r {
                        t[q] += xv * c[[k, q]];
                    }
                }
            }
            if !any {
                continue;
            }
            if mode == 0 {
                for q in 0..r {
                    out[[i, q]] += b[[j, q]] * t[q];
                }
            } else {
                for q in 0..r {
                    out[[j, q]] += a[[i, q]] * t[q];
                }
            }
        }
    }
    out
}

fn multiplicative_step(u: &mut Array2<f64>, numer: &Array2<f64>, gram: &Array2<f64>) {
    let denom = u.dot(gram);
    ndarray::Zip::from(u)
        .and(numer)
        .and(&denom)
        .for_each(|u, n, d| *u *= n / d.max(DENOM_FLOOR));
}

/// Fits a nonnegative rank-`cfg.rank` CP model to `x`.
///
/// Factors start from seeded uniform draws on (0, 1], scaled so the initial
/// reconstruction has the same norm as `x`. Sweeps stop when the fit changes
/// by less than `cfg.tol` between consecutive sweeps or after `cfg.max_iter`.
pub fn cp_nmu_fit(x: &Tensor3, cfg: &NmuConfig) -> Result<(FactorModel, ConvergenceTrace)> {
    if cfg.rank == 0 {
        return Err(Error::param("rank must be at least 1"));
    }
    if cfg.max_iter == 0 {
        return Err(Error::param("max_iter must be at least 1"));
    }
    if !(cfg.tol >= 0.0) {
        return Err(Error::param(format!("tolerance must be nonnegative, got {}", cfg.tol)));
    }
    let norm_x = tensor_norm(x);
    if norm_x == 0.0 {
        return Err(Error::InvalidInput("cannot decompose an all-zero tensor".into()));
    }
    let (ni, nj, nk) = x.dims();
    let r = cfg.rank;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |n: usize| Array2::from_shape_fn((n, r), |_| 1.0 - rng.random::<f64>());
    let a = draw(ni);
    let b = draw(nj);
    let c = draw(nk);
    let mut model = FactorModel::new(a, b, c)?;
    let scale = (norm_x / tensor_norm(&reconstruct(&model))).cbrt();
    model.a *= scale;
    model.b *= scale;
    model.c *= scale;

    let initial_objective = fit_stats(x, &model)?.objective;
    let mut trace = ConvergenceTrace {
        fits: Vec::new(),
        objectives: Vec::new(),
        initial_objective,
        iterations_run: 0,
        converged: false,
        tolerance: cfg.tol,
        max_iterations: cfg.max_iter,
    };

    for iter in 0..cfg.max_iter {
        for mode in 0..3 {
            let numer = mttkrp(x, &model.a, &model.b, &model.c, mode);
            let (g1, g2) = match mode {
                0 => (&model.b, &model.c),
                1 => (&model.a, &model.c),
                _ => (&model.a, &model.b),
            };
            let gram = g1.t().dot(g1) * g2.t().dot(g2);
            let u = match mode {
                0 => &mut model.a,
                1 => &mut model.b,
                _ => &mut model.c,
            };
            multiplicative_step(u, &numer, &gram);
        }
        let stats = fit_stats(x, &model)?;
        let change = trace.fits.last().map(|prev| (stats.fit - prev).abs());
        trace.fits.push(stats.fit);
        trace.objectives.push(stats.objective);
        trace.iterations_run = iter + 1;
        if matches!(change, Some(c) if c < cfg.tol) {
            trace.converged = true;
            break;
        }
    }
    log::debug!(
        "cp_nmu: rank {} ran {} sweeps, fit {:.6}, converged {}",
        r,
        trace.iterations_run,
        trace.final_fit().unwrap_or(f64::NAN),
        trace.converged
    );
    Ok((model, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vehicle,
    System,
    Time,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Vehicle, Mode::System, Mode::Time];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Vehicle => "vehicle",
            Mode::System => "system",
            Mode::Time => "time",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingPoint {
    pub index: usize,
    pub label: String,
    pub loading: f64,
}

/// Plot-ready loadings of one factor: one labelled series per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPlot {
    pub factor: usize,
    pub vehicle: Vec<LoadingPoint>,
    pub system: Vec<LoadingPoint>,
    pub time: Vec<LoadingPoint>,
}

impl FactorPlot {
    pub fn series(&self, mode: Mode) -> &[LoadingPoint] {
        match mode {
            Mode::Vehicle => &self.vehicle,
            Mode::System => &self.system,
            Mode::Time => &self.time,
        }
    }
}

/// Per-factor three-way plot data. With `normalize`, each series is divided
/// by its maximum (series that are all zero are left as is).
pub fn three_way_export(m: &FactorModel, maps: &AxisMaps, normalize: bool) -> Result<Vec<FactorPlot>> {
    if m.dims() != maps.dims() {
        return Err(Error::DimensionMismatch(format!(
            "model {:?} vs axis maps {:?}",
            m.dims(),
            maps.dims()
        )));
    }
    let series = |mat: &Array2<f64>, labels: &[String], r: usize| {
        let col = mat.column(r);
        let max = col.iter().fold(0.0f64, |a, b| a.max(*b));
        let div = if normalize && max > 0.0 { max } else { 1.0 };
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| LoadingPoint {
                index: i,
                label: l.clone(),
                loading: col[i] / div,
            })
            .collect::<Vec<_>>()
    };
    Ok((0..m.rank())
        .map(|r| FactorPlot {
            factor: r,
            vehicle: series(&m.a, &maps.vehicles, r),
            system: series(&m.b, &maps.systems, r),
            time: series(&m.c, &maps.time_bins, r),
        })
        .collect())
}

/// Writes one `factor_NN.csv` per factor with columns `mode,index,label,loading`.
pub fn write_factor_plots(plots: &[FactorPlot], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(plots.len());
    for plot in plots {
        let path = dir.join(format!("factor_{:02}.csv", plot.factor));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["mode", "index", "label", "loading"])?;
        for mode in Mode::ALL {
            for p in plot.series(mode) {
                w.write_record([mode.name(), &p.index.to_string(), &p.label, &format!("{:.12e}", p.loading)])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TimeEncoding;
    use ndarray::array;

    fn random_model(dims: (usize, usize, usize), r: usize, seed: u64) -> FactorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n| Array2::from_shape_fn((n, r), |_| rng.random::<f64>());
        let (a, b, c) = (draw(dims.0), draw(dims.1), draw(dims.2));
        FactorModel::new(a, b, c).unwrap()
    }

    #[test]
    fn scalar_reconstruction() {
        let m = FactorModel::new(array![[2.0]], array![[3.0]], array![[5.0]]).unwrap();
        assert_eq!(reconstruct(&m).get(0, 0, 0), 30.0);
    }

    #[test]
    fn reconstruction_matches_triple_loop() {
        let m = random_model((3, 4, 2), 3, 7);
        let p = reconstruct(&m);
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..2 {
                    let mut s = 0.0;
                    for r in 0..3 {
                        s += m.weights[r] * m.a[[i, r]] * m.b[[j, r]] * m.c[[k, r]];
                    }
                    assert!((p.get(i, j, k) - s).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_column_does_not_change_reconstruction() {
        let mut m = random_model((3, 4, 2), 3, 11);
        m.b.column_mut(1).fill(0.0);
        let reduced = m.permuted(&[0, 2]);
        let (p, q) = (reconstruct(&m), reconstruct(&reduced));
        for (x, y) in p.values().iter().zip(q.values()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn fit_metric_identities() {
        let m = random_model((4, 3, 5), 2, 3);
        let x = reconstruct(&m);
        assert_eq!(fit_metric(&x, &m).unwrap(), 1.0);
        let mut half = m.clone();
        half.weights *= 0.5;
        assert!((fit_metric(&x, &half).unwrap() - 0.5).abs() < 1e-12);
        let zero = Tensor3::zeros((4, 3, 5)).unwrap();
        assert!(fit_metric(&zero, &m).is_err());
    }

    #[test]
    fn rank_one_recovery() {
        let a = array![[1.0], [2.0], [0.5], [3.0]];
        let b = array![[0.3], [1.2], [2.0]];
        let c = array![[1.0], [0.1], [0.7], [1.5], [2.2]];
        let x = reconstruct(&FactorModel::new(a, b, c).unwrap());
        let (_, trace) = cp_nmu_fit(&x, &NmuConfig { rank: 1, seed: 5, ..Default::default() }).unwrap();
        assert!(trace.final_fit().unwrap() >= 0.999, "fit {:?}", trace.final_fit());
    }

    #[test]
    fn parameter_errors() {
        let x = Tensor3::from_vec((1, 1, 2), vec![1.0, 2.0]).unwrap();
        let bad = NmuConfig { rank: 0, ..Default::default() };
        assert!(matches!(cp_nmu_fit(&x, &bad), Err(Error::InvalidParameter(_))));
        let zero = Tensor3::zeros((2, 2, 2)).unwrap();
        assert!(cp_nmu_fit(&zero, &NmuConfig::default()).is_err());
    }

    #[test]
    fn defaults() {
        let d = NmuConfig::default();
        assert_eq!((d.rank, d.tol, d.max_iter), (25, 1e-4, 500));
    }

    #[test]
    fn trace_matches_final_model() {
        let x = reconstruct(&random_model((6, 5, 4), 3, 1)).map(|v| v + 0.05).unwrap();
        let (m, trace) = cp_nmu_fit(&x, &NmuConfig { rank: 2, seed: 9, ..Default::default() }).unwrap();
        let fit = fit_metric(&x, &m).unwrap();
        assert!((fit - trace.final_fit().unwrap()).abs() <= 1e-12);
        assert!(trace.iterations_run <= trace.max_iterations);
        assert_eq!(trace.fits.len(), trace.iterations_run);
    }

    #[test]
    fn export_shapes_and_labels() {
        let m = random_model((3, 2, 4), 2, 2);
        let maps = AxisMaps {
            vehicles: vec!["v0".into(), "v1".into(), "v2".into()],
            systems: vec!["s0".into(), "s1".into()],
            time_bins: (0..4).map(|k| format!("t{k}")).collect(),
            encoding: TimeEncoding::AbsoluteMonth,
        };
        let plots = three_way_export(&m, &maps, false).unwrap();
        assert_eq!(plots.len(), 2);
        for p in &plots {
            assert_eq!((p.vehicle.len(), p.system.len(), p.time.len()), (3, 2, 4));
            let labels: Vec<_> = p.time.iter().map(|l| l.label.clone()).collect();
            assert_eq!(labels, maps.time_bins);
        }
        let normed = three_way_export(&m, &maps, true).unwrap();
        let max = normed[0].vehicle.iter().fold(0.0f64, |a, p| a.max(p.loading));
        assert!((max - 1.0).abs() < 1e-15);

        let dir = tempfile::tempdir().unwrap();
        let files = write_factor_plots(&plots, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let text = std::fs::read_to_string(&files[1]).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 2 + 4);

        let mut bad = maps.clone();
        bad.systems.pop();
        assert!(matches!(three_way_export(&m, &bad, false), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn model_json_round_trip() {
        let m = random_model((3, 2, 4), 2, 4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save_json(&p).unwrap();
        assert_eq!(FactorModel::load_json(&p).unwrap(), m);
    }
}
