//! ASL forward model for one parcel:
//!
//! ```text
//! y_j = Σ_m a_j^m X^m h + c_j^m W X^m g + P ℓ_j + α_j w + b_j
//! ```
//!
//! plus the synthetic-data generator and the on-disk dataset layout.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::balloon::{generate_responses, PhysioParams, ResponseFunction};
use crate::csvio;
use crate::error::{Error, Result};

const DEFAULT_ONSETS: &str = include_str!("../assets/default_onsets.csv");
const DEFAULT_LABELS: [&str; 2] = [
    include_str!("../assets/labels_default_1.csv"),
    include_str!("../assets/labels_default_2.csv"),
];

fn default_drift_order() -> usize {
    4
}

/// Experimental paradigm and sampling grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paradigm {
    /// Stimulus onsets (s), one list per condition.
    pub onsets: Vec<Vec<f64>>,
    /// Repetition time (s).
    pub tr: f64,
    pub n_scans: usize,
    /// Response sampling period Δt (s).
    pub dt: f64,
    /// Response order: responses carry `f + 1` samples.
    pub f: usize,
    #[serde(default = "default_drift_order")]
    pub drift_order: usize,
}

impl Default for Paradigm {
    fn default() -> Self {
        Self::default_scenario()
    }
}

impl Paradigm {
    /// The bundled two-condition event-related design: TR = 1 s, 325 scans,
    /// Δt = 0.5 s, 25 s response support.
    pub fn default_scenario() -> Self {
        let mut onsets = vec![Vec::new(), Vec::new()];
        for line in DEFAULT_ONSETS.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let (cond, onset) = line.split_once(',').expect("bundled onsets are two columns");
            let cond: usize = cond.trim().parse().expect("bundled condition index");
            onsets[cond].push(onset.trim().parse().expect("bundled onset"));
        }
        Self {
            onsets,
            tr: 1.0,
            n_scans: 325,
            dt: 0.5,
            f: 50,
            drift_order: 4,
        }
    }

    pub fn n_conditions(&self) -> usize {
        self.onsets.len()
    }

    /// Keeps the first `n_scans` scans and the onsets falling inside them.
    pub fn truncated(&self, n_scans: usize) -> Self {
        let end = n_scans as f64 * self.tr;
        Self {
            onsets: self
                .onsets
                .iter()
                .map(|o| o.iter().copied().filter(|&t| t < end).collect())
                .collect(),
            n_scans,
            ..self.clone()
        }
    }

    /// Mean inter-stimulus interval over all conditions.
    pub fn mean_isi(&self) -> f64 {
        let mut all: Vec<f64> = self.onsets.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        if all.len() < 2 {
            return f64::NAN;
        }
        (all[all.len() - 1] - all[0]) / (all.len() - 1) as f64
    }

    /// Scans per Δt bin.
    fn bins_per_scan(&self) -> usize {
        (self.tr / self.dt).round() as usize
    }

    /// Nearest Δt bin of an onset, ties rounded down.
    pub fn onset_bin(&self, onset: f64) -> usize {
        (onset / self.dt - 0.5).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParadigm(m));
        if self.onsets.is_empty() {
            return bad("at least one condition is required".into());
        }
        if !(self.tr > 0.0) || !(self.dt > 0.0) {
            return bad(format!("TR ({}) and dt ({}) must be positive", self.tr, self.dt));
        }
        if self.dt > self.tr * (1.0 + 1e-12) {
            return bad(format!("dt ({}) must not exceed TR ({})", self.dt, self.tr));
        }
        let ratio = self.tr / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!("dt ({}) must divide TR ({})", self.dt, self.tr));
        }
        if self.n_scans == 0 {
            return bad("at least one scan is required".into());
        }
        if self.f < 2 {
            return bad(format!("F must be at least 2, got {}", self.f));
        }
        if self.drift_order > self.n_scans {
            return bad(format!(
                "drift order {} exceeds scan count {}",
                self.drift_order, self.n_scans
            ));
        }
        let end = self.n_scans as f64 * self.tr;
        for (m, list) in self.onsets.iter().enumerate() {
            if list.is_empty() {
                return bad(format!("condition {m} has no onsets"));
            }
            if let Some(t) = list.iter().find(|&&t| !(t >= 0.0 && t < end)) {
                return bad(format!("onset {t} of condition {m} outside [0, {end})"));
            }
        }
        Ok(())
    }
}

/// 2-D voxel lattice; voxel `j` sits at row `j / cols`, column `j % cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self { rows: 20, cols: 20 }
    }
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn area(&self) -> usize {
        self.rows * self.cols
    }

    /// 4-neighbourhood of voxel `j`.
    pub fn neighbors(&self, j: usize) -> impl Iterator<Item = usize> {
        let (r, c) = (j / self.cols, j % self.cols);
        let (rows, cols) = (self.rows, self.cols);
        [
            (r > 0).then(|| j - cols),
            (r + 1 < rows).then(|| j + cols),
            (c > 0).then(|| j - 1),
            (c + 1 < cols).then(|| j + 1),
        ]
        .into_iter()
        .flatten()
    }

    /// Checkerboard colour (0 or 1).
    pub fn color(&self, j: usize) -> usize {
        (j / self.cols + j % self.cols) % 2
    }
}

/// Design matrices of a paradigm.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    /// One binary `N × (F + 1)` lagged-onset matrix per condition.
    pub x: Vec<DMatrix<f64>>,
    /// Control/tag vector: `+1/2` on even scans, `−1/2` on odd scans.
    pub w: DVector<f64>,
    /// `N × O` orthonormal drift basis.
    pub p: DMatrix<f64>,
}

impl DesignSet {
    pub fn n_scans(&self) -> usize {
        self.w.len()
    }

    pub fn n_conditions(&self) -> usize {
        self.x.len()
    }

    pub fn w_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.w)
    }
}

pub fn build_design(paradigm: &Paradigm) -> Result<DesignSet> {
    paradigm.validate()?;
    let n = paradigm.n_scans;
    let bins = paradigm.bins_per_scan();
    let x = paradigm
        .onsets
        .iter()
        .map(|list| {
            let mut xm = DMatrix::zeros(n, paradigm.f + 1);
            for &t in list {
                let b = paradigm.onset_bin(t);
                for row in 0..n {
                    let scan_bin = row * bins;
                    if scan_bin >= b && scan_bin - b <= paradigm.f {
                        xm[(row, scan_bin - b)] = 1.0;
                    }
                }
            }
            xm
        })
        .collect();
    let w = DVector::from_fn(n, |i, _| if i % 2 == 0 { 0.5 } else { -0.5 });
    Ok(DesignSet {
        x,
        w,
        p: drift_basis(n, paradigm.drift_order),
    })
}

/// Orthonormalized polynomials of degree `< order` over the scan axis.
pub fn drift_basis(n: usize, order: usize) -> DMatrix<f64> {
    if order == 0 {
        return DMatrix::zeros(n, 0);
    }
    let span = (n.max(2) - 1) as f64;
    let vander = DMatrix::from_fn(n, order, |i, k| (2.0 * i as f64 / span - 1.0).powi(k as i32));
    let mut q = vander.qr().q();
    for k in 0..order {
        if q[(0, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// Mean and variance of a Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.var.sqrt() * z
    }
}

/// Which forward-model terms enter the simulated signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentMask {
    pub bold: bool,
    pub perfusion: bool,
    pub drift: bool,
    pub baseline: bool,
    pub noise: bool,
}

impl Default for ComponentMask {
    fn default() -> Self {
        Self::all()
    }
}

impl ComponentMask {
    pub const fn all() -> Self {
        Self {
            bold: true,
            perfusion: true,
            drift: true,
            baseline: true,
            noise: true,
        }
    }

    pub const fn none() -> Self {
        Self {
            bold: false,
            perfusion: false,
            drift: false,
            baseline: false,
            noise: false,
        }
    }
}

/// Ground-truth laws for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub grid: Grid,
    /// Activation maps `[m][j]`; the bundled maps when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<Vec<bool>>>,
    pub bold_active: Gaussian,
    pub bold_inactive: Gaussian,
    pub perf_active: Gaussian,
    pub perf_inactive: Gaussian,
    /// Variance of each drift coefficient.
    pub drift_var: f64,
    pub baseline_var: f64,
    pub noise_var: f64,
    pub components: ComponentMask,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            labels: None,
            bold_active: Gaussian::new(2.2, 0.3),
            bold_inactive: Gaussian::new(0.0, 0.3),
            perf_active: Gaussian::new(0.48, 0.1),
            perf_inactive: Gaussian::new(0.0, 0.1),
            drift_var: 10.0,
            baseline_var: 0.5,
            noise_var: 7.0,
            components: ComponentMask::all(),
        }
    }
}

/// Bundled activation maps resampled (nearest neighbour) onto `grid`.
/// Conditions beyond the bundled two reuse them cyclically.
pub fn default_label_maps(grid: Grid, n_conditions: usize) -> Vec<Vec<bool>> {
    (0..n_conditions)
        .map(|m| {
            let src: Vec<Vec<bool>> = DEFAULT_LABELS[m % DEFAULT_LABELS.len()]
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.split(',').map(|v| v.trim() == "1").collect())
                .collect();
            let (sr, sc) = (src.len(), src[0].len());
            (0..grid.area())
                .map(|j| {
                    let (r, c) = (j / grid.cols, j % grid.cols);
                    src[(r * sr) / grid.rows][(c * sc) / grid.cols]
                })
                .collect()
        })
        .collect()
}

/// True values behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Activation labels `[m][j]`.
    pub labels: Vec<Vec<bool>>,
    /// BOLD response levels, `J × M`.
    pub a: DMatrix<f64>,
    /// Perfusion response levels, `J × M`.
    pub c: DMatrix<f64>,
    /// Drift coefficients, `O × J`.
    pub ell: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub h: ResponseFunction,
    pub g: ResponseFunction,
    pub v_b: f64,
}

/// Time series of one parcel with its design.
#[derive(Debug, Clone, PartialEq)]
pub struct ParcelDataset {
    /// `N × J`, one column per voxel.
    pub y: DMatrix<f64>,
    pub design: DesignSet,
    pub paradigm: Paradigm,
    pub grid: Grid,
}

impl ParcelDataset {
    pub fn new(y: DMatrix<f64>, paradigm: Paradigm, grid: Grid) -> Result<Self> {
        let design = build_design(&paradigm)?;
        let ds = Self {
            y,
            design,
            paradigm,
            grid,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn n_voxels(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_scans(&self) -> usize {
        self.y.nrows()
    }

    pub fn check(&self) -> Result<()> {
        if self.y.ncols() != self.grid.area() {
            return Err(Error::DimensionMismatch(format!(
                "{} voxel columns for a {}x{} grid",
                self.y.ncols(),
                self.grid.rows,
                self.grid.cols
            )));
        }
        if self.y.nrows() != self.paradigm.n_scans {
            return Err(Error::DimensionMismatch(format!(
                "{} scans in Y, paradigm has {}",
                self.y.nrows(),
                self.paradigm.n_scans
            )));
        }
        Ok(())
    }

    /// Same design, different signal.
    pub fn with_signal(&self, y: DMatrix<f64>) -> Result<Self> {
        let ds = Self {
            y,
            ..self.clone()
        };
        ds.check()?;
        Ok(ds)
    }
}

/// The five additive terms of a simulation, each `N × J`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedComponents {
    pub bold: DMatrix<f64>,
    pub perfusion: DMatrix<f64>,
    pub drift: DMatrix<f64>,
    pub baseline: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl SimulatedComponents {
    /// `bold + perfusion + drift + baseline + noise`, summed in that order.
    pub fn total(&self) -> DMatrix<f64> {
        &self.bold + &self.perfusion + &self.drift + &self.baseline + &self.noise
    }
}

/// Draws every random quantity of the generative model from `seed`, in a
/// fixed order that does not depend on the component mask.
pub fn simulate_components(
    paradigm: &Paradigm,
    cfg: &TruthConfig,
    physio: &PhysioParams,
    seed: u64,
) -> Result<(SimulatedComponents, GroundTruth, DesignSet)> {
    let design = build_design(paradigm)?;
    let n = paradigm.n_scans;
    let j_count = cfg.grid.area();
    let m_count = paradigm.n_conditions();
    let o = paradigm.drift_order;
    let labels = match &cfg.labels {
        Some(l) => l.clone(),
        None => default_label_maps(cfg.grid, m_count),
    };
    if labels.len() != m_count || labels.iter().any(|l| l.len() != j_count) {
        return Err(Error::DimensionMismatch(format!(
            "label maps must be {m_count} maps of {j_count} voxels"
        )));
    }
    for (name, v) in [
        ("drift_var", cfg.drift_var),
        ("baseline_var", cfg.baseline_var),
        ("noise_var", cfg.noise_var),
    ] {
        if !(v >= 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
        }
    }

    let (h_raw, g_raw) = generate_responses(physio, paradigm.dt, paradigm.f)?;
    let h = unit_norm(&h_raw);
    let g = unit_norm(&g_raw);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(j_count, m_count);
    let mut c = DMatrix::zeros(j_count, m_count);
    for m in 0..m_count {
        for j in 0..j_count {
            let law = if labels[m][j] { cfg.bold_active } else { cfg.bold_inactive };
            a[(j, m)] = law.draw(&mut rng);
        }
    }
    for m in 0..m_count {
        for j in 0..j_count {
            let law = if labels[m][j] { cfg.perf_active } else { cfg.perf_inactive };
            c[(j, m)] = law.draw(&mut rng);
        }
    }
    let drift_law = Gaussian::new(0.0, cfg.drift_var);
    let ell = DMatrix::from_fn(o, j_count, |_, _| drift_law.draw(&mut rng));
    let alpha_law = Gaussian::new(0.0, cfg.baseline_var);
    let alpha = DVector::from_fn(j_count, |_, _| alpha_law.draw(&mut rng));
    let noise_law = Gaussian::new(0.0, cfg.noise_var);
    let noise = DMatrix::from_fn(n, j_count, |_, _| noise_law.draw(&mut rng));

    let h_vec = DVector::from_column_slice(&h.values);
    let g_vec = DVector::from_column_slice(&g.values);
    let bold_regs: Vec<DVector<f64>> = design.x.iter().map(|x| x * &h_vec).collect();
    let perf_regs: Vec<DVector<f64>> = design
        .x
        .iter()
        .map(|x| (x * &g_vec).component_mul(&design.w))
        .collect();

    let mask = cfg.components;
    let zeros = || DMatrix::zeros(n, j_count);
    let mut bold = zeros();
    let mut perfusion = zeros();
    for j in 0..j_count {
        for m in 0..m_count {
            if mask.bold {
                bold.column_mut(j).axpy(a[(j, m)], &bold_regs[m], 1.0);
            }
            if mask.perfusion {
                perfusion.column_mut(j).axpy(c[(j, m)], &perf_regs[m], 1.0);
            }
        }
    }
    let drift = if mask.drift { &design.p * &ell } else { zeros() };
    let baseline = if mask.baseline {
        &design.w * alpha.transpose()
    } else {
        zeros()
    };
    let noise = if mask.noise { noise } else { zeros() };

    let truth = GroundTruth {
        labels,
        a,
        c,
        ell,
        alpha,
        h,
        g,
        v_b: if mask.noise { cfg.noise_var } else { 0.0 },
    };
    Ok((
        SimulatedComponents {
            bold,
            perfusion,
            drift,
            baseline,
            noise,
        },
        truth,
        design,
    ))
}

/// Synthetic parcel dataset, fully determined by `(paradigm, cfg, physio, seed)`.
pub fn simulate_dataset(
    paradigm: &Paradigm,
    cfg: &TruthConfig,
    physio: &PhysioParams,
    seed: u64,
) -> Result<(ParcelDataset, GroundTruth)> {
    let (components, truth, design) = simulate_components(paradigm, cfg, physio, seed)?;
    let ds = ParcelDataset {
        y: components.total(),
        design,
        paradigm: paradigm.clone(),
        grid: cfg.grid,
    };
    Ok((ds, truth))
}

/// `r / ‖r‖`, left untouched when the norm is zero.
pub fn unit_norm(r: &ResponseFunction) -> ResponseFunction {
    let n = r.norm();
    if n > 0.0 {
        r.scaled(1.0 / n)
    } else {
        r.clone()
    }
}

#[derive(Serialize, Deserialize)]
struct ParadigmFile {
    paradigm: Paradigm,
    grid: Grid,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    a: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    ell: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    h: Vec<f64>,
    g: Vec<f64>,
    dt: f64,
    v_b: f64,
    labels: Vec<Vec<u8>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl ParcelDataset {
    /// Writes `Y.csv`, `paradigm.json` and, with a truth, `truth.json` and
    /// one `labels_<m>.csv` per condition (1-based, grid layout).
    pub fn save(&self, dir: &Path, truth: Option<&GroundTruth>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        csvio::write_matrix(&dir.join("Y.csv"), &self.y)?;
        csvio::write_json(
            &dir.join("paradigm.json"),
            &ParadigmFile {
                paradigm: self.paradigm.clone(),
                grid: self.grid,
            },
        )?;
        if let Some(t) = truth {
            for (m, map) in t.labels.iter().enumerate() {
                let grid = DMatrix::from_fn(self.grid.rows, self.grid.cols, |r, c| {
                    f64::from(u8::from(map[r * self.grid.cols + c]))
                });
                csvio::write_matrix(&dir.join(format!("labels_{}.csv", m + 1)), &grid)?;
            }
            let file = TruthFile {
                a: rows_of(&t.a),
                c: rows_of(&t.c),
                ell: rows_of(&t.ell),
                alpha: t.alpha.iter().copied().collect(),
                h: t.h.values.clone(),
                g: t.g.values.clone(),
                dt: t.h.dt,
                v_b: t.v_b,
                labels: t
                    .labels
                    .iter()
                    .map(|l| l.iter().map(|&b| u8::from(b)).collect())
                    .collect(),
            };
            csvio::write_json(&dir.join("truth.json"), &file)?;
        }
        Ok(())
    }

    /// Loads a dataset directory; the truth is returned when `truth.json` exists.
    pub fn load(dir: &Path) -> Result<(Self, Option<GroundTruth>)> {
        let meta: ParadigmFile = csvio::read_json(&dir.join("paradigm.json"))?;
        let y = csvio::read_matrix(&dir.join("Y.csv"))?;
        let ds = ParcelDataset::new(y, meta.paradigm, meta.grid)?;
        let truth_path = dir.join("truth.json");
        let truth = if truth_path.exists() {
            let t: TruthFile = csvio::read_json(&truth_path)?;
            let m = ds.paradigm.n_conditions();
            let j = ds.n_voxels();
            Some(GroundTruth {
                labels: t
                    .labels
                    .iter()
                    .map(|l| l.iter().map(|&b| b != 0).collect())
                    .collect(),
                a: from_rows(&t.a, m, "a")?,
                c: from_rows(&t.c, m, "c")?,
                ell: from_rows(&t.ell, j, "ell")?,
                alpha: DVector::from_vec(t.alpha),
                h: ResponseFunction::new(t.dt, t.h)?,
                g: ResponseFunction::new(t.dt, t.g)?,
                v_b: t.v_b,
            })
        } else {
            None
        };
        Ok((ds, truth))
    }
}
