//! Error metrics, method comparison and the noise sweep.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aslmodel::{simulate_dataset, GroundTruth, Paradigm, ParcelDataset, TruthConfig};
use crate::balloon::{argmax_abs, PhysioParams, ResponseFunction};
use crate::csvio;
use crate::error::{Error, Result};
use crate::sampler::{fit, PosteriorSummary, PriorConfig, SamplerConfig, Variant};

/// `‖est − truth‖ / ‖truth‖`.
pub fn rrmse(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} samples, truth {}",
            est.len(),
            truth.len()
        )));
    }
    let tn = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if tn == 0.0 {
        return Err(Error::ZeroTruth);
    }
    let en = est
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .sum::<f64>()
        .sqrt();
    Ok(en / tn)
}

/// Unit norm with a positive largest-magnitude sample. Zero stays zero.
pub fn normalize_shape(r: &ResponseFunction) -> ResponseFunction {
    let n = r.norm();
    if n == 0.0 {
        return r.clone();
    }
    let sign = r.values[argmax_abs(&r.values)].signum();
    r.scaled(sign / n)
}

/// Relative error between response shapes, scale and sign removed.
pub fn shape_rrmse(est: &ResponseFunction, truth: &ResponseFunction) -> Result<f64> {
    if est.order() != truth.order() || (est.dt - truth.dt).abs() > 1e-9 * truth.dt {
        return Err(Error::GridMismatch(format!(
            "estimate F = {} at dt = {}, truth F = {} at dt = {}",
            est.order(),
            est.dt,
            truth.order(),
            truth.dt
        )));
    }
    if truth.norm() == 0.0 {
        return Err(Error::ZeroTruth);
    }
    rrmse(&normalize_shape(est).values, &normalize_shape(truth).values)
}

/// Time to peak of the normalized shape.
pub fn ttp(r: &ResponseFunction) -> f64 {
    normalize_shape(r).time_to_peak()
}

/// Confusion counts of one activation map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Detection {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl Detection {
    pub fn sensitivity(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.true_neg, self.true_neg + self.false_pos)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(
            self.true_pos + self.true_neg,
            self.true_pos + self.true_neg + self.false_pos + self.false_neg,
        )
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// Thresholds `ppm` (`J × M`) and scores it against `labels` (`[m][j]`).
pub fn detection(ppm: &DMatrix<f64>, labels: &[Vec<bool>], threshold: f64) -> Result<Vec<Detection>> {
    if labels.len() != ppm.ncols() || labels.iter().any(|l| l.len() != ppm.nrows()) {
        return Err(Error::DimensionMismatch("PPM and label maps differ".into()));
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(m, truth)| {
            let mut d = Detection::default();
            for (j, &t) in truth.iter().enumerate() {
                match (ppm[(j, m)] > threshold, t) {
                    (true, true) => d.true_pos += 1,
                    (true, false) => d.false_pos += 1,
                    (false, false) => d.true_neg += 1,
                    (false, true) => d.false_neg += 1,
                }
            }
            d
        })
        .collect())
}

/// Scores of one fitted method against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Variant,
    pub rrmse_h: f64,
    pub rrmse_g: f64,
    pub ttp_h: f64,
    pub ttp_g: f64,
    pub detection: Vec<Detection>,
}

pub fn evaluate(summary: &PosteriorSummary, truth: &GroundTruth) -> Result<MethodReport> {
    Ok(MethodReport {
        method: summary.method,
        rrmse_h: shape_rrmse(&summary.h, &truth.h)?,
        rrmse_g: shape_rrmse(&summary.g, &truth.g)?,
        ttp_h: ttp(&summary.h),
        ttp_g: ttp(&summary.g),
        detection: detection(&summary.ppm, &truth.labels, 0.5)?,
    })
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub truth_ttp_h: f64,
    pub truth_ttp_g: f64,
    pub methods: Vec<MethodReport>,
}

impl ComparisonReport {
    pub fn get(&self, method: Variant) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == method)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        csvio::write_json(path, self)
    }
}

/// Fits every method on one dataset; methods run in parallel.
pub fn compare_methods(
    ds: &ParcelDataset,
    truth: &GroundTruth,
    methods: &[Variant],
    cfg: &SamplerConfig,
    priors: &PriorConfig,
    seed: u64,
) -> Result<(ComparisonReport, Vec<PosteriorSummary>)> {
    let fits: Vec<PosteriorSummary> = methods
        .par_iter()
        .map(|&m| fit(ds, m, cfg, priors, seed))
        .collect::<Result<_>>()?;
    let reports = fits
        .iter()
        .map(|s| evaluate(s, truth))
        .collect::<Result<_>>()?;
    Ok((
        ComparisonReport {
            seed,
            truth_ttp_h: ttp(&truth.h),
            truth_ttp_g: ttp(&truth.g),
            methods: reports,
        },
        fits,
    ))
}

/// Grid of noise levels and seeds for [`run_noise_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub noise_vars: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Variant>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            noise_vars: vec![0.5, 1.0, 2.0, 7.0, 15.0, 30.0],
            seeds: (0..5).collect(),
            methods: vec![Variant::Basic, Variant::Physio2Step],
        }
    }
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub v_b: f64,
    pub seed: u64,
    pub method: Variant,
    pub rrmse_h: f64,
    pub rrmse_g: f64,
}

/// Simulates one dataset per `(v_b, seed)` and fits every method on it.
/// Cells run in parallel; rows come back in `(v_b, seed, method)` order.
pub fn run_noise_sweep(
    paradigm: &Paradigm,
    truth_cfg: &TruthConfig,
    physio: &PhysioParams,
    cfg: &SamplerConfig,
    priors: &PriorConfig,
    sweep: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if sweep.noise_vars.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("noise variances must be positive".into()));
    }
    let cells: Vec<(f64, u64, Variant)> = sweep
        .noise_vars
        .iter()
        .flat_map(|&v| {
            sweep
                .seeds
                .iter()
                .flat_map(move |&s| sweep.methods.iter().map(move |&m| (v, s, m)))
        })
        .collect();
    cells
        .par_iter()
        .map(|&(v_b, seed, method)| {
            let tc = TruthConfig {
                noise_var: v_b,
                ..truth_cfg.clone()
            };
            let (ds, truth) = simulate_dataset(paradigm, &tc, physio, seed)?;
            let s = fit(&ds, method, cfg, priors, seed)?;
            Ok(SweepRow {
                v_b,
                seed,
                method,
                rrmse_h: shape_rrmse(&s.h, &truth.h)?,
                rrmse_g: shape_rrmse(&s.g, &truth.g)?,
            })
        })
        .collect()
}

/// Mean rRMSE of `(h, g)` per method at one noise level.
pub fn sweep_means(rows: &[SweepRow], v_b: f64, method: Variant) -> Option<(f64, f64)> {
    let sel: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.method == method && r.v_b == v_b)
        .collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    Some((
        sel.iter().map(|r| r.rrmse_h).sum::<f64>() / n,
        sel.iter().map(|r| r.rrmse_g).sum::<f64>() / n,
    ))
}

/// Median rRMSE of `(h, g)` per method at one noise level.
pub fn sweep_medians(rows: &[SweepRow], v_b: f64, method: Variant) -> Option<(f64, f64)> {
    let sel: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.method == method && r.v_b == v_b)
        .collect();
    if sel.is_empty() {
        return None;
    }
    let h: Vec<f64> = sel.iter().map(|r| r.rrmse_h).collect();
    let g: Vec<f64> = sel.iter().map(|r| r.rrmse_g).collect();
    Some((median(h), median(g)))
}

/// Median of a non-empty sample; the mean of the two central values for even sizes.
pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// `v_b,seed,method,rrmse_h,rrmse_g`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    csvio::write_rows(
        path,
        Some(&["v_b", "seed", "method", "rrmse_h", "rrmse_g"]),
        rows.iter().map(|r| {
            vec![
                csvio::fmt_exact(r.v_b),
                r.seed.to_string(),
                r.method.name().to_string(),
                csvio::fmt_exact(r.rrmse_h),
                csvio::fmt_exact(r.rrmse_g),
            ]
        }),
    )
}
