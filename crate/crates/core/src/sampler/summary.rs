use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{MixtureParams, Variant};
use crate::balloon::ResponseFunction;
use crate::csvio;
use crate::error::{Error, Result};

/// Posterior means over the kept sweeps of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub method: Variant,
    pub h: ResponseFunction,
    pub g: ResponseFunction,
    /// `J × M`.
    pub a: DMatrix<f64>,
    /// `J × M`.
    pub c: DMatrix<f64>,
    /// Posterior probability of activation, `J × M`.
    pub ppm: DMatrix<f64>,
    /// `O × J`.
    pub ell: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub v_b: f64,
    pub theta_a: Vec<MixtureParams>,
    pub theta_c: Vec<MixtureParams>,
    /// Noise variance at every sweep, burn-in included.
    pub trace_v_b: Vec<f64>,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SummaryFile {
    method: Variant,
    dt: f64,
    v_b: f64,
    theta_a: Vec<MixtureParams>,
    theta_c: Vec<MixtureParams>,
    iterations: usize,
    burn_in: usize,
    seed: u64,
}

impl PosteriorSummary {
    /// Labels `[m][j]` whose activation probability exceeds `threshold`.
    pub fn labels(&self, threshold: f64) -> Vec<Vec<bool>> {
        self.ppm
            .column_iter()
            .map(|col| col.iter().map(|&p| p > threshold).collect())
            .collect()
    }

    /// Writes `summary.json`, `h.csv`, `g.csv`, `a.csv`, `c.csv`, `ppm_q.csv`,
    /// `ell.csv`, `alpha.csv` and `trace_v_b.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        csvio::write_json(
            &dir.join("summary.json"),
            &SummaryFile {
                method: self.method,
                dt: self.h.dt,
                v_b: self.v_b,
                theta_a: self.theta_a.clone(),
                theta_c: self.theta_c.clone(),
                iterations: self.iterations,
                burn_in: self.burn_in,
                seed: self.seed,
            },
        )?;
        write_response(&dir.join("h.csv"), &self.h)?;
        write_response(&dir.join("g.csv"), &self.g)?;
        csvio::write_matrix(&dir.join("a.csv"), &self.a)?;
        csvio::write_matrix(&dir.join("c.csv"), &self.c)?;
        csvio::write_matrix(&dir.join("ppm_q.csv"), &self.ppm)?;
        csvio::write_matrix(&dir.join("ell.csv"), &self.ell)?;
        csvio::write_matrix(&dir.join("alpha.csv"), &DMatrix::from_column_slice(
            self.alpha.len(),
            1,
            self.alpha.as_slice(),
        ))?;
        csvio::write_matrix(
            &dir.join("trace_v_b.csv"),
            &DMatrix::from_column_slice(self.trace_v_b.len(), 1, &self.trace_v_b),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: SummaryFile = csvio::read_json(&dir.join("summary.json"))?;
        let column = |name: &str| -> Result<Vec<f64>> {
            Ok(csvio::read_matrix(&dir.join(name))?.iter().copied().collect())
        };
        Ok(Self {
            method: meta.method,
            h: read_response(&dir.join("h.csv"), meta.dt)?,
            g: read_response(&dir.join("g.csv"), meta.dt)?,
            a: csvio::read_matrix(&dir.join("a.csv"))?,
            c: csvio::read_matrix(&dir.join("c.csv"))?,
            ppm: csvio::read_matrix(&dir.join("ppm_q.csv"))?,
            ell: csvio::read_matrix(&dir.join("ell.csv"))?,
            alpha: DVector::from_vec(column("alpha.csv")?),
            v_b: meta.v_b,
            theta_a: meta.theta_a,
            theta_c: meta.theta_c,
            trace_v_b: column("trace_v_b.csv")?,
            iterations: meta.iterations,
            burn_in: meta.burn_in,
            seed: meta.seed,
        })
    }
}

/// `t,value` with values written exactly, so a summary reloads bit for bit.
fn write_response(path: &Path, r: &ResponseFunction) -> Result<()> {
    csvio::write_rows(
        path,
        Some(&["t", "value"]),
        r.times()
            .zip(&r.values)
            .map(|(t, &v)| vec![csvio::fmt_sig(t, 12), csvio::fmt_exact(v)]),
    )
}

fn read_response(path: &Path, dt: f64) -> Result<ResponseFunction> {
    let rows = csvio::read_records(path, true)?;
    if rows.iter().any(|r| r.len() != 2) {
        return Err(Error::parse(path, "expected `t,value` rows"));
    }
    ResponseFunction::new(dt, rows.into_iter().map(|r| r[1]).collect())
}
