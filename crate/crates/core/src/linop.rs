//! Discrete operators on the `F − 1` interior samples of a response, and the
//! linearized flow-to-BOLD link `g = Ω h`.
//!
//! Linearizing the balloon system around rest gives
//!
//! ```text
//! (D + I/(w̃ τm)) (1 − ν) = −g / τm
//! (D + I/τm)     (1 − ξ) = −(γ I − (1 − w̃)/(w̃ τm²) A) g
//! h = V0 [(k1 + k2)(1 − ξ) + (k3 − k2)(1 − ν)]
//! ```
//!
//! so that `h = Ω⁻¹ g` with `Ω⁻¹ = V0 [−(k1+k2) γ B + (k1+k2) (1−w̃)/(w̃τm²) B A − (k3−k2)/τm A]`,
//! `A = (D + I/(w̃τm))⁻¹` and `B = (D + I/τm)⁻¹`.
//!
//! The flow-to-BOLD transfer function has a zero in the right half plane
//! (the initial dip). A causal first difference turns that zero into an
//! exponentially growing mode of `Ω`, so `D` is the central difference.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::balloon::{PhysioParams, ResponseFunction};
use crate::csvio;
use crate::error::{Error, Result};

/// Condition number above which the bracketed operator is declared singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Central first difference on the interior samples; the pinned zero
/// endpoints drop out of the first and last rows.
#[derive(Debug, Clone)]
pub struct FirstDiffOperator {
    pub matrix: DMatrix<f64>,
    pub dt: f64,
}

impl FirstDiffOperator {
    pub fn new(dt: f64, f: usize) -> Result<Self> {
        check_grid(dt, f, 2)?;
        let n = f - 1;
        let c = 0.5 / dt;
        let matrix = DMatrix::from_fn(n, n, |i, j| {
            if j == i + 1 {
                c
            } else if i == j + 1 {
                -c
            } else {
                0.0
            }
        });
        Ok(Self { matrix, dt })
    }

    /// `(D + shift·I)⁻¹`.
    pub fn resolvent(&self, shift: f64) -> Result<DMatrix<f64>> {
        let n = self.matrix.nrows();
        let m = &self.matrix + DMatrix::identity(n, n) * shift;
        m.try_inverse().ok_or(Error::SingularOperator(f64::INFINITY))
    }
}

/// Second-order smoothness prior on the interior samples.
#[derive(Debug, Clone)]
pub struct SmoothnessPrior {
    /// Truncated `[1, −2, 1] / Δt²` stencil matrix.
    pub d2: DMatrix<f64>,
    /// `Δt⁴ (D2ᵀ D2)⁻¹`.
    pub sigma: DMatrix<f64>,
    /// `D2ᵀ D2 / Δt⁴`, the inverse of `sigma`.
    pub precision: DMatrix<f64>,
}

impl SmoothnessPrior {
    pub fn new(dt: f64, f: usize) -> Result<Self> {
        check_grid(dt, f, 2)?;
        let n = f - 1;
        let s = 1.0 / (dt * dt);
        let d2 = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -2.0 * s
            } else if i.abs_diff(j) == 1 {
                s
            } else {
                0.0
            }
        });
        let precision = d2.transpose() * &d2 / dt.powi(4);
        let sigma = precision
            .clone()
            .cholesky()
            .ok_or(Error::SingularPrecision)?
            .inverse();
        Ok(Self {
            d2,
            sigma,
            precision,
        })
    }
}

/// `γ = (1 + (1 − E0) ln(1 − E0) / E0) / τm`.
pub fn gamma(params: &PhysioParams) -> f64 {
    let e0 = params.e0;
    (1.0 + (1.0 - e0) * (1.0 - e0).ln() / e0) / params.tau_m
}

/// The operator `Ω` mapping a BRF onto the PRF, with its factors.
#[derive(Debug, Clone)]
pub struct OmegaOperator {
    pub dt: f64,
    pub f: usize,
    pub gamma: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub omega_inv: DMatrix<f64>,
    /// 2-norm condition number of `Ω`.
    pub condition: f64,
}

pub fn build_omega(params: &PhysioParams, dt: f64, f: usize) -> Result<OmegaOperator> {
    params.validate()?;
    check_grid(dt, f, 3)?;
    let d = FirstDiffOperator::new(dt, f)?;
    let tm = params.tau_m;
    let w = params.w_tilde;
    let a = d.resolvent(1.0 / (w * tm))?;
    let b = d.resolvent(1.0 / tm)?;
    let gamma = gamma(params);
    let k12 = params.k1 + params.k2;
    let bracket = &b * (-k12 * gamma) + (&b * &a) * (k12 * (1.0 - w) / (w * tm * tm))
        - &a * ((params.k3 - params.k2) / tm);
    let sv = bracket.singular_values();
    let condition = sv.max() / sv.min();
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularOperator(condition));
    }
    let omega_inv = bracket * params.v0;
    let omega = omega_inv
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularOperator(condition))?;
    Ok(OmegaOperator {
        dt,
        f,
        gamma,
        a,
        b,
        omega,
        omega_inv,
        condition,
    })
}

impl OmegaOperator {
    pub fn apply(&self, h: &ResponseFunction) -> Result<ResponseFunction> {
        self.map(&self.omega, h)
    }

    pub fn apply_inverse(&self, g: &ResponseFunction) -> Result<ResponseFunction> {
        self.map(&self.omega_inv, g)
    }

    /// `Ω x` on interior vectors.
    pub fn apply_interior(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.omega * x
    }

    fn map(&self, m: &DMatrix<f64>, r: &ResponseFunction) -> Result<ResponseFunction> {
        if r.order() != self.f || (r.dt - self.dt).abs() > 1e-9 * self.dt {
            return Err(Error::GridMismatch(format!(
                "operator expects F = {} at dt = {}, got F = {} at dt = {}",
                self.f,
                self.dt,
                r.order(),
                r.dt
            )));
        }
        let x = DVector::from_column_slice(r.interior());
        Ok(ResponseFunction::from_interior(self.dt, (m * x).as_slice()))
    }

    /// Row-major CSV dump of `Ω`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        csvio::write_rows(
            path,
            None,
            self.omega
                .row_iter()
                .map(|r| r.iter().map(|&v| csvio::fmt_sig(v, 12)).collect::<Vec<_>>()),
        )
    }
}

fn check_grid(dt: f64, f: usize, min_f: usize) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
    }
    if f < min_f {
        return Err(Error::InvalidGrid(format!("F must be at least {min_f}, got {f}")));
    }
    Ok(())
}
