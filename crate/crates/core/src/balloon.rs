//! Extended balloon model: neuronal drive to flow, volume and
//! deoxyhemoglobin, and the BOLD signal built on top of them.
//!
//! ```text
//! ψ'   = η u(t) − ψ/τψ − (f_in − 1)/τf
//! f_in' = ψ
//! ν'   = (f_in − ν^{1/w̃}) / τm
//! ξ'   = (f_in (1 − (1 − E0)^{1/f_in}) / E0 − ξ ν^{1/w̃ − 1}) / τm
//! ```
//!
//! integrated from rest `{ψ = 0, f_in = ν = ξ = 1}` with classical RK4.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};

/// Default integration step (s).
pub const DEFAULT_STEP: f64 = 0.05;

/// Hemodynamic, neuro-coupling and scanner constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysioParams {
    /// Neuronal efficacy.
    pub eta: f64,
    /// Flow-inducing signal decay time constant (s).
    pub tau_psi: f64,
    /// Auto-regulatory feedback time constant (s).
    pub tau_f: f64,
    /// Mean transit time (s).
    pub tau_m: f64,
    /// Windkessel (Grubb) exponent.
    pub w_tilde: f64,
    /// Resting oxygen extraction fraction.
    pub e0: f64,
    /// Resting blood volume fraction.
    pub v0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl Default for PhysioParams {
    fn default() -> Self {
        Self::friston()
    }
}

impl PhysioParams {
    /// Friston et al. (2000) values with the 1.5T scanner constants.
    pub fn friston() -> Self {
        Self::at_1_5_tesla(0.5, 1.25, 2.5, 1.0, 0.2, 0.8, 0.02)
    }

    /// Builds parameters with `k1 = 7 E0`, `k2 = 2`, `k3 = 2 E0 − 0.2`.
    pub fn at_1_5_tesla(
        eta: f64,
        tau_psi: f64,
        tau_f: f64,
        tau_m: f64,
        w_tilde: f64,
        e0: f64,
        v0: f64,
    ) -> Self {
        let (k1, k2, k3) = scanner_constants_1_5t(e0);
        Self {
            eta,
            tau_psi,
            tau_f,
            tau_m,
            w_tilde,
            e0,
            v0,
            k1,
            k2,
            k3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        for (name, v) in [
            ("tau_psi", self.tau_psi),
            ("tau_f", self.tau_f),
            ("tau_m", self.tau_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if !(self.e0 > 0.0 && self.e0 < 1.0) {
            return bad(format!("E0 must lie in (0, 1), got {}", self.e0));
        }
        if !(self.w_tilde > 0.0 && self.w_tilde <= 1.0) {
            return bad(format!("w_tilde must lie in (0, 1], got {}", self.w_tilde));
        }
        if !(self.v0 > 0.0 && self.v0 < 1.0) {
            return bad(format!("V0 must lie in (0, 1), got {}", self.v0));
        }
        if ![self.eta, self.k1, self.k2, self.k3].iter().all(|v| v.is_finite()) {
            return bad("eta and k1..k3 must be finite".into());
        }
        Ok(())
    }

    /// Returns a copy with one named parameter replaced. Changing `e0`
    /// re-derives the 1.5T scanner constants.
    pub fn with_param(mut self, name: &str, value: f64) -> Result<Self> {
        match name {
            "eta" => self.eta = value,
            "tau_psi" => self.tau_psi = value,
            "tau_f" => self.tau_f = value,
            "tau_m" => self.tau_m = value,
            "w_tilde" => self.w_tilde = value,
            "e0" | "E0" => {
                self.e0 = value;
                (self.k1, self.k2, self.k3) = scanner_constants_1_5t(value);
            }
            "v0" | "V0" => self.v0 = value,
            "k1" => self.k1 = value,
            "k2" => self.k2 = value,
            "k3" => self.k3 = value,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown physiological parameter {name:?}"
                )))
            }
        }
        Ok(self)
    }
}

fn scanner_constants_1_5t(e0: f64) -> (f64, f64, f64) {
    (7.0 * e0, 2.0, 2.0 * e0 - 0.2)
}

/// Balloon state `(ψ, f_in, ν, ξ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalloonState {
    pub psi: f64,
    pub f_in: f64,
    pub nu: f64,
    pub xi: f64,
}

impl BalloonState {
    pub const REST: BalloonState = BalloonState {
        psi: 0.0,
        f_in: 1.0,
        nu: 1.0,
        xi: 1.0,
    };

    fn to_array(self) -> [f64; 4] {
        [self.psi, self.f_in, self.nu, self.xi]
    }

    fn from_array(s: [f64; 4]) -> Self {
        Self {
            psi: s[0],
            f_in: s[1],
            nu: s[2],
            xi: s[3],
        }
    }
}

/// Sampled solution of the balloon system on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    pub psi: Vec<f64>,
    pub f_in: Vec<f64>,
    pub nu: Vec<f64>,
    pub xi: Vec<f64>,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            psi: Vec::with_capacity(n),
            f_in: Vec::with_capacity(n),
            nu: Vec::with_capacity(n),
            xi: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, t: f64, s: BalloonState) {
        self.times.push(t);
        self.psi.push(s.psi);
        self.f_in.push(s.f_in);
        self.nu.push(s.nu);
        self.xi.push(s.xi);
    }
}

/// A response curve (BRF or PRF) sampled every `dt` seconds, `F + 1` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFunction {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl ResponseFunction {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidGrid("a response needs at least two samples".into()));
        }
        Ok(Self { dt, values })
    }

    pub fn zeros(dt: f64, f: usize) -> Self {
        Self {
            dt,
            values: vec![0.0; f + 1],
        }
    }

    /// Builds a response with both endpoints pinned to zero.
    pub fn from_interior(dt: f64, interior: &[f64]) -> Self {
        let mut values = Vec::with_capacity(interior.len() + 2);
        values.push(0.0);
        values.extend_from_slice(interior);
        values.push(0.0);
        Self { dt, values }
    }

    /// `F`, the index of the last sample.
    pub fn order(&self) -> usize {
        self.values.len() - 1
    }

    pub fn interior(&self) -> &[f64] {
        &self.values[1..self.values.len() - 1]
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| i as f64 * self.dt)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Time of the largest sample.
    pub fn time_to_peak(&self) -> f64 {
        let (idx, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            });
        idx as f64 * self.dt
    }

    /// Index of the largest-magnitude sample.
    pub fn main_lobe_index(&self) -> usize {
        argmax_abs(&self.values)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dt: self.dt,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// `t,value` CSV, 12 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        csvio::write_rows(
            path,
            Some(&["t", "value"]),
            self.times()
                .zip(&self.values)
                .map(|(t, &v)| vec![csvio::fmt_sig(t, 12), csvio::fmt_sig(v, 12)]),
        )
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows = csvio::read_records(path, true)?;
        if rows.len() < 2 || rows.iter().any(|r| r.len() != 2) {
            return Err(Error::parse(path, "expected `t,value` rows"));
        }
        let dt = rows[1][0] - rows[0][0];
        Self::new(dt, rows.into_iter().map(|r| r[1]).collect())
    }
}

pub(crate) fn argmax_abs(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, -1.0), |best, (i, &x)| {
            if x.abs() > best.1 {
                (i, x.abs())
            } else {
                best
            }
        })
        .0
}

fn derivative(p: &PhysioParams, u: f64, s: [f64; 4]) -> [f64; 4] {
    let [psi, f, nu, xi] = s;
    let inv_w = 1.0 / p.w_tilde;
    let extraction = f * (1.0 - (1.0 - p.e0).powf(1.0 / f)) / p.e0;
    [
        p.eta * u - psi / p.tau_psi - (f - 1.0) / p.tau_f,
        psi,
        (f - nu.powf(inv_w)) / p.tau_m,
        (extraction - xi * nu.powf(inv_w - 1.0)) / p.tau_m,
    ]
}

fn axpy(s: [f64; 4], a: f64, k: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| s[i] + a * k[i])
}

/// Integrates the balloon system from rest; `stimulus` holds u(t) on the
/// integration grid (`round(duration / step) + 1` samples).
pub fn integrate_balloon(
    params: &PhysioParams,
    stimulus: &[f64],
    duration: f64,
    step: f64,
) -> Result<StateTrajectory> {
    integrate_balloon_from(params, BalloonState::REST, stimulus, duration, step)
}

/// Same as [`integrate_balloon`] from an arbitrary initial state.
pub fn integrate_balloon_from(
    params: &PhysioParams,
    initial: BalloonState,
    stimulus: &[f64],
    duration: f64,
    step: f64,
) -> Result<StateTrajectory> {
    params.validate()?;
    let n_steps = grid_steps(duration, step)?;
    if stimulus.len() != n_steps + 1 {
        return Err(Error::InvalidGrid(format!(
            "stimulus has {} samples, grid needs {}",
            stimulus.len(),
            n_steps + 1
        )));
    }
    let mut traj = StateTrajectory::with_capacity(n_steps + 1);
    let mut s = initial.to_array();
    traj.push(0.0, initial);
    for i in 0..n_steps {
        let t = i as f64 * step;
        let (u0, u1) = (stimulus[i], stimulus[i + 1]);
        let u_mid = 0.5 * (u0 + u1);
        let k1 = derivative(params, u0, s);
        let s2 = axpy(s, 0.5 * step, k1);
        check_volume(s2[2], t + 0.5 * step)?;
        let k2 = derivative(params, u_mid, s2);
        let s3 = axpy(s, 0.5 * step, k2);
        check_volume(s3[2], t + 0.5 * step)?;
        let k3 = derivative(params, u_mid, s3);
        let s4 = axpy(s, step, k3);
        check_volume(s4[2], t + step)?;
        let k4 = derivative(params, u1, s4);
        s = std::array::from_fn(|c| {
            s[c] + step / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
        });
        check_volume(s[2], t + step)?;
        traj.push((i + 1) as f64 * step, BalloonState::from_array(s));
    }
    Ok(traj)
}

fn grid_steps(duration: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
    }
    if !(duration >= step) || !duration.is_finite() {
        return Err(Error::InvalidGrid(format!(
            "duration {duration} must be at least one step ({step})"
        )));
    }
    let n = (duration / step).round();
    if (n * step - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "duration {duration} is not a multiple of the step {step}"
        )));
    }
    Ok(n as usize)
}

fn check_volume(nu: f64, time: f64) -> Result<()> {
    if nu > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveVolume { time, value: nu })
    }
}

/// BOLD signal change on the trajectory's own grid.
pub fn bold_signal(traj: &StateTrajectory, params: &PhysioParams) -> Result<Vec<f64>> {
    traj.xi
        .iter()
        .zip(&traj.nu)
        .enumerate()
        .map(|(i, (&xi, &nu))| {
            if nu == 0.0 {
                return Err(Error::DivisionByZero { index: i });
            }
            Ok(params.v0
                * (params.k1 * (1.0 - xi) + params.k2 * (1.0 - xi / nu) + params.k3 * (1.0 - nu)))
        })
        .collect()
}

/// BOLD response resampled onto `f + 1` points spaced by `dt`.
pub fn bold_from_states(
    traj: &StateTrajectory,
    params: &PhysioParams,
    dt: f64,
    f: usize,
) -> Result<ResponseFunction> {
    let h = bold_signal(traj, params)?;
    ResponseFunction::new(dt, resample(&traj.times, &h, dt, f + 1)?)
}

/// Linear interpolation of `(times, values)` onto `len` points spaced by `dt`.
pub fn resample(times: &[f64], values: &[f64], dt: f64, len: usize) -> Result<Vec<f64>> {
    let t_end = *times.last().ok_or_else(|| Error::InvalidGrid("empty series".into()))?;
    let needed = (len - 1) as f64 * dt;
    if needed > t_end * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::InvalidGrid(format!(
            "series ends at {t_end} s, resampling needs {needed} s"
        )));
    }
    let step = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    Ok((0..len)
        .map(|i| {
            let t = i as f64 * dt;
            let pos = t / step;
            let k = (pos.floor() as usize).min(times.len() - 1);
            if k + 1 >= times.len() {
                return values[times.len() - 1];
            }
            let frac = (t - times[k]) / step;
            values[k] + frac * (values[k + 1] - values[k])
        })
        .collect())
}

/// Impulse responses `(h, g)` on `f + 1` samples of period `dt`, with the
/// default integration step.
pub fn generate_responses(
    params: &PhysioParams,
    dt: f64,
    f: usize,
) -> Result<(ResponseFunction, ResponseFunction)> {
    generate_responses_with_step(params, dt, f, DEFAULT_STEP)
}

/// Impulse responses with integration step at most `max_step`.
///
/// The impulse is the jump `ψ(0+) = η` with no input afterwards. The step is
/// shrunk so that it divides the support `f · dt` exactly.
pub fn generate_responses_with_step(
    params: &PhysioParams,
    dt: f64,
    f: usize,
    max_step: f64,
) -> Result<(ResponseFunction, ResponseFunction)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
    }
    if f < 2 {
        return Err(Error::InvalidGrid(format!("F must be at least 2, got {f}")));
    }
    let duration = f as f64 * dt;
    let n = (duration / max_step).ceil().max(1.0) as usize;
    let step = duration / n as f64;
    let initial = BalloonState {
        psi: params.eta,
        ..BalloonState::REST
    };
    let traj = integrate_balloon_from(params, initial, &vec![0.0; n + 1], duration, step)?;
    let brf = bold_from_states(&traj, params, dt, f)?;
    let flow: Vec<f64> = traj.f_in.iter().map(|v| v - 1.0).collect();
    let prf = ResponseFunction::new(dt, resample(&traj.times, &flow, dt, f + 1)?)?;
    Ok((brf, prf))
}
