//! Gibbs inference for the joint detection-estimation model.
//!
//! Three fits are provided:
//!
//! * `basic`: `h ~ N(0, v_h Σ_h)`, `g ~ N(0, v_g Σ_g)`, everything sampled jointly;
//! * `physio-1step`: same model with `g | h ~ N(Ω h, v_g Σ_g)`;
//! * `physio-2step`: a hemodynamic pass on the BOLD and drift terms only,
//!   then a perfusion pass on its residuals with `g ~ N(Ω ĥ, v_g I)`.
//!
//! Every full conditional is Gaussian, inverse-gamma or Bernoulli. Labels and
//! response levels of one voxel and condition are drawn as a block: the label
//! from its conditional with the levels integrated out, then the levels given
//! the label.

mod chain;
mod fit;
mod summary;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aslmodel::Gaussian;
use crate::balloon::PhysioParams;

pub use chain::{Chain, Model, ResponseKind};
pub use fit::{compute_residuals, fit, fit_joint, fit_m1, fit_m2, fit_physio_2step};
pub use summary::PosteriorSummary;

/// Noise variance above which a chain is declared diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Smallest variance a draw may take.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Basic,
    #[serde(rename = "physio-1step")]
    Physio1Step,
    #[serde(rename = "physio-2step")]
    Physio2Step,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Basic, Variant::Physio1Step, Variant::Physio2Step];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Basic => "basic",
            Variant::Physio1Step => "physio-1step",
            Variant::Physio2Step => "physio-2step",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "basic" => Ok(Variant::Basic),
            "physio-1step" => Ok(Variant::Physio1Step),
            "physio-2step" => Ok(Variant::Physio2Step),
            _ => Err(format!(
                "unknown method {s:?} (expected basic, physio-1step or physio-2step)"
            )),
        }
    }
}

/// Inverse-gamma law, `IG(shape, scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

/// Prior settings shared by all variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Scale of the BRF prior covariance.
    pub v_h: f64,
    /// Scale of the PRF prior covariance.
    pub v_g: f64,
    /// Ising coupling between 4-neighbours.
    pub ising_beta: f64,
    /// Hyperprior of the active-class mean (inactive means are fixed at 0).
    pub active_mean: Gaussian,
    /// Hyperprior of every class variance.
    pub class_var: InvGamma,
    /// Keep the `α_j w` term in the hemodynamic pass instead of leaving it
    /// in the residuals.
    pub m1_keep_baseline: bool,
    /// Use `Σ_g = I` in the perfusion pass; the smoothness covariance otherwise.
    pub m2_identity_cov: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            v_h: 0.1,
            v_g: 0.1,
            ising_beta: 0.7,
            active_mean: Gaussian::new(1.0, 10.0),
            class_var: InvGamma {
                shape: 2.1,
                scale: 0.5,
            },
            m1_keep_baseline: false,
            m2_identity_cov: true,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.v_h > 0.0
            && self.v_g > 0.0
            && self.ising_beta >= 0.0
            && self.active_mean.var > 0.0
            && self.class_var.shape > 0.0
            && self.class_var.scale >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidParameter(format!(
                "invalid prior configuration: {self:?}"
            )))
        }
    }
}

/// Chain length and initialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Parameters of the initial BRF and of `Ω`.
    pub physio: PhysioParams,
    /// Known activation labels `[m][j]`; used as the starting point.
    #[serde(skip)]
    pub initial_labels: Option<Vec<Vec<bool>>>,
    /// Hold the labels at their initial values.
    pub fixed_labels: bool,
    /// Print a progress line every this many sweeps (0 disables).
    pub log_every: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            burn_in: 300,
            physio: PhysioParams::friston(),
            initial_labels: None,
            fixed_labels: false,
            log_every: 0,
        }
    }
}

/// Two-class Gaussian mixture; index 0 is the inactive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub mean: [f64; 2],
    pub var: [f64; 2],
}

impl MixtureParams {
    pub fn class(&self, active: bool) -> (f64, f64) {
        let i = usize::from(active);
        (self.mean[i], self.var[i])
    }
}

/// Every unknown of the model. Responses are stored on their `F − 1`
/// interior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub h: DVector<f64>,
    pub g: DVector<f64>,
    /// `J × M`.
    pub a: DMatrix<f64>,
    /// `J × M`.
    pub c: DMatrix<f64>,
    /// `[m][j]`.
    pub q: Vec<Vec<bool>>,
    /// `O × J`.
    pub ell: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub v_b: f64,
    pub v_ell: f64,
    pub v_alpha: f64,
    pub theta_a: Vec<MixtureParams>,
    pub theta_c: Vec<MixtureParams>,
}
