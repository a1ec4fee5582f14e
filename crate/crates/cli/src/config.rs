use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use physio_jde::aslmodel::{Paradigm, TruthConfig};
use physio_jde::balloon::PhysioParams;
use physio_jde::eval::SweepConfig;
use physio_jde::sampler::{PriorConfig, SamplerConfig};
use serde::{Deserialize, Serialize};

/// Everything a command needs. An empty file runs the default scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub physio: PhysioBlock,
    pub paradigm: ParadigmBlock,
    pub truth: TruthConfig,
    pub priors: PriorConfig,
    pub sampler: SamplerBlock,
    pub sweep: SweepConfig,
    pub balloon: BalloonBlock,
    pub paths: PathsBlock,
}

/// Physiological parameters. Scanner constants follow `E0` unless set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysioBlock {
    pub eta: f64,
    pub tau_psi: f64,
    pub tau_f: f64,
    pub tau_m: f64,
    pub w_tilde: f64,
    pub e0: f64,
    pub v0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k3: Option<f64>,
}

impl Default for PhysioBlock {
    fn default() -> Self {
        let p = PhysioParams::friston();
        Self {
            eta: p.eta,
            tau_psi: p.tau_psi,
            tau_f: p.tau_f,
            tau_m: p.tau_m,
            w_tilde: p.w_tilde,
            e0: p.e0,
            v0: p.v0,
            k1: None,
            k2: None,
            k3: None,
        }
    }
}

impl PhysioBlock {
    pub fn params(&self) -> PhysioParams {
        let mut p = PhysioParams::at_1_5_tesla(
            self.eta,
            self.tau_psi,
            self.tau_f,
            self.tau_m,
            self.w_tilde,
            self.e0,
            self.v0,
        );
        p.k1 = self.k1.unwrap_or(p.k1);
        p.k2 = self.k2.unwrap_or(p.k2);
        p.k3 = self.k3.unwrap_or(p.k3);
        p
    }
}

/// Paradigm and grids; onsets default to the bundled design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParadigmBlock {
    /// Inline onsets (s), one list per condition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub onsets: Option<Vec<Vec<f64>>>,
    pub tr: f64,
    pub n_scans: usize,
    pub dt: f64,
    pub f: usize,
    pub drift_order: usize,
}

impl Default for ParadigmBlock {
    fn default() -> Self {
        let p = Paradigm::default_scenario();
        Self {
            onsets: None,
            tr: p.tr,
            n_scans: p.n_scans,
            dt: p.dt,
            f: p.f,
            drift_order: p.drift_order,
        }
    }
}

impl ParadigmBlock {
    /// Bundled onsets are kept only up to the last scan.
    pub fn paradigm(&self) -> Paradigm {
        let base = Paradigm::default_scenario();
        let onsets = match &self.onsets {
            Some(o) => o.clone(),
            None => {
                let end = self.n_scans as f64 * self.tr;
                base.onsets
                    .iter()
                    .map(|c| c.iter().copied().filter(|&t| t < end).collect())
                    .collect()
            }
        };
        Paradigm {
            onsets,
            tr: self.tr,
            n_scans: self.n_scans,
            dt: self.dt,
            f: self.f,
            drift_order: self.drift_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerBlock {
    pub iterations: usize,
    pub burn_in: usize,
    /// Start the labels from the dataset's true maps when it carries them.
    pub use_true_labels: bool,
    pub fixed_labels: bool,
    pub log_every: usize,
}

impl Default for SamplerBlock {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            iterations: s.iterations,
            burn_in: s.burn_in,
            use_true_labels: false,
            fixed_labels: false,
            log_every: 0,
        }
    }
}

/// One-parameter sensitivity curves for `simulate-balloon`, e.g.
/// `sweeps = { tau_m = [1.0, 2.0] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalloonBlock {
    pub step: f64,
    pub sweeps: BTreeMap<String, Vec<f64>>,
}

impl Default for BalloonBlock {
    fn default() -> Self {
        Self {
            step: physio_jde::balloon::DEFAULT_STEP,
            sweeps: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsBlock {
    /// Dataset directory read by `fit`, `residuals` and `compare`.
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for PathsBlock {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.physio.params().validate().map_err(|e| e.to_string())?;
        self.paradigm.paradigm().validate().map_err(|e| e.to_string())?;
        self.priors.validate().map_err(|e| e.to_string())?;
        if self.sampler.iterations == 0 || self.sampler.burn_in >= self.sampler.iterations {
            return Err(format!(
                "sampler: need 0 <= burn_in < iterations, got {} and {}",
                self.sampler.burn_in, self.sampler.iterations
            ));
        }
        if !(self.balloon.step > 0.0) {
            return Err(format!("balloon.step must be positive, got {}", self.balloon.step));
        }
        let base = self.physio.params();
        for (name, values) in &self.balloon.sweeps {
            for &v in values {
                base.with_param(name, v)
                    .and_then(|p| p.validate())
                    .map_err(|e| format!("balloon.sweeps: {e}"))?;
            }
        }
        if self.sweep.noise_vars.iter().any(|v| !(*v > 0.0)) {
            return Err("sweep.noise_vars must be positive".into());
        }
        if self.truth.grid.area() == 0 {
            return Err("truth.grid must have at least one voxel".into());
        }
        Ok(())
    }

    pub fn sampler_config(&self, labels: Option<Vec<Vec<bool>>>) -> SamplerConfig {
        SamplerConfig {
            iterations: self.sampler.iterations,
            burn_in: self.sampler.burn_in,
            physio: self.physio.params(),
            initial_labels: labels,
            fixed_labels: self.sampler.fixed_labels,
            log_every: self.sampler.log_every,
        }
    }
}
