use nalgebra::{DMatrix, DVector};

use super::chain::{Chain, Model};
use super::{LatentState, MixtureParams, PosteriorSummary, PriorConfig, SamplerConfig, Variant};
use crate::aslmodel::ParcelDataset;
use crate::balloon::{generate_responses, ResponseFunction};
use crate::error::{Error, Result};
use crate::linop::{build_omega, OmegaOperator};

/// Runs the requested variant.
pub fn fit(
    ds: &ParcelDataset,
    variant: Variant,
    cfg: &SamplerConfig,
    priors: &PriorConfig,
    seed: u64,
) -> Result<PosteriorSummary> {
    match variant {
        Variant::Basic | Variant::Physio1Step => fit_joint(ds, variant, cfg, priors, seed),
        Variant::Physio2Step => fit_physio_2step(ds, cfg, priors, seed),
    }
}

fn initial_shapes(ds: &ParcelDataset, cfg: &SamplerConfig) -> Result<(DVector<f64>, OmegaOperator)> {
    let (dt, f) = (ds.paradigm.dt, ds.paradigm.f);
    let (h, _) = generate_responses(&cfg.physio, dt, f)?;
    let norm = h.norm();
    if norm == 0.0 {
        return Err(Error::InvalidParameter(
            "initial BRF is identically zero".into(),
        ));
    }
    let h0 = DVector::from_column_slice(h.interior()) / norm;
    let omega = build_omega(&cfg.physio, dt, f)?;
    Ok((h0, omega))
}

fn check_config(cfg: &SamplerConfig) -> Result<()> {
    if cfg.iterations == 0 || cfg.burn_in >= cfg.iterations {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= burn_in < iterations, got burn_in = {} and iterations = {}",
            cfg.burn_in, cfg.iterations
        )));
    }
    Ok(())
}

/// `basic` or `physio-1step`: every term sampled jointly.
pub fn fit_joint(
    ds: &ParcelDataset,
    variant: Variant,
    cfg: &SamplerConfig,
    priors: &PriorConfig,
    seed: u64,
) -> Result<PosteriorSummary> {
    check_config(cfg)?;
    let (h0, omega) = initial_shapes(ds, cfg)?;
    let model = Model::joint(ds, variant, priors, Some(&omega))?.with_fixed_labels(cfg.fixed_labels);
    let mut g0 = omega.apply_interior(&h0);
    if variant == Variant::Basic {
        let n = g0.norm();
        if n > 0.0 {
            g0 /= n;
        }
    }
    let state = model.initial_state(h0, g0, cfg.initial_labels.as_deref())?;
    run_chain(&model, state, variant, cfg, seed)
}

/// Hemodynamic pass of the two-step fit: BOLD, drift and optionally the
/// perfusion baseline.
pub fn fit_m1(
    ds: &ParcelDataset,
    cfg: &SamplerConfig,
    priors: &PriorConfig,
    seed: u64,
) -> Result<PosteriorSummary> {
    check_config(cfg)?;
    let (h0, _) = initial_shapes(ds, cfg)?;
    let model = Model::hemodynamic(ds, priors)?.with_fixed_labels(cfg.fixed_labels);
    let g0 = DVector::zeros(h0.len());
    let state = model.initial_state(h0, g0, cfg.initial_labels.as_deref())?;
    run_chain(&model, state, Variant::Physio2Step, cfg, seed)
}

/// `y − Σ_m â_m X_m ĥ − P ℓ̂`, minus `α̂ w` when the hemodynamic pass kept
/// the baseline term.
pub fn compute_residuals(
    ds: &ParcelDataset,
    m1: &PosteriorSummary,
    priors: &PriorConfig,
) -> Result<DMatrix<f64>> {
    let f = ds.paradigm.f;
    if m1.h.order() != f {
        return Err(Error::GridMismatch(format!(
            "BRF has order {}, design expects {f}",
            m1.h.order()
        )));
    }
    let (j, m_count) = (ds.n_voxels(), ds.paradigm.n_conditions());
    if m1.a.shape() != (j, m_count) || m1.ell.shape() != (ds.design.p.ncols(), j) {
        return Err(Error::DimensionMismatch(
            "hemodynamic estimates do not match the dataset".into(),
        ));
    }
    let h = DVector::from_column_slice(&m1.h.values);
    let mut r = ds.y.clone();
    for (m, x) in ds.design.x.iter().enumerate() {
        let bold = x * &h;
        r -= bold * m1.a.column(m).transpose();
    }
    r -= &ds.design.p * &m1.ell;
    if priors.m1_keep_baseline {
        r -= &ds.design.w * m1.alpha.transpose();
    }
    Ok(r)
}

/// Perfusion pass on residual series with `g ~ N(Ω ĥ, v_g Σ_g)`.
pub fn fit_m2(
    residuals: &ParcelDataset,
    h_hat: &ResponseFunction,
    omega: &OmegaOperator,
    cfg: &SamplerConfig,
    priors: &PriorConfig,
    seed: u64,
) -> Result<PosteriorSummary> {
    check_config(cfg)?;
    let prior_mean = omega.apply(h_hat)?;
    let g0 = DVector::from_column_slice(prior_mean.interior());
    let h0 = DVector::from_column_slice(h_hat.interior());
    let model = Model::perfusion(residuals, g0.clone(), priors)?.with_fixed_labels(cfg.fixed_labels);
    let state = model.initial_state(h0, g0, cfg.initial_labels.as_deref())?;
    let mut out = run_chain(&model, state, Variant::Physio2Step, cfg, seed)?;
    out.h = h_hat.clone();
    Ok(out)
}

/// Seed of the perfusion pass, derived from the run seed.
fn m2_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Hemodynamic pass, residuals, then perfusion pass. BRF, BOLD levels,
/// drift and activation probabilities come from the first pass; PRF,
/// perfusion levels and baselines from the second.
pub fn fit_physio_2step(
    ds: &ParcelDataset,
    cfg: &SamplerConfig,
    priors: &PriorConfig,
    seed: u64,
) -> Result<PosteriorSummary> {
    let m1 = fit_m1(ds, cfg, priors, seed)?;
    let r = compute_residuals(ds, &m1, priors)?;
    let omega = build_omega(&cfg.physio, ds.paradigm.dt, ds.paradigm.f)?;
    let m2 = fit_m2(&ds.with_signal(r)?, &m1.h, &omega, cfg, priors, m2_seed(seed))?;
    Ok(PosteriorSummary {
        method: Variant::Physio2Step,
        g: m2.g,
        c: m2.c,
        alpha: m2.alpha,
        theta_c: m2.theta_c,
        v_b: m2.v_b,
        trace_v_b: m2.trace_v_b,
        ..m1
    })
}

struct Accumulator {
    count: f64,
    h: DVector<f64>,
    g: DVector<f64>,
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    ppm: DMatrix<f64>,
    ell: DMatrix<f64>,
    alpha: DVector<f64>,
    v_b: f64,
    theta_a: Vec<MixtureParams>,
    theta_c: Vec<MixtureParams>,
}

fn add_theta(acc: &mut [MixtureParams], x: &[MixtureParams]) {
    for (t, s) in acc.iter_mut().zip(x) {
        for i in 0..2 {
            t.mean[i] += s.mean[i];
            t.var[i] += s.var[i];
        }
    }
}

fn scale_theta(acc: &mut [MixtureParams], k: f64) {
    for t in acc {
        for i in 0..2 {
            t.mean[i] *= k;
            t.var[i] *= k;
        }
    }
}

impl Accumulator {
    fn new(s: &LatentState) -> Self {
        let zero_theta = MixtureParams {
            mean: [0.0; 2],
            var: [0.0; 2],
        };
        Self {
            count: 0.0,
            h: DVector::zeros(s.h.len()),
            g: DVector::zeros(s.g.len()),
            a: DMatrix::zeros(s.a.nrows(), s.a.ncols()),
            c: DMatrix::zeros(s.c.nrows(), s.c.ncols()),
            ppm: DMatrix::zeros(s.a.nrows(), s.a.ncols()),
            ell: DMatrix::zeros(s.ell.nrows(), s.ell.ncols()),
            alpha: DVector::zeros(s.alpha.len()),
            v_b: 0.0,
            theta_a: vec![zero_theta; s.theta_a.len()],
            theta_c: vec![zero_theta; s.theta_c.len()],
        }
    }

    fn add(&mut self, s: &LatentState) {
        self.count += 1.0;
        self.h += &s.h;
        self.g += &s.g;
        self.a += &s.a;
        self.c += &s.c;
        for (m, labels) in s.q.iter().enumerate() {
            for (j, &l) in labels.iter().enumerate() {
                if l {
                    self.ppm[(j, m)] += 1.0;
                }
            }
        }
        self.ell += &s.ell;
        self.alpha += &s.alpha;
        self.v_b += s.v_b;
        add_theta(&mut self.theta_a, &s.theta_a);
        add_theta(&mut self.theta_c, &s.theta_c);
    }
}

fn run_chain(
    model: &Model,
    state: LatentState,
    method: Variant,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<PosteriorSummary> {
    let dt = model.dt();
    let mut chain = Chain::new(model, state, seed)?;
    let mut acc = Accumulator::new(chain.state());
    let mut trace_v_b = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        chain.sweep()?;
        let s = chain.state();
        trace_v_b.push(s.v_b);
        if it >= cfg.burn_in {
            acc.add(s);
        }
        if cfg.log_every > 0 && (it + 1) % cfg.log_every == 0 {
            eprintln!("[{method}] sweep {}/{}: v_b = {:.4}", it + 1, cfg.iterations, s.v_b);
        }
    }
    let k = 1.0 / acc.count;
    scale_theta(&mut acc.theta_a, k);
    scale_theta(&mut acc.theta_c, k);
    Ok(PosteriorSummary {
        method,
        h: ResponseFunction::from_interior(dt, (acc.h * k).as_slice()),
        g: ResponseFunction::from_interior(dt, (acc.g * k).as_slice()),
        a: acc.a * k,
        c: acc.c * k,
        ppm: acc.ppm * k,
        ell: acc.ell * k,
        alpha: acc.alpha * k,
        v_b: acc.v_b * k,
        theta_a: acc.theta_a,
        theta_c: acc.theta_c,
        trace_v_b,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        seed,
    })
}
