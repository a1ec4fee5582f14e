//! Closed-form and enumerated oracles for every Gibbs full conditional,
//! evaluated on tiny instances. Shared by the conditional tests and the
//! acceptance target.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use physio_jde::aslmodel::{simulate_dataset, Grid, Paradigm, ParcelDataset, TruthConfig};
use physio_jde::balloon::PhysioParams;
use physio_jde::linop::{build_omega, OmegaOperator};
use physio_jde::sampler::{
    Chain, LatentState, MixtureParams, Model, PriorConfig, ResponseKind, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const DRAWS: usize = 20_000;
/// Monte-Carlo bound, in standard errors.
pub const SIGMAS: f64 = 3.0;
/// Agreement required between a library closed form and its oracle.
pub const CLOSED_FORM_TOL: f64 = 1e-8;

pub struct Item {
    pub label: String,
    pub value: f64,
    pub limit: f64,
}

pub struct Check {
    pub name: String,
    pub items: Vec<Item>,
}

impl Check {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            items: Vec::new(),
        }
    }

    fn push(&mut self, label: impl Into<String>, value: f64, limit: f64) {
        self.items.push(Item {
            label: label.into(),
            value,
            limit,
        });
    }

    fn z(&mut self, label: impl Into<String>, z: f64) {
        self.push(label, z.abs(), SIGMAS);
    }

    pub fn pass(&self) -> bool {
        self.items.iter().all(|i| i.value <= i.limit)
    }

    pub fn report(&self) -> String {
        let worst = self
            .items
            .iter()
            .max_by(|a, b| (a.value / a.limit).total_cmp(&(b.value / b.limit)))
            .expect("check has items");
        format!(
            "{}: {} statistics, worst {} = {:.3e} (limit {:.1e})",
            self.name,
            self.items.len(),
            worst.label,
            worst.value,
            worst.limit
        )
    }

    pub fn assert(&self) {
        let failed: Vec<String> = self
            .items
            .iter()
            .filter(|i| i.value > i.limit)
            .map(|i| format!("{} = {:.3e} > {:.1e}", i.label, i.value, i.limit))
            .collect();
        assert!(failed.is_empty(), "{}: {}", self.name, failed.join("; "));
    }
}

// ---------------------------------------------------------------- statistics

/// Normal equivalent of a `χ²_k` statistic (Wilson–Hilferty), so that one
/// `SIGMAS` bound has the same tail probability for every `k`.
fn chi2_to_z(t: f64, k: f64) -> f64 {
    let c = 2.0 / (9.0 * k);
    ((t / k).cbrt() - (1.0 - c)) / c.sqrt()
}

/// Whitens draws by the oracle law and returns the normal equivalents of
/// the χ² statistics of their mean (`K` dof) and second moment
/// (`K(K+1)/2` dof).
fn gaussian_fit(draws: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>) -> (f64, f64) {
    let k = mean.len();
    let n = draws.len() as f64;
    let l = cov.clone().cholesky().expect("oracle covariance is SPD").unpack();
    let mut zbar = DVector::zeros(k);
    let mut m2 = DMatrix::zeros(k, k);
    for x in draws {
        let z = l.solve_lower_triangular(&(x - mean)).expect("nonzero pivots");
        zbar += &z;
        m2 += &z * z.transpose();
    }
    zbar /= n;
    m2 /= n;
    let t_mean = n * zbar.norm_squared();
    let mut t_cov = 0.0;
    for i in 0..k {
        t_cov += n * (m2[(i, i)] - 1.0).powi(2) / 2.0;
        for j in 0..i {
            t_cov += n * m2[(i, j)].powi(2);
        }
    }
    let dof_cov = (k * (k + 1) / 2) as f64;
    (chi2_to_z(t_mean, k as f64), chi2_to_z(t_cov, dof_cov))
}

fn gaussian_items(check: &mut Check, tag: &str, draws: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>) {
    let (zm, zc) = gaussian_fit(draws, mean, cov);
    check.z(format!("{tag} mean χ²"), zm);
    check.z(format!("{tag} covariance χ²"), zc);
}

/// z-scores of the sample mean and variance of `Gamma(shape, 1)` draws.
fn gamma_items(check: &mut Check, tag: &str, xs: &[f64], shape: f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - shape).powi(2)).sum::<f64>() / n;
    check.z(format!("{tag} mean"), (mean - shape) / (shape / n).sqrt());
    let var_se = ((2.0 * shape * shape + 6.0 * shape) / n).sqrt();
    check.z(format!("{tag} variance"), (var - shape) / var_se);
}

fn bernoulli_z(hits: usize, n: usize, p: f64) -> f64 {
    let phat = hits as f64 / n as f64;
    (phat - p) / (p * (1.0 - p) / n as f64).sqrt()
}

/// Standard error of the mean of an autocorrelated series by batch means.
fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let len = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let mu = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

fn rel_dev(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max()
}

// ---------------------------------------------------------------- instances

pub fn tiny_paradigm(conditions: usize, n_scans: usize, f: usize) -> Paradigm {
    let onsets = [vec![0.0, 4.0, 9.0, 13.0], vec![2.0, 7.0, 11.0, 16.0]];
    Paradigm {
        onsets: onsets[..conditions]
            .iter()
            .map(|o| o.iter().copied().filter(|&t| t < n_scans as f64).collect())
            .collect(),
        tr: 1.0,
        n_scans,
        dt: 1.0,
        f,
        drift_order: 2,
    }
}

/// `J = 4` (2×2), `N = 20`, `F = 5`, two conditions.
pub fn tiny_dataset(seed: u64) -> ParcelDataset {
    let cfg = TruthConfig {
        grid: Grid::new(2, 2),
        labels: Some(vec![vec![true, false, true, true], vec![false, true, true, false]]),
        noise_var: 0.5,
        ..TruthConfig::default()
    };
    simulate_dataset(&tiny_paradigm(2, 20, 5), &cfg, &PhysioParams::friston(), seed)
        .unwrap()
        .0
}

pub fn tiny_omega(ds: &ParcelDataset) -> OmegaOperator {
    build_omega(&PhysioParams::friston(), ds.paradigm.dt, ds.paradigm.f).unwrap()
}

fn normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// An arbitrary latent configuration with every block populated.
pub fn random_state(ds: &ParcelDataset, seed: u64) -> LatentState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (j, m, o, k) = (
        ds.n_voxels(),
        ds.paradigm.n_conditions(),
        ds.design.p.ncols(),
        ds.paradigm.f - 1,
    );
    let mut mat = |r: usize, c: usize, mu: f64, sd: f64| {
        DMatrix::from_fn(r, c, |_, _| mu + sd * rng.sample::<f64, _>(StandardNormal))
    };
    let a = mat(j, m, 1.0, 1.0);
    let c = mat(j, m, 0.5, 0.5);
    let ell = mat(o, j, 0.0, 1.0);
    let alpha = mat(j, 1, 0.0, 1.0).column(0).into_owned();
    let h = normals(&mut rng, k, 0.5);
    let g = normals(&mut rng, k, 0.5);
    let q = (0..m).map(|_| (0..j).map(|_| rng.random::<bool>()).collect()).collect();
    let theta = |shift: f64| {
        (0..m)
            .map(|i| MixtureParams {
                mean: [0.0, 1.3 + shift + 0.2 * i as f64],
                var: [0.4, 0.9],
            })
            .collect()
    };
    LatentState {
        h,
        g,
        a,
        c,
        q,
        ell,
        alpha,
        v_b: 0.7,
        v_ell: 2.0,
        v_alpha: 1.5,
        theta_a: theta(0.0),
        theta_c: theta(-0.8),
    }
}

// ---------------------------------------------------------------- oracle algebra

/// Which forward terms a model carries.
#[derive(Clone, Copy)]
pub struct Terms {
    pub bold: bool,
    pub perf: bool,
    pub drift: bool,
    pub baseline: bool,
}

pub const JOINT: Terms = Terms {
    bold: true,
    perf: true,
    drift: true,
    baseline: true,
};
pub const HEMODYNAMIC: Terms = Terms {
    bold: true,
    perf: false,
    drift: true,
    baseline: false,
};
pub const PERFUSION: Terms = Terms {
    bold: false,
    perf: true,
    drift: false,
    baseline: true,
};

/// `(F + 1) × (F − 1)` embedding of interior samples into a full response.
fn embed(f: usize) -> DMatrix<f64> {
    DMatrix::from_fn(f + 1, f - 1, |r, c| if r == c + 1 { 1.0 } else { 0.0 })
}

/// Second-difference precision on the interior, zero boundary values.
pub fn smooth_precision(dt: f64, f: usize) -> DMatrix<f64> {
    let k = f - 1;
    let mut d = DMatrix::zeros(k, k);
    for i in 0..k {
        d[(i, i)] = -2.0;
        if i > 0 {
            d[(i, i - 1)] = 1.0;
        }
        if i + 1 < k {
            d[(i, i + 1)] = 1.0;
        }
    }
    d /= dt * dt;
    d.transpose() * d / dt.powi(4)
}

/// Regressor of the BOLD response of condition `m` (interior coordinates).
fn bold_design(ds: &ParcelDataset, m: usize) -> DMatrix<f64> {
    &ds.design.x[m] * embed(ds.paradigm.f)
}

fn perf_design(ds: &ParcelDataset, m: usize) -> DMatrix<f64> {
    DMatrix::from_diagonal(&ds.design.w) * bold_design(ds, m)
}

/// Per-voxel signal contributions.
struct Parts {
    bold: Vec<DVector<f64>>,
    perf: Vec<DVector<f64>>,
    drift: DVector<f64>,
    base: DVector<f64>,
}

fn parts(ds: &ParcelDataset, s: &LatentState, t: Terms, j: usize) -> Parts {
    let n = ds.n_scans();
    let mc = ds.paradigm.n_conditions();
    let zero = DVector::zeros(n);
    Parts {
        bold: (0..mc)
            .map(|m| if t.bold { bold_design(ds, m) * &s.h * s.a[(j, m)] } else { zero.clone() })
            .collect(),
        perf: (0..mc)
            .map(|m| if t.perf { perf_design(ds, m) * &s.g * s.c[(j, m)] } else { zero.clone() })
            .collect(),
        drift: if t.drift { &ds.design.p * s.ell.column(j) } else { zero.clone() },
        base: if t.baseline { &ds.design.w * s.alpha[j] } else { zero },
    }
}

fn sum(v: &[DVector<f64>], n: usize) -> DVector<f64> {
    v.iter().fold(DVector::zeros(n), |acc, x| acc + x)
}

/// Prior of a response in an oracle.
pub enum ResponsePrior<'a> {
    /// `N(mean, var · precision⁻¹)`.
    Plain {
        precision: DMatrix<f64>,
        var: f64,
        mean: DVector<f64>,
    },
    /// BRF prior plus the factor `N(g; Ω h, v_g P_g⁻¹)` of the linked PRF.
    LinkedH {
        precision: DMatrix<f64>,
        var: f64,
        omega: &'a DMatrix<f64>,
        g_precision: DMatrix<f64>,
        g_var: f64,
    },
}

/// Gaussian full conditional of `h` or `g` from the normal equations.
pub fn response_oracle(
    ds: &ParcelDataset,
    s: &LatentState,
    t: Terms,
    kind: ResponseKind,
    prior: &ResponsePrior,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = ds.n_scans();
    let k = ds.paradigm.f - 1;
    let mut q = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for j in 0..ds.n_voxels() {
        let p = parts(ds, s, t, j);
        let y = ds.y.column(j).into_owned();
        let (target, design) = match kind {
            ResponseKind::H => (
                y - sum(&p.perf, n) - &p.drift - &p.base,
                (0..ds.paradigm.n_conditions())
                    .fold(DMatrix::zeros(n, k), |acc, m| acc + bold_design(ds, m) * s.a[(j, m)]),
            ),
            ResponseKind::G => (
                y - sum(&p.bold, n) - &p.drift - &p.base,
                (0..ds.paradigm.n_conditions())
                    .fold(DMatrix::zeros(n, k), |acc, m| acc + perf_design(ds, m) * s.c[(j, m)]),
            ),
        };
        q += design.transpose() * &design / s.v_b;
        b += design.transpose() * target / s.v_b;
    }
    match prior {
        ResponsePrior::Plain { precision, var, mean } => {
            q += precision / *var;
            b += precision * mean / *var;
        }
        ResponsePrior::LinkedH {
            precision,
            var,
            omega,
            g_precision,
            g_var,
        } => {
            q += precision / *var;
            q += omega.transpose() * g_precision * *omega / *g_var;
            b += omega.transpose() * g_precision * &s.g / *g_var;
        }
    }
    let cov = q.try_inverse().expect("oracle precision invertible");
    (&cov * b, cov)
}

/// Log marginal density of a voxel's target given one mixture class, with
/// its levels of condition `m` integrated out.
fn class_log_evidence(
    target: &DVector<f64>,
    regs: &[(DVector<f64>, f64, f64)],
    v_b: f64,
) -> f64 {
    let n = target.len();
    let mut cov = DMatrix::identity(n, n) * v_b;
    let mut mean = DVector::zeros(n);
    for (x, mu, var) in regs {
        cov += x * x.transpose() * *var;
        mean += x * *mu;
    }
    let chol = cov.cholesky().expect("marginal covariance SPD");
    let r = target - mean;
    let l = chol.l();
    let z = l.solve_lower_triangular(&r).unwrap();
    let log_det: f64 = l.diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared())
}

/// Target of voxel `j` with the levels of condition `m` removed, and the
/// Regressor, class mean and class variance of one level.
type LevelTerm = (DVector<f64>, f64, f64);

/// `(regressor, class mean, class variance)` triples of those levels.
fn level_problem(
    ds: &ParcelDataset,
    s: &LatentState,
    t: Terms,
    j: usize,
    m: usize,
    active: bool,
) -> (DVector<f64>, Vec<LevelTerm>) {
    let p = parts(ds, s, t, j);
    let mut target = ds.y.column(j).into_owned() - &p.drift - &p.base;
    for mp in (0..ds.paradigm.n_conditions()).filter(|&mp| mp != m) {
        target -= &p.bold[mp];
        target -= &p.perf[mp];
    }
    let cls = usize::from(active);
    let mut regs = Vec::new();
    if t.bold {
        let th = s.theta_a[m];
        regs.push((bold_design(ds, m) * &s.h, th.mean[cls], th.var[cls]));
    }
    if t.perf {
        let th = s.theta_c[m];
        regs.push((perf_design(ds, m) * &s.g, th.mean[cls], th.var[cls]));
    }
    (target, regs)
}

/// `P(q_jm = 1 | everything except the levels of (j, m))`.
pub fn label_probability(
    ds: &ParcelDataset,
    s: &LatentState,
    t: Terms,
    beta: f64,
    j: usize,
    m: usize,
) -> f64 {
    let ll = |active: bool| {
        let (target, regs) = level_problem(ds, s, t, j, m, active);
        class_log_evidence(&target, &regs, s.v_b)
    };
    let grid = ds.grid;
    let (mut same1, mut same0) = (0.0, 0.0);
    for k in grid.neighbors(j) {
        if s.q[m][k] {
            same1 += 1.0;
        } else {
            same0 += 1.0;
        }
    }
    let log1 = beta * same1 + ll(true);
    let log0 = beta * same0 + ll(false);
    1.0 / (1.0 + (log0 - log1).exp())
}

/// Gaussian law of the levels of `(j, m)` given the class.
pub fn level_oracle(
    ds: &ParcelDataset,
    s: &LatentState,
    t: Terms,
    j: usize,
    m: usize,
    active: bool,
) -> (DVector<f64>, DMatrix<f64>) {
    let (target, regs) = level_problem(ds, s, t, j, m, active);
    let x = DMatrix::from_columns(&regs.iter().map(|r| r.0.clone()).collect::<Vec<_>>());
    let prior_prec = DMatrix::from_diagonal(&DVector::from_iterator(regs.len(), regs.iter().map(|r| 1.0 / r.2)));
    let prior_mean = DVector::from_iterator(regs.len(), regs.iter().map(|r| r.1));
    let q = x.transpose() * &x / s.v_b + &prior_prec;
    let cov = q.try_inverse().unwrap();
    let mean = &cov * (x.transpose() * target / s.v_b + prior_prec * prior_mean);
    (mean, cov)
}

// ---------------------------------------------------------------- checks

fn check_response(
    name: &str,
    ds: &ParcelDataset,
    model: &Model,
    t: Terms,
    kind: ResponseKind,
    prior: ResponsePrior,
    seed: u64,
) -> Check {
    let state = random_state(ds, seed);
    let mut chain = Chain::new(model, state.clone(), seed).unwrap();
    let (mean, cov) = response_oracle(ds, &state, t, kind, &prior);
    let (lib_mean, lib_cov) = chain.response_conditional(kind).unwrap();
    let mut check = Check::new(name);
    check.push(
        "closed-form mean deviation",
        rel_dev(&DMatrix::from_column_slice(mean.len(), 1, lib_mean.as_slice()), &DMatrix::from_column_slice(mean.len(), 1, mean.as_slice())),
        CLOSED_FORM_TOL,
    );
    check.push("closed-form covariance deviation", rel_dev(&lib_cov, &cov), CLOSED_FORM_TOL);
    let draws: Vec<DVector<f64>> = (0..DRAWS).map(|_| chain.draw_response(kind).unwrap()).collect();
    gaussian_items(&mut check, "draws", &draws, &mean, &cov);
    check
}

pub fn brf_basic() -> Check {
    let ds = tiny_dataset(11);
    let priors = PriorConfig::default();
    let omega = tiny_omega(&ds);
    let model = Model::joint(&ds, Variant::Basic, &priors, Some(&omega)).unwrap();
    let k = ds.paradigm.f - 1;
    let prior = ResponsePrior::Plain {
        precision: smooth_precision(ds.paradigm.dt, ds.paradigm.f),
        var: priors.v_h,
        mean: DVector::zeros(k),
    };
    check_response("h | rest, basic", &ds, &model, JOINT, ResponseKind::H, prior, 101)
}

pub fn prf_basic() -> Check {
    let ds = tiny_dataset(12);
    let priors = PriorConfig::default();
    let omega = tiny_omega(&ds);
    let model = Model::joint(&ds, Variant::Basic, &priors, Some(&omega)).unwrap();
    let k = ds.paradigm.f - 1;
    let prior = ResponsePrior::Plain {
        precision: smooth_precision(ds.paradigm.dt, ds.paradigm.f),
        var: priors.v_g,
        mean: DVector::zeros(k),
    };
    check_response("g | rest, basic", &ds, &model, JOINT, ResponseKind::G, prior, 102)
}

pub fn brf_linked() -> Check {
    let ds = tiny_dataset(13);
    let priors = PriorConfig::default();
    let omega = tiny_omega(&ds);
    let model = Model::joint(&ds, Variant::Physio1Step, &priors, Some(&omega)).unwrap();
    let prec = smooth_precision(ds.paradigm.dt, ds.paradigm.f);
    let prior = ResponsePrior::LinkedH {
        precision: prec.clone(),
        var: priors.v_h,
        omega: &omega.omega,
        g_precision: prec,
        g_var: priors.v_g,
    };
    check_response("h | rest, 1-step", &ds, &model, JOINT, ResponseKind::H, prior, 103)
}

pub fn prf_linked() -> Check {
    let ds = tiny_dataset(14);
    let priors = PriorConfig::default();
    let omega = tiny_omega(&ds);
    let model = Model::joint(&ds, Variant::Physio1Step, &priors, Some(&omega)).unwrap();
    let state = random_state(&ds, 104);
    let prior = ResponsePrior::Plain {
        precision: smooth_precision(ds.paradigm.dt, ds.paradigm.f),
        var: priors.v_g,
        mean: &omega.omega * &state.h,
    };
    check_response("g | rest, 1-step", &ds, &model, JOINT, ResponseKind::G, prior, 104)
}

pub fn brf_hemodynamic() -> Check {
    let ds = tiny_dataset(15);
    let priors = PriorConfig::default();
    let model = Model::hemodynamic(&ds, &priors).unwrap();
    let prior = ResponsePrior::Plain {
        precision: smooth_precision(ds.paradigm.dt, ds.paradigm.f),
        var: priors.v_h,
        mean: DVector::zeros(ds.paradigm.f - 1),
    };
    check_response("h | rest, hemodynamic pass", &ds, &model, HEMODYNAMIC, ResponseKind::H, prior, 105)
}

pub fn prf_perfusion_pass() -> Check {
    let ds = tiny_dataset(16);
    let priors = PriorConfig::default();
    let k = ds.paradigm.f - 1;
    let mu = DVector::from_fn(k, |i, _| 0.3 * (i as f64 + 1.0).sin());
    let model = Model::perfusion(&ds, mu.clone(), &priors).unwrap();
    let prior = ResponsePrior::Plain {
        precision: DMatrix::identity(k, k),
        var: priors.v_g,
        mean: mu,
    };
    check_response("g | rest, perfusion pass", &ds, &model, PERFUSION, ResponseKind::G, prior, 106)
}

/// Labels and levels of the voxels visited first (colour 0), whose
/// conditionals depend on the starting state only.
fn check_labels_levels(name: &str, model: &Model, ds: &ParcelDataset, t: Terms, seed: u64) -> Check {
    let priors = PriorConfig::default();
    let s0 = random_state(ds, seed);
    let first: Vec<usize> = (0..ds.n_voxels()).filter(|&j| ds.grid.color(j) == 0).collect();
    let mut check = Check::new(name);

    let mut chain = Chain::new(model, s0.clone(), seed).unwrap();
    let mut hits = vec![0usize; first.len()];
    for _ in 0..DRAWS {
        chain.set_state(s0.clone());
        chain.sample_levels_and_labels();
        for (h, &j) in hits.iter_mut().zip(&first) {
            *h += usize::from(chain.state().q[0][j]);
        }
    }
    for (h, &j) in hits.iter().zip(&first) {
        let p = label_probability(ds, &s0, t, priors.ising_beta, j, 0);
        check.z(format!("P(q = 1) voxel {j} (oracle {p:.3})"), bernoulli_z(*h, DRAWS, p));
    }

    // levels given each class, labels held
    let fixed = model.clone().with_fixed_labels(true);
    let mut s1 = s0.clone();
    for (i, &j) in first.iter().enumerate() {
        s1.q[0][j] = i % 2 == 0;
    }
    let mut chain = Chain::new(&fixed, s1.clone(), seed + 1).unwrap();
    let mut draws: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(DRAWS); first.len()];
    for _ in 0..DRAWS {
        chain.set_state(s1.clone());
        chain.sample_levels_and_labels();
        let s = chain.state();
        for (d, &j) in draws.iter_mut().zip(&first) {
            let mut v = Vec::new();
            if t.bold {
                v.push(s.a[(j, 0)]);
            }
            if t.perf {
                v.push(s.c[(j, 0)]);
            }
            d.push(DVector::from_vec(v));
        }
    }
    for (d, &j) in draws.iter().zip(&first) {
        let active = s1.q[0][j];
        let (mean, cov) = level_oracle(ds, &s1, t, j, 0, active);
        gaussian_items(&mut check, &format!("levels voxel {j} q={}", u8::from(active)), d, &mean, &cov);
    }
    check
}

pub fn labels_and_levels_joint() -> Check {
    let ds = tiny_dataset(21);
    let priors = PriorConfig::default();
    let omega = tiny_omega(&ds);
    let model = Model::joint(&ds, Variant::Basic, &priors, Some(&omega)).unwrap();
    check_labels_levels("(q, a, c) | rest, joint", &model, &ds, JOINT, 201)
}

pub fn labels_and_levels_hemodynamic() -> Check {
    let ds = tiny_dataset(22);
    let model = Model::hemodynamic(&ds, &PriorConfig::default()).unwrap();
    check_labels_levels("(q, a) | rest, hemodynamic pass", &model, &ds, HEMODYNAMIC, 202)
}

pub fn labels_and_levels_perfusion() -> Check {
    let ds = tiny_dataset(23);
    let mu = DVector::from_element(ds.paradigm.f - 1, 0.1);
    let model = Model::perfusion(&ds, mu, &PriorConfig::default()).unwrap();
    check_labels_levels("(q, c) | rest, perfusion pass", &model, &ds, PERFUSION, 203)
}

/// 3×3 field, `N = 12`, one condition: the label chain against the
/// exhaustive law over all 2⁹ maps.
pub struct IsingCase {
    pub tv: f64,
    pub marginal_z: Vec<f64>,
    pub entropy: f64,
}

fn ising_case(equal_classes: bool, sweeps: usize, seed: u64) -> IsingCase {
    let p = tiny_paradigm(1, 12, 4);
    let cfg = TruthConfig {
        grid: Grid::new(3, 3),
        labels: Some(vec![vec![true, true, false, true, true, false, false, false, false]]),
        noise_var: 2.0,
        ..TruthConfig::default()
    };
    let (ds, truth) = simulate_dataset(&p, &cfg, &PhysioParams::friston(), seed).unwrap();
    let priors = PriorConfig::default();
    let omega = tiny_omega(&ds);
    let model = Model::joint(&ds, Variant::Basic, &priors, Some(&omega)).unwrap();
    let mut state = random_state(&ds, seed);
    state.h = DVector::from_column_slice(truth.h.interior());
    state.g = DVector::from_column_slice(truth.g.interior());
    state.ell = truth.ell.clone();
    state.alpha = truth.alpha.clone();
    state.v_b = cfg.noise_var;
    let th = |a: MixtureParams| if equal_classes { MixtureParams { mean: [0.5; 2], var: [1.0; 2] } } else { a };
    state.theta_a = vec![th(MixtureParams { mean: [0.0, 2.2], var: [0.3, 0.3] })];
    state.theta_c = vec![th(MixtureParams { mean: [0.0, 0.48], var: [0.1, 0.1] })];

    // enumeration
    let j_count = ds.n_voxels();
    let ll: Vec<[f64; 2]> = (0..j_count)
        .map(|j| {
            let ev = |active| {
                let (target, regs) = level_problem(&ds, &state, JOINT, j, 0, active);
                class_log_evidence(&target, &regs, state.v_b)
            };
            [ev(false), ev(true)]
        })
        .collect();
    let edges: Vec<(usize, usize)> = (0..j_count)
        .flat_map(|j| ds.grid.neighbors(j).filter(move |&k| k > j).map(move |k| (j, k)))
        .collect();
    let n_maps = 1usize << j_count;
    let mut logw: Vec<f64> = (0..n_maps)
        .map(|map| {
            let bit = |j: usize| (map >> j) & 1 == 1;
            let agree = edges.iter().filter(|&&(a, b)| bit(a) == bit(b)).count() as f64;
            priors.ising_beta * agree + (0..j_count).map(|j| ll[j][usize::from(bit(j))]).sum::<f64>()
        })
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logw.iter_mut().for_each(|w| *w = (*w - top).exp());
    let z: f64 = logw.iter().sum();
    let exact: Vec<f64> = logw.iter().map(|w| w / z).collect();
    let entropy = -exact.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();

    // label chain
    let mut chain = Chain::new(&model, state, seed).unwrap();
    for _ in 0..1000 {
        chain.sample_levels_and_labels();
    }
    let mut counts = vec![0usize; n_maps];
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(sweeps); j_count];
    for _ in 0..sweeps {
        chain.sample_levels_and_labels();
        let q = &chain.state().q[0];
        let map = (0..j_count).fold(0usize, |acc, j| acc | (usize::from(q[j]) << j));
        counts[map] += 1;
        for (sj, &l) in series.iter_mut().zip(q) {
            sj.push(f64::from(u8::from(l)));
        }
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(&exact)
            .map(|(&c, p)| (c as f64 / sweeps as f64 - p).abs())
            .sum::<f64>();
    let marginal_z = (0..j_count)
        .map(|j| {
            let exact_m: f64 = (0..n_maps).filter(|map| (map >> j) & 1 == 1).map(|map| exact[map]).sum();
            let emp = series[j].iter().sum::<f64>() / sweeps as f64;
            let se = batch_means_se(&series[j], 100);
            if se == 0.0 {
                if (emp - exact_m).abs() < 1e-12 { 0.0 } else { f64::INFINITY }
            } else {
                (emp - exact_m) / se
            }
        })
        .collect();
    IsingCase { tv, marginal_z, entropy }
}

pub const ISING_SWEEPS: usize = 200_000;
/// Total-variation allowance between the chain's label law and enumeration.
pub const ISING_TV: f64 = 0.02;

pub fn ising_enumeration() -> Check {
    let mut check = Check::new("q | rest, 3×3 enumeration");
    for (tag, equal) in [("data", false), ("prior only", true)] {
        let case = ising_case(equal, ISING_SWEEPS, 31);
        check.push(format!("{tag}: total variation (entropy {:.2})", case.entropy), case.tv, ISING_TV);
        for (j, z) in case.marginal_z.iter().enumerate() {
            check.z(format!("{tag}: marginal voxel {j}"), *z);
        }
    }
    check
}

pub fn mixture_params() -> Check {
    let ds = tiny_dataset(41);
    let priors = PriorConfig::default();
    let omega = tiny_omega(&ds);
    let model = Model::joint(&ds, Variant::Basic, &priors, Some(&omega)).unwrap();
    let mut s0 = random_state(&ds, 401);
    s0.q[0] = vec![true, true, false, true];
    let mut chain = Chain::new(&model, s0.clone(), 401).unwrap();
    let (mut mu1, mut g0, mut g1) = (Vec::new(), Vec::new(), Vec::new());
    let levels = s0.a.column(0);
    let q = &s0.q[0];
    let class = |active: bool| -> Vec<f64> {
        levels.iter().zip(q).filter(|(_, &l)| l == active).map(|(&v, _)| v).collect()
    };
    let (c0, c1) = (class(false), class(true));
    let ig = priors.class_var;
    for _ in 0..DRAWS {
        chain.set_state(s0.clone());
        chain.sample_mixture_params();
        let th = chain.state().theta_a[0];
        mu1.push(DVector::from_element(1, th.mean[1]));
        let ss0: f64 = c0.iter().map(|v| v * v).sum();
        let ss1: f64 = c1.iter().map(|v| (v - th.mean[1]).powi(2)).sum();
        g0.push((ig.scale + 0.5 * ss0) / th.var[0]);
        g1.push((ig.scale + 0.5 * ss1) / th.var[1]);
        assert_eq!(th.mean[0], 0.0);
    }
    let var1 = s0.theta_a[0].var[1];
    let hp = priors.active_mean;
    let prec = c1.len() as f64 / var1 + 1.0 / hp.var;
    let mean = (c1.iter().sum::<f64>() / var1 + hp.mean / hp.var) / prec;
    let mut check = Check::new("θ | rest");
    gaussian_items(
        &mut check,
        "μ₁",
        &mu1,
        &DVector::from_element(1, mean),
        &DMatrix::from_element(1, 1, 1.0 / prec),
    );
    gamma_items(&mut check, "inactive variance", &g0, ig.shape + 0.5 * c0.len() as f64);
    gamma_items(&mut check, "active variance", &g1, ig.shape + 0.5 * c1.len() as f64);
    check
}

pub fn nuisance() -> Check {
    let ds = tiny_dataset(51);
    let priors = PriorConfig::default();
    let omega = tiny_omega(&ds);
    let model = Model::joint(&ds, Variant::Basic, &priors, Some(&omega)).unwrap();
    let s0 = random_state(&ds, 501);
    let (n, j_count, o) = (ds.n_scans(), ds.n_voxels(), ds.design.p.ncols());
    let p = &ds.design.p;
    let w = &ds.design.w;
    let mut chain = Chain::new(&model, s0.clone(), 501).unwrap();
    let mut ell_draws: Vec<Vec<DVector<f64>>> = vec![Vec::new(); j_count];
    let (mut alpha_z, mut g_ell, mut g_alpha, mut g_b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..DRAWS {
        chain.set_state(s0.clone());
        chain.sample_nuisance().unwrap();
        let s = chain.state();
        for (j, draws) in ell_draws.iter_mut().enumerate() {
            draws.push(s.ell.column(j).into_owned());
            let pt = parts(&ds, &s0, JOINT, j);
            let target = ds.y.column(j) - sum(&pt.bold, n) - sum(&pt.perf, n) - p * s.ell.column(j);
            let prec = w.dot(w) / s0.v_b + 1.0 / s0.v_alpha;
            let mean = w.dot(&target) / s0.v_b / prec;
            alpha_z.push(DVector::from_element(1, (s.alpha[j] - mean) * prec.sqrt()));
        }
        g_ell.push(0.5 * s.ell.norm_squared() / s.v_ell);
        g_alpha.push(0.5 * s.alpha.norm_squared() / s.v_alpha);
        let ss: f64 = (0..j_count)
            .map(|j| {
                let pt = parts(&ds, s, JOINT, j);
                (ds.y.column(j) - sum(&pt.bold, n) - sum(&pt.perf, n) - &pt.drift - &pt.base).norm_squared()
            })
            .sum();
        g_b.push(0.5 * ss / s.v_b);
    }
    let mut check = Check::new("nuisance | rest");
    for (j, draws) in ell_draws.iter().enumerate() {
        let pt = parts(&ds, &s0, JOINT, j);
        let target = ds.y.column(j) - sum(&pt.bold, n) - sum(&pt.perf, n) - &pt.base;
        let q = p.transpose() * p / s0.v_b + DMatrix::identity(o, o) / s0.v_ell;
        let cov = q.try_inverse().unwrap();
        let mean = &cov * (p.transpose() * target / s0.v_b);
        gaussian_items(&mut check, &format!("ℓ voxel {j}"), draws, &mean, &cov);
    }
    gaussian_items(&mut check, "standardized α", &alpha_z, &DVector::zeros(1), &DMatrix::identity(1, 1));
    gamma_items(&mut check, "v_ℓ", &g_ell, 0.5 * (j_count * o) as f64);
    gamma_items(&mut check, "v_α", &g_alpha, 0.5 * j_count as f64);
    gamma_items(&mut check, "v_b", &g_b, 0.5 * (n * j_count) as f64);
    check
}

/// Every conditional check, in a fixed order.
pub fn conditional_suite() -> Vec<Check> {
    vec![
        brf_basic(),
        prf_basic(),
        brf_linked(),
        prf_linked(),
        brf_hemodynamic(),
        prf_perfusion_pass(),
        labels_and_levels_joint(),
        labels_and_levels_hemodynamic(),
        labels_and_levels_perfusion(),
        ising_enumeration(),
        mixture_params(),
        nuisance(),
    ]
}
