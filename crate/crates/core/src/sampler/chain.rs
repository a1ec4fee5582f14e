use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{LatentState, MixtureParams, PriorConfig, Variant, DIVERGENCE_LIMIT, MIN_VARIANCE};
use crate::aslmodel::{Grid, ParcelDataset};
use crate::balloon::argmax_abs;
use crate::error::{Error, Result};
use crate::linop::{OmegaOperator, SmoothnessPrior};

/// Which response a conditional refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    H,
    G,
}

/// Forward-model terms present in a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Terms {
    pub bold: bool,
    pub perfusion: bool,
    pub drift: bool,
    pub baseline: bool,
}

#[derive(Debug, Clone)]
enum PriorMean {
    Zero,
    /// `Ω h`, with `h` the current BRF.
    LinkedToH,
    Fixed(DVector<f64>),
}

#[derive(Debug, Clone)]
struct ResponsePrior {
    /// Inverse of the prior covariance shape `Σ`.
    precision: DMatrix<f64>,
    var: f64,
    mean: PriorMean,
    renormalize: bool,
}

/// Data, design products and priors of one Gibbs model. Built once, shared
/// read-only by the chains that run on it.
#[derive(Debug, Clone)]
pub struct Model {
    grid: Grid,
    dt: f64,
    y: DMatrix<f64>,
    /// Interior-column design matrices `N × (F − 1)`.
    xs: Vec<DMatrix<f64>>,
    xtx: Vec<Vec<DMatrix<f64>>>,
    /// `X_mᵀ W² X_m'`.
    xwwx: Vec<Vec<DMatrix<f64>>>,
    w: DVector<f64>,
    wtw: f64,
    p: DMatrix<f64>,
    pub(crate) terms: Terms,
    h_prior: ResponsePrior,
    g_prior: ResponsePrior,
    /// `Ωᵀ P_g Ω` and `Ωᵀ P_g` when the PRF prior is centred on `Ω h`.
    link: Option<(DMatrix<f64>, DMatrix<f64>)>,
    omega: Option<DMatrix<f64>>,
    priors: PriorConfig,
    fixed_labels: bool,
}

impl Model {
    /// Joint model for the `basic` and `physio-1step` variants.
    pub fn joint(
        ds: &ParcelDataset,
        variant: Variant,
        priors: &PriorConfig,
        omega: Option<&OmegaOperator>,
    ) -> Result<Self> {
        let smooth = SmoothnessPrior::new(ds.paradigm.dt, ds.paradigm.f)?;
        let (g_mean, renorm_g) = match variant {
            Variant::Basic => (PriorMean::Zero, true),
            Variant::Physio1Step => (PriorMean::LinkedToH, false),
            Variant::Physio2Step => {
                return Err(Error::InvalidParameter(
                    "the two-step variant is not a joint model".into(),
                ))
            }
        };
        let terms = Terms {
            bold: true,
            perfusion: true,
            drift: true,
            baseline: true,
        };
        Self::build(
            ds,
            terms,
            ResponsePrior {
                precision: smooth.precision.clone(),
                var: priors.v_h,
                mean: PriorMean::Zero,
                renormalize: true,
            },
            ResponsePrior {
                precision: smooth.precision,
                var: priors.v_g,
                mean: g_mean,
                renormalize: renorm_g,
            },
            omega,
            priors,
        )
    }

    /// Hemodynamic pass: BOLD and drift terms only; perfusion stays in the noise.
    pub fn hemodynamic(ds: &ParcelDataset, priors: &PriorConfig) -> Result<Self> {
        let smooth = SmoothnessPrior::new(ds.paradigm.dt, ds.paradigm.f)?;
        let terms = Terms {
            bold: true,
            perfusion: false,
            drift: true,
            baseline: priors.m1_keep_baseline,
        };
        let k = smooth.precision.nrows();
        Self::build(
            ds,
            terms,
            ResponsePrior {
                precision: smooth.precision,
                var: priors.v_h,
                mean: PriorMean::Zero,
                renormalize: true,
            },
            ResponsePrior {
                precision: DMatrix::identity(k, k),
                var: priors.v_g,
                mean: PriorMean::Zero,
                renormalize: false,
            },
            None,
            priors,
        )
    }

    /// Perfusion pass on residuals, `g ~ N(prior_mean, v_g Σ_g)`.
    pub fn perfusion(
        ds: &ParcelDataset,
        prior_mean: DVector<f64>,
        priors: &PriorConfig,
    ) -> Result<Self> {
        let smooth = SmoothnessPrior::new(ds.paradigm.dt, ds.paradigm.f)?;
        let k = smooth.precision.nrows();
        if prior_mean.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "PRF prior mean has {} samples, expected {k}",
                prior_mean.len()
            )));
        }
        let precision = if priors.m2_identity_cov {
            DMatrix::identity(k, k)
        } else {
            smooth.precision.clone()
        };
        let terms = Terms {
            bold: false,
            perfusion: true,
            drift: false,
            baseline: true,
        };
        Self::build(
            ds,
            terms,
            ResponsePrior {
                precision: smooth.precision,
                var: priors.v_h,
                mean: PriorMean::Zero,
                renormalize: true,
            },
            ResponsePrior {
                precision,
                var: priors.v_g,
                mean: PriorMean::Fixed(prior_mean),
                renormalize: false,
            },
            None,
            priors,
        )
    }

    /// Holds labels at their initial values while every other block moves.
    pub fn with_fixed_labels(mut self, fixed: bool) -> Self {
        self.fixed_labels = fixed;
        self
    }

    fn build(
        ds: &ParcelDataset,
        terms: Terms,
        h_prior: ResponsePrior,
        g_prior: ResponsePrior,
        omega: Option<&OmegaOperator>,
        priors: &PriorConfig,
    ) -> Result<Self> {
        ds.check()?;
        priors.validate()?;
        let f = ds.paradigm.f;
        let k = f - 1;
        let xs: Vec<DMatrix<f64>> = ds
            .design
            .x
            .iter()
            .map(|x| x.columns(1, k).into_owned())
            .collect();
        let w = ds.design.w.clone();
        let w2 = w.component_mul(&w);
        let xtx = xs
            .iter()
            .map(|xm| xs.iter().map(|xn| xm.transpose() * xn).collect())
            .collect();
        let xwwx = xs
            .iter()
            .map(|xm| {
                let wx = DMatrix::from_fn(xm.nrows(), k, |r, c| w2[r] * xm[(r, c)]);
                xs.iter().map(|xn| xn.transpose() * &wx).map(|m| m.transpose()).collect()
            })
            .collect();
        let linked = matches!(g_prior.mean, PriorMean::LinkedToH);
        let omega_m = match (linked, omega) {
            (true, None) => {
                return Err(Error::InvalidParameter(
                    "a PRF prior linked to the BRF needs the operator Ω".into(),
                ))
            }
            (_, Some(op)) => {
                if op.omega.nrows() != k {
                    return Err(Error::GridMismatch(format!(
                        "Ω acts on {} samples, the model on {k}",
                        op.omega.nrows()
                    )));
                }
                Some(op.omega.clone())
            }
            (false, None) => None,
        };
        let link = if linked {
            let om = omega_m.as_ref().expect("checked above");
            let otp = om.transpose() * &g_prior.precision;
            Some((&otp * om, otp))
        } else {
            None
        };
        Ok(Self {
            grid: ds.grid,
            dt: ds.paradigm.dt,
            y: ds.y.clone(),
            xs,
            xtx,
            xwwx,
            wtw: w.dot(&w),
            w,
            p: ds.design.p.clone(),
            terms,
            h_prior,
            g_prior,
            link,
            omega: omega_m,
            priors: priors.clone(),
            fixed_labels: false,
        })
    }

    pub fn n_scans(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_conditions(&self) -> usize {
        self.xs.len()
    }

    pub fn drift_order(&self) -> usize {
        self.p.ncols()
    }

    /// Number of free response samples, `F − 1`.
    pub fn response_len(&self) -> usize {
        self.h_prior.precision.nrows()
    }

    /// Response sampling period.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn omega(&self) -> Option<&DMatrix<f64>> {
        self.omega.as_ref()
    }

    fn bold_regressors(&self, h: &DVector<f64>) -> Vec<DVector<f64>> {
        self.xs
            .iter()
            .map(|x| {
                if self.terms.bold {
                    x * h
                } else {
                    DVector::zeros(x.nrows())
                }
            })
            .collect()
    }

    fn perf_regressors(&self, g: &DVector<f64>) -> Vec<DVector<f64>> {
        self.xs
            .iter()
            .map(|x| {
                if self.terms.perfusion {
                    (x * g).component_mul(&self.w)
                } else {
                    DVector::zeros(x.nrows())
                }
            })
            .collect()
    }

    /// Starting point: least-squares levels and nuisance on the given
    /// response shapes, labels from a t-statistic threshold unless provided.
    pub fn initial_state(
        &self,
        h0: DVector<f64>,
        g0: DVector<f64>,
        labels: Option<&[Vec<bool>]>,
    ) -> Result<LatentState> {
        let (n, j_count, m_count, o) =
            (self.n_scans(), self.n_voxels(), self.n_conditions(), self.drift_order());
        if h0.len() != self.response_len() || g0.len() != self.response_len() {
            return Err(Error::DimensionMismatch("initial responses".into()));
        }
        let bold = self.bold_regressors(&h0);
        let perf = self.perf_regressors(&g0);
        let mut cols: Vec<DVector<f64>> = Vec::new();
        if self.terms.bold {
            cols.extend(bold.iter().cloned());
        }
        if self.terms.perfusion {
            cols.extend(perf.iter().cloned());
        }
        if self.terms.drift {
            cols.extend(self.p.column_iter().map(|c| c.into_owned()));
        }
        if self.terms.baseline {
            cols.push(self.w.clone());
        }
        let z = DMatrix::from_columns(&cols);
        let kz = z.ncols();
        let gram = z.transpose() * &z + DMatrix::identity(kz, kz) * 1e-10;
        let gram_inv = gram
            .cholesky()
            .ok_or(Error::SingularPrecision)?
            .inverse();
        let coef = &gram_inv * (z.transpose() * &self.y);
        let resid = &self.y - &z * &coef;
        let v_b = (resid.norm_squared() / (n * j_count) as f64).max(MIN_VARIANCE);

        let mut offset = 0;
        let mut take = |present: bool, count: usize| -> Option<usize> {
            present.then(|| {
                let start = offset;
                offset += count;
                start
            })
        };
        let a_off = take(self.terms.bold, m_count);
        let c_off = take(self.terms.perfusion, m_count);
        let l_off = take(self.terms.drift, o);
        let b_off = take(self.terms.baseline, 1);

        let levels = |off: Option<usize>| {
            DMatrix::from_fn(j_count, m_count, |j, m| off.map_or(0.0, |s| coef[(s + m, j)]))
        };
        let a = levels(a_off);
        let c = levels(c_off);
        let ell = DMatrix::from_fn(o, j_count, |r, j| l_off.map_or(0.0, |s| coef[(s + r, j)]));
        let alpha = DVector::from_fn(j_count, |j, _| b_off.map_or(0.0, |s| coef[(s, j)]));

        let q: Vec<Vec<bool>> = match labels {
            Some(l) => {
                if l.len() != m_count || l.iter().any(|v| v.len() != j_count) {
                    return Err(Error::DimensionMismatch("initial labels".into()));
                }
                l.to_vec()
            }
            None => {
                let (off, lv) = match (a_off, c_off) {
                    (Some(s), _) => (s, &a),
                    (None, Some(s)) => (s, &c),
                    (None, None) => (0, &a),
                };
                (0..m_count)
                    .map(|m| {
                        let se = (gram_inv[(off + m, off + m)] * v_b).sqrt();
                        (0..j_count).map(|j| lv[(j, m)] / se > 2.0).collect()
                    })
                    .collect()
            }
        };
        let theta = |lv: &DMatrix<f64>| -> Vec<MixtureParams> {
            (0..m_count)
                .map(|m| {
                    let col: Vec<f64> = lv.column(m).iter().copied().collect();
                    let overall = variance(&col, mean(&col)).max(MIN_VARIANCE);
                    let class = |active: bool| -> Vec<f64> {
                        col.iter()
                            .zip(&q[m])
                            .filter(|(_, &l)| l == active)
                            .map(|(&v, _)| v)
                            .collect()
                    };
                    let (c0, c1) = (class(false), class(true));
                    let mu1 = if c1.is_empty() { 1.0 } else { mean(&c1) };
                    let var_of = |xs: &[f64], mu: f64| {
                        if xs.len() >= 2 {
                            variance(xs, mu).max(MIN_VARIANCE)
                        } else {
                            overall
                        }
                    };
                    MixtureParams {
                        mean: [0.0, mu1],
                        var: [var_of(&c0, 0.0), var_of(&c1, mu1)],
                    }
                })
                .collect()
        };
        let sq_mean = |it: &mut dyn Iterator<Item = f64>, len: usize| -> f64 {
            if len == 0 {
                1.0
            } else {
                (it.map(|v| v * v).sum::<f64>() / len as f64).max(MIN_VARIANCE)
            }
        };
        Ok(LatentState {
            theta_a: theta(&a),
            theta_c: theta(&c),
            v_ell: if self.terms.drift {
                sq_mean(&mut ell.iter().copied(), ell.len())
            } else {
                1.0
            },
            v_alpha: if self.terms.baseline {
                sq_mean(&mut alpha.iter().copied(), alpha.len())
            } else {
                1.0
            },
            h: h0,
            g: g0,
            a,
            c,
            q,
            ell,
            alpha,
            v_b,
        })
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn variance(xs: &[f64], mu: f64) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / xs.len() as f64
    }
}

/// Draws `IG(shape, scale)` as `scale / Gamma(shape, 1)`.
pub(crate) fn inv_gamma<R: Rng>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0)
        .expect("inverse-gamma shape must be positive")
        .sample(rng);
    (scale / g).max(MIN_VARIANCE)
}

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn log_sigmoid_prob(logit: f64) -> f64 {
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

/// One Gibbs chain over a [`Model`].
///
/// Shared quantities (responses, class parameters, variances) draw from one
/// stream; each voxel owns its own stream for its levels, labels and
/// nuisance, so the result does not depend on the voxel visiting order within
/// a checkerboard colour.
pub struct Chain<'m> {
    model: &'m Model,
    state: LatentState,
    bold: Vec<DVector<f64>>,
    perf: Vec<DVector<f64>>,
    resid: DMatrix<f64>,
    rng: ChaCha8Rng,
    voxel_rngs: Vec<ChaCha8Rng>,
}

impl<'m> Chain<'m> {
    pub fn new(model: &'m Model, state: LatentState, seed: u64) -> Result<Self> {
        let (j, m, o, k) = (
            model.n_voxels(),
            model.n_conditions(),
            model.drift_order(),
            model.response_len(),
        );
        let dims_ok = state.h.len() == k
            && state.g.len() == k
            && state.a.shape() == (j, m)
            && state.c.shape() == (j, m)
            && state.q.len() == m
            && state.q.iter().all(|v| v.len() == j)
            && state.ell.shape() == (o, j)
            && state.alpha.len() == j
            && state.theta_a.len() == m
            && state.theta_c.len() == m;
        if !dims_ok {
            return Err(Error::DimensionMismatch(
                "latent state does not match the model".into(),
            ));
        }
        let rng = ChaCha8Rng::seed_from_u64(seed);
        let voxel_rngs = (0..j)
            .map(|v| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(v as u64 + 1);
                r
            })
            .collect();
        let mut chain = Self {
            model,
            bold: Vec::new(),
            perf: Vec::new(),
            resid: DMatrix::zeros(0, 0),
            state,
            rng,
            voxel_rngs,
        };
        chain.refresh();
        Ok(chain)
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn into_state(self) -> LatentState {
        self.state
    }

    /// Replaces the latent state and recomputes the cached signals.
    pub fn set_state(&mut self, state: LatentState) {
        self.state = state;
        self.refresh();
    }

    /// `Y` minus the current fit of every modelled term.
    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.resid
    }

    fn refresh(&mut self) {
        let model = self.model;
        let s = &self.state;
        self.bold = model.bold_regressors(&s.h);
        self.perf = model.perf_regressors(&s.g);
        let mut resid = model.y.clone();
        if model.terms.bold {
            let b = DMatrix::from_columns(&self.bold);
            resid -= b * s.a.transpose();
        }
        if model.terms.perfusion {
            let p = DMatrix::from_columns(&self.perf);
            resid -= p * s.c.transpose();
        }
        if model.terms.drift {
            resid -= &model.p * &s.ell;
        }
        if model.terms.baseline {
            resid -= &model.w * s.alpha.transpose();
        }
        self.resid = resid;
    }

    /// Precision matrix and linear term `(Q, b)` of a response's Gaussian
    /// full conditional, `N(Q⁻¹ b, Q⁻¹)`.
    fn response_system(&self, kind: ResponseKind) -> (DMatrix<f64>, DVector<f64>) {
        let model = self.model;
        let s = &self.state;
        let (levels, regs, gram, prior) = match kind {
            ResponseKind::H => (&s.a, &self.bold, &model.xtx, &model.h_prior),
            ResponseKind::G => (&s.c, &self.perf, &model.xwwx, &model.g_prior),
        };
        let m_count = model.n_conditions();
        let cross = levels.transpose() * levels;
        let mut q = &prior.precision / prior.var;
        let mut b = DVector::zeros(model.response_len());
        for m in 0..m_count {
            // Σ_j level_jm · (signal of voxel j without this response)
            let mut u = &self.resid * levels.column(m);
            for (mp, reg) in regs.iter().enumerate() {
                u.axpy(cross[(m, mp)], reg, 1.0);
                q += &gram[m][mp] * (cross[(m, mp)] / s.v_b);
            }
            if kind == ResponseKind::G {
                u.component_mul_assign(&model.w);
            }
            b.gemv_tr(1.0 / s.v_b, &model.xs[m], &u, 1.0);
        }
        match (&prior.mean, kind) {
            (PriorMean::Zero, _) => {}
            (PriorMean::Fixed(mu), _) => b.gemv(1.0 / prior.var, &prior.precision, mu, 1.0),
            (PriorMean::LinkedToH, ResponseKind::G) => {
                let om = model.omega.as_ref().expect("linked prior has Ω");
                let mu = om * &s.h;
                b.gemv(1.0 / prior.var, &prior.precision, &mu, 1.0);
            }
            (PriorMean::LinkedToH, ResponseKind::H) => unreachable!("BRF prior is never linked"),
        }
        if kind == ResponseKind::H {
            if let Some((oto, otp)) = &model.link {
                let vg = model.g_prior.var;
                q += oto / vg;
                b.gemv(1.0 / vg, otp, &s.g, 1.0);
            }
        }
        (q, b)
    }

    /// Mean and covariance of a response's full conditional.
    pub fn response_conditional(&self, kind: ResponseKind) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (q, b) = self.response_system(kind);
        let chol = q.cholesky().ok_or(Error::SingularPrecision)?;
        Ok((chol.solve(&b), chol.inverse()))
    }

    /// One draw from a response's full conditional, leaving the state as is.
    /// A non-positive-definite precision falls back to the prior.
    pub fn draw_response(&mut self, kind: ResponseKind) -> Result<DVector<f64>> {
        let (q, b) = self.response_system(kind);
        let chol = match q.cholesky() {
            Some(c) => c,
            None => {
                let prior = match kind {
                    ResponseKind::H => &self.model.h_prior,
                    ResponseKind::G => &self.model.g_prior,
                };
                (&prior.precision / prior.var)
                    .cholesky()
                    .ok_or(Error::SingularPrecision)?
            }
        };
        let mean = chol.solve(&b);
        let z = DVector::from_fn(mean.len(), |_, _| std_normal(&mut self.rng));
        let dev = chol
            .l()
            .tr_solve_lower_triangular(&z)
            .ok_or(Error::SingularPrecision)?;
        Ok(mean + dev)
    }

    /// Draws a response, applies the scale convention and updates the caches.
    ///
    /// Renormalized responses get unit norm with a positive largest-magnitude
    /// sample; the matching levels absorb the factor so every product
    /// `level · X response` is unchanged.
    pub fn sample_response(&mut self, kind: ResponseKind) -> Result<()> {
        let mut x = self.draw_response(kind)?;
        let (renorm, levels) = match kind {
            ResponseKind::H => (self.model.h_prior.renormalize, &mut self.state.a),
            ResponseKind::G => (self.model.g_prior.renormalize, &mut self.state.c),
        };
        if renorm {
            let peak = x[argmax_abs(x.as_slice())];
            let scale = x.norm() * peak.signum();
            if scale != 0.0 && scale.is_finite() {
                x /= scale;
                *levels *= scale;
            }
        }
        match kind {
            ResponseKind::H => self.state.h = x,
            ResponseKind::G => self.state.g = x,
        }
        self.refresh();
        Ok(())
    }

    /// Labels and levels, condition by condition, in checkerboard order.
    pub fn sample_levels_and_labels(&mut self) {
        let model = self.model;
        let grid = model.grid;
        let beta = model.priors.ising_beta;
        let (use_a, use_c) = (model.terms.bold, model.terms.perfusion);
        for m in 0..model.n_conditions() {
            let bm = &self.bold[m];
            let pm = &self.perf[m];
            let gram = Matrix2::new(bm.dot(bm), bm.dot(pm), bm.dot(pm), pm.dot(pm));
            let theta_a = self.state.theta_a[m];
            let theta_c = self.state.theta_c[m];
            for color in 0..2 {
                for j in (0..model.n_voxels()).filter(|&j| grid.color(j) == color) {
                    let r = self.resid.column(j);
                    let (a_old, c_old) = (self.state.a[(j, m)], self.state.c[(j, m)]);
                    let ze = Vector2::new(
                        bm.dot(&r) + a_old * gram[(0, 0)] + c_old * gram[(0, 1)],
                        pm.dot(&r) + a_old * gram[(1, 0)] + c_old * gram[(1, 1)],
                    );
                    let class = |active: bool| {
                        let (ma, va) = if use_a { theta_a.class(active) } else { (0.0, 1.0) };
                        let (mc, vc) = if use_c { theta_c.class(active) } else { (0.0, 1.0) };
                        LevelPosterior::new(&gram, &ze, self.state.v_b, [ma, mc], [va, vc])
                    };
                    let post = [class(false), class(true)];
                    let rng = &mut self.voxel_rngs[j];
                    let label = if model.fixed_labels {
                        self.state.q[m][j]
                    } else {
                        let q = &self.state.q[m];
                        let ones = grid.neighbors(j).filter(|&k| q[k]).count() as f64;
                        let zeros = grid.neighbors(j).count() as f64 - ones;
                        let logit = beta * (ones - zeros) + post[1].log_evidence
                            - post[0].log_evidence;
                        let u: f64 = rng.random();
                        u < log_sigmoid_prob(logit)
                    };
                    self.state.q[m][j] = label;
                    let draw = post[usize::from(label)].draw(rng);
                    let a_new = if use_a { draw[0] } else { a_old };
                    let c_new = if use_c { draw[1] } else { c_old };
                    let mut rc = self.resid.column_mut(j);
                    rc.axpy(a_old - a_new, bm, 1.0);
                    rc.axpy(c_old - c_new, pm, 1.0);
                    self.state.a[(j, m)] = a_new;
                    self.state.c[(j, m)] = c_new;
                }
            }
        }
    }

    /// Class means and variances of both level mixtures.
    pub fn sample_mixture_params(&mut self) {
        let model = self.model;
        let pr = &model.priors;
        for m in 0..model.n_conditions() {
            for (present, levels, theta) in [
                (model.terms.bold, &self.state.a, &mut self.state.theta_a[m]),
                (model.terms.perfusion, &self.state.c, &mut self.state.theta_c[m]),
            ] {
                if !present {
                    continue;
                }
                let q = &self.state.q[m];
                let col = levels.column(m);
                let (mut n1, mut s1) = (0.0, 0.0);
                for (v, _) in col.iter().zip(q).filter(|(_, &l)| l) {
                    n1 += 1.0;
                    s1 += v;
                }
                let prec = n1 / theta.var[1] + 1.0 / pr.active_mean.var;
                let mu = (s1 / theta.var[1] + pr.active_mean.mean / pr.active_mean.var) / prec;
                theta.mean[1] = mu + std_normal(&mut self.rng) / prec.sqrt();
                theta.mean[0] = 0.0;
                for class in 0..2 {
                    let (mut n, mut ss) = (0.0, 0.0);
                    for (v, _) in col.iter().zip(q).filter(|(_, &l)| usize::from(l) == class) {
                        n += 1.0;
                        ss += (v - theta.mean[class]).powi(2);
                    }
                    theta.var[class] = inv_gamma(
                        &mut self.rng,
                        pr.class_var.shape + 0.5 * n,
                        pr.class_var.scale + 0.5 * ss,
                    );
                }
            }
        }
    }

    /// Drift coefficients, perfusion baselines and the three variances.
    pub fn sample_nuisance(&mut self) -> Result<()> {
        let model = self.model;
        let (n, j_count, o) = (model.n_scans(), model.n_voxels(), model.drift_order());
        let v_b = self.state.v_b;
        if model.terms.drift && o > 0 {
            let prec = 1.0 / v_b + 1.0 / self.state.v_ell;
            let sd = prec.sqrt().recip();
            for j in 0..j_count {
                let rng = &mut self.voxel_rngs[j];
                let old = self.state.ell.column(j).into_owned();
                // Pᵀ P = I, so Pᵀ(r + P ℓ) = Pᵀ r + ℓ.
                let proj = model.p.tr_mul(&self.resid.column(j)) + &old;
                let new = DVector::from_fn(o, |r, _| proj[r] / v_b / prec + sd * std_normal(rng));
                self.resid.column_mut(j).gemv(1.0, &model.p, &(&old - &new), 1.0);
                self.state.ell.set_column(j, &new);
            }
            let ss = self.state.ell.norm_squared();
            self.state.v_ell = inv_gamma(&mut self.rng, 0.5 * (j_count * o) as f64, 0.5 * ss);
        }
        if model.terms.baseline {
            let prec = model.wtw / v_b + 1.0 / self.state.v_alpha;
            let sd = prec.sqrt().recip();
            for j in 0..j_count {
                let rng = &mut self.voxel_rngs[j];
                let old = self.state.alpha[j];
                let wr = model.w.dot(&self.resid.column(j)) + model.wtw * old;
                let new = wr / v_b / prec + sd * std_normal(rng);
                self.resid.column_mut(j).axpy(old - new, &model.w, 1.0);
                self.state.alpha[j] = new;
            }
            let ss = self.state.alpha.norm_squared();
            self.state.v_alpha = inv_gamma(&mut self.rng, 0.5 * j_count as f64, 0.5 * ss);
        }
        let ss = self.resid.norm_squared();
        self.state.v_b = inv_gamma(&mut self.rng, 0.5 * (n * j_count) as f64, 0.5 * ss);
        if !(self.state.v_b <= DIVERGENCE_LIMIT) {
            return Err(Error::ChainDiverged(self.state.v_b));
        }
        Ok(())
    }

    /// One full Gibbs sweep.
    pub fn sweep(&mut self) -> Result<()> {
        if self.model.terms.bold {
            self.sample_response(ResponseKind::H)?;
        }
        if self.model.terms.perfusion {
            self.sample_response(ResponseKind::G)?;
        }
        self.sample_levels_and_labels();
        self.sample_mixture_params();
        self.sample_nuisance()
    }
}

/// Gaussian posterior of the `(a, c)` pair of one voxel and condition under
/// one mixture class, with the class evidence up to a class-independent constant.
struct LevelPosterior {
    mean: Vector2<f64>,
    /// Lower Cholesky factor of the posterior precision.
    chol: Matrix2<f64>,
    log_evidence: f64,
}

impl LevelPosterior {
    fn new(
        gram: &Matrix2<f64>,
        ze: &Vector2<f64>,
        v_b: f64,
        prior_mean: [f64; 2],
        prior_var: [f64; 2],
    ) -> Self {
        let inv_v = Vector2::new(1.0 / prior_var[0], 1.0 / prior_var[1]);
        let mu = Vector2::new(prior_mean[0], prior_mean[1]);
        let lambda = gram / v_b + Matrix2::from_diagonal(&inv_v);
        let eta = ze / v_b + mu.component_mul(&inv_v);
        let chol = lambda
            .cholesky()
            .expect("level precision is positive definite")
            .unpack();
        let half = chol.solve_lower_triangular(&eta).expect("nonzero pivots");
        let mean = chol.tr_solve_lower_triangular(&half).expect("nonzero pivots");
        let log_det_lambda = 2.0 * (chol[(0, 0)].ln() + chol[(1, 1)].ln());
        let log_evidence = -0.5 * (prior_var[0].ln() + prior_var[1].ln())
            - 0.5 * log_det_lambda
            - 0.5 * mu.component_mul(&inv_v).dot(&mu)
            + 0.5 * half.norm_squared();
        Self {
            mean,
            chol,
            log_evidence,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vector2<f64> {
        let z = Vector2::new(std_normal(rng), std_normal(rng));
        self.mean
            + self
                .chol
                .tr_solve_lower_triangular(&z)
                .expect("nonzero pivots")
    }
}
