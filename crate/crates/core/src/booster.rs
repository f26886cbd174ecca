//! Boosting: fit a one-component copula approximation, then add factor
//! Gaussian components one at a time with all earlier components frozen.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::check_dim;
use crate::estimator::{cv_coeffs, cv_gradient, gradient_batch, mean};
use crate::factor_gauss::{vech_len, Component, FactorGaussian};
use crate::mixture::{responsibilities, sample_extended, CmgvaState, PreparedMixture};
use crate::natgrad::{
    block_fisher_beta_d, mu_natural_gradient, natural_gradient_beta_d, pi_from_rho,
    rho_from_pi, AdamState,
};
use crate::real::log_sum_exp;
use crate::rng::{categorical, std_normal};
use crate::targets::TargetModel;
use crate::transform::{dgamma_dpsi, gamma_from_psi, psi_from_gamma, YjVector};
use crate::{CmgvaError, Real, Result};

/// Initial loading standard deviation and scale of a new component.
const INIT_LOADING_SD: f64 = 0.01;
const INIT_SCALE: f64 = 0.01;
const INIT_WEIGHT: f64 = 0.5;

/// How the starting mean of a new component is searched for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Grid search per coordinate up to 20 dimensions, importance draws above.
    Auto,
    Grid,
    Importance,
}

/// Where the coordinates not being searched are held during a grid search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridAnchor {
    /// At the current mean `φ̂ = Σ_k π_k μ_k`.
    Mean,
    /// Coordinates already searched keep their chosen values; the rest sit
    /// at `φ̂`.
    Sweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Candidate with the largest weight.
    Argmax,
    /// Candidate drawn with probability proportional to its weight.
    Proportional,
}

/// Transform applied to the loading and scale gradients of a rank-one new
/// component before the ADAM step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preconditioner {
    /// [`natural_gradient_beta_d`].
    ClosedForm,
    /// [`block_fisher_beta_d`].
    BlockFisher,
    /// Raw gradients.
    Identity,
}

/// Gradient estimator for the one-component fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstFit {
    /// Log-derivative estimator with lagged control variates.
    ScoreFunction,
    /// Pathwise estimator through `θ = t_γ⁻¹(μ + βz + d∘η)`.
    Reparameterized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct BoostConfig<F> {
    /// Draws per gradient estimate.
    pub samples: usize,
    pub iters_first: usize,
    pub iters_per_component: usize,
    pub max_components: usize,
    pub r_first: usize,
    pub r_added: usize,
    pub alpha_mu: F,
    pub alpha_beta: F,
    pub alpha_d: F,
    pub alpha_pi: F,
    pub alpha_gamma: F,
    /// Trailing iterations averaged for per-K model selection.
    pub elbo_window: usize,
    /// Trailing iterations in the moving-average trace and the early stop.
    pub ma_window: usize,
    /// Stop a round once the moving average has not improved for this many
    /// iterations; 0 disables.
    pub patience: usize,
    pub checkpoint_every: usize,
    pub init_mode: InitMode,
    pub grid_anchor: GridAnchor,
    pub selection: Selection,
    /// Candidates evaluated when initializing a new mean.
    pub init_samples: usize,
    pub preconditioner: Preconditioner,
    pub first_fit: FirstFit,
    /// Optimize the Yeo-Johnson parameters in the first fit; when false they
    /// stay at 1 and the approximation is a plain normal mixture.
    pub fit_gamma: bool,
    pub seed: u64,
}

impl<F: Real> Default for BoostConfig<F> {
    fn default() -> Self {
        Self {
            samples: 50,
            iters_first: 20_000,
            iters_per_component: 5_000,
            max_components: 20,
            r_first: 4,
            r_added: 1,
            alpha_mu: F::lit(0.01),
            alpha_beta: F::lit(0.001),
            alpha_d: F::lit(0.001),
            alpha_pi: F::lit(0.001),
            alpha_gamma: F::lit(0.001),
            elbo_window: 500,
            ma_window: 100,
            patience: 0,
            checkpoint_every: 500,
            init_mode: InitMode::Auto,
            grid_anchor: GridAnchor::Sweep,
            selection: Selection::Argmax,
            init_samples: 100,
            preconditioner: Preconditioner::BlockFisher,
            first_fit: FirstFit::ScoreFunction,
            fit_gamma: true,
            seed: 0,
        }
    }
}

impl<F: Real> BoostConfig<F> {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("samples", self.samples),
            ("max_components", self.max_components),
            ("r_first", self.r_first),
            ("r_added", self.r_added),
            ("elbo_window", self.elbo_window),
            ("ma_window", self.ma_window),
            ("checkpoint_every", self.checkpoint_every),
            ("init_samples", self.init_samples),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CmgvaError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.samples < 2 {
            return Err(CmgvaError::Config("samples must be at least 2".into()));
        }
        let steps = [
            ("alpha_mu", self.alpha_mu),
            ("alpha_beta", self.alpha_beta),
            ("alpha_d", self.alpha_d),
            ("alpha_pi", self.alpha_pi),
            ("alpha_gamma", self.alpha_gamma),
        ];
        for (name, v) in steps {
            if !(v > F::zero()) || !v.is_finite() {
                return Err(CmgvaError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn resolved_init_mode(&self, m: usize) -> InitMode {
        match self.init_mode {
            InitMode::Auto if m <= 20 => InitMode::Grid,
            InitMode::Auto => InitMode::Importance,
            other => other,
        }
    }
}

/// Per-iteration ELBO estimates of one optimization round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ElboTrace<F> {
    pub values: Vec<F>,
    /// True when the round stopped on a non-finite value and was rolled
    /// back to its last checkpoint.
    pub diverged: bool,
    /// True when the round ended on the patience rule.
    pub stopped_early: bool,
}

impl<F: Real> ElboTrace<F> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Trailing mean over up to `window` values ending at each iteration.
    pub fn moving_average(&self, window: usize) -> Vec<F> {
        let w = window.max(1);
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = F::zero();
        for (i, &v) in self.values.iter().enumerate() {
            acc += v;
            if i >= w {
                acc -= self.values[i - w];
            }
            out.push(acc / F::from_usize_lossy((i + 1).min(w)));
        }
        out
    }

    /// Mean of the last `window` values (all of them if fewer).
    pub fn window_average(&self, window: usize) -> F {
        let n = self.values.len();
        let start = n.saturating_sub(window.max(1));
        mean(&self.values[start..])
    }
}

/// Stopping bookkeeping shared by both kinds of round.
struct Monitor<F> {
    window: usize,
    patience: usize,
    sum: F,
    best: F,
    since_best: usize,
}

impl<F: Real> Monitor<F> {
    fn new(cfg: &BoostConfig<F>) -> Self {
        Self {
            window: cfg.ma_window,
            patience: cfg.patience,
            sum: F::zero(),
            best: F::neg_infinity(),
            since_best: 0,
        }
    }

    /// Records `trace.values.last()`; true when the round should stop.
    fn push(&mut self, trace: &ElboTrace<F>) -> bool {
        let n = trace.values.len();
        self.sum += trace.values[n - 1];
        if n > self.window {
            self.sum -= trace.values[n - 1 - self.window];
        }
        if self.patience == 0 || n < self.window {
            return false;
        }
        let ma = self.sum / F::from_usize_lossy(self.window);
        if ma > self.best {
            self.best = ma;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }
}

fn all_finite<F: Real>(xs: &[F]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

fn random_loadings<F: Real, R: Rng + ?Sized>(m: usize, r: usize, rng: &mut R) -> Vec<F> {
    let sd = F::lit(INIT_LOADING_SD);
    let mut beta = vec![F::zero(); m * r];
    for i in 0..m {
        for j in 0..r.min(i + 1) {
            beta[i * r + j] = sd * std_normal::<F, _>(rng);
        }
    }
    beta
}

/// Flat parameter vector of the one-component fit: `(μ, vech β, d, ψ)`.
#[derive(Clone, Debug)]
struct FirstParams<F> {
    comp: Component<F>,
    psi: Vec<F>,
}

impl<F: Real> FirstParams<F> {
    fn yj(&self) -> Result<YjVector<F>> {
        YjVector::from_psi(&self.psi)
    }

    fn finite(&self) -> bool {
        all_finite(self.comp.mu())
            && all_finite(self.comp.beta())
            && all_finite(self.comp.d())
            && self.psi.iter().all(|&p| {
                let g = gamma_from_psi(p);
                g > F::zero() && g < F::two()
            })
    }
}

#[derive(Clone, Debug)]
struct FirstAdam<F> {
    mu: AdamState<F>,
    beta: AdamState<F>,
    d: AdamState<F>,
    psi: AdamState<F>,
}

/// Per-draw output of the one-component estimators: the log-ratio and the
/// gradient blocks `(μ, vech β, d, ψ)`.
struct FirstRow<F> {
    f: F,
    grads: Vec<F>,
}

fn first_rows_score<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    fg: &FactorGaussian<F>,
    yj: &YjVector<F>,
    fit_gamma: bool,
    s: usize,
    rng: &mut R,
) -> Result<Vec<FirstRow<F>>> {
    let phis: Vec<Vec<F>> = (0..s).map(|_| fg.sample(rng).0).collect();
    phis.par_iter()
        .map(|phi| {
            let theta = yj.inverse(phi);
            let lg = target.log_density(&theta)?;
            let lq = fg.log_density(phi) + yj.log_jacobian(&theta);
            let f = lg - lq;
            if !f.is_finite() {
                return Err(CmgvaError::Numerical(format!("non-finite log-ratio {f}")));
            }
            let sc = fg.scores(phi);
            let mut grads = sc.mu.clone();
            grads.extend(sc.beta);
            grads.extend(sc.d);
            if fit_gamma {
                let (dphi, dlog) = yj.gamma_partials(&theta);
                for i in 0..phi.len() {
                    let g = yj.gamma()[i];
                    grads.push((-sc.mu[i] * dphi[i] + dlog[i]) * dgamma_dpsi(g));
                }
            } else {
                grads.extend(std::iter::repeat_n(F::zero(), phi.len()));
            }
            Ok(FirstRow { f, grads })
        })
        .collect()
}

/// Pathwise gradients of `ln g(θ) − ln q(θ)` with `θ = t_γ⁻¹(μ + βz + d∘η)`,
/// the Gaussian entropy handled in closed form.
fn first_rows_reparam<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    fg: &FactorGaussian<F>,
    yj: &YjVector<F>,
    fit_gamma: bool,
    s: usize,
    rng: &mut R,
) -> Result<Vec<FirstRow<F>>> {
    let draws: Vec<_> = (0..s).map(|_| fg.sample(rng)).collect();
    let m = fg.dim();
    let r = fg.rank();
    let pb = fg.precision_beta();
    let pd = fg.precision_diag();
    let comp = fg.component();
    draws
        .par_iter()
        .map(|(phi, z, eta)| {
            let theta = yj.inverse(phi);
            let (lg, gg) = target.log_density_and_grad(&theta)?;
            let lq = fg.log_density(phi) + yj.log_jacobian(&theta);
            let f = lg - lq;
            if !f.is_finite() || !all_finite(&gg) {
                return Err(CmgvaError::Numerical(format!("non-finite log-ratio {f}")));
            }
            let (deriv, dlog) = yj.derivs(&theta);
            // ∇φ [ln g(θ) − Σ ln ṫ(θ_i)]
            let h: Vec<F> = (0..m).map(|i| (gg[i] - dlog[i]) / deriv[i]).collect();
            let mut grads = h.clone();
            for j in 0..r.min(m) {
                for i in j..m {
                    grads.push(h[i] * z[j] + pb[i * r + j]);
                }
            }
            for i in 0..m {
                grads.push(h[i] * eta[i] + comp.d()[i] * pd[i]);
            }
            if fit_gamma {
                let (dphi, dlogg) = yj.gamma_partials(&theta);
                for i in 0..m {
                    let dtheta = -dphi[i] / deriv[i];
                    let gi = (gg[i] - dlog[i]) * dtheta - dlogg[i];
                    grads.push(gi * dgamma_dpsi(yj.gamma()[i]));
                }
            } else {
                grads.extend(std::iter::repeat_n(F::zero(), m));
            }
            Ok(FirstRow { f, grads })
        })
        .collect()
}

/// Fits the one-component approximation by stochastic gradient ascent on the
/// ELBO over `(γ, μ, β, d)`. Starts from `μ = 0`, `β ~ N(0, 0.01²)`,
/// `d = 0.01`, `γ = 1`.
pub fn fit_first_component<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    cfg: &BoostConfig<F>,
    rng: &mut R,
) -> Result<(CmgvaState<F>, ElboTrace<F>)> {
    cfg.validate()?;
    let m = target.dim();
    let r = cfg.r_first.min(m);
    let comp = Component::new(
        vec![F::zero(); m],
        random_loadings(m, r, rng),
        r,
        vec![F::lit(INIT_SCALE); m],
    )?;
    let init = FirstParams {
        comp,
        psi: vec![psi_from_gamma(F::one()); m],
    };
    fit_first_from(target, cfg, init, rng)
}

fn fit_first_from<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    cfg: &BoostConfig<F>,
    init: FirstParams<F>,
    rng: &mut R,
) -> Result<(CmgvaState<F>, ElboTrace<F>)> {
    let m = init.comp.dim();
    let r = init.comp.rank();
    let nb = vech_len(m, r);
    let mut params = init;
    let mut adam = FirstAdam {
        mu: AdamState::new(m, cfg.alpha_mu),
        beta: AdamState::new(nb, cfg.alpha_beta),
        d: AdamState::new(m, cfg.alpha_d),
        psi: AdamState::new(m, cfg.alpha_gamma),
    };
    let mut cv = vec![F::zero(); 3 * m + nb];
    let mut checkpoint = params.clone();
    let mut trace = ElboTrace::default();
    let mut monitor = Monitor::new(cfg);

    for t in 0..cfg.iters_first {
        let step = (|| -> Result<F> {
            let yj = params.yj()?;
            let fg = params.comp.prepare()?;
            let rows = match cfg.first_fit {
                FirstFit::ScoreFunction => {
                    first_rows_score(target, &fg, &yj, cfg.fit_gamma, cfg.samples, rng)?
                }
                FirstFit::Reparameterized => {
                    first_rows_reparam(target, &fg, &yj, cfg.fit_gamma, cfg.samples, rng)?
                }
            };
            let f: Vec<F> = rows.iter().map(|r| r.f).collect();
            let scores: Vec<Vec<F>> = rows.into_iter().map(|r| r.grads).collect();
            let g = match cfg.first_fit {
                FirstFit::ScoreFunction => {
                    let g = cv_gradient(&f, &scores, &cv);
                    cv = cv_coeffs(&f, &scores);
                    g
                }
                FirstFit::Reparameterized => {
                    let zero = vec![F::one(); f.len()];
                    cv_gradient(&zero, &scores, &vec![F::zero(); scores[0].len()])
                }
            };
            if !all_finite(&g) {
                return Err(CmgvaError::Numerical("non-finite gradient".into()));
            }
            let (gm, rest) = g.split_at(m);
            let (gb, rest) = rest.split_at(nb);
            let (gd, gp) = rest.split_at(m);
            let dm = adam.mu.step(gm);
            let db = adam.beta.step(gb);
            let dd = adam.d.step(gd);
            let mu: Vec<F> = params.comp.mu().iter().zip(dm).map(|(&a, b)| a + b).collect();
            let mut vb = params.comp.vech_beta();
            vb.iter_mut().zip(db).for_each(|(a, b)| *a += b);
            let d: Vec<F> = params.comp.d().iter().zip(dd).map(|(&a, b)| a + b).collect();
            params.comp.set_mu(mu);
            params.comp.set_vech_beta(&vb);
            params.comp.set_d(d);
            if cfg.fit_gamma {
                let dp = adam.psi.step(gp);
                params.psi.iter_mut().zip(dp).for_each(|(a, b)| *a += b);
            }
            Ok(mean(&f))
        })();
        match step {
            Ok(elbo) if elbo.is_finite() && params.finite() => {
                trace.values.push(elbo);
                if monitor.push(&trace) {
                    trace.stopped_early = true;
                    break;
                }
            }
            Ok(_) => {
                params = checkpoint.clone();
                trace.diverged = true;
                break;
            }
            Err(e) if e.is_numerical() => {
                params = checkpoint.clone();
                trace.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if (t + 1) % cfg.checkpoint_every == 0 {
            checkpoint = params.clone();
        }
    }
    let state = CmgvaState::single(params.yj()?, params.comp)?;
    Ok((state, trace))
}

/// Starting mean for a new component: the point, among candidates built
/// from draws of the current approximation, where `g(θ)/q(θ)` is largest
/// (or a candidate drawn proportionally to that ratio).
///
/// In grid mode each coordinate is searched separately over `s` evenly
/// spaced values spanning the draws' range, the others held according to
/// `anchor`. In importance mode the `s` draws themselves are the
/// candidates.
pub fn init_new_mean<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    state: &CmgvaState<F>,
    s: usize,
    mode: InitMode,
    anchor: GridAnchor,
    selection: Selection,
    rng: &mut R,
) -> Result<Vec<F>> {
    check_dim("init target", state.dim(), target.dim())?;
    if s == 0 {
        return Err(CmgvaError::Domain("initialization needs at least one candidate".into()));
    }
    let q = state.prepare()?;
    let m = state.dim();
    let mode = match mode {
        InitMode::Auto if m <= 20 => InitMode::Grid,
        InitMode::Auto => InitMode::Importance,
        other => other,
    };
    let draws = q.sample(s, rng);
    let log_w = |phis: &[Vec<F>]| -> Vec<F> {
        phis.par_iter()
            .map(|phi| {
                let theta = q.yj().inverse(phi);
                match target.log_density(&theta) {
                    Ok(lg) => lg - q.log_density(&theta),
                    Err(_) => F::nan(),
                }
            })
            .collect()
    };
    match mode {
        InitMode::Importance | InitMode::Auto => {
            let phis: Vec<Vec<F>> = draws.into_iter().map(|d| d.phi).collect();
            let lw = log_w(&phis);
            match pick(&lw, selection, rng) {
                Some(k) => Ok(phis[k].clone()),
                None => Ok(q.sample_one(rng).phi),
            }
        }
        InitMode::Grid => {
            let centre = state.mean_phi();
            let mut mu = centre.clone();
            for i in 0..m {
                let (lo, hi) = draws.iter().fold((F::infinity(), F::neg_infinity()), |(a, b), d| {
                    (a.min(d.phi[i]), b.max(d.phi[i]))
                });
                let grid: Vec<F> = if s == 1 {
                    vec![lo]
                } else {
                    let step = (hi - lo) / F::from_usize_lossy(s - 1);
                    (0..s).map(|k| lo + step * F::from_usize_lossy(k)).collect()
                };
                let base = match anchor {
                    GridAnchor::Mean => &centre,
                    GridAnchor::Sweep => &mu,
                };
                let phis: Vec<Vec<F>> = grid
                    .iter()
                    .map(|&g| {
                        let mut p = base.clone();
                        p[i] = g;
                        p
                    })
                    .collect();
                let lw = log_w(&phis);
                mu[i] = match pick(&lw, selection, rng) {
                    Some(k) => grid[k],
                    None => q.sample_one(rng).phi[i],
                };
            }
            Ok(mu)
        }
    }
}

/// Index chosen from log-weights; `None` when none is finite.
fn pick<F: Real, R: Rng + ?Sized>(log_w: &[F], selection: Selection, rng: &mut R) -> Option<usize> {
    let finite: Vec<F> = log_w
        .iter()
        .map(|&l| if l.is_finite() { l } else { F::neg_infinity() })
        .collect();
    let top = log_sum_exp(&finite);
    if !top.is_finite() {
        return None;
    }
    match selection {
        Selection::Argmax => {
            let mut best = 0;
            for (k, &l) in finite.iter().enumerate() {
                if l > finite[best] {
                    best = k;
                }
            }
            Some(best)
        }
        Selection::Proportional => {
            let w: Vec<F> = finite.iter().map(|&l| (l - top).exp()).collect();
            Some(categorical(rng, &w))
        }
    }
}

/// Parameters of the component being added.
#[derive(Clone, Debug)]
struct NewParams<F> {
    comp: Component<F>,
    rho: F,
}

#[derive(Clone, Debug)]
struct NewAdam<F> {
    mu: AdamState<F>,
    beta: AdamState<F>,
    d: AdamState<F>,
    rho: AdamState<F>,
}

/// One round of adding a component: a fresh component starts at
/// [`init_new_mean`] with `β ~ N(0, 0.01²)`, `d = 0.01` and weight 0.5, and
/// is optimized with the existing components frozen.
///
/// Each iteration estimates the loading and scale gradients with lagged
/// control variates, preconditions them, takes an ADAM step, then draws a
/// fresh batch for the weight and mean updates.
pub fn add_component<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    state: &CmgvaState<F>,
    cfg: &BoostConfig<F>,
    rng: &mut R,
) -> Result<(CmgvaState<F>, ElboTrace<F>)> {
    cfg.validate()?;
    let m = state.dim();
    let mu0 = init_new_mean(
        target,
        state,
        cfg.init_samples,
        cfg.resolved_init_mode(m),
        cfg.grid_anchor,
        cfg.selection,
        rng,
    )?;
    let r = cfg.r_added.min(m);
    let comp = Component::new(mu0, random_loadings(m, r, rng), r, vec![F::lit(INIT_SCALE); m])?;
    add_component_from(target, state, cfg, comp, F::lit(INIT_WEIGHT), rng)
}

/// [`add_component`] from a given starting component and weight.
pub fn add_component_from<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    state: &CmgvaState<F>,
    cfg: &BoostConfig<F>,
    start: Component<F>,
    pi_start: F,
    rng: &mut R,
) -> Result<(CmgvaState<F>, ElboTrace<F>)> {
    cfg.validate()?;
    check_dim("new component", state.dim(), start.dim())?;
    let m = state.dim();
    let r = start.rank();
    let nb = vech_len(m, r);
    let old = state.prepare()?;
    let mut params = NewParams {
        comp: start,
        rho: rho_from_pi(pi_start),
    };
    let mut adam = NewAdam {
        mu: AdamState::new(m, cfg.alpha_mu),
        beta: AdamState::new(nb, cfg.alpha_beta),
        d: AdamState::new(m, cfg.alpha_d),
        rho: AdamState::new(1, cfg.alpha_pi),
    };
    let mut cv_beta = vec![F::zero(); nb];
    let mut cv_d = vec![F::zero(); m];
    let mut checkpoint = params.clone();
    let mut trace = ElboTrace::default();
    let mut monitor = Monitor::new(cfg);

    for t in 0..cfg.iters_per_component {
        let step = add_step(
            target,
            &old,
            cfg,
            &mut params,
            &mut adam,
            (&mut cv_beta, &mut cv_d),
            rng,
        );
        let ok = params.rho.is_finite()
            && all_finite(params.comp.mu())
            && all_finite(params.comp.beta())
            && all_finite(params.comp.d());
        match step {
            Ok(elbo) if elbo.is_finite() && ok => {
                trace.values.push(elbo);
                if monitor.push(&trace) {
                    trace.stopped_early = true;
                    break;
                }
            }
            Ok(_) => {
                params = checkpoint.clone();
                trace.diverged = true;
                break;
            }
            Err(e) if e.is_numerical() => {
                params = checkpoint.clone();
                trace.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if (t + 1) % cfg.checkpoint_every == 0 {
            checkpoint = params.clone();
        }
    }
    let next = state.with_new_component(params.comp, pi_from_rho(params.rho))?;
    Ok((next, trace))
}

fn add_step<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    old: &PreparedMixture<F>,
    cfg: &BoostConfig<F>,
    params: &mut NewParams<F>,
    adam: &mut NewAdam<F>,
    cv: (&mut Vec<F>, &mut Vec<F>),
    rng: &mut R,
) -> Result<F> {
    let (cv_beta, cv_d) = cv;
    let r = params.comp.rank();

    // loadings and scales
    let pi = pi_from_rho(params.rho);
    let new = params.comp.prepare()?;
    let batch = gradient_batch(target, old, &new, pi, cfg.samples, rng)?;
    let g_beta = cv_gradient(&batch.log_ratio, &batch.grads_beta, cv_beta);
    let g_d = cv_gradient(&batch.log_ratio, &batch.grads_d, cv_d);
    *cv_beta = cv_coeffs(&batch.log_ratio, &batch.grads_beta);
    *cv_d = cv_coeffs(&batch.log_ratio, &batch.grads_d);
    let elbo = batch.mean_log_ratio();
    let beta = params.comp.beta().to_vec();
    let pre = match (cfg.preconditioner, r) {
        (Preconditioner::ClosedForm, 1) => {
            Some(natural_gradient_beta_d(&beta, params.comp.d(), &g_beta, &g_d)?)
        }
        (Preconditioner::BlockFisher, 1) => {
            Some(block_fisher_beta_d(&beta, params.comp.d(), &g_beta, &g_d)?)
        }
        _ => None,
    };
    // a near-singular Fisher block (some d_i ≈ 0) falls back to the raw step
    let (nb, nd) = match pre {
        Some((nb, nd)) if all_finite(&nb) && all_finite(&nd) => (nb, nd),
        _ => (g_beta, g_d),
    };
    if !all_finite(&nb) || !all_finite(&nd) {
        return Err(CmgvaError::Numerical("non-finite loading or scale gradient".into()));
    }
    let db = adam.beta.step(&nb);
    let dd = adam.d.step(&nd);
    let mut vb = params.comp.vech_beta();
    vb.iter_mut().zip(db).for_each(|(a, b)| *a += b);
    params.comp.set_vech_beta(&vb);
    let d: Vec<F> = params.comp.d().iter().zip(dd).map(|(&a, b)| a + b).collect();
    params.comp.set_d(d);

    // weight and mean, from a fresh batch
    let new = params.comp.prepare()?;
    let ext = old.extended(new.clone(), pi);
    let draws: Vec<_> = (0..cfg.samples)
        .map(|_| sample_extended(old, &new, pi, rng))
        .collect();
    let rows: Vec<(F, crate::mixture::Responsibilities<F>, Vec<F>)> = draws
        .par_iter()
        .map(|dr| {
            let (lg, gg) = target.log_density_and_grad(&dr.theta)?;
            let resp = responsibilities(&dr.phi, old, &new, pi);
            let lq = resp.log_delta_tot + old.yj().log_jacobian(&dr.theta);
            let f = lg - lq;
            if !f.is_finite() {
                return Err(CmgvaError::Numerical(format!("non-finite log-ratio {f}")));
            }
            let gq = ext.grad_log_density(&dr.theta);
            let (deriv, _) = old.yj().derivs(&dr.theta);
            let diff: Vec<F> = gg
                .iter()
                .zip(gq.iter().zip(&deriv))
                .map(|(&a, (&b, &t))| (a - b) / t)
                .collect();
            Ok((f, resp, diff))
        })
        .collect::<Result<_>>()?;
    let fbar = mean(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let n = F::from_usize_lossy(rows.len());
    let g_rho = rows
        .iter()
        .map(|(f, resp, _)| (resp.delta_old - resp.delta_new) * (*f - fbar))
        .sum::<F>()
        / n;
    let diffs: Vec<Vec<F>> = rows.iter().map(|r| r.2.clone()).collect();
    let d2: Vec<F> = rows.iter().map(|r| r.1.delta_new).collect();
    let g_mu = mu_natural_gradient(&new, &diffs, &d2)?;
    if !g_rho.is_finite() || !all_finite(&g_mu) {
        return Err(CmgvaError::Numerical("non-finite weight or mean gradient".into()));
    }
    params.rho += adam.rho.step(&[g_rho])[0];
    let dm = adam.mu.step(&g_mu);
    let mu: Vec<F> = params.comp.mu().iter().zip(dm).map(|(&a, b)| a + b).collect();
    params.comp.set_mu(mu);
    Ok(elbo)
}

/// Result of a full boosting run.
#[derive(Clone, Debug)]
pub struct BoostOutcome<F> {
    /// `states[k]` has `k + 1` components.
    pub states: Vec<CmgvaState<F>>,
    pub traces: Vec<ElboTrace<F>>,
    /// Window-average ELBO per K.
    pub window_elbos: Vec<F>,
    /// Number of components with the largest window-average ELBO.
    pub best_k: usize,
}

impl<F: Real> BoostOutcome<F> {
    pub fn best_state(&self) -> &CmgvaState<F> {
        &self.states[self.best_k - 1]
    }
}

/// Fits the first component, then adds components up to
/// `cfg.max_components`, recording the window-average ELBO of each K.
pub fn boost<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    cfg: &BoostConfig<F>,
    rng: &mut R,
) -> Result<BoostOutcome<F>> {
    boost_with(target, cfg, rng, |_, _, _| Ok(()))
}

/// [`boost`] with a callback after each K (`K`, state, trace), e.g. for
/// checkpointing.
pub fn boost_with<F, T, R, C>(
    target: &T,
    cfg: &BoostConfig<F>,
    rng: &mut R,
    mut on_round: C,
) -> Result<BoostOutcome<F>>
where
    F: Real,
    T: TargetModel<F> + ?Sized,
    R: Rng + ?Sized,
    C: FnMut(usize, &CmgvaState<F>, &ElboTrace<F>) -> Result<()>,
{
    cfg.validate()?;
    let (mut state, trace) = fit_first_component(target, cfg, rng)?;
    state.freeze_all();
    on_round(1, &state, &trace)?;
    let mut out = BoostOutcome {
        window_elbos: vec![trace.window_average(cfg.elbo_window)],
        states: vec![state.clone()],
        traces: vec![trace],
        best_k: 1,
    };
    for k in 2..=cfg.max_components {
        let (next, trace) = add_component(target, &state, cfg, rng)?;
        state = next;
        state.freeze_all();
        on_round(k, &state, &trace)?;
        out.window_elbos.push(trace.window_average(cfg.elbo_window));
        out.states.push(state.clone());
        out.traces.push(trace);
    }
    let mut best = 0;
    for (k, &e) in out.window_elbos.iter().enumerate() {
        if e > out.window_elbos[best] {
            best = k;
        }
    }
    out.best_k = best + 1;
    Ok(out)
}
