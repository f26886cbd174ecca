//! Monte Carlo ELBO estimates and score-function gradients.
//!
//! Draws are always taken sequentially from the caller's generator; only the
//! per-draw evaluations run on the rayon pool, and `collect` keeps them in
//! draw order, so results do not depend on the thread count.

use rand::Rng;
use rayon::prelude::*;

use crate::error::check_dim;
use crate::factor_gauss::FactorGaussian;
use crate::mixture::{
    responsibilities, sample_extended, CmgvaState, Draw, PreparedMixture, Responsibilities,
};
use crate::targets::TargetModel;
use crate::{CmgvaError, Real, Result};

/// Variances below this make a control-variate coefficient zero.
pub const CV_VAR_GUARD: f64 = 1e-30;

/// Per-sample quantities from one round of draws.
#[derive(Clone, Debug)]
pub struct GradientBatch<F> {
    pub samples: Vec<Draw<F>>,
    /// `ln g(θ_s) − ln q(θ_s)`.
    pub log_ratio: Vec<F>,
    /// `S` rows of `∇vech(β) ln q`.
    pub grads_beta: Vec<Vec<F>>,
    /// `S` rows of `∇d ln q`.
    pub grads_d: Vec<Vec<F>>,
}

impl<F: Real> GradientBatch<F> {
    pub fn len(&self) -> usize {
        self.log_ratio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_ratio.is_empty()
    }

    pub fn mean_log_ratio(&self) -> F {
        mean(&self.log_ratio)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlVariates<F> {
    pub c_beta: Vec<F>,
    pub c_d: Vec<F>,
}

impl<F: Real> ControlVariates<F> {
    pub fn zeros(n_beta: usize, m: usize) -> Self {
        Self {
            c_beta: vec![F::zero(); n_beta],
            c_d: vec![F::zero(); m],
        }
    }
}

pub(crate) fn mean<F: Real>(xs: &[F]) -> F {
    if xs.is_empty() {
        return F::zero();
    }
    xs.iter().copied().sum::<F>() / F::from_usize_lossy(xs.len())
}

fn finite_or<F: Real>(x: F, what: &str) -> Result<F> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(CmgvaError::Numerical(format!("non-finite {what}: {x}")))
    }
}

/// `ln g(θ) − ln q(θ)` for each draw, evaluated in parallel.
pub fn log_ratios<F: Real, T: TargetModel<F> + ?Sized>(
    target: &T,
    q: &PreparedMixture<F>,
    draws: &[Draw<F>],
) -> Result<Vec<F>> {
    draws
        .par_iter()
        .map(|d| {
            let lg = finite_or(target.log_density(&d.theta)?, "target log-density")?;
            let lq = finite_or(q.log_density(&d.theta), "approximation log-density")?;
            Ok(lg - lq)
        })
        .collect()
}

/// `S` per-sample ELBO terms `ln g(θ_s) − ln q(θ_s)`, `θ_s ~ q`.
pub fn elbo_samples<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    state: &CmgvaState<F>,
    s: usize,
    rng: &mut R,
) -> Result<Vec<F>> {
    check_dim("elbo target", state.dim(), target.dim())?;
    let q = state.prepare()?;
    let draws = q.sample(s, rng);
    log_ratios(target, &q, &draws)
}

/// `(1/S) Σ [ln g(θ_s) − ln q(θ_s)]`.
pub fn elbo_estimate<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    state: &CmgvaState<F>,
    s: usize,
    rng: &mut R,
) -> Result<F> {
    if s == 0 {
        return Err(CmgvaError::Domain("ELBO needs at least one sample".into()));
    }
    Ok(mean(&elbo_samples(target, state, s, rng)?))
}

/// Gradients of `ln q(θ)` for the (K+1)-component mixture with respect to the
/// new component's free loadings and `d`, at `φ = t_γ(θ)`: the new
/// component's Gaussian scores scaled by `π_new N_new(φ) / δ_tot`.
pub fn score_grads_beta_d<F: Real>(
    phi: &[F],
    old: &PreparedMixture<F>,
    new: &FactorGaussian<F>,
    pi_new: F,
) -> (Vec<F>, Vec<F>) {
    let resp = responsibilities(phi, old, new, pi_new);
    scaled_scores(phi, new, pi_new * resp.delta_new)
}

fn scaled_scores<F: Real>(phi: &[F], new: &FactorGaussian<F>, w: F) -> (Vec<F>, Vec<F>) {
    let sc = new.scores(phi);
    (
        sc.beta.into_iter().map(|g| g * w).collect(),
        sc.d.into_iter().map(|g| g * w).collect(),
    )
}

/// `∇θ ln q(θ)`.
pub fn grad_logq_theta<F: Real>(theta: &[F], state: &CmgvaState<F>) -> Result<Vec<F>> {
    check_dim("grad_logq_theta", state.dim(), theta.len())?;
    Ok(state.prepare()?.grad_log_density(theta))
}

/// Per-coordinate `c_i = cov(f·g_i, g_i) / var(g_i)` over the rows of
/// `scores`.
pub fn cv_coeffs<F: Real>(f: &[F], scores: &[Vec<F>]) -> Vec<F> {
    let s = f.len();
    let n = scores.first().map_or(0, |r| r.len());
    if s < 2 {
        return vec![F::zero(); n];
    }
    let sf = F::from_usize_lossy(s);
    (0..n)
        .map(|i| {
            let mg = scores.iter().map(|r| r[i]).sum::<F>() / sf;
            let mfg = scores.iter().zip(f).map(|(r, &fv)| fv * r[i]).sum::<F>() / sf;
            let mut cov = F::zero();
            let mut var = F::zero();
            for (r, &fv) in scores.iter().zip(f) {
                let dg = r[i] - mg;
                cov += (fv * r[i] - mfg) * dg;
                var += dg * dg;
            }
            if var / (sf - F::one()) < F::lit(CV_VAR_GUARD) {
                F::zero()
            } else {
                cov / var
            }
        })
        .collect()
}

/// `g_i = (1/S) Σ_s (f_s − c_i) score_{s,i}`.
pub fn cv_gradient<F: Real>(f: &[F], scores: &[Vec<F>], c: &[F]) -> Vec<F> {
    let n = c.len();
    let mut g = vec![F::zero(); n];
    for (r, &fv) in scores.iter().zip(f) {
        for i in 0..n {
            g[i] += (fv - c[i]) * r[i];
        }
    }
    let sf = F::from_usize_lossy(f.len().max(1));
    g.iter_mut().for_each(|v| *v /= sf);
    g
}

pub fn control_variate_coeffs<F: Real>(batch: &GradientBatch<F>) -> ControlVariates<F> {
    ControlVariates {
        c_beta: cv_coeffs(&batch.log_ratio, &batch.grads_beta),
        c_d: cv_coeffs(&batch.log_ratio, &batch.grads_d),
    }
}

/// Draws `S` samples from `(1−π_new)·old + π_new·new` and evaluates the
/// log-ratio and the new component's loading and scale scores.
pub fn gradient_batch<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    old: &PreparedMixture<F>,
    new: &FactorGaussian<F>,
    pi_new: F,
    s: usize,
    rng: &mut R,
) -> Result<GradientBatch<F>> {
    check_dim("gradient target", old.dim(), target.dim())?;
    let samples: Vec<Draw<F>> = (0..s)
        .map(|_| sample_extended(old, new, pi_new, rng))
        .collect();
    let rows: Vec<(F, Vec<F>, Vec<F>)> = samples
        .par_iter()
        .map(|d| {
            let resp: Responsibilities<F> = responsibilities(&d.phi, old, new, pi_new);
            let lq = resp.log_delta_tot + old.yj().log_jacobian(&d.theta);
            let lg = finite_or(target.log_density(&d.theta)?, "target log-density")?;
            let f = finite_or(lg - lq, "log-ratio")?;
            let (gb, gd) = scaled_scores(&d.phi, new, pi_new * resp.delta_new);
            Ok((f, gb, gd))
        })
        .collect::<Result<_>>()?;
    let mut batch = GradientBatch {
        samples,
        log_ratio: Vec::with_capacity(s),
        grads_beta: Vec::with_capacity(s),
        grads_d: Vec::with_capacity(s),
    };
    for (f, gb, gd) in rows {
        batch.log_ratio.push(f);
        batch.grads_beta.push(gb);
        batch.grads_d.push(gd);
    }
    Ok(batch)
}

/// Control-variate corrected gradient of the ELBO with respect to the new
/// component's `vech(β)` and `d`, using coefficients `cv` from an earlier
/// batch. Returns the fresh batch for the next round's coefficients.
#[allow(clippy::too_many_arguments)]
pub fn cv_gradient_estimate<F: Real, T: TargetModel<F> + ?Sized, R: Rng + ?Sized>(
    target: &T,
    old: &PreparedMixture<F>,
    new: &FactorGaussian<F>,
    pi_new: F,
    cv: &ControlVariates<F>,
    s: usize,
    rng: &mut R,
) -> Result<(Vec<F>, Vec<F>, GradientBatch<F>)> {
    if s < 2 {
        return Err(CmgvaError::Domain(
            "gradient estimation needs at least two samples".into(),
        ));
    }
    let batch = gradient_batch(target, old, new, pi_new, s, rng)?;
    check_dim("control variates (beta)", batch.grads_beta[0].len(), cv.c_beta.len())?;
    check_dim("control variates (d)", batch.grads_d[0].len(), cv.c_d.len())?;
    let g_beta = cv_gradient(&batch.log_ratio, &batch.grads_beta, &cv.c_beta);
    let g_d = cv_gradient(&batch.log_ratio, &batch.grads_d, &cv.c_d);
    Ok((g_beta, g_d, batch))
}
