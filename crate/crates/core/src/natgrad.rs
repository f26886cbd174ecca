//! Preconditioned gradient transforms and ADAM.

use serde::{Deserialize, Serialize};

use crate::factor_gauss::FactorGaussian;
use crate::mixture::Responsibilities;
use crate::real::sigmoid;
use crate::{CmgvaError, Real, Result};

pub const TAU1: f64 = 0.9;
pub const TAU2: f64 = 0.99;
pub const ADAM_EPS: f64 = 1e-8;

/// Perturbation applied to an exactly-zero `v1` entry.
const V1_NUDGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct AdamState<F> {
    pub m_t: Vec<F>,
    pub v_t: Vec<F>,
    pub t: u64,
    pub tau1: F,
    pub tau2: F,
    pub eps: F,
    pub alpha: F,
}

impl<F: Real> AdamState<F> {
    /// Fresh state with the default decay rates and `ε`.
    pub fn new(n: usize, alpha: F) -> Self {
        Self {
            m_t: vec![F::zero(); n],
            v_t: vec![F::zero(); n],
            t: 0,
            tau1: F::lit(TAU1),
            tau2: F::lit(TAU2),
            eps: F::lit(ADAM_EPS),
            alpha,
        }
    }

    pub fn len(&self) -> usize {
        self.m_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_t.is_empty()
    }

    /// Advances the moment estimates with `g` and returns the step `Δ`.
    pub fn step(&mut self, g: &[F]) -> Vec<F> {
        assert_eq!(g.len(), self.m_t.len(), "ADAM gradient length");
        self.t += 1;
        let one = F::one();
        let t = self.t.min(i32::MAX as u64) as i32;
        let bc1 = one - self.tau1.powi(t);
        let bc2 = one - self.tau2.powi(t);
        g.iter()
            .zip(self.m_t.iter_mut().zip(self.v_t.iter_mut()))
            .map(|(&gi, (m, v))| {
                *m = self.tau1 * *m + (one - self.tau1) * gi;
                *v = self.tau2 * *v + (one - self.tau2) * gi * gi;
                let mh = *m / bc1;
                let vh = *v / bc2;
                self.alpha * mh / (vh.sqrt() + self.eps)
            })
            .collect()
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<F: Real>(state: &AdamState<F>, g: &[F]) -> Result<(Vec<F>, AdamState<F>)> {
    if g.len() != state.len() {
        return Err(CmgvaError::dim("adam_step", state.len(), g.len()));
    }
    let mut next = state.clone();
    let delta = next.step(g);
    Ok((delta, next))
}

fn check_rank_one<F: Real>(beta: &[F], d: &[F], g_beta: &[F], g_d: &[F]) -> Result<()> {
    let m = d.len();
    for (ctx, len) in [("beta", beta.len()), ("g_beta", g_beta.len()), ("g_d", g_d.len())] {
        if len != m {
            return Err(CmgvaError::dim(ctx, m, len));
        }
    }
    Ok(())
}

/// Rank-one loading/scale preconditioner in the closed form
///
/// ```text
/// v1 = d² − 2β²∘d⁻⁴,  v2 = β²∘d⁻³,
/// κ1 = Σ β_i²/d_i²,   κ2 = ½ (1 + Σ v2_i²/v1_i)⁻¹,
/// gβ ← (1+κ1)/(2κ1) · ((gβᵀβ)β + d²∘gβ),
/// gd ← ½ v1⁻¹∘gd + κ2 [(v1⁻¹∘v2)ᵀ gd] (v1⁻¹∘v2).
/// ```
///
/// With `β ≡ 0` the loading output is `d²∘gβ`.
pub fn natural_gradient_beta_d<F: Real>(
    beta: &[F],
    d: &[F],
    g_beta: &[F],
    g_d: &[F],
) -> Result<(Vec<F>, Vec<F>)> {
    check_rank_one(beta, d, g_beta, g_d)?;
    let d = floored_d(d);
    let two = F::two();
    let d2: Vec<F> = d.iter().map(|&x| x * x).collect();
    let b2: Vec<F> = beta.iter().map(|&b| b * b).collect();
    let v1: Vec<F> = b2
        .iter()
        .zip(&d2)
        .map(|(&b, &dd)| nudge(dd - two * b / (dd * dd)))
        .collect();
    let v2: Vec<F> = b2.iter().zip(&d).map(|(&b, &x)| b / (x * x * x)).collect();
    let kappa1: F = b2.iter().zip(&d2).map(|(&b, &dd)| b / dd).sum();
    let kappa2 = F::half() / (F::one() + v2.iter().zip(&v1).map(|(&a, &b)| a * a / b).sum::<F>());

    let gnat_beta = if kappa1 == F::zero() {
        d2.iter().zip(g_beta).map(|(&dd, &g)| dd * g).collect()
    } else {
        let coef = (F::one() + kappa1) / (two * kappa1);
        let gtb: F = g_beta.iter().zip(beta).map(|(&g, &b)| g * b).sum();
        beta.iter()
            .zip(d2.iter().zip(g_beta))
            .map(|(&b, (&dd, &g))| coef * (gtb * b + dd * g))
            .collect()
    };

    let u: Vec<F> = v2.iter().zip(&v1).map(|(&a, &b)| a / b).collect();
    let ug: F = u.iter().zip(g_d).map(|(&a, &g)| a * g).sum();
    let gnat_d = v1
        .iter()
        .zip(u.iter().zip(g_d))
        .map(|(&v, (&ui, &g))| F::half() * g / v + kappa2 * ug * ui)
        .collect();
    Ok((gnat_beta, gnat_d))
}

/// Exact inverse of the two diagonal Fisher blocks (loadings, scales) of a
/// rank-one factor Gaussian `N(μ, ββᵀ + D²)`.
///
/// With `κ = Σ β_i²/d_i²`:
///
/// ```text
/// F_ββ⁻¹ g = (1+κ)/κ · Σ g − (1+κ)²/(2κ²) · β (βᵀg)
/// F_dd    = 2 (diag(v1) + v2 v2ᵀ),
///   v1 = d⁻² − 2β²∘d⁻⁴/(1+κ),  v2 = β²∘d⁻³/(1+κ)
/// ```
///
/// and `F_dd⁻¹` applied by Sherman-Morrison. Loadings fall back to `d²∘g`
/// when `β ≡ 0`.
pub fn block_fisher_beta_d<F: Real>(
    beta: &[F],
    d: &[F],
    g_beta: &[F],
    g_d: &[F],
) -> Result<(Vec<F>, Vec<F>)> {
    check_rank_one(beta, d, g_beta, g_d)?;
    let d = floored_d(d);
    let one = F::one();
    let two = F::two();
    let d2: Vec<F> = d.iter().map(|&x| x * x).collect();
    let b2: Vec<F> = beta.iter().map(|&b| b * b).collect();
    let kappa: F = b2.iter().zip(&d2).map(|(&b, &dd)| b / dd).sum();

    let gnat_beta = if kappa == F::zero() {
        d2.iter().zip(g_beta).map(|(&dd, &g)| dd * g).collect()
    } else {
        let btg: F = beta.iter().zip(g_beta).map(|(&b, &g)| b * g).sum();
        let c1 = (one + kappa) / kappa;
        let c2 = c1 * c1 / two;
        beta.iter()
            .zip(d2.iter().zip(g_beta))
            .map(|(&b, (&dd, &g))| c1 * (b * btg + dd * g) - c2 * b * btg)
            .collect()
    };

    let s = one + kappa;
    let v1: Vec<F> = b2
        .iter()
        .zip(&d2)
        .map(|(&b, &dd)| nudge(one / dd - two * b / (dd * dd * s)))
        .collect();
    let v2: Vec<F> = b2.iter().zip(&d).map(|(&b, &x)| b / (x * x * x * s)).collect();
    let u: Vec<F> = v2.iter().zip(&v1).map(|(&a, &b)| a / b).collect();
    let denom = one + v2.iter().zip(&u).map(|(&a, &b)| a * b).sum::<F>();
    let ug: F = u.iter().zip(g_d).map(|(&a, &g)| a * g).sum();
    let gnat_d = v1
        .iter()
        .zip(u.iter().zip(g_d))
        .map(|(&v, (&ui, &g))| F::half() * (g / v - ug * ui / denom))
        .collect();
    Ok((gnat_beta, gnat_d))
}

fn floored_d<F: Real>(d: &[F]) -> Vec<F> {
    let floor = F::lit(crate::factor_gauss::D_FLOOR);
    d.iter().map(|&x| x.abs().max(floor)).collect()
}

fn nudge<F: Real>(v: F) -> F {
    if v == F::zero() {
        F::lit(V1_NUDGE)
    } else {
        v
    }
}

/// `π_new` from `ρ = ln(π′1/π′2)`.
pub fn pi_from_rho<F: Real>(rho: F) -> F {
    sigmoid(-rho)
}

pub fn rho_from_pi<F: Real>(pi: F) -> F {
    ((F::one() - pi) / pi).ln()
}

/// Ascent direction for `ρ = ln(π′1/π′2)`:
/// `mean_s[(δ1,s − δ2,s)·f_s]` with `f_s = ln g(θ_s) − ln q(θ_s)`.
pub fn pi_natural_gradient<F: Real>(log_ratio: &[F], resp: &[Responsibilities<F>]) -> Result<F> {
    if log_ratio.len() != resp.len() {
        return Err(CmgvaError::dim("pi update", log_ratio.len(), resp.len()));
    }
    if resp.is_empty() {
        return Ok(F::zero());
    }
    let s: F = resp
        .iter()
        .zip(log_ratio)
        .map(|(r, &f)| (r.delta_old - r.delta_new) * f)
        .sum();
    Ok(s / F::from_usize_lossy(resp.len()))
}

/// One natural-gradient step on the new weight through its log-odds,
/// `ρ ← ρ + a_t·mean_s[(δ1,s − δ2,s) f_s]`. The result stays in `(0, 1)`
/// except where `ρ` saturates the representable range.
pub fn update_pi<F: Real>(
    pi_new: F,
    log_ratio: &[F],
    resp: &[Responsibilities<F>],
    a_t: F,
) -> Result<F> {
    if !(pi_new > F::zero() && pi_new < F::one()) {
        return Err(CmgvaError::Domain(format!("pi_new = {pi_new} not in (0, 1)")));
    }
    let rho = rho_from_pi(pi_new) + a_t * pi_natural_gradient(log_ratio, resp)?;
    Ok(pi_from_rho(rho))
}

/// `mean_s[δ2,s · Σ_new · grad_diff_s]`, with `Σ_new x` in `O(m r)`.
pub fn mu_natural_gradient<F: Real>(
    new: &FactorGaussian<F>,
    grad_diff: &[Vec<F>],
    delta_new: &[F],
) -> Result<Vec<F>> {
    if grad_diff.len() != delta_new.len() {
        return Err(CmgvaError::dim("mu update", grad_diff.len(), delta_new.len()));
    }
    let m = new.dim();
    let mut acc = vec![F::zero(); m];
    for (row, &w) in grad_diff.iter().zip(delta_new) {
        if row.len() != m {
            return Err(CmgvaError::dim("mu update row", m, row.len()));
        }
        if w == F::zero() {
            continue;
        }
        for (a, x) in acc.iter_mut().zip(new.mul(row)) {
            *a += w * x;
        }
    }
    let s = F::from_usize_lossy(grad_diff.len().max(1));
    acc.iter_mut().for_each(|a| *a /= s);
    Ok(acc)
}

/// `μ ← μ + a_t·mean_s[δ2,s Σ_new grad_diff_s]`.
pub fn update_mu<F: Real>(
    new: &FactorGaussian<F>,
    grad_diff: &[Vec<F>],
    delta_new: &[F],
    a_t: F,
) -> Result<Vec<F>> {
    let g = mu_natural_gradient(new, grad_diff, delta_new)?;
    Ok(new
        .component()
        .mu()
        .iter()
        .zip(g)
        .map(|(&m, gi)| m + a_t * gi)
        .collect())
}
