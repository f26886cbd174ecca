//! Element-wise Yeo-Johnson transforms `φ = t_γ(θ)` used for the copula
//! margins.
//!
//! For `θ ≥ 0`: `t_γ(θ) = ((θ+1)^γ − 1)/γ` (`ln(θ+1)` at `γ = 0`).
//! For `θ < 0`: `t_γ(θ) = −((1−θ)^(2−γ) − 1)/(2−γ)` (`−ln(1−θ)` at `γ = 2`).
//!
//! Both branches are written as `expm1(λx)/λ` with `x = ln(1+|θ|)`, which is
//! exact near `λ = 0`. `γ` is restricted to the open interval `(0, 2)`, where
//! the map is a bijection of the real line.

use serde::{Deserialize, Serialize};

use crate::real::sigmoid;
use crate::{CmgvaError, Real, Result};

/// Below this branch exponent the logarithmic limit is used directly.
const LIMIT_EPS: f64 = 1e-8;

#[inline]
fn check_finite<F: Real>(x: F, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(CmgvaError::Domain(format!("{what} is not finite: {x}")))
    }
}

#[inline]
fn check_gamma<F: Real>(gamma: F) -> Result<()> {
    if gamma > F::zero() && gamma < F::two() {
        Ok(())
    } else {
        Err(CmgvaError::Domain(format!(
            "Yeo-Johnson parameter {gamma} outside (0, 2)"
        )))
    }
}

/// `expm1(λx)/λ`, with the `λ → 0` limit `x`.
#[inline]
fn power_family<F: Real>(x: F, lambda: F) -> F {
    if lambda.abs() < F::lit(LIMIT_EPS) {
        x
    } else {
        (lambda * x).exp_m1() / lambda
    }
}

/// `∂/∂λ [expm1(λx)/λ]`.
#[inline]
fn power_family_dlambda<F: Real>(x: F, lambda: F) -> F {
    let u = lambda * x;
    if u.abs() < F::lit(1e-3) {
        // x²(1/2 + u/3 + u²/8 + u³/30)
        x * x * (F::half() + u * (F::lit(1.0 / 3.0) + u * (F::lit(0.125) + u / F::lit(30.0))))
    } else {
        (u * u.exp() - u.exp_m1()) / (lambda * lambda)
    }
}

#[inline]
pub(crate) fn forward_unchecked<F: Real>(theta: F, gamma: F) -> F {
    if gamma == F::one() {
        theta
    } else if theta >= F::zero() {
        power_family(theta.ln_1p(), gamma)
    } else {
        -power_family((-theta).ln_1p(), F::two() - gamma)
    }
}

#[inline]
pub(crate) fn inverse_unchecked<F: Real>(phi: F, gamma: F) -> F {
    if gamma == F::one() {
        phi
    } else if phi >= F::zero() {
        if gamma < F::lit(LIMIT_EPS) {
            phi.exp_m1()
        } else {
            ((gamma * phi).ln_1p() / gamma).exp_m1()
        }
    } else {
        let eta = F::two() - gamma;
        if eta < F::lit(LIMIT_EPS) {
            -(-phi).exp_m1()
        } else {
            -((-eta * phi).ln_1p() / eta).exp_m1()
        }
    }
}

/// `ln ṫ_γ(θ)` where `ṫ = dφ/dθ`.
#[inline]
pub(crate) fn log_deriv_unchecked<F: Real>(theta: F, gamma: F) -> F {
    if theta >= F::zero() {
        (gamma - F::one()) * theta.ln_1p()
    } else {
        (F::one() - gamma) * (-theta).ln_1p()
    }
}

/// `d/dθ ln ṫ_γ(θ)`.
#[inline]
pub(crate) fn dlog_deriv_unchecked<F: Real>(theta: F, gamma: F) -> F {
    if theta >= F::zero() {
        (gamma - F::one()) / (F::one() + theta)
    } else {
        (gamma - F::one()) / (F::one() - theta)
    }
}

/// Partial derivatives with respect to `γ` at fixed `θ`:
/// `(∂φ/∂γ, ∂ ln ṫ/∂γ)`.
#[inline]
pub(crate) fn gamma_partials_unchecked<F: Real>(theta: F, gamma: F) -> (F, F) {
    if theta >= F::zero() {
        let x = theta.ln_1p();
        (power_family_dlambda(x, gamma), x)
    } else {
        let x = (-theta).ln_1p();
        (power_family_dlambda(x, F::two() - gamma), -x)
    }
}

/// `φ = t_γ(θ)`.
pub fn yj_forward<F: Real>(theta: F, gamma: F) -> Result<F> {
    check_finite(theta, "theta")?;
    check_gamma(gamma)?;
    Ok(forward_unchecked(theta, gamma))
}

/// `θ = t_γ⁻¹(φ)`.
pub fn yj_inverse<F: Real>(phi: F, gamma: F) -> Result<F> {
    check_finite(phi, "phi")?;
    check_gamma(gamma)?;
    Ok(inverse_unchecked(phi, gamma))
}

/// Returns `(dφ/dθ, d/dθ ln(dφ/dθ))`.
pub fn yj_log_jacobian<F: Real>(theta: F, gamma: F) -> Result<(F, F)> {
    check_finite(theta, "theta")?;
    check_gamma(gamma)?;
    Ok((
        log_deriv_unchecked(theta, gamma).exp(),
        dlog_deriv_unchecked(theta, gamma),
    ))
}

/// Returns `(∂φ/∂γ, ∂ ln(dφ/dθ)/∂γ)` at fixed `θ`.
pub fn yj_gamma_partials<F: Real>(theta: F, gamma: F) -> Result<(F, F)> {
    check_finite(theta, "theta")?;
    check_gamma(gamma)?;
    Ok(gamma_partials_unchecked(theta, gamma))
}

/// Unconstrained coordinate for `γ`: `γ = 2·sigmoid(ψ)`.
pub fn gamma_from_psi<F: Real>(psi: F) -> F {
    F::two() * sigmoid(psi)
}

pub fn psi_from_gamma<F: Real>(gamma: F) -> F {
    let p = gamma / F::two();
    (p / (F::one() - p)).ln()
}

/// `dγ/dψ` expressed through `γ`.
pub fn dgamma_dpsi<F: Real>(gamma: F) -> F {
    gamma * (F::one() - gamma / F::two())
}

/// Per-coordinate Yeo-Johnson parameters (the copula margins).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct YjVector<F> {
    gamma: Vec<F>,
}

impl<F: Real> YjVector<F> {
    pub fn new(gamma: Vec<F>) -> Result<Self> {
        for &g in &gamma {
            check_gamma(g)?;
        }
        Ok(Self { gamma })
    }

    /// All-ones vector: the identity transform.
    pub fn identity(m: usize) -> Self {
        Self {
            gamma: vec![F::one(); m],
        }
    }

    pub fn from_psi(psi: &[F]) -> Result<Self> {
        Self::new(psi.iter().map(|&p| gamma_from_psi(p)).collect())
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[F] {
        &self.gamma
    }

    pub fn is_identity(&self) -> bool {
        self.gamma.iter().all(|&g| g == F::one())
    }

    pub fn forward(&self, theta: &[F]) -> Vec<F> {
        theta
            .iter()
            .zip(&self.gamma)
            .map(|(&t, &g)| forward_unchecked(t, g))
            .collect()
    }

    pub fn inverse(&self, phi: &[F]) -> Vec<F> {
        phi.iter()
            .zip(&self.gamma)
            .map(|(&p, &g)| inverse_unchecked(p, g))
            .collect()
    }

    /// `Σ_i ln ṫ_γi(θ_i)`.
    pub fn log_jacobian(&self, theta: &[F]) -> F {
        theta
            .iter()
            .zip(&self.gamma)
            .map(|(&t, &g)| log_deriv_unchecked(t, g))
            .sum()
    }

    pub fn log_deriv(&self, i: usize, theta_i: F) -> F {
        log_deriv_unchecked(theta_i, self.gamma[i])
    }

    /// `(ṫ_γi(θ_i), d/dθ_i ln ṫ_γi(θ_i))` for every coordinate.
    pub fn derivs(&self, theta: &[F]) -> (Vec<F>, Vec<F>) {
        theta
            .iter()
            .zip(&self.gamma)
            .map(|(&t, &g)| {
                (
                    log_deriv_unchecked(t, g).exp(),
                    dlog_deriv_unchecked(t, g),
                )
            })
            .unzip()
    }

    pub fn gamma_partials(&self, theta: &[F]) -> (Vec<F>, Vec<F>) {
        theta
            .iter()
            .zip(&self.gamma)
            .map(|(&t, &g)| gamma_partials_unchecked(t, g))
            .unzip()
    }
}
