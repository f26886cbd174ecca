use rand::Rng;

use crate::error::check_dim;
use crate::mixture::CmgvaState;
use crate::{CmgvaError, Real, Result};

use super::regression::Linear;

/// A likelihood that can score a held-out observation at fixed parameters.
pub trait PredictiveModel<F: Real> {
    /// Covariates per observation row.
    fn num_inputs(&self) -> usize;

    /// `ln p(y | x, θ)`.
    fn log_predictive(&self, theta: &[F], x: &[F], y: F) -> Result<F>;
}

impl<F: Real> PredictiveModel<F> for Linear<F> {
    fn num_inputs(&self) -> usize {
        self.num_coefficients()
    }

    fn log_predictive(&self, theta: &[F], x: &[F], y: F) -> Result<F> {
        let p = self.num_coefficients();
        check_dim("linear parameters", p + 1, theta.len())?;
        check_dim("covariates", p, x.len())?;
        let tau2 = theta[p].exp();
        let r = y - x.iter().zip(theta).map(|(&a, &b)| a * b).sum::<F>();
        Ok(-F::half_ln_2pi() - F::half() * theta[p] - F::half() * r * r / tau2)
    }
}

/// Partial predictive score `−(1/n) Σ ln p(y_i | x_i, θ̂)`; lower is better.
/// `test_x` is row-major with `model.num_inputs()` columns.
pub fn pps<F: Real, M: PredictiveModel<F> + ?Sized>(
    model: &M,
    theta_hat: &[F],
    test_x: &[F],
    test_y: &[F],
) -> Result<F> {
    if test_y.is_empty() {
        return Err(CmgvaError::Domain("empty test set".into()));
    }
    let p = model.num_inputs();
    check_dim("test design", test_y.len() * p, test_x.len())?;
    let mut s = F::zero();
    for (i, &y) in test_y.iter().enumerate() {
        s += model.log_predictive(theta_hat, &test_x[i * p..(i + 1) * p], y)?;
    }
    Ok(-s / F::from_usize_lossy(test_y.len()))
}

/// Mean of `s` draws of `θ` from the approximation.
pub fn posterior_mean<F: Real, R: Rng + ?Sized>(
    state: &CmgvaState<F>,
    s: usize,
    rng: &mut R,
) -> Result<Vec<F>> {
    if s == 0 {
        return Err(CmgvaError::Domain("posterior mean needs at least one draw".into()));
    }
    let q = state.prepare()?;
    let mut acc = vec![F::zero(); state.dim()];
    for _ in 0..s {
        let d = q.sample_one(rng);
        for (a, t) in acc.iter_mut().zip(d.theta) {
            *a += t;
        }
    }
    let sf = F::from_usize_lossy(s);
    acc.iter_mut().for_each(|a| *a /= sf);
    Ok(acc)
}

/// Columns produced by [`interaction_expand`] from `p` covariates.
pub fn interaction_count(p: usize) -> usize {
    1 + p + p * p.saturating_sub(1) / 2
}

/// Intercept, the `p` covariates, then every product `x_i x_j` with `i < j`.
/// `x` is row-major `n × p`.
pub fn interaction_expand<F: Real>(x: &[F], p: usize) -> Result<Vec<F>> {
    if p == 0 || x.len() % p != 0 {
        return Err(CmgvaError::Domain(format!(
            "covariate block of length {} is not a multiple of {p}",
            x.len()
        )));
    }
    let cols = interaction_count(p);
    let mut out = Vec::with_capacity(x.len() / p * cols);
    for row in x.chunks(p) {
        out.push(F::one());
        out.extend_from_slice(row);
        for i in 0..p {
            for j in i + 1..p {
                out.push(row[i] * row[j]);
            }
        }
    }
    Ok(out)
}
