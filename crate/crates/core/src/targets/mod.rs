//! Unnormalized log posteriors `ln g(θ)` with analytic gradients.

mod dfnn;
mod mixnormal;
mod pps;
mod regression;
mod special;
mod tcopula;

pub use dfnn::{Dfnn, DfnnSpec, GammaPrior};
pub use mixnormal::{equicorrelation, mixnormal_target, MixtureNormal};
pub use pps::{interaction_count, interaction_expand, posterior_mean, pps, PredictiveModel};
pub use regression::{linear_target, logistic_target, Linear, Logistic, SkewNormalMixture};
pub use special::{
    inv_mills, log_norm_cdf, norm_logpdf, skew_normal_grad_x, skew_normal_logpdf,
    SkewNormalParams,
};
pub use tcopula::{t_copula_target, TCopula};

use crate::{Real, Result};

pub trait TargetModel<F: Real>: Send + Sync {
    fn dim(&self) -> usize;

    /// `ln g(θ)`, up to an additive constant.
    fn log_density(&self, theta: &[F]) -> Result<F>;

    fn grad_log_density(&self, theta: &[F]) -> Result<Vec<F>>;

    fn log_density_and_grad(&self, theta: &[F]) -> Result<(F, Vec<F>)> {
        Ok((self.log_density(theta)?, self.grad_log_density(theta)?))
    }

    fn name(&self) -> &str;
}

impl<F: Real, T: TargetModel<F> + ?Sized> TargetModel<F> for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, theta: &[F]) -> Result<F> {
        (**self).log_density(theta)
    }
    fn grad_log_density(&self, theta: &[F]) -> Result<Vec<F>> {
        (**self).grad_log_density(theta)
    }
    fn log_density_and_grad(&self, theta: &[F]) -> Result<(F, Vec<F>)> {
        (**self).log_density_and_grad(theta)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

type LogFn<F> = dyn Fn(&[F]) -> F + Send + Sync;
type GradFn<F> = dyn Fn(&[F]) -> Vec<F> + Send + Sync;

/// Target built from closures.
pub struct FnTarget<F> {
    dim: usize,
    name: String,
    log: Box<LogFn<F>>,
    grad: Box<GradFn<F>>,
}

impl<F: Real> FnTarget<F> {
    pub fn new(
        dim: usize,
        name: impl Into<String>,
        log: impl Fn(&[F]) -> F + Send + Sync + 'static,
        grad: impl Fn(&[F]) -> Vec<F> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            name: name.into(),
            log: Box::new(log),
            grad: Box::new(grad),
        }
    }
}

impl<F: Real> TargetModel<F> for FnTarget<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, theta: &[F]) -> Result<F> {
        crate::error::check_dim("target", self.dim, theta.len())?;
        Ok((self.log)(theta))
    }
    fn grad_log_density(&self, theta: &[F]) -> Result<Vec<F>> {
        crate::error::check_dim("target", self.dim, theta.len())?;
        Ok((self.grad)(theta))
    }
    fn name(&self) -> &str {
        &self.name
    }
}

/// Independent standard normal target in `m` dimensions.
pub fn standard_normal<F: Real>(m: usize) -> FnTarget<F> {
    FnTarget::new(
        m,
        "standard-normal",
        move |t: &[F]| {
            let q: F = t.iter().map(|&x| x * x).sum();
            -F::half() * q - F::from_usize_lossy(m) * F::half_ln_2pi()
        },
        |t: &[F]| t.iter().map(|&x| -x).collect(),
    )
}
