use crate::error::check_dim;
use crate::transform::YjVector;
use crate::{CmgvaError, Real, Result};

use super::TargetModel;

/// `π(θ) = t_ν(ζ; 0, R) Π_i |dζ_i/dθ_i|` with `ζ_i = t_γi(θ_i)` and `R` the
/// equicorrelation matrix with off-diagonal `ρ`.
#[derive(Clone, Debug)]
pub struct TCopula<F> {
    m: usize,
    rho: F,
    df: F,
    yj: YjVector<F>,
    log_norm: F,
    /// `R⁻¹ = a·I − b·11ᵀ`
    inv_a: F,
    inv_b: F,
}

pub fn t_copula_target<F: Real>(m: usize, rho: F, df: F, yj_gamma: F) -> Result<TCopula<F>> {
    TCopula::new(m, rho, df, YjVector::new(vec![yj_gamma; m])?)
}

impl<F: Real> TCopula<F> {
    pub fn new(m: usize, rho: F, df: F, yj: YjVector<F>) -> Result<Self> {
        check_dim("t-copula transform", m, yj.dim())?;
        let one = F::one();
        let mf = F::from_usize_lossy(m);
        let lead = one + (mf - one) * rho;
        if m == 0 || !(rho < one) || !(lead > F::zero()) {
            return Err(CmgvaError::Domain(format!(
                "equicorrelation {rho} is not positive definite in dimension {m}"
            )));
        }
        if !(df > F::zero()) {
            return Err(CmgvaError::Domain(format!("degrees of freedom {df} must be positive")));
        }
        let log_det = (mf - one) * (one - rho).ln() + lead.ln();
        let half = F::half();
        let log_norm = ((df + mf) * half).ln_gamma()
            - (df * half).ln_gamma()
            - half * mf * (df * F::PI()).ln()
            - half * log_det;
        Ok(Self {
            m,
            rho,
            df,
            yj,
            log_norm,
            inv_a: one / (one - rho),
            inv_b: rho / ((one - rho) * lead),
        })
    }

    pub fn rho(&self) -> F {
        self.rho
    }

    pub fn df(&self) -> F {
        self.df
    }

    pub fn yj(&self) -> &YjVector<F> {
        &self.yj
    }

    fn precision_times(&self, z: &[F]) -> Vec<F> {
        let s: F = z.iter().copied().sum();
        z.iter().map(|&x| self.inv_a * x - self.inv_b * s).collect()
    }

    /// Multivariate t log-density on the ζ scale.
    pub fn t_log_density(&self, zeta: &[F]) -> F {
        let rz = self.precision_times(zeta);
        let q: F = zeta.iter().zip(&rz).map(|(&a, &b)| a * b).sum();
        let mf = F::from_usize_lossy(self.m);
        self.log_norm - F::half() * (self.df + mf) * (q / self.df).ln_1p()
    }
}

impl<F: Real> TargetModel<F> for TCopula<F> {
    fn dim(&self) -> usize {
        self.m
    }

    fn log_density(&self, theta: &[F]) -> Result<F> {
        check_dim("t-copula", self.m, theta.len())?;
        let zeta = self.yj.forward(theta);
        Ok(self.t_log_density(&zeta) + self.yj.log_jacobian(theta))
    }

    fn grad_log_density(&self, theta: &[F]) -> Result<Vec<F>> {
        Ok(self.log_density_and_grad(theta)?.1)
    }

    fn log_density_and_grad(&self, theta: &[F]) -> Result<(F, Vec<F>)> {
        check_dim("t-copula", self.m, theta.len())?;
        let zeta = self.yj.forward(theta);
        let rz = self.precision_times(&zeta);
        let q: F = zeta.iter().zip(&rz).map(|(&a, &b)| a * b).sum();
        let mf = F::from_usize_lossy(self.m);
        let lp = self.log_norm - F::half() * (self.df + mf) * (q / self.df).ln_1p()
            + self.yj.log_jacobian(theta);
        let c = (self.df + mf) / (self.df + q);
        let (deriv, dlog) = self.yj.derivs(theta);
        let g = rz
            .iter()
            .zip(deriv.iter().zip(&dlog))
            .map(|(&r, (&t, &l))| -c * r * t + l)
            .collect();
        Ok((lp, g))
    }

    fn name(&self) -> &str {
        "t-copula"
    }
}
