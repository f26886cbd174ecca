use rand::Rng;

use crate::error::check_dim;
use crate::linalg::Cholesky;
use crate::real::log_sum_exp;
use crate::rng::uniform;
use crate::{CmgvaError, Real, Result};

use super::TargetModel;

/// `Σ_c w_c N(θ | u_c, Σ)` with a covariance shared by every mode.
#[derive(Clone, Debug)]
pub struct MixtureNormal<F> {
    m: usize,
    log_w: Vec<F>,
    means: Vec<Vec<F>>,
    chol: Cholesky<F>,
    log_norm: F,
}

impl<F: Real> MixtureNormal<F> {
    /// `cov` is row-major `m × m`.
    pub fn new(weights: Vec<F>, means: Vec<Vec<F>>, cov: &[F]) -> Result<Self> {
        if means.is_empty() || weights.len() != means.len() {
            return Err(CmgvaError::Domain(
                "mixture needs one weight per mean and at least one mode".into(),
            ));
        }
        let m = means[0].len();
        for u in &means {
            check_dim("mixture mean", m, u.len())?;
        }
        if weights.iter().any(|&w| !(w > F::zero())) {
            return Err(CmgvaError::Domain("mixture weights must be positive".into()));
        }
        let total: F = weights.iter().copied().sum();
        let chol = Cholesky::new(cov, m)?;
        let log_norm = -F::from_usize_lossy(m) * F::half_ln_2pi() - F::half() * chol.log_det();
        Ok(Self {
            m,
            log_w: weights.iter().map(|&w| (w / total).ln()).collect(),
            means,
            chol,
            log_norm,
        })
    }

    pub fn means(&self) -> &[Vec<F>] {
        &self.means
    }

    pub fn weights(&self) -> Vec<F> {
        self.log_w.iter().map(|l| l.exp()).collect()
    }

    /// Per-mode `ln w_c + ln N(θ | u_c, Σ)` and `Σ⁻¹(θ − u_c)`.
    fn terms(&self, theta: &[F]) -> Vec<(F, Vec<F>)> {
        self.means
            .iter()
            .zip(&self.log_w)
            .map(|(u, &lw)| {
                let e: Vec<F> = theta.iter().zip(u).map(|(&t, &c)| t - c).collect();
                let a = self.chol.solve(&e);
                let q: F = e.iter().zip(&a).map(|(&x, &y)| x * y).sum();
                (lw + self.log_norm - F::half() * q, a)
            })
            .collect()
    }
}

/// Equicorrelation matrix with unit variances.
pub fn equicorrelation<F: Real>(m: usize, rho: F) -> Vec<F> {
    let mut c = vec![rho; m * m];
    for i in 0..m {
        c[i * m + i] = F::one();
    }
    c
}

/// `n_modes` equally weighted modes with means drawn uniformly from
/// `[−2, 2]` and a unit-variance equicorrelation covariance.
pub fn mixnormal_target<F: Real, R: Rng + ?Sized>(
    m: usize,
    n_modes: usize,
    rho: F,
    rng: &mut R,
) -> Result<MixtureNormal<F>> {
    let four = F::lit(4.0);
    let means = (0..n_modes)
        .map(|_| (0..m).map(|_| four * uniform::<F, _>(rng) - F::two()).collect())
        .collect();
    MixtureNormal::new(vec![F::one(); n_modes], means, &equicorrelation(m, rho))
}

impl<F: Real> TargetModel<F> for MixtureNormal<F> {
    fn dim(&self) -> usize {
        self.m
    }

    fn log_density(&self, theta: &[F]) -> Result<F> {
        check_dim("mixture-normal", self.m, theta.len())?;
        let l: Vec<F> = self.terms(theta).into_iter().map(|t| t.0).collect();
        Ok(log_sum_exp(&l))
    }

    fn grad_log_density(&self, theta: &[F]) -> Result<Vec<F>> {
        Ok(self.log_density_and_grad(theta)?.1)
    }

    fn log_density_and_grad(&self, theta: &[F]) -> Result<(F, Vec<F>)> {
        check_dim("mixture-normal", self.m, theta.len())?;
        let terms = self.terms(theta);
        let l: Vec<F> = terms.iter().map(|t| t.0).collect();
        let total = log_sum_exp(&l);
        let mut g = vec![F::zero(); self.m];
        for (lc, a) in &terms {
            let r = (*lc - total).exp();
            for (gi, &ai) in g.iter_mut().zip(a) {
                *gi -= r * ai;
            }
        }
        Ok((total, g))
    }

    fn name(&self) -> &str {
        "mixture-normal"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn single_mode_is_normal() {
        let t = MixtureNormal::new(vec![1.0f64], vec![vec![0.5, -0.5]], &equicorrelation(2, 0.3)).unwrap();
        let x = [1.0, 0.2];
        let (e0, e1) = (0.5, 0.7);
        let det: f64 = 1.0 - 0.09;
        let q = (e0 * e0 - 2.0 * 0.3 * e0 * e1 + e1 * e1) / det;
        let expect = -(2.0f64 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q;
        assert!((t.log_density(&x).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn means_in_range() {
        let t = mixnormal_target::<f64, _>(5, 3, 0.8, &mut seeded(11)).unwrap();
        assert_eq!(t.means().len(), 3);
        assert!(t.means().iter().flatten().all(|&u| (-2.0..=2.0).contains(&u)));
        let w = t.weights();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }
}
