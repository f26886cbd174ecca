use serde::{Deserialize, Serialize};

use crate::error::check_dim;
use crate::real::{log_add_exp, softplus};
use crate::{CmgvaError, Real, Result};

use super::dfnn::GammaPrior;
use super::special::{norm_logpdf, skew_normal_grad_x, skew_normal_logpdf, SkewNormalParams};
use super::TargetModel;

/// Two-component skew-normal mixture `w·SN(a) + (1−w)·SN(b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct SkewNormalMixture<F> {
    pub w: F,
    pub a: SkewNormalParams<F>,
    pub b: SkewNormalParams<F>,
}

impl<F: Real> SkewNormalMixture<F> {
    pub fn new(w: F, a: SkewNormalParams<F>, b: SkewNormalParams<F>) -> Result<Self> {
        if !(w >= F::zero() && w <= F::one()) {
            return Err(CmgvaError::Domain(format!("mixture weight {w} outside [0, 1]")));
        }
        Ok(Self { w, a, b })
    }

    /// Equal-weight mixture of `SN(0, 1, −20)` and `SN(1, 1, −20)`: a
    /// left-skewed, bimodal coefficient prior.
    pub fn regression_default() -> Self {
        let sn = |loc: f64| SkewNormalParams {
            loc: F::lit(loc),
            scale: F::one(),
            shape: F::lit(-20.0),
        };
        Self {
            w: F::half(),
            a: sn(0.0),
            b: sn(1.0),
        }
    }

    fn parts(&self, x: F) -> (F, F) {
        (
            self.w.ln() + skew_normal_logpdf(x, &self.a),
            (F::one() - self.w).ln() + skew_normal_logpdf(x, &self.b),
        )
    }

    pub fn logpdf(&self, x: F) -> F {
        let (la, lb) = self.parts(x);
        log_add_exp(la, lb)
    }

    pub fn grad(&self, x: F) -> F {
        let (la, lb) = self.parts(x);
        let total = log_add_exp(la, lb);
        let ra = (la - total).exp();
        let rb = (lb - total).exp();
        let mut g = F::zero();
        if ra > F::zero() {
            g += ra * skew_normal_grad_x(x, &self.a);
        }
        if rb > F::zero() {
            g += rb * skew_normal_grad_x(x, &self.b);
        }
        g
    }
}

/// Row-major design matrix whose first column is the intercept.
#[derive(Clone, Debug)]
struct Design<F> {
    n: usize,
    cols: usize,
    x: Vec<F>,
}

impl<F: Real> Design<F> {
    fn new(x: Vec<F>, cols: usize, y_len: usize) -> Result<Self> {
        if cols == 0 || x.len() % cols != 0 {
            return Err(CmgvaError::Domain(format!(
                "design of length {} is not a multiple of {cols} columns",
                x.len()
            )));
        }
        let n = x.len() / cols;
        check_dim("response length", n, y_len)?;
        Ok(Self { n, cols, x })
    }

    fn row(&self, i: usize) -> &[F] {
        &self.x[i * self.cols..(i + 1) * self.cols]
    }

    fn eta(&self, i: usize, b: &[F]) -> F {
        self.row(i).iter().zip(b).map(|(&a, &c)| a * c).sum()
    }
}

/// Prior over `b`: `N(0, 1)` on the intercept, the skew-normal mixture on
/// the rest. Adds into `g`.
fn coef_prior<F: Real>(b: &[F], prior: &SkewNormalMixture<F>, g: &mut [F]) -> F {
    let mut lp = norm_logpdf(b[0]);
    g[0] -= b[0];
    for j in 1..b.len() {
        lp += prior.logpdf(b[j]);
        g[j] += prior.grad(b[j]);
    }
    lp
}

/// Bayesian logistic regression with `θ = b`.
#[derive(Clone, Debug)]
pub struct Logistic<F> {
    design: Design<F>,
    /// `±1` coded response.
    s: Vec<F>,
    prior: SkewNormalMixture<F>,
}

/// `x` is row-major `n × (p+1)` with the intercept column first; `y ∈ {0, 1}`.
pub fn logistic_target<F: Real>(
    x: Vec<F>,
    cols: usize,
    y: &[F],
    prior: SkewNormalMixture<F>,
) -> Result<Logistic<F>> {
    let design = Design::new(x, cols, y.len())?;
    let s = y
        .iter()
        .map(|&v| {
            if v == F::zero() {
                Ok(-F::one())
            } else if v == F::one() {
                Ok(F::one())
            } else {
                Err(CmgvaError::Domain(format!("binary response expected, got {v}")))
            }
        })
        .collect::<Result<_>>()?;
    Ok(Logistic { design, s, prior })
}

impl<F: Real> Logistic<F> {
    /// `Σ_i ln σ(s_i x_iᵀb)`.
    pub fn log_likelihood(&self, b: &[F]) -> Result<F> {
        check_dim("logistic coefficients", self.design.cols, b.len())?;
        Ok((0..self.design.n)
            .map(|i| -softplus(-self.s[i] * self.design.eta(i, b)))
            .sum())
    }
}

impl<F: Real> TargetModel<F> for Logistic<F> {
    fn dim(&self) -> usize {
        self.design.cols
    }

    fn log_density(&self, theta: &[F]) -> Result<F> {
        Ok(self.log_density_and_grad(theta)?.0)
    }

    fn grad_log_density(&self, theta: &[F]) -> Result<Vec<F>> {
        Ok(self.log_density_and_grad(theta)?.1)
    }

    fn log_density_and_grad(&self, theta: &[F]) -> Result<(F, Vec<F>)> {
        check_dim("logistic", self.design.cols, theta.len())?;
        let mut g = vec![F::zero(); theta.len()];
        let mut lp = F::zero();
        for i in 0..self.design.n {
            let se = self.s[i] * self.design.eta(i, theta);
            lp -= softplus(-se);
            // d/dη ln σ(sη) = s·σ(−sη)
            let c = self.s[i] * crate::real::sigmoid(-se);
            for (gj, &xj) in g.iter_mut().zip(self.design.row(i)) {
                *gj += c * xj;
            }
        }
        lp += coef_prior(theta, &self.prior, &mut g);
        Ok((lp, g))
    }

    fn name(&self) -> &str {
        "logistic"
    }
}

/// Bayesian linear regression with `θ = (b, ln τ²)`, `τ²` the noise
/// variance with a `Gamma(1, 1)` prior.
#[derive(Clone, Debug)]
pub struct Linear<F> {
    design: Design<F>,
    y: Vec<F>,
    prior: SkewNormalMixture<F>,
    tau2_prior: GammaPrior<F>,
}

pub fn linear_target<F: Real>(
    x: Vec<F>,
    cols: usize,
    y: &[F],
    prior: SkewNormalMixture<F>,
) -> Result<Linear<F>> {
    Ok(Linear {
        design: Design::new(x, cols, y.len())?,
        y: y.to_vec(),
        prior,
        tau2_prior: GammaPrior::new(F::one(), F::one())?,
    })
}

impl<F: Real> Linear<F> {
    pub fn num_coefficients(&self) -> usize {
        self.design.cols
    }

    /// `Σ_i ln N(y_i; x_iᵀb, τ²)`.
    pub fn log_likelihood(&self, b: &[F], tau2: F) -> Result<F> {
        check_dim("linear coefficients", self.design.cols, b.len())?;
        let half = F::half();
        Ok((0..self.design.n)
            .map(|i| {
                let r = self.y[i] - self.design.eta(i, b);
                -F::half_ln_2pi() - half * tau2.ln() - half * r * r / tau2
            })
            .sum())
    }
}

impl<F: Real> TargetModel<F> for Linear<F> {
    fn dim(&self) -> usize {
        self.design.cols + 1
    }

    fn log_density(&self, theta: &[F]) -> Result<F> {
        Ok(self.log_density_and_grad(theta)?.0)
    }

    fn grad_log_density(&self, theta: &[F]) -> Result<Vec<F>> {
        Ok(self.log_density_and_grad(theta)?.1)
    }

    fn log_density_and_grad(&self, theta: &[F]) -> Result<(F, Vec<F>)> {
        check_dim("linear", self.dim(), theta.len())?;
        let p = self.design.cols;
        let (b, ell) = (&theta[..p], theta[p]);
        let tau2 = ell.exp();
        let half = F::half();
        let mut g = vec![F::zero(); p + 1];
        let mut lp = F::zero();
        let mut ss = F::zero();
        for i in 0..self.design.n {
            let r = self.y[i] - self.design.eta(i, b);
            ss += r * r;
            let c = r / tau2;
            for (gj, &xj) in g[..p].iter_mut().zip(self.design.row(i)) {
                *gj += c * xj;
            }
        }
        let nf = F::from_usize_lossy(self.design.n);
        lp += -nf * (F::half_ln_2pi() + half * ell) - half * ss / tau2;
        g[p] = -half * nf + half * ss / tau2;
        lp += coef_prior(b, &self.prior, &mut g[..p]);
        let (lpt, gt) = self.tau2_prior.log_pdf_log_scale(ell);
        lp += lpt;
        g[p] += gt;
        Ok((lp, g))
    }

    fn name(&self) -> &str {
        "linear"
    }
}
