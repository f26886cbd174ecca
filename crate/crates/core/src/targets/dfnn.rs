use serde::{Deserialize, Serialize};

use crate::error::check_dim;
use crate::{CmgvaError, Real, Result};

use super::pps::PredictiveModel;
use super::special::{inv_mills, log_norm_cdf, norm_logpdf};
use super::TargetModel;

/// `Gamma(shape, scale)` with density `x^{a−1} e^{−x/s} / (Γ(a) s^a)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct GammaPrior<F> {
    pub shape: F,
    pub scale: F,
}

impl<F: Real> GammaPrior<F> {
    pub fn new(shape: F, scale: F) -> Result<Self> {
        if !(shape > F::zero() && scale > F::zero()) {
            return Err(CmgvaError::Domain(format!(
                "gamma shape {shape} and scale {scale} must be positive"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn log_pdf(&self, x: F) -> F {
        (self.shape - F::one()) * x.ln() - x / self.scale - self.shape.ln_gamma()
            - self.shape * self.scale.ln()
    }

    /// Log-density of `ℓ = ln x`, including the Jacobian `x`, and its
    /// derivative in `ℓ`.
    pub fn log_pdf_log_scale(&self, ell: F) -> (F, F) {
        let x = ell.exp();
        (
            self.shape * ell - x / self.scale - self.shape.ln_gamma() - self.shape * self.scale.ln(),
            self.shape - x / self.scale,
        )
    }
}

/// Shape of a ReLU regression network and its priors.
///
/// `widths = (p, h_1, …, h_L, 1)`. The first hidden layer has no bias; every
/// later hidden layer and the output have one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct DfnnSpec<F> {
    pub widths: Vec<usize>,
    /// Skew-normal shape of the weight prior.
    pub alpha: F,
    /// Prior on the weight precision `σ²`.
    pub sigma2_prior: GammaPrior<F>,
    /// Prior on the noise precision `τ²`.
    pub tau2_prior: GammaPrior<F>,
}

impl<F: Real> DfnnSpec<F> {
    /// Shape `widths` with `α = 4` and `Gamma(1, 10)` priors on both
    /// precisions.
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        let s = Self {
            widths,
            alpha: F::lit(4.0),
            sigma2_prior: GammaPrior::new(F::one(), F::lit(10.0))?,
            tau2_prior: GammaPrior::new(F::one(), F::lit(10.0))?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 3 || w.iter().any(|&x| x == 0) || *w.last().unwrap() != 1 {
            return Err(CmgvaError::Domain(format!(
                "network widths {w:?} need an input, at least one hidden layer and a scalar output"
            )));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.widths[0]
    }

    fn hidden(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    /// Units in the last hidden layer (`M`).
    pub fn last_hidden(&self) -> usize {
        *self.hidden().last().unwrap()
    }

    /// Weights up to the last hidden layer (`M_w`).
    pub fn num_hidden_weights(&self) -> usize {
        let h = self.hidden();
        let mut n = self.inputs() * h[0];
        for l in 1..h.len() {
            n += (h[l - 1] + 1) * h[l];
        }
        n
    }

    /// All network parameters: hidden weights plus `M + 1` output weights.
    pub fn num_network_params(&self) -> usize {
        self.num_hidden_weights() + self.last_hidden() + 1
    }

    /// Network parameters plus `ln σ²` and `ln τ²`.
    pub fn dim(&self) -> usize {
        self.num_network_params() + 2
    }
}

/// Layer `l` occupies `theta[offset..]` as `rows × cols` row-major, where
/// column 0 is the bias for `l ≥ 1`.
struct LayerView {
    offset: usize,
    rows: usize,
    inputs: usize,
    has_bias: bool,
}

impl LayerView {
    fn cols(&self) -> usize {
        self.inputs + self.has_bias as usize
    }
}

fn layers<F: Real>(spec: &DfnnSpec<F>) -> Vec<LayerView> {
    let h = spec.hidden();
    let mut out = Vec::with_capacity(h.len());
    let mut offset = 0;
    let mut prev = spec.inputs();
    for (l, &rows) in h.iter().enumerate() {
        let v = LayerView {
            offset,
            rows,
            inputs: prev,
            has_bias: l > 0,
        };
        offset += rows * v.cols();
        prev = rows;
        out.push(v);
    }
    out
}

/// ReLU regression network `y | x ~ N(bᵀz(x), 1/τ²)` with skew-normal
/// weight priors of scale `1/σ`.
#[derive(Clone, Debug)]
pub struct Dfnn<F> {
    spec: DfnnSpec<F>,
    n: usize,
    x: Vec<F>,
    y: Vec<F>,
}

struct Forward<F> {
    /// Pre-activations per hidden layer.
    pre: Vec<Vec<F>>,
    /// Activations per hidden layer.
    act: Vec<Vec<F>>,
    yhat: F,
}

impl<F: Real> Dfnn<F> {
    /// `x` is row-major `n × p` without an intercept column.
    pub fn new(spec: DfnnSpec<F>, x: Vec<F>, y: Vec<F>) -> Result<Self> {
        spec.validate()?;
        let p = spec.inputs();
        if x.len() != y.len() * p {
            return Err(CmgvaError::dim("network design", y.len() * p, x.len()));
        }
        Ok(Self {
            n: y.len(),
            spec,
            x,
            y,
        })
    }

    pub fn spec(&self) -> &DfnnSpec<F> {
        &self.spec
    }

    fn forward(&self, theta: &[F], xi: &[F]) -> Forward<F> {
        let views = layers(&self.spec);
        let mut pre = Vec::with_capacity(views.len());
        let mut act: Vec<Vec<F>> = Vec::with_capacity(views.len());
        for v in &views {
            let input: &[F] = act.last().map_or(xi, |a| a.as_slice());
            let w = &theta[v.offset..v.offset + v.rows * v.cols()];
            let c = v.cols();
            let z: Vec<F> = (0..v.rows)
                .map(|j| {
                    let row = &w[j * c..(j + 1) * c];
                    let (bias, rest) = if v.has_bias {
                        (row[0], &row[1..])
                    } else {
                        (F::zero(), row)
                    };
                    bias + rest.iter().zip(input).map(|(&a, &b)| a * b).sum::<F>()
                })
                .collect();
            act.push(z.iter().map(|&s| s.max(F::zero())).collect());
            pre.push(z);
        }
        let ob = self.spec.num_hidden_weights();
        let b = &theta[ob..ob + self.spec.last_hidden() + 1];
        let z = act.last().unwrap();
        let yhat = b[0] + b[1..].iter().zip(z).map(|(&a, &c)| a * c).sum::<F>();
        Forward { pre, act, yhat }
    }

    /// Network output `bᵀz(x)` for one covariate row.
    pub fn predict(&self, theta: &[F], xi: &[F]) -> Result<F> {
        check_dim("network parameters", self.spec.dim(), theta.len())?;
        check_dim("covariates", self.spec.inputs(), xi.len())?;
        Ok(self.forward(theta, xi).yhat)
    }

    /// Last hidden layer `z(x)`.
    pub fn hidden_output(&self, theta: &[F], xi: &[F]) -> Result<Vec<F>> {
        check_dim("network parameters", self.spec.dim(), theta.len())?;
        check_dim("covariates", self.spec.inputs(), xi.len())?;
        Ok(self.forward(theta, xi).act.pop().unwrap())
    }

    fn row(&self, i: usize) -> &[F] {
        let p = self.spec.inputs();
        &self.x[i * p..(i + 1) * p]
    }

    fn backprop(&self, theta: &[F], xi: &[F], dy: F, g: &mut [F]) {
        let views = layers(&self.spec);
        let f = self.forward(theta, xi);
        let ob = self.spec.num_hidden_weights();
        let m = self.spec.last_hidden();
        let b = &theta[ob..ob + m + 1];
        g[ob] += dy;
        let z = f.act.last().unwrap();
        for l in 0..m {
            g[ob + 1 + l] += dy * z[l];
        }
        let relu_d = |s: F| if s > F::zero() { F::one() } else { F::zero() };
        let last = views.len() - 1;
        let mut delta: Vec<F> = (0..m).map(|j| dy * b[1 + j] * relu_d(f.pre[last][j])).collect();
        for li in (0..views.len()).rev() {
            let v = &views[li];
            let c = v.cols();
            let input: &[F] = if li == 0 { xi } else { &f.act[li - 1] };
            for j in 0..v.rows {
                if delta[j] == F::zero() {
                    continue;
                }
                let base = v.offset + j * c;
                if v.has_bias {
                    g[base] += delta[j];
                    for k in 0..v.inputs {
                        g[base + 1 + k] += delta[j] * input[k];
                    }
                } else {
                    for k in 0..v.inputs {
                        g[base + k] += delta[j] * input[k];
                    }
                }
            }
            if li > 0 {
                let w = &theta[v.offset..v.offset + v.rows * c];
                let off = v.has_bias as usize;
                delta = (0..v.inputs)
                    .map(|k| {
                        let s: F = (0..v.rows).map(|j| w[j * c + off + k] * delta[j]).sum();
                        s * relu_d(f.pre[li - 1][k])
                    })
                    .collect();
            }
        }
    }
}

impl<F: Real> TargetModel<F> for Dfnn<F> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn log_density(&self, theta: &[F]) -> Result<F> {
        Ok(self.log_density_and_grad(theta)?.0)
    }

    fn grad_log_density(&self, theta: &[F]) -> Result<Vec<F>> {
        Ok(self.log_density_and_grad(theta)?.1)
    }

    fn log_density_and_grad(&self, theta: &[F]) -> Result<(F, Vec<F>)> {
        check_dim("network", self.spec.dim(), theta.len())?;
        let np = self.spec.num_network_params();
        let (ls, lt) = (theta[np], theta[np + 1]);
        let (sigma2, tau2) = (ls.exp(), lt.exp());
        let half = F::half();
        let mut g = vec![F::zero(); theta.len()];
        let mut lp = F::zero();

        // likelihood
        let mut ss = F::zero();
        for i in 0..self.n {
            let xi = self.row(i);
            let r = self.y[i] - self.forward(theta, xi).yhat;
            ss += r * r;
            self.backprop(theta, xi, tau2 * r, &mut g);
        }
        let nf = F::from_usize_lossy(self.n);
        lp += nf * (half * lt - F::half_ln_2pi()) - half * tau2 * ss;
        g[np + 1] += half * nf - half * tau2 * ss;

        // skew-normal priors with scale 1/σ: ln 2 + ln σ + ln φ(σw) + ln Φ(ασw)
        let sigma = sigma2.sqrt();
        let alpha = self.spec.alpha;
        let ln2 = F::lit(std::f64::consts::LN_2);
        for (k, &w) in theta[..np].iter().enumerate() {
            let u = sigma * w;
            let lam = inv_mills(alpha * u);
            lp += ln2 + half * ls + norm_logpdf(u) + log_norm_cdf(alpha * u);
            g[k] += sigma * (-u + alpha * lam);
            g[np] += half * (F::one() - u * u + alpha * u * lam);
        }

        let (a, da) = self.spec.sigma2_prior.log_pdf_log_scale(ls);
        let (b, db) = self.spec.tau2_prior.log_pdf_log_scale(lt);
        lp += a + b;
        g[np] += da;
        g[np + 1] += db;
        if !lp.is_finite() {
            return Err(CmgvaError::Target(format!("non-finite network log posterior {lp}")));
        }
        Ok((lp, g))
    }

    fn name(&self) -> &str {
        "dfnn"
    }
}

impl<F: Real> PredictiveModel<F> for Dfnn<F> {
    fn num_inputs(&self) -> usize {
        self.spec.inputs()
    }

    fn log_predictive(&self, theta: &[F], xi: &[F], y: F) -> Result<F> {
        let yhat = self.predict(theta, xi)?;
        let lt = theta[self.spec.num_network_params() + 1];
        let r = y - yhat;
        Ok(F::half() * lt - F::half_ln_2pi() - F::half() * lt.exp() * r * r)
    }
}
