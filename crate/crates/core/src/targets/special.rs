use serde::{Deserialize, Serialize};

use crate::{CmgvaError, Real, Result};

const LN_2: f64 = std::f64::consts::LN_2;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// `ln φ(x)` for the standard normal.
#[inline]
pub fn norm_logpdf<F: Real>(x: F) -> F {
    -F::half() * x * x - F::half_ln_2pi()
}

/// `ln Φ(x)`, accurate in both tails.
pub fn log_norm_cdf<F: Real>(x: F) -> F {
    let xf = x.as_f64();
    let v = if xf > 5.0 {
        (-0.5 * libm::erfc(xf * FRAC_1_SQRT_2)).ln_1p()
    } else if xf >= -30.0 {
        (0.5 * libm::erfc(-xf * FRAC_1_SQRT_2)).ln()
    } else {
        // Φ(x) = φ(x)/(−x) · (1 − 1/x² + 3/x⁴ − 15/x⁶ + 105/x⁸ − …)
        let z = 1.0 / (xf * xf);
        let series = 1.0 - z * (1.0 - z * (3.0 - z * (15.0 - z * 105.0)));
        -0.5 * xf * xf - 0.918_938_533_204_672_8 - (-xf).ln() + series.ln()
    };
    F::lit(v)
}

/// `φ(x)/Φ(x)`, the derivative of `ln Φ(x)`.
pub fn inv_mills<F: Real>(x: F) -> F {
    let xf = x.as_f64();
    if xf < -30.0 {
        let z = 1.0 / (xf * xf);
        let series = 1.0 - z * (1.0 - z * (3.0 - z * (15.0 - z * 105.0)));
        return F::lit(-xf / series);
    }
    (norm_logpdf(x) - log_norm_cdf(x)).exp()
}

/// Azzalini skew-normal with density `(2/σ) φ(z) Φ(α z)`, `z = (x − μ)/σ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct SkewNormalParams<F> {
    pub loc: F,
    pub scale: F,
    pub shape: F,
}

impl<F: Real> SkewNormalParams<F> {
    pub fn new(loc: F, scale: F, shape: F) -> Result<Self> {
        if !(scale > F::zero()) || !scale.is_finite() {
            return Err(CmgvaError::Domain(format!("skew-normal scale {scale} must be positive")));
        }
        Ok(Self { loc, scale, shape })
    }
}

pub fn skew_normal_logpdf<F: Real>(x: F, p: &SkewNormalParams<F>) -> F {
    let z = (x - p.loc) / p.scale;
    F::lit(LN_2) - p.scale.ln() + norm_logpdf(z) + log_norm_cdf(p.shape * z)
}

/// `d/dx ln SN(x; p)`.
pub fn skew_normal_grad_x<F: Real>(x: F, p: &SkewNormalParams<F>) -> F {
    let z = (x - p.loc) / p.scale;
    (-z + p.shape * inv_mills(p.shape * z)) / p.scale
}
