//! Multivariate Gaussian with factor covariance `Σ = ββᵀ + D²`.
//!
//! Every density, gradient and solve goes through the Woodbury identity and
//! the matrix determinant lemma, so the only factorization is the `r × r`
//! inner matrix `M = I + βᵀD⁻²β`:
//!
//! * `Σ⁻¹ = D⁻² − W M⁻¹ Wᵀ` with `W = D⁻²β`
//! * `ln det Σ = Σ ln d_i² + ln det M`
//! * `Σ⁻¹ β = W M⁻¹`

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Cholesky};
use crate::rng::std_normal_vec;
use crate::{CmgvaError, Real, Result};

/// Idiosyncratic scales are clamped to at least this magnitude before any
/// solve.
pub const D_FLOOR: f64 = 1e-6;

/// One mixture component in φ-space: mean `mu`, loadings `beta` (`m × r`,
/// row-major, strict upper triangle zero) and idiosyncratic scales `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Component<F> {
    mu: Vec<F>,
    beta: Vec<F>,
    rank: usize,
    d: Vec<F>,
}

/// Number of free loadings of an `m × r` lower-trapezoidal factor matrix.
pub fn vech_len(m: usize, r: usize) -> usize {
    (0..r.min(m)).map(|j| m - j).sum()
}

impl<F: Real> Component<F> {
    pub fn new(mu: Vec<F>, beta: Vec<F>, rank: usize, d: Vec<F>) -> Result<Self> {
        let m = mu.len();
        if d.len() != m {
            return Err(CmgvaError::dim("component d", m, d.len()));
        }
        if beta.len() != m * rank {
            return Err(CmgvaError::dim("component beta", m * rank, beta.len()));
        }
        for i in 0..m {
            for j in i + 1..rank {
                if beta[i * rank + j] != F::zero() {
                    return Err(CmgvaError::Domain(format!(
                        "beta[{i}][{j}] lies in the strict upper triangle and must be zero"
                    )));
                }
            }
        }
        if mu.iter().chain(&beta).chain(&d).any(|x| !x.is_finite()) {
            return Err(CmgvaError::Domain("non-finite component parameter".into()));
        }
        Ok(Self { mu, beta, rank, d })
    }

    /// Diagonal component `N(mu, diag(d²))` with a zero loading matrix.
    pub fn diagonal(mu: Vec<F>, d: Vec<F>, rank: usize) -> Result<Self> {
        let m = mu.len();
        Self::new(mu, vec![F::zero(); m * rank], rank, d)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn mu(&self) -> &[F] {
        &self.mu
    }

    pub fn beta(&self) -> &[F] {
        &self.beta
    }

    pub fn d(&self) -> &[F] {
        &self.d
    }

    pub fn beta_at(&self, i: usize, j: usize) -> F {
        self.beta[i * self.rank + j]
    }

    pub fn set_mu(&mut self, mu: Vec<F>) {
        assert_eq!(mu.len(), self.mu.len());
        self.mu = mu;
    }

    pub fn set_d(&mut self, d: Vec<F>) {
        assert_eq!(d.len(), self.d.len());
        self.d = d;
    }

    /// Free loadings in column-major order (rows `i ≥ j` of column `j`).
    pub fn vech_beta(&self) -> Vec<F> {
        let m = self.dim();
        let mut out = Vec::with_capacity(vech_len(m, self.rank));
        for j in 0..self.rank.min(m) {
            for i in j..m {
                out.push(self.beta[i * self.rank + j]);
            }
        }
        out
    }

    pub fn set_vech_beta(&mut self, v: &[F]) {
        let m = self.dim();
        assert_eq!(v.len(), vech_len(m, self.rank));
        let mut it = v.iter();
        for j in 0..self.rank.min(m) {
            for i in j..m {
                self.beta[i * self.rank + j] = *it.next().unwrap();
            }
        }
    }

    /// `Σ_ii = Σ_j β_ij² + max(|d_i|, floor)²`.
    pub fn sigma_diag(&self, i: usize) -> F {
        let r = self.rank;
        let row = &self.beta[i * r..(i + 1) * r];
        let di = floored(self.d[i]);
        dot(row, row) + di * di
    }

    /// Dense `m × m` covariance, row-major. Intended for small dimensions.
    pub fn sigma_dense(&self) -> Vec<F> {
        let m = self.dim();
        let r = self.rank;
        let mut s = vec![F::zero(); m * m];
        for i in 0..m {
            for k in 0..m {
                s[i * m + k] = dot(&self.beta[i * r..(i + 1) * r], &self.beta[k * r..(k + 1) * r]);
            }
            let di = floored(self.d[i]);
            s[i * m + i] += di * di;
        }
        s
    }

    pub fn prepare(&self) -> Result<FactorGaussian<F>> {
        FactorGaussian::new(self.clone())
    }
}

#[inline]
fn floored<F: Real>(d: F) -> F {
    d.abs().max(F::lit(D_FLOOR))
}

/// A component with its Woodbury factorization cached.
#[derive(Clone, Debug)]
pub struct FactorGaussian<F> {
    comp: Component<F>,
    d_eff: Vec<F>,
    inv_d2: Vec<F>,
    /// `D⁻²β`, row-major `m × r`.
    w: Vec<F>,
    inner: Cholesky<F>,
    /// `M⁻¹`, row-major `r × r`.
    inner_inv: Vec<F>,
    log_det: F,
}

impl<F: Real> FactorGaussian<F> {
    pub fn new(comp: Component<F>) -> Result<Self> {
        let m = comp.dim();
        let r = comp.rank;
        let d_eff: Vec<F> = comp.d.iter().map(|&d| floored(d)).collect();
        let inv_d2: Vec<F> = d_eff.iter().map(|&d| F::one() / (d * d)).collect();
        let mut w = comp.beta.clone();
        for i in 0..m {
            for j in 0..r {
                w[i * r + j] *= inv_d2[i];
            }
        }
        // M = I + βᵀ D⁻² β
        let mut mm = vec![F::zero(); r * r];
        for a in 0..r {
            for b in 0..=a {
                let s: F = (0..m).map(|i| comp.beta[i * r + a] * w[i * r + b]).sum();
                mm[a * r + b] = s;
                mm[b * r + a] = s;
            }
            mm[a * r + a] += F::one();
        }
        let inner = Cholesky::new(&mm, r)
            .map_err(|e| CmgvaError::Numerical(format!("inner Woodbury system: {e}")))?;
        let mut inner_inv = vec![F::zero(); r * r];
        for c in 0..r {
            let mut e = vec![F::zero(); r];
            e[c] = F::one();
            let col = inner.solve(&e);
            for a in 0..r {
                inner_inv[a * r + c] = col[a];
            }
        }
        let log_det = d_eff.iter().map(|&d| (d * d).ln()).sum::<F>() + inner.log_det();
        if !log_det.is_finite() {
            return Err(CmgvaError::Numerical("non-finite log determinant".into()));
        }
        Ok(Self {
            comp,
            d_eff,
            inv_d2,
            w,
            inner,
            inner_inv,
            log_det,
        })
    }

    pub fn component(&self) -> &Component<F> {
        &self.comp
    }

    pub fn dim(&self) -> usize {
        self.comp.dim()
    }

    pub fn rank(&self) -> usize {
        self.comp.rank
    }

    pub fn log_det(&self) -> F {
        self.log_det
    }

    /// `Σ⁻¹ x`.
    pub fn solve(&self, x: &[F]) -> Vec<F> {
        let m = self.dim();
        let r = self.rank();
        let mut t = vec![F::zero(); r];
        for i in 0..m {
            for j in 0..r {
                t[j] += self.w[i * r + j] * x[i];
            }
        }
        let u = self.inner.solve(&t);
        (0..m)
            .map(|i| x[i] * self.inv_d2[i] - dot(&self.w[i * r..(i + 1) * r], &u))
            .collect()
    }

    /// `Σ x`, in `O(m r)`.
    pub fn mul(&self, x: &[F]) -> Vec<F> {
        let m = self.dim();
        let r = self.rank();
        let beta = &self.comp.beta;
        let mut t = vec![F::zero(); r];
        for i in 0..m {
            for j in 0..r {
                t[j] += beta[i * r + j] * x[i];
            }
        }
        (0..m)
            .map(|i| dot(&beta[i * r..(i + 1) * r], &t) + self.d_eff[i] * self.d_eff[i] * x[i])
            .collect()
    }

    fn quad_and_solve(&self, phi: &[F]) -> (F, Vec<F>) {
        let e: Vec<F> = phi.iter().zip(&self.comp.mu).map(|(&p, &m)| p - m).collect();
        let a = self.solve(&e);
        (dot(&e, &a), a)
    }

    /// `ln N(φ; μ, Σ)`.
    pub fn log_density(&self, phi: &[F]) -> F {
        let (q, _) = self.quad_and_solve(phi);
        let m = F::from_usize_lossy(self.dim());
        -F::half() * (q + self.log_det) - m * F::half_ln_2pi()
    }

    /// `∇_φ ln N(φ; μ, Σ) = −Σ⁻¹(φ − μ)`.
    pub fn grad_log_density(&self, phi: &[F]) -> Vec<F> {
        let (_, a) = self.quad_and_solve(phi);
        a.into_iter().map(|v| -v).collect()
    }

    /// `(Σ⁻¹)_ii` for every `i`.
    pub fn precision_diag(&self) -> Vec<F> {
        let m = self.dim();
        let r = self.rank();
        (0..m)
            .map(|i| {
                let wi = &self.w[i * r..(i + 1) * r];
                let mut s = F::zero();
                for a in 0..r {
                    for b in 0..r {
                        s += wi[a] * self.inner_inv[a * r + b] * wi[b];
                    }
                }
                self.inv_d2[i] - s
            })
            .collect()
    }

    /// `Σ⁻¹ β` as row-major `m × r` (equal to `W M⁻¹`).
    pub fn precision_beta(&self) -> Vec<F> {
        let m = self.dim();
        let r = self.rank();
        let mut out = vec![F::zero(); m * r];
        for i in 0..m {
            for c in 0..r {
                out[i * r + c] = (0..r)
                    .map(|a| self.w[i * r + a] * self.inner_inv[a * r + c])
                    .sum();
            }
        }
        out
    }

    /// Gradients of `ln N(φ; μ, Σ)` with respect to the mean, the free
    /// loadings (vech order) and `d`:
    ///
    /// * `∇μ = a` with `a = Σ⁻¹(φ − μ)`
    /// * `∇β = a aᵀβ − Σ⁻¹β`
    /// * `∇d_i = d_i (a_i² − (Σ⁻¹)_ii)`
    pub fn scores(&self, phi: &[F]) -> ComponentScores<F> {
        let m = self.dim();
        let r = self.rank();
        let (_, a) = self.quad_and_solve(phi);
        let beta = &self.comp.beta;
        let mut atb = vec![F::zero(); r];
        for i in 0..m {
            for j in 0..r {
                atb[j] += a[i] * beta[i * r + j];
            }
        }
        let pb = self.precision_beta();
        let mut g_beta = Vec::with_capacity(vech_len(m, r));
        for j in 0..r.min(m) {
            for i in j..m {
                g_beta.push(a[i] * atb[j] - pb[i * r + j]);
            }
        }
        let pd = self.precision_diag();
        let g_d = (0..m)
            .map(|i| self.comp.d[i] * (a[i] * a[i] - pd[i]))
            .collect();
        ComponentScores {
            mu: a,
            beta: g_beta,
            d: g_d,
        }
    }

    /// Draws `φ = μ + βz + d∘η` and returns `(φ, z, η)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<F>, Vec<F>, Vec<F>) {
        let m = self.dim();
        let r = self.rank();
        let z: Vec<F> = std_normal_vec(rng, r);
        let eta: Vec<F> = std_normal_vec(rng, m);
        let beta = &self.comp.beta;
        let phi = (0..m)
            .map(|i| {
                self.comp.mu[i] + dot(&beta[i * r..(i + 1) * r], &z) + self.d_eff[i] * eta[i]
            })
            .collect();
        (phi, z, eta)
    }
}

/// Per-sample gradients of a component log-density.
#[derive(Clone, Debug)]
pub struct ComponentScores<F> {
    pub mu: Vec<F>,
    pub beta: Vec<F>,
    pub d: Vec<F>,
}

/// `ln N(φ; comp)`.
pub fn log_density<F: Real>(phi: &[F], comp: &Component<F>) -> Result<F> {
    if phi.len() != comp.dim() {
        return Err(CmgvaError::dim("log_density", comp.dim(), phi.len()));
    }
    Ok(comp.prepare()?.log_density(phi))
}

/// `−Σ⁻¹(φ − μ)`.
pub fn grad_log_density_phi<F: Real>(phi: &[F], comp: &Component<F>) -> Result<Vec<F>> {
    if phi.len() != comp.dim() {
        return Err(CmgvaError::dim("grad_log_density_phi", comp.dim(), phi.len()));
    }
    Ok(comp.prepare()?.grad_log_density(phi))
}

/// One draw `(φ, z, η)` from the component.
pub fn sample<F: Real, R: Rng + ?Sized>(
    comp: &Component<F>,
    rng: &mut R,
) -> Result<(Vec<F>, Vec<F>, Vec<F>)> {
    Ok(comp.prepare()?.sample(rng))
}
