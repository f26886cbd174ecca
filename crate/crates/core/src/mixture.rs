//! The CMGVA distribution: Yeo-Johnson copula margins over a K-component
//! factor-Gaussian mixture,
//!
//! `q(θ) = Σ_k π_k N(t_γ(θ) | μ_k, Σ_k) · Π_i ṫ_γi(θ_i)`.
//!
//! Mixture densities are accumulated in log space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::factor_gauss::{Component, FactorGaussian};
use crate::real::{log_add_exp, log_sum_exp};
use crate::rng::{categorical, uniform};
use crate::transform::YjVector;
use crate::{CmgvaError, Real, Result};

const WEIGHT_TOL: f64 = 1e-6;

/// Full variational state `λ = (γ, components, weights)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CmgvaState<F> {
    yj: YjVector<F>,
    components: Vec<Component<F>>,
    weights: Vec<F>,
    /// Number of leading components that are frozen.
    frozen_through: usize,
}

impl<F: Real> CmgvaState<F> {
    pub fn new(yj: YjVector<F>, components: Vec<Component<F>>, weights: Vec<F>) -> Result<Self> {
        let s = Self {
            yj,
            components,
            weights,
            frozen_through: 0,
        };
        s.validate()?;
        Ok(s)
    }

    /// One-component state with weight 1.
    pub fn single(yj: YjVector<F>, comp: Component<F>) -> Result<Self> {
        Self::new(yj, vec![comp], vec![F::one()])
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.yj.dim();
        if self.components.is_empty() {
            return Err(CmgvaError::Domain("mixture has no components".into()));
        }
        if self.weights.len() != self.components.len() {
            return Err(CmgvaError::dim(
                "mixture weights",
                self.components.len(),
                self.weights.len(),
            ));
        }
        for c in &self.components {
            if c.dim() != m {
                return Err(CmgvaError::dim("component dimension", m, c.dim()));
            }
        }
        if self
            .weights
            .iter()
            .any(|&w| !(w >= F::zero() && w <= F::one()))
        {
            return Err(CmgvaError::Domain("mixture weight outside [0, 1]".into()));
        }
        let total: F = self.weights.iter().copied().sum();
        if (total - F::one()).abs() > F::lit(WEIGHT_TOL) {
            return Err(CmgvaError::Domain(format!("mixture weights sum to {total}")));
        }
        if self.frozen_through > self.components.len() {
            return Err(CmgvaError::Domain("frozen_through exceeds K".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.yj.dim()
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn yj(&self) -> &YjVector<F> {
        &self.yj
    }

    pub fn components(&self) -> &[Component<F>] {
        &self.components
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn frozen_through(&self) -> usize {
        self.frozen_through
    }

    /// Marks every current component as frozen.
    pub fn freeze_all(&mut self) {
        self.frozen_through = self.components.len();
    }

    pub fn set_yj(&mut self, yj: YjVector<F>) -> Result<()> {
        if yj.dim() != self.dim() {
            return Err(CmgvaError::dim("set_yj", self.dim(), yj.dim()));
        }
        self.yj = yj;
        Ok(())
    }

    /// Replaces component `k`; frozen components are rejected.
    pub fn set_component(&mut self, k: usize, comp: Component<F>) -> Result<()> {
        if k < self.frozen_through {
            return Err(CmgvaError::Domain(format!("component {k} is frozen")));
        }
        if comp.dim() != self.dim() {
            return Err(CmgvaError::dim("set_component", self.dim(), comp.dim()));
        }
        self.components[k] = comp;
        Ok(())
    }

    /// Appends `new` with weight `pi_new`, rescaling existing weights by
    /// `1 − pi_new`. All existing components become frozen.
    pub fn with_new_component(&self, new: Component<F>, pi_new: F) -> Result<Self> {
        if !(pi_new >= F::zero() && pi_new <= F::one()) {
            return Err(CmgvaError::Domain(format!("new weight {pi_new} outside [0, 1]")));
        }
        let mut components = self.components.clone();
        components.push(new);
        let mut weights: Vec<F> = self
            .weights
            .iter()
            .map(|&w| w * (F::one() - pi_new))
            .collect();
        weights.push(pi_new);
        let s = Self {
            yj: self.yj.clone(),
            components,
            weights,
            frozen_through: self.components.len(),
        };
        s.validate()?;
        Ok(s)
    }

    /// `φ̂ = Σ_k π_k μ_k`.
    pub fn mean_phi(&self) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim()];
        for (c, &w) in self.components.iter().zip(&self.weights) {
            for (o, &m) in out.iter_mut().zip(c.mu()) {
                *o += w * m;
            }
        }
        out
    }

    pub fn prepare(&self) -> Result<PreparedMixture<F>> {
        let comps = self
            .components
            .iter()
            .map(|c| c.prepare())
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedMixture {
            yj: self.yj.clone(),
            comps,
            log_w: self.weights.iter().map(|w| w.ln()).collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&StateDocument::from_state(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: StateDocument<F> = serde_json::from_str(s)?;
        doc.into_state()
    }
}

pub const STATE_FORMAT: &str = "cmgva-state";
pub const STATE_VERSION: u32 = 1;

/// Versioned on-disk form of a [`CmgvaState`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct StateDocument<F> {
    pub format: String,
    pub version: u32,
    pub gamma: Vec<F>,
    pub weights: Vec<F>,
    pub frozen_through: usize,
    pub components: Vec<ComponentDocument<F>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ComponentDocument<F> {
    pub mu: Vec<F>,
    pub rank: usize,
    /// Row-major `m × rank`.
    pub beta: Vec<F>,
    pub d: Vec<F>,
}

impl<F: Real> StateDocument<F> {
    pub fn from_state(s: &CmgvaState<F>) -> Self {
        Self {
            format: STATE_FORMAT.into(),
            version: STATE_VERSION,
            gamma: s.yj.gamma().to_vec(),
            weights: s.weights.clone(),
            frozen_through: s.frozen_through,
            components: s
                .components
                .iter()
                .map(|c| ComponentDocument {
                    mu: c.mu().to_vec(),
                    rank: c.rank(),
                    beta: c.beta().to_vec(),
                    d: c.d().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_state(self) -> Result<CmgvaState<F>> {
        if self.format != STATE_FORMAT {
            return Err(CmgvaError::Config(format!(
                "unexpected document format {:?}",
                self.format
            )));
        }
        if self.version != STATE_VERSION {
            return Err(CmgvaError::Config(format!(
                "unsupported state version {}",
                self.version
            )));
        }
        let components = self
            .components
            .into_iter()
            .map(|c| Component::new(c.mu, c.beta, c.rank, c.d))
            .collect::<Result<Vec<_>>>()?;
        let s = CmgvaState {
            yj: YjVector::new(self.gamma)?,
            components,
            weights: self.weights,
            frozen_through: self.frozen_through,
        };
        s.validate()?;
        Ok(s)
    }
}

/// One draw from the approximation.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw<F> {
    pub theta: Vec<F>,
    pub phi: Vec<F>,
    /// Zero-based component index.
    pub component: usize,
}

/// A state with every component factorized, ready for repeated evaluation.
#[derive(Clone, Debug)]
pub struct PreparedMixture<F> {
    yj: YjVector<F>,
    comps: Vec<FactorGaussian<F>>,
    log_w: Vec<F>,
}

impl<F: Real> PreparedMixture<F> {
    pub fn dim(&self) -> usize {
        self.yj.dim()
    }

    pub fn yj(&self) -> &YjVector<F> {
        &self.yj
    }

    pub fn components(&self) -> &[FactorGaussian<F>] {
        &self.comps
    }

    pub fn log_weights(&self) -> &[F] {
        &self.log_w
    }

    /// The (K+1)-component mixture `(1−π)·self + π·new`.
    pub fn extended(&self, new: FactorGaussian<F>, pi_new: F) -> Self {
        let shift = (F::one() - pi_new).ln();
        let mut comps = self.comps.clone();
        comps.push(new);
        let mut log_w: Vec<F> = self.log_w.iter().map(|&l| l + shift).collect();
        log_w.push(pi_new.ln());
        Self {
            yj: self.yj.clone(),
            comps,
            log_w,
        }
    }

    /// `ln π_k + ln N_k(φ)` for every component.
    pub fn weighted_component_log_densities(&self, phi: &[F]) -> Vec<F> {
        self.comps
            .iter()
            .zip(&self.log_w)
            .map(|(c, &lw)| {
                if lw == F::neg_infinity() {
                    lw
                } else {
                    lw + c.log_density(phi)
                }
            })
            .collect()
    }

    /// Mixture log-density in φ-space.
    pub fn log_density_phi(&self, phi: &[F]) -> F {
        log_sum_exp(&self.weighted_component_log_densities(phi))
    }

    /// `ln q(θ)`.
    pub fn log_density(&self, theta: &[F]) -> F {
        let phi = self.yj.forward(theta);
        self.log_density_phi(&phi) + self.yj.log_jacobian(theta)
    }

    /// Log-density of `θ_i` under the i-th marginal: univariate mixture of
    /// `N(μ_k,i, Σ_k,ii)` in φ-space, times the i-th Jacobian factor only.
    pub fn marginal_log_density(&self, i: usize, theta_i: F) -> F {
        let g = self.yj.gamma()[i];
        let phi = crate::transform::forward_unchecked(theta_i, g);
        let terms: Vec<F> = self
            .comps
            .iter()
            .zip(&self.log_w)
            .map(|(c, &lw)| {
                let var = c.component().sigma_diag(i);
                let e = phi - c.component().mu()[i];
                lw - F::half() * (e * e / var + var.ln()) - F::half_ln_2pi()
            })
            .collect();
        log_sum_exp(&terms) + self.yj.log_deriv(i, theta_i)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw<F> {
        let k = if self.comps.len() == 1 {
            0
        } else {
            let w: Vec<F> = self.log_w.iter().map(|l| l.exp()).collect();
            categorical(rng, &w)
        };
        let (phi, _, _) = self.comps[k].sample(rng);
        Draw {
            theta: self.yj.inverse(&phi),
            phi,
            component: k,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Vec<Draw<F>> {
        (0..s).map(|_| self.sample_one(rng)).collect()
    }

    /// `∇_θ ln q(θ)`: the φ-space mixture gradient (responsibility-weighted
    /// component gradients) scaled by `ṫ`, plus `d/dθ ln ṫ`.
    pub fn grad_log_density(&self, theta: &[F]) -> Vec<F> {
        let phi = self.yj.forward(theta);
        let grad_phi = self.grad_log_density_phi(&phi);
        let (deriv, dlog) = self.yj.derivs(theta);
        grad_phi
            .iter()
            .zip(deriv.iter().zip(&dlog))
            .map(|(&g, (&t, &l))| g * t + l)
            .collect()
    }

    pub fn grad_log_density_phi(&self, phi: &[F]) -> Vec<F> {
        let lw = self.weighted_component_log_densities(phi);
        let total = log_sum_exp(&lw);
        let mut out = vec![F::zero(); self.dim()];
        for (c, &l) in self.comps.iter().zip(&lw) {
            let r = (l - total).exp();
            if r == F::zero() {
                continue;
            }
            for (o, g) in out.iter_mut().zip(c.grad_log_density(phi)) {
                *o += r * g;
            }
        }
        out
    }
}

/// Relative density shares of the existing mixture and a candidate new
/// component at one point:
///
/// `δ_tot = (1−π_new)·Σ_k π_k N_k + π_new·N_new`,
/// `δ1 = Σ_k π_k N_k / δ_tot`, `δ2 = N_new / δ_tot`.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities<F> {
    pub delta_old: F,
    pub delta_new: F,
    /// `ln δ_tot`; the density itself underflows in high dimension.
    pub log_delta_tot: F,
    /// `π_k N_k / δ_tot` for each existing component.
    pub per_component: Vec<F>,
}

pub fn responsibilities<F: Real>(
    phi: &[F],
    old: &PreparedMixture<F>,
    new: &FactorGaussian<F>,
    pi_new: F,
) -> Responsibilities<F> {
    let terms = old.weighted_component_log_densities(phi);
    let log_old = log_sum_exp(&terms);
    let log_new = new.log_density(phi);
    let log_tot = log_add_exp(
        (F::one() - pi_new).ln() + log_old,
        pi_new.ln() + log_new,
    );
    Responsibilities {
        delta_old: (log_old - log_tot).exp(),
        delta_new: (log_new - log_tot).exp(),
        log_delta_tot: log_tot,
        per_component: terms.iter().map(|&t| (t - log_tot).exp()).collect(),
    }
}

/// `ln q(θ)` for a state.
pub fn log_density<F: Real>(theta: &[F], state: &CmgvaState<F>) -> Result<F> {
    if theta.len() != state.dim() {
        return Err(CmgvaError::dim("log_density", state.dim(), theta.len()));
    }
    Ok(state.prepare()?.log_density(theta))
}

pub fn marginal_log_density<F: Real>(i: usize, theta_i: F, state: &CmgvaState<F>) -> Result<F> {
    if i >= state.dim() {
        return Err(CmgvaError::Domain(format!(
            "marginal index {i} out of range for dimension {}",
            state.dim()
        )));
    }
    Ok(state.prepare()?.marginal_log_density(i, theta_i))
}

pub fn sample<F: Real, R: Rng + ?Sized>(
    state: &CmgvaState<F>,
    s: usize,
    rng: &mut R,
) -> Result<Vec<Draw<F>>> {
    Ok(state.prepare()?.sample(s, rng))
}

/// Draws from `(1−π_new)·old + π_new·new`; component index `K` is the new
/// component.
pub fn sample_extended<F: Real, R: Rng + ?Sized>(
    old: &PreparedMixture<F>,
    new: &FactorGaussian<F>,
    pi_new: F,
    rng: &mut R,
) -> Draw<F> {
    if uniform::<F, _>(rng) < pi_new {
        let (phi, _, _) = new.sample(rng);
        Draw {
            theta: old.yj().inverse(&phi),
            phi,
            component: old.components().len(),
        }
    } else {
        old.sample_one(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn comp(mu: f64, d: f64) -> Component<f64> {
        Component::diagonal(vec![mu], vec![d], 1).unwrap()
    }

    fn two_d_state() -> CmgvaState<f64> {
        let a = Component::new(vec![0.0, 1.0], vec![0.5, 0.3], 1, vec![1.0, 0.8]).unwrap();
        let b = Component::new(vec![2.0, -1.0], vec![-0.2, 0.6], 1, vec![0.7, 1.1]).unwrap();
        CmgvaState::new(
            YjVector::new(vec![0.7, 1.4]).unwrap(),
            vec![a, b],
            vec![0.4, 0.6],
        )
        .unwrap()
    }

    #[test]
    fn single_identity_matches_gaussian() {
        let c = Component::new(vec![0.5f64, -0.2], vec![0.3, 0.9], 1, vec![1.0, 0.4]).unwrap();
        let s = CmgvaState::single(YjVector::identity(2), c.clone()).unwrap();
        let th = [0.1, 0.7];
        let a = log_density(&th, &s).unwrap();
        let b = crate::factor_gauss::log_density(&th, &c).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn identical_components_collapse() {
        let yj = YjVector::new(vec![0.6]).unwrap();
        let one = CmgvaState::single(yj.clone(), comp(0.3, 1.2)).unwrap();
        let two = CmgvaState::new(yj, vec![comp(0.3, 1.2), comp(0.3, 1.2)], vec![0.3, 0.7]).unwrap();
        for &t in &[-2.0, 0.0, 1.5] {
            let a = log_density(&[t], &one).unwrap();
            let b = log_density(&[t], &two).unwrap();
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn marginal_single_identity_is_normal() {
        let s = two_d_state();
        let c = s.components()[0].clone();
        let single = CmgvaState::single(YjVector::identity(2), c.clone()).unwrap();
        let var = c.sigma_diag(0);
        let x = 0.9;
        let expect = -0.5 * ((x - c.mu()[0]).powi(2) / var + var.ln()) - 0.918_938_533_204_672_8;
        let got = marginal_log_density(0, x, &single).unwrap();
        assert!((got - expect).abs() < 1e-13);
        assert!(marginal_log_density(2, x, &single).is_err());
    }

    #[test]
    fn sample_single_component_index() {
        let s = CmgvaState::single(YjVector::identity(1), comp(0.0, 1.0)).unwrap();
        let draws = sample(&s, 50, &mut seeded(3)).unwrap();
        assert!(draws.iter().all(|d| d.component == 0));
        let again = sample(&s, 50, &mut seeded(3)).unwrap();
        assert_eq!(draws, again);
    }

    #[test]
    fn responsibilities_identities() {
        let s = two_d_state();
        let old = s.prepare().unwrap();
        let new = Component::new(vec![1.0, 0.0], vec![0.1, 0.1], 1, vec![0.9, 0.9])
            .unwrap()
            .prepare()
            .unwrap();
        for (phi, pi) in [([0.2, 0.3], 0.5), ([3.0, -2.0], 0.1), ([-1.0, 4.0], 0.93)] {
            let r = responsibilities(&phi, &old, &new, pi);
            let id = (1.0 - pi) * r.delta_old + pi * r.delta_new;
            assert!((id - 1.0).abs() < 1e-12);
            let sum: f64 = r.per_component.iter().sum();
            assert!((sum - r.delta_old).abs() < 1e-12);
            assert!(r.delta_old >= 0.0 && r.delta_new >= 0.0);
        }
    }

    #[test]
    fn responsibilities_equal_densities() {
        let c = comp(0.4, 0.9);
        let s = CmgvaState::single(YjVector::identity(1), c.clone()).unwrap();
        let r = responsibilities(&[1.3], &s.prepare().unwrap(), &c.prepare().unwrap(), 0.35);
        assert!((r.delta_old - r.delta_new).abs() < 1e-14);
    }

    #[test]
    fn responsibilities_far_new_component() {
        let s = CmgvaState::single(YjVector::identity(1), comp(0.0, 1.0)).unwrap();
        let far = comp(100.0, 0.5);
        let pi = 0.3;
        let r = responsibilities(&[0.0], &s.prepare().unwrap(), &far.prepare().unwrap(), pi);
        assert!(r.delta_new < 1e-300);
        assert!((r.delta_old - 1.0 / (1.0 - pi)).abs() < 1e-12);
        assert!(r.log_delta_tot.is_finite());
    }

    #[test]
    fn flattening_keeps_simplex_and_freezes() {
        let s = two_d_state();
        let new = Component::diagonal(vec![0.0, 0.0], vec![1.0, 1.0], 1).unwrap();
        let t = s.with_new_component(new.clone(), 0.25).unwrap();
        let sum: f64 = t.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(t.weights(), &[0.4 * 0.75, 0.6 * 0.75, 0.25]);
        assert_eq!(t.frozen_through(), 2);
        let mut t2 = t.clone();
        assert!(t2.set_component(0, new.clone()).is_err());
        assert!(t2.set_component(2, new).is_ok());
    }

    #[test]
    fn invalid_states_rejected() {
        let yj = YjVector::identity(1);
        assert!(CmgvaState::new(yj.clone(), vec![comp(0.0, 1.0)], vec![0.5]).is_err());
        assert!(CmgvaState::new(yj.clone(), vec![], vec![]).is_err());
        assert!(CmgvaState::new(yj, vec![comp(0.0, 1.0), comp(1.0, 1.0)], vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = two_d_state();
        let js = s.to_json().unwrap();
        let back = CmgvaState::<f64>::from_json(&js).unwrap();
        assert_eq!(s, back);
        assert_eq!(js, back.to_json().unwrap());
        let bad = js.replace("\"version\": 1", "\"version\": 9");
        assert!(CmgvaState::<f64>::from_json(&bad).is_err());
    }

    #[test]
    fn phi_density_recovered_after_removing_jacobian() {
        let s = two_d_state();
        let p = s.prepare().unwrap();
        let theta = [0.8, -1.3];
        let phi = s.yj().forward(&theta);
        let lhs = p.log_density(&theta) - s.yj().log_jacobian(&theta);
        assert!((lhs - p.log_density_phi(&phi)).abs() < 1e-13);
    }
}
