#![allow(dead_code)]

use cmgva::factor_gauss::Component;
use cmgva::rng::{seeded, std_normal};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Central difference of `f` at `x` along every coordinate.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Max over coordinates of `|a − b| / max(1, |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `∫_a^b f` by composite Gauss–Legendre over `panels` equal pieces.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let (x, w) = gauss_legendre(20);
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            s += wi * f(lo + 0.5 * h * (xi + 1.0)) * 0.5 * h;
        }
    }
    s
}

/// `∬ f` over a rectangle by tensor Gauss–Legendre.
pub fn integrate_2d(f: impl Fn(f64, f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    integrate(|x| integrate(|y| f(x, y), lo, hi, panels), lo, hi, panels)
}

/// Dense `ββᵀ + D²`.
pub fn dense_sigma(c: &Component<f64>) -> DMatrix<f64> {
    let (m, r) = (c.dim(), c.rank());
    let b = DMatrix::from_row_slice(m, r, c.beta());
    let mut s = &b * b.transpose();
    for i in 0..m {
        s[(i, i)] += c.d()[i] * c.d()[i];
    }
    s
}

/// `ln N(x; μ, Σ)` by dense Cholesky.
pub fn dense_normal_logpdf(x: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let m = x.len();
    let ch = sigma.clone().cholesky().expect("covariance not PD");
    let e = DVector::from_iterator(m, x.iter().zip(mu).map(|(a, b)| a - b));
    let a = ch.solve(&e);
    let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (m as f64 * LN_2PI + logdet + e.dot(&a))
}

/// Random component with lower-triangular loadings and `|d| ∈ [0.3, 1.3]`.
pub fn random_component<R: Rng>(m: usize, r: usize, rng: &mut R) -> Component<f64> {
    let mu: Vec<f64> = (0..m).map(|_| std_normal(rng)).collect();
    let mut beta = vec![0.0; m * r];
    for i in 0..m {
        for j in 0..r.min(i + 1) {
            beta[i * r + j] = 0.7 * std_normal::<f64, _>(rng);
        }
    }
    let d: Vec<f64> = (0..m).map(|_| 0.3 + rng.random::<f64>()).collect();
    Component::new(mu, beta, r, d).unwrap()
}

pub fn rng(seed: u64) -> cmgva::rng::RunRng {
    seeded(seed)
}

/// Exact Fisher information of `N(μ, ββᵀ + D²)` (rank one) with respect to
/// `(β, d)` from `F_ij = ½ tr(Σ⁻¹ ∂_iΣ Σ⁻¹ ∂_jΣ)`.
pub fn dense_fisher_beta_d(beta: &[f64], d: &[f64]) -> DMatrix<f64> {
    let m = d.len();
    let b = DVector::from_column_slice(beta);
    let mut sigma = &b * b.transpose();
    for i in 0..m {
        sigma[(i, i)] += d[i] * d[i];
    }
    let inv = sigma.try_inverse().unwrap();
    let mut derivs = Vec::with_capacity(2 * m);
    for i in 0..m {
        let mut e = DVector::zeros(m);
        e[i] = 1.0;
        derivs.push(&e * b.transpose() + &b * e.transpose());
    }
    for i in 0..m {
        let mut dm = DMatrix::zeros(m, m);
        dm[(i, i)] = 2.0 * d[i];
        derivs.push(dm);
    }
    let n = 2 * m;
    let mut f = DMatrix::zeros(n, n);
    let a: Vec<DMatrix<f64>> = derivs.iter().map(|dm| &inv * dm).collect();
    for i in 0..n {
        for j in 0..n {
            f[(i, j)] = 0.5 * (&a[i] * &a[j]).trace();
        }
    }
    f
}
