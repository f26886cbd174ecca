//! Small dense kernels: Cholesky of row-major square matrices and the
//! triangular solves built on it. Sizes here are the factor rank `r` (inner
//! Woodbury systems) or the target dimension, so no blocking is attempted.

use crate::{CmgvaError, Real, Result};

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky<F> {
    n: usize,
    /// Row-major `n × n`, upper triangle zero.
    l: Vec<F>,
}

impl<F: Real> Cholesky<F> {
    /// Factorizes row-major `a` (`n × n`). Only the lower triangle is read.
    pub fn new(a: &[F], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(CmgvaError::dim("cholesky", n * n, a.len()));
        }
        let mut l = vec![F::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > F::zero()) || !s.is_finite() {
                        return Err(CmgvaError::Numerical(format!(
                            "matrix not positive definite (pivot {i} = {s})"
                        )));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor(&self) -> &[F] {
        &self.l
    }

    /// `ln det A = 2 Σ ln L_ii`.
    pub fn log_det(&self) -> F {
        (0..self.n)
            .map(|i| self.l[i * self.n + i].ln())
            .sum::<F>()
            * F::two()
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [F]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_upper_in_place(&self, b: &mut [F]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `L x` for a vector `x`.
    pub fn mul_lower(&self, x: &[F]) -> Vec<F> {
        let n = self.n;
        (0..n)
            .map(|i| (0..=i).map(|k| self.l[i * n + k] * x[k]).sum())
            .collect()
    }
}
