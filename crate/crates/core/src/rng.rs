//! Seeded random streams.
//!
//! Every run uses ChaCha8 seeded from a `u64`. Independent substreams are
//! derived with [`substream`], which selects ChaCha stream `id` from the
//! same key, so a worker's draws never depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Real;

pub type RunRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `id` of the generator keyed by `seed`.
pub fn substream(seed: u64, id: u64) -> RunRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[inline]
pub fn std_normal<F: Real, R: Rng + ?Sized>(rng: &mut R) -> F {
    let z: f64 = rng.sample(StandardNormal);
    F::lit(z)
}

pub fn std_normal_vec<F: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<F> {
    (0..n).map(|_| std_normal(rng)).collect()
}

/// Uniform draw in `[0, 1)`.
#[inline]
pub fn uniform<F: Real, R: Rng + ?Sized>(rng: &mut R) -> F {
    F::lit(rng.random::<f64>())
}

/// Index drawn with probability proportional to `weights` (nonnegative,
/// not necessarily normalized). Falls back to the last positive index on
/// rounding overrun.
pub fn categorical<F: Real, R: Rng + ?Sized>(rng: &mut R, weights: &[F]) -> usize {
    let total: F = weights.iter().copied().sum();
    let u = uniform::<F, _>(rng) * total;
    let mut acc = F::zero();
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > F::zero() {
            last = k;
        }
        acc += w;
        if u < acc {
            return k;
        }
    }
    last
}
