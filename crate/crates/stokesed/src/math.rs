//! Small shared math helpers: fixed-size vector aliases, multi-indices, and
//! the seeded RNG streams used everywhere randomness is needed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Unit vector along the third axis. Gravity in this crate always points
/// along `-E3`.
pub const E3: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// Multi-index `(a1, a2, a3)` for mixed partial derivatives.
pub type MultiIndex = [usize; 3];

pub fn multi_index_order(alpha: MultiIndex) -> usize {
    alpha[0] + alpha[1] + alpha[2]
}

/// `alpha! = a1! a2! a3!` as a float (orders stay small enough to be exact).
pub fn multi_index_factorial(alpha: MultiIndex) -> f64 {
    fn fact(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }
    fact(alpha[0]) * fact(alpha[1]) * fact(alpha[2])
}

/// All multi-indices with `|alpha| <= max_order`, grouped by total order.
pub fn multi_indices_up_to(max_order: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for d in 0..=max_order {
        for i in (0..=d).rev() {
            for j in (0..=d - i).rev() {
                out.push([i, j, d - i - j]);
            }
        }
    }
    out
}

/// Largest singular value of a 3x3 matrix.
pub fn spectral_norm(m: &Mat3) -> f64 {
    m.singular_values().max()
}

/// `max(0, -ln s)`: the logarithm factor in the quasi-Lipschitz modulus.
/// Only active at scales below one.
pub fn ln_minus(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        -s.ln()
    }
}

/// Deterministic RNG stream `stream` derived from a single root `seed`.
///
/// Every consumer of randomness asks for its own stream number, so adding a
/// new sampling site never perturbs the draws of existing ones.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniformly distributed unit vector (Gaussian triple, normalized).
pub fn unit_vector<R: rand::Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng),
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng),
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_index_enumeration_counts() {
        // C(d+2, 2) indices of exact order d, summing to C(n+3, 3).
        let idx = multi_indices_up_to(4);
        assert_eq!(idx.len(), 35);
        assert_eq!(idx[0], [0, 0, 0]);
        assert!(idx.iter().all(|&a| multi_index_order(a) <= 4));
        let exact3 = idx.iter().filter(|&&a| multi_index_order(a) == 3).count();
        assert_eq!(exact3, 10);
    }

    #[test]
    fn factorials() {
        assert_eq!(multi_index_factorial([0, 0, 0]), 1.0);
        assert_eq!(multi_index_factorial([3, 1, 2]), 12.0);
    }

    #[test]
    fn ln_minus_matches_definition() {
        assert_eq!(ln_minus(2.0), 0.0);
        assert_eq!(ln_minus(1.0), 0.0);
        assert!((ln_minus(0.1) - 10.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rng_streams_are_independent_and_reproducible() {
        use rand::Rng;
        let a: u64 = stream_rng(7, 0).gen();
        let a2: u64 = stream_rng(7, 0).gen();
        let b: u64 = stream_rng(7, 1).gen();
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }

    #[test]
    fn unit_vectors_have_unit_norm() {
        let mut rng = stream_rng(1, 0);
        for _ in 0..100 {
            let v = unit_vector(&mut rng);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }
}
