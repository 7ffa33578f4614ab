//! Eigen-based linking rules.

use super::matrix::{inner, EigenSystem};

/// `1 / √(2π)`, the largest possible strength.
pub const MAX_STRENGTH: f64 = 0.398_942_280_401_432_7;

/// Anti-parallelism of two unit vectors: 0 when parallel, 1 when anti-parallel.
pub fn alignment(u: &[super::C64; 3], v: &[super::C64; 3]) -> f64 {
    let d = inner(u, v).re.clamp(-1.0, 1.0);
    1.0 - 0.5 * (d + 1.0)
}

/// Eigenvector pair `(i, j)` of highest alignment. Values within `1e-12` tie
/// and the first in row order wins.
pub fn best_pair(a: &EigenSystem, b: &EigenSystem) -> (usize, usize, f64) {
    best_vector_pair(&a.vectors, &b.vectors)
}

/// [`best_pair`] on bare eigenvector triples.
pub fn best_vector_pair(a: &[[super::C64; 3]; 3], b: &[[super::C64; 3]; 3]) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (i, u) in a.iter().enumerate() {
        for (j, v) in b.iter().enumerate() {
            let x = alignment(u, v);
            if x > best.2 + 1e-12 {
                best = (i, j, x);
            }
        }
    }
    best
}

/// Standard normal density at `mu_a - mu_b`.
pub fn strength(mu_a: f64, mu_b: f64) -> f64 {
    let x = mu_a - mu_b;
    MAX_STRENGTH * libm::exp(-0.5 * x * x)
}

pub fn link_probability(strength: f64, alignment: f64) -> f64 {
    strength * alignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ja::matrix::{hermitian_eig3, Mat3};
    use crate::ja::C64;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn alignment_extremes() {
        let v = [c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.0)];
        let neg = v.map(|x| -x);
        let orth = [c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)];
        assert_eq!(alignment(&v, &v), 0.0);
        assert!((alignment(&v, &neg) - 1.0).abs() < 1e-15);
        assert_eq!(alignment(&v, &orth), 0.5);
    }

    #[test]
    fn strength_values() {
        assert!((strength(0.3, 0.3) - 1.0 / (2.0 * core::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert_eq!(strength(0.1, 0.5), strength(0.5, 0.1));
        assert!(strength(0.0, 0.5) > strength(0.0, 1.0));
        assert_eq!(link_probability(MAX_STRENGTH, 0.0), 0.0);
        assert!((link_probability(MAX_STRENGTH, 1.0) - 0.398_942_3).abs() < 1e-7);
    }

    #[test]
    fn best_pair_negated_matrix_is_antiparallel() {
        let a = Mat3::hermitian([1.0, 0.0, 1.0], [c(1.0, 1.0), c(0.0, 0.0), c(0.0, -1.0)]);
        let ea = hermitian_eig3(&a).unwrap();
        let mut eb = ea;
        for v in &mut eb.vectors {
            *v = v.map(|x| -x);
        }
        let (i, j, x) = best_pair(&ea, &eb);
        assert!((x - 1.0).abs() < 1e-12);
        assert_eq!((i, j), (0, 0));
    }

    #[test]
    fn best_pair_matches_brute_force_on_identical_systems() {
        let a = Mat3::hermitian([1.0, -1.0, 1.0], [c(0.0, 1.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let e = hermitian_eig3(&a).unwrap();
        let (i, j, x) = best_pair(&e, &e);
        let mut all = [[0.0; 3]; 3];
        for (r, row) in all.iter_mut().enumerate() {
            for (s, v) in row.iter_mut().enumerate() {
                *v = alignment(&e.vectors[r], &e.vectors[s]);
            }
        }
        let max = all.iter().flatten().copied().fold(f64::MIN, f64::max);
        assert!((x - max).abs() <= 1e-12);
        let first = (0..9).find(|&k| all[k / 3][k % 3] >= max - 1e-12).unwrap();
        assert_eq!((i, j), (first / 3, first % 3));
        // orthonormal eigenvectors: cross terms give 0.5, the diagonal 0
        assert_eq!((i, j), (0, 1));
    }
}
