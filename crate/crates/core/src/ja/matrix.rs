//! 3×3 complex matrices and a Jacobi eigensolver for the Hermitian case.

use core::cmp::Ordering;

use num_complex::Complex64;

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[C64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[ZERO; 3]; 3]);

    pub fn identity() -> Mat3 {
        Mat3::diag([1.0, 1.0, 1.0])
    }

    pub fn diag(d: [f64; 3]) -> Mat3 {
        let mut m = Mat3::ZERO;
        for (i, x) in d.into_iter().enumerate() {
            m.0[i][i] = C64::new(x, 0.0);
        }
        m
    }

    /// Hermitian matrix from its real diagonal and upper triangle `(m01, m02, m12)`.
    pub fn hermitian(diag: [f64; 3], upper: [C64; 3]) -> Mat3 {
        let mut m = Mat3::diag(diag);
        for (k, (i, j)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
            m.0[i][j] = upper[k];
            m.0[j][i] = upper[k].conj();
        }
        m
    }

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let mut out = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        out
    }

    pub fn add(&self, other: &Mat3) -> Mat3 {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] += other.0[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = *self;
        for row in &mut out.0 {
            for x in row {
                *x *= s;
            }
        }
        out
    }

    pub fn adjoint(&self) -> Mat3 {
        let mut out = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = self.0[j][i].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// Largest entry of `M - M†`, in modulus.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.0[i][j] - self.0[j][i].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol
    }

    pub fn apply(&self, v: &[C64; 3]) -> [C64; 3] {
        let mut out = [ZERO; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..3).map(|k| self.0[i][k] * v[k]).sum();
        }
        out
    }

    /// Row-major real and imaginary parts, 18 numbers.
    pub fn to_flat(&self) -> [f64; 18] {
        let mut out = [0.0; 18];
        for (k, x) in self.0.iter().flatten().enumerate() {
            out[2 * k] = x.re;
            out[2 * k + 1] = x.im;
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Option<Mat3> {
        if flat.len() != 18 {
            return None;
        }
        let mut m = Mat3::ZERO;
        for k in 0..9 {
            m.0[k / 3][k % 3] = C64::new(flat[2 * k], flat[2 * k + 1]);
        }
        Some(m)
    }
}

/// `A ∘ B = (AB + BA) / 2`.
pub fn jordan_product(a: &Mat3, b: &Mat3) -> Mat3 {
    a.mul(b).add(&b.mul(a)).scale(0.5)
}

/// Hermitian inner product `Σ conj(u_k) v_k`.
pub fn inner(u: &[C64; 3], v: &[C64; 3]) -> C64 {
    (0..3).map(|k| u[k].conj() * v[k]).sum()
}

pub fn norm(v: &[C64; 3]) -> f64 {
    libm::sqrt(inner(v, v).re)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EigError {
    #[error("matrix is not Hermitian")]
    NotHermitian,
    #[error("matrix has zero trace")]
    ZeroTrace,
    #[error("eigensolver did not converge")]
    NonConvergence,
}

/// Eigenvalues ascending with unit eigenvectors and normalised eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenSystem {
    pub values: [f64; 3],
    /// `vectors[i]` belongs to `values[i]`.
    pub vectors: [[C64; 3]; 3],
    /// `values[i] / Σ values`.
    pub mu: [f64; 3],
}

/// Traces this close to zero count as zero.
pub const TRACE_EPS: f64 = 1e-9;

/// Rotate `v` so its first component of largest modulus is real and nonnegative.
fn canonical_phase(v: &mut [C64; 3]) {
    let max = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    let k = v.iter().position(|x| x.norm() >= max - 1e-12).expect("max exists");
    let phase = v[k].conj() / v[k].norm();
    for x in v.iter_mut() {
        *x *= phase;
    }
    v[k] = C64::new(v[k].re, 0.0);
}

fn lex_cmp(a: &[C64; 3], b: &[C64; 3]) -> Ordering {
    for k in 0..3 {
        for (x, y) in [(a[k].re, b[k].re), (a[k].im, b[k].im)] {
            if (x - y).abs() > 1e-12 {
                return x.partial_cmp(&y).unwrap_or(Ordering::Equal);
            }
        }
    }
    Ordering::Equal
}

/// Full eigensystem of a Hermitian matrix with nonzero trace, by cyclic
/// complex Jacobi rotations.
pub fn hermitian_eig3(m: &Mat3) -> Result<EigenSystem, EigError> {
    let scale = m.max_abs().max(1.0);
    if !m.is_hermitian(1e-12 * scale) {
        return Err(EigError::NotHermitian);
    }
    if m.trace().re.abs() <= TRACE_EPS {
        return Err(EigError::ZeroTrace);
    }
    let mut a = *m;
    for i in 0..3 {
        a.0[i][i] = C64::new(a.0[i][i].re, 0.0);
    }
    let mut v = Mat3::identity();
    let off = |a: &Mat3| a.0[0][1].norm_sqr() + a.0[0][2].norm_sqr() + a.0[1][2].norm_sqr();
    let mut converged = false;
    for _sweep in 0..64 {
        if libm::sqrt(off(&a)) <= 1e-15 * scale {
            converged = true;
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a.0[p][q];
            let r = apq.norm();
            if r <= 1e-300 {
                continue;
            }
            // make a[p][q] real positive with a diagonal phase on column q
            let ph = apq.conj() / r;
            for k in 0..3 {
                a.0[k][q] *= ph;
                v.0[k][q] *= ph;
            }
            for k in 0..3 {
                a.0[q][k] *= ph.conj();
            }
            let (app, aqq) = (a.0[p][p].re, a.0[q][q].re);
            let tau = (aqq - app) / (2.0 * r);
            let t = if tau >= 0.0 { 1.0 } else { -1.0 } / (tau.abs() + libm::sqrt(1.0 + tau * tau));
            let c = 1.0 / libm::sqrt(1.0 + t * t);
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a.0[k][p], a.0[k][q]);
                a.0[k][p] = akp * c - akq * s;
                a.0[k][q] = akp * s + akq * c;
                let (vkp, vkq) = (v.0[k][p], v.0[k][q]);
                v.0[k][p] = vkp * c - vkq * s;
                v.0[k][q] = vkp * s + vkq * c;
            }
            for k in 0..3 {
                let (apk, aqk) = (a.0[p][k], a.0[q][k]);
                a.0[p][k] = apk * c - aqk * s;
                a.0[q][k] = apk * s + aqk * c;
            }
            a.0[p][q] = ZERO;
            a.0[q][p] = ZERO;
            for i in 0..3 {
                a.0[i][i] = C64::new(a.0[i][i].re, 0.0);
            }
        }
    }
    if !converged && libm::sqrt(off(&a)) > 1e-12 * scale {
        return Err(EigError::NonConvergence);
    }
    let mut pairs: [(f64, [C64; 3]); 3] = core::array::from_fn(|i| {
        let mut col = [v.0[0][i], v.0[1][i], v.0[2][i]];
        let n = norm(&col);
        for x in &mut col {
            *x /= n;
        }
        canonical_phase(&mut col);
        (a.0[i][i].re, col)
    });
    let tol = 1e-9 * scale;
    pairs.sort_by(|x, y| {
        if (x.0 - y.0).abs() <= tol {
            lex_cmp(&x.1, &y.1)
        } else {
            x.0.partial_cmp(&y.0).unwrap_or(Ordering::Equal)
        }
    });
    // degenerate values ordered by vector may be off by rounding; keep them monotone
    let mut values = [pairs[0].0, pairs[1].0, pairs[2].0];
    for k in 1..3 {
        values[k] = values[k].max(values[k - 1]);
    }
    let sum: f64 = values.iter().sum();
    if sum.abs() <= TRACE_EPS {
        return Err(EigError::ZeroTrace);
    }
    Ok(EigenSystem {
        values,
        vectors: [pairs[0].1, pairs[1].1, pairs[2].1],
        mu: values.map(|l| l / sum),
    })
}

/// Largest `‖M v_i − λ_i v_i‖` over the three eigenpairs.
pub fn eigen_residual(m: &Mat3, e: &EigenSystem) -> f64 {
    (0..3)
        .map(|i| {
            let mv = m.apply(&e.vectors[i]);
            let r: [C64; 3] = core::array::from_fn(|k| mv[k] - e.vectors[i][k] * e.values[i]);
            norm(&r)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn identity_eigensystem() {
        let e = hermitian_eig3(&Mat3::identity()).unwrap();
        assert_eq!(e.values, [1.0, 1.0, 1.0]);
        for mu in e.mu {
            assert!((mu - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn diagonal_case_sorted() {
        let e = hermitian_eig3(&Mat3::diag([1.0, -1.0, 1.0])).unwrap();
        assert_eq!(e.values, [-1.0, 1.0, 1.0]);
        assert_eq!(e.mu, [-1.0, 1.0, 1.0]);
        assert!(eigen_residual(&Mat3::diag([1.0, -1.0, 1.0]), &e) < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(hermitian_eig3(&Mat3::diag([1.0, -1.0, 0.0])), Err(EigError::ZeroTrace));
        let mut m = Mat3::identity();
        m.0[0][1] = c(0.0, 1.0);
        assert_eq!(hermitian_eig3(&m), Err(EigError::NotHermitian));
    }

    #[test]
    fn known_two_by_two_block() {
        // [[1, i], [-i, 1]] has eigenvalues 0 and 2
        let m = Mat3::hermitian([1.0, 1.0, 1.0], [c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let e = hermitian_eig3(&m).unwrap();
        let want = [0.0, 1.0, 2.0];
        for (v, w) in e.values.iter().zip(want) {
            assert!((v - w).abs() < 1e-12);
        }
        assert!(eigen_residual(&m, &e) < 1e-12);
    }

    #[test]
    fn jordan_identities() {
        let b = Mat3::hermitian([1.0, 0.0, -1.0], [c(1.0, -1.0), c(0.0, 1.0), c(-1.0, 0.0)]);
        assert_eq!(jordan_product(&Mat3::identity(), &b), b);
        assert_eq!(jordan_product(&b, &b), b.mul(&b));
    }

    fn entry() -> impl Strategy<Value = C64> {
        (-1i8..=1, -1i8..=1).prop_map(|(r, i)| C64::new(r as f64, i as f64))
    }

    fn atom() -> impl Strategy<Value = Mat3> {
        (
            proptest::array::uniform3(-1i8..=1),
            proptest::array::uniform3(entry()),
        )
            .prop_filter("nonzero trace", |(d, _)| d.iter().map(|&x| x as i32).sum::<i32>() != 0)
            .prop_map(|(d, u)| Mat3::hermitian(d.map(f64::from), u))
    }

    proptest! {
        #[test]
        fn spectral_reconstruction(m in atom()) {
            let e = hermitian_eig3(&m).unwrap();
            let mut rebuilt = Mat3::ZERO;
            for i in 0..3 {
                for r in 0..3 {
                    for s in 0..3 {
                        rebuilt.0[r][s] += e.vectors[i][r] * e.vectors[i][s].conj() * e.values[i];
                    }
                }
            }
            let diff = rebuilt.add(&m.scale(-1.0)).max_abs();
            prop_assert!(diff < 1e-9, "diff {}", diff);
            prop_assert!(eigen_residual(&m, &e) < 1e-9);
            for i in 0..3 {
                prop_assert!((norm(&e.vectors[i]) - 1.0).abs() < 1e-9);
            }
            prop_assert!(e.values[0] <= e.values[1] && e.values[1] <= e.values[2]);
            prop_assert!((e.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn jordan_commutes_and_stays_hermitian(a in atom(), b in atom()) {
            let ab = jordan_product(&a, &b);
            prop_assert_eq!(ab, jordan_product(&b, &a));
            prop_assert!(ab.is_hermitian(1e-12));
        }
    }
}
