//! Exhaustive enumeration of the atom set.

use alloc::vec::Vec;

use super::matrix::{hermitian_eig3, EigError, Mat3, C64};
use super::particle::ENTRIES;

/// Published atom count for the same entry set.
pub const REFERENCE_ATOM_COUNT: usize = 14574;
/// Published number of distinct eigenvalue sets.
pub const REFERENCE_CLASS_COUNT: usize = 66;
/// Hermitian matrices over the entry set before the trace filter, `3³ · 9³`.
pub const HERMITIAN_COUNT: usize = 19683;
/// Triples are the same class when every component is within this.
pub const CLASS_TOL: f64 = 1e-6;

/// Every Hermitian matrix over the entry set, nonzero trace or not, in code order.
pub fn hermitian_matrices() -> impl Iterator<Item = Mat3> {
    let diag = [-1.0, 0.0, 1.0];
    (0..HERMITIAN_COUNT).map(move |n| {
        let d = [diag[n / 6561 % 3], diag[n / 2187 % 3], diag[n / 729 % 3]];
        let e = |k: usize| {
            let (re, im) = ENTRIES[k];
            C64::new(re, im)
        };
        Mat3::hermitian(d, [e(n / 81 % 9), e(n / 9 % 9), e(n % 9)])
    })
}

/// Atoms: the Hermitian matrices with nonzero trace.
pub fn atoms() -> impl Iterator<Item = Mat3> {
    hermitian_matrices().filter(|m| m.trace().re != 0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenClass {
    pub values: [f64; 3],
    pub members: usize,
    pub example: Mat3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Census {
    pub hermitian: usize,
    pub atoms: usize,
    /// Classes of raw eigenvalue triples.
    pub raw_classes: Vec<EigenClass>,
    /// Classes of normalised eigenvalue triples.
    pub mu_classes: Vec<EigenClass>,
    /// Classes of normalised eigenvalue magnitudes, sorted ascending.
    pub magnitude_classes: Vec<EigenClass>,
}

impl Census {
    /// The class count compared against the reference count.
    pub fn class_count(&self) -> usize {
        self.magnitude_classes.len()
    }
}

fn assign(classes: &mut Vec<EigenClass>, values: [f64; 3], m: &Mat3) {
    let near = |c: &EigenClass| (0..3).all(|k| (c.values[k] - values[k]).abs() <= CLASS_TOL);
    match classes.iter_mut().find(|c| near(c)) {
        Some(c) => c.members += 1,
        None => classes.push(EigenClass {
            values,
            members: 1,
            example: *m,
        }),
    }
}

fn sort_classes(classes: &mut [EigenClass]) {
    classes.sort_by(|a, b| {
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
}

/// Count the atoms and cluster their eigenvalue triples.
pub fn enumerate_atoms() -> Result<Census, EigError> {
    let mut census = Census {
        hermitian: 0,
        atoms: 0,
        raw_classes: Vec::new(),
        mu_classes: Vec::new(),
        magnitude_classes: Vec::new(),
    };
    for m in hermitian_matrices() {
        census.hermitian += 1;
        if m.trace().re == 0.0 {
            continue;
        }
        census.atoms += 1;
        let e = hermitian_eig3(&m)?;
        assign(&mut census.raw_classes, e.values, &m);
        assign(&mut census.mu_classes, e.mu, &m);
        let mut mag = e.mu.map(f64::abs);
        mag.sort_by(f64::total_cmp);
        assign(&mut census.magnitude_classes, mag, &m);
    }
    sort_classes(&mut census.raw_classes);
    sort_classes(&mut census.mu_classes);
    sort_classes(&mut census.magnitude_classes);
    Ok(census)
}
