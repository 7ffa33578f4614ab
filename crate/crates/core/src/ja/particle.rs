//! Composite particles, decomposition and tank transfers.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;

use super::link::{best_pair, link_probability, strength};
use super::matrix::{hermitian_eig3, jordan_product, Mat3, C64};
use super::JaError;
use crate::engine::Rng;
use crate::state::Particle;

/// Off-diagonal entry set, indexed by the digits of an atom code.
pub const ENTRIES: [(f64, f64); 9] = [
    (0.0, 0.0),
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
    (1.0, 1.0),
    (1.0, -1.0),
    (-1.0, 1.0),
    (-1.0, -1.0),
];

const DIAG: [(char, f64); 3] = [('m', -1.0), ('0', 0.0), ('p', 1.0)];

/// Seven-character code of an atom: `A`, three diagonal signs (`m`, `0`,
/// `p`), three digits indexing [`ENTRIES`] for `m01`, `m02`, `m12`.
pub fn atom_code(m: &Mat3) -> Option<String> {
    let mut code = String::from("A");
    for i in 0..3 {
        let d = m.0[i][i];
        let (c, _) = DIAG.iter().find(|(_, x)| d.re == *x && d.im == 0.0)?;
        code.push(*c);
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let x = m.0[i][j];
        let k = ENTRIES.iter().position(|&(re, im)| x.re == re && x.im == im)?;
        code.push(char::from(b'0' + k as u8));
    }
    Some(code)
}

pub fn atom_from_code(code: &str) -> Option<Mat3> {
    let b = code.as_bytes();
    if b.len() != 7 || b[0] != b'A' {
        return None;
    }
    let mut diag = [0.0; 3];
    for i in 0..3 {
        diag[i] = DIAG.iter().find(|(c, _)| *c as u8 == b[1 + i])?.1;
    }
    let mut upper = [C64::new(0.0, 0.0); 3];
    for k in 0..3 {
        let d = b[4 + k].checked_sub(b'0')? as usize;
        let (re, im) = *ENTRIES.get(d)?;
        upper[k] = C64::new(re, im);
    }
    Some(Mat3::hermitian(diag, upper))
}

/// The link joining the two reactants of a composite.
#[derive(Clone, Debug, PartialEq)]
pub struct Bond {
    pub left: Composite,
    pub right: Composite,
    pub pair: (usize, usize),
    pub strength: f64,
    pub alignment: f64,
}

impl Bond {
    pub fn probability(&self) -> f64 {
        link_probability(self.strength, self.alignment)
    }
}

/// An atom, or the Jordan product of two composites with a memory of both.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    matrix: Mat3,
    atoms: u32,
    key: String,
    bond: Option<Arc<Bond>>,
}

impl Composite {
    pub fn atom(m: Mat3) -> Result<Composite, JaError> {
        if !m.is_hermitian(0.0) {
            return Err(JaError::NotAtom("not Hermitian".to_string()));
        }
        if m.trace().re == 0.0 {
            return Err(JaError::NotAtom("zero trace".to_string()));
        }
        let key = atom_code(&m).ok_or_else(|| JaError::NotAtom("entry outside the atom set".to_string()))?;
        Ok(Composite {
            matrix: m,
            atoms: 1,
            key,
            bond: None,
        })
    }

    pub fn from_code(code: &str) -> Result<Composite, JaError> {
        let m = atom_from_code(code).ok_or_else(|| JaError::NotAtom(format!("bad atom code `{code}`")))?;
        Composite::atom(m)
    }

    /// Link `a` and `b` through the given bond parameters. The reactants are
    /// stored in key order, so the result does not depend on argument order.
    pub fn linked(a: Composite, b: Composite, pair: (usize, usize), strength: f64, alignment: f64) -> Composite {
        let (left, right, pair) = if a.key <= b.key { (a, b, pair) } else { (b, a, (pair.1, pair.0)) };
        Composite {
            matrix: jordan_product(&left.matrix, &right.matrix),
            atoms: left.atoms + right.atoms,
            key: format!("({} {})", left.key, right.key),
            bond: Some(Arc::new(Bond {
                left,
                right,
                pair,
                strength,
                alignment,
            })),
        }
    }

    pub(crate) fn from_parts(matrix: Mat3, atoms: u32, key: String, bond: Option<Bond>) -> Composite {
        Composite {
            matrix,
            atoms,
            key,
            bond: bond.map(Arc::new),
        }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.matrix
    }

    pub fn atoms(&self) -> u32 {
        self.atoms
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn bond(&self) -> Option<&Bond> {
        self.bond.as_deref()
    }

    pub fn is_atom(&self) -> bool {
        self.bond.is_none()
    }

    /// Bonds in preorder.
    pub fn bonds(&self) -> Vec<&Bond> {
        let mut out = Vec::new();
        let mut stack = Vec::from([self]);
        while let Some(c) = stack.pop() {
            if let Some(b) = c.bond() {
                out.push(b);
                stack.push(&b.right);
                stack.push(&b.left);
            }
        }
        out
    }

    /// Atom leaves, left to right.
    pub fn leaves(&self) -> Vec<&Composite> {
        let mut out = Vec::new();
        let mut stack = Vec::from([self]);
        while let Some(c) = stack.pop() {
            match c.bond() {
                Some(b) => {
                    stack.push(&b.right);
                    stack.push(&b.left);
                }
                None => out.push(c),
            }
        }
        out
    }

    /// Number of different atom species among the leaves.
    pub fn distinct_atoms(&self) -> usize {
        let mut keys: Vec<&str> = self.leaves().into_iter().map(Composite::key).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    }
}

/// Evaluate the linking rule for two composites.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkTerms {
    pub pair: (usize, usize),
    pub alignment: f64,
    pub strength: f64,
    pub probability: f64,
}

pub fn link_terms(a: &Composite, b: &Composite) -> Result<LinkTerms, JaError> {
    let ea = hermitian_eig3(a.matrix())?;
    let eb = hermitian_eig3(b.matrix())?;
    let (i, j, al) = best_pair(&ea, &eb);
    let s = strength(ea.mu[i], eb.mu[j]);
    Ok(LinkTerms {
        pair: (i, j),
        alignment: al,
        strength: s,
        probability: link_probability(s, al),
    })
}

/// A JA particle: a composite living in a numbered tank.
#[derive(Clone, Debug, PartialEq)]
pub struct JaParticle {
    pub tank: u32,
    pub composite: Composite,
}

impl Particle for JaParticle {
    fn key(&self) -> String {
        format!("{}/{}", self.tank, self.composite.key())
    }
}

/// How a composite falls apart.
pub trait DecompPolicy: Send + Sync {
    /// The check threshold: the break happens when this is below `r`.
    fn threshold(&self, c: &Composite) -> f64;
    /// Pieces after the break; their atom counts sum to `c.atoms()`.
    fn pieces(&self, c: &Composite) -> Vec<Composite>;
}

/// Break the weakest link (lowest `s·a`, first in preorder on ties) with
/// probability `1 - s·a`.
#[derive(Clone, Copy, Debug, Default)]
pub struct WeakestLink;

/// Break the weakest link unconditionally.
#[derive(Clone, Copy, Debug, Default)]
pub struct AlwaysBreak;

fn weakest(c: &Composite) -> Option<&Bond> {
    let mut best: Option<&Bond> = None;
    for b in c.bonds() {
        if best.is_none_or(|w| b.probability() < w.probability()) {
            best = Some(b);
        }
    }
    best
}

fn remove_bond(c: &Composite, target: *const Bond) -> Vec<Composite> {
    let b = c.bond().expect("target lies below");
    if core::ptr::eq(b, target) {
        return Vec::from([b.left.clone(), b.right.clone()]);
    }
    let in_left = b.left.bonds().iter().any(|x| core::ptr::eq(*x, target));
    if in_left {
        let mut out = remove_bond(&b.left, target);
        out.push(b.right.clone());
        out
    } else {
        let mut out = Vec::from([b.left.clone()]);
        out.extend(remove_bond(&b.right, target));
        out
    }
}

fn break_weakest(c: &Composite) -> Vec<Composite> {
    match weakest(c) {
        Some(w) => remove_bond(c, w),
        None => Vec::from([c.clone()]),
    }
}

impl DecompPolicy for WeakestLink {
    fn threshold(&self, c: &Composite) -> f64 {
        weakest(c).map_or(1.0, Bond::probability)
    }

    fn pieces(&self, c: &Composite) -> Vec<Composite> {
        break_weakest(c)
    }
}

impl DecompPolicy for AlwaysBreak {
    fn threshold(&self, c: &Composite) -> f64 {
        if c.is_atom() {
            1.0
        } else {
            0.0
        }
    }

    fn pieces(&self, c: &Composite) -> Vec<Composite> {
        break_weakest(c)
    }
}

/// One decomposition attempt. `None` when the gate keeps the composite whole.
pub fn decompose(c: &Composite, policy: &dyn DecompPolicy, rng: &mut Rng) -> Result<Option<Vec<Composite>>, JaError> {
    if c.is_atom() {
        return Err(JaError::NoLinks);
    }
    let r = 1.0 - rng.gen::<f64>();
    if policy.threshold(c) < r {
        Ok(Some(policy.pieces(c)))
    } else {
        Ok(None)
    }
}

/// Merge two tanks and deal the particles back, largest first, each to the
/// tank holding fewer atoms (ties go to `a`).
pub fn balance_transfer(a: Vec<Composite>, b: Vec<Composite>) -> (Vec<Composite>, Vec<Composite>) {
    let mut all = a;
    all.extend(b);
    all.sort_by(|x, y| y.atoms.cmp(&x.atoms).then_with(|| x.key.cmp(&y.key)));
    let (mut ta, mut tb) = (Vec::new(), Vec::new());
    let (mut na, mut nb) = (0u64, 0u64);
    for c in all {
        if nb < na {
            nb += u64::from(c.atoms);
            tb.push(c);
        } else {
            na += u64::from(c.atoms);
            ta.push(c);
        }
    }
    (ta, tb)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferMode {
    Single,
    None,
    Random,
    Grid,
}

impl TransferMode {
    pub fn word(self) -> &'static str {
        match self {
            TransferMode::Single => "single",
            TransferMode::None => "none",
            TransferMode::Random => "random",
            TransferMode::Grid => "grid",
        }
    }

    pub fn from_word(w: &str) -> Option<TransferMode> {
        [TransferMode::Single, TransferMode::None, TransferMode::Random, TransferMode::Grid]
            .into_iter()
            .find(|m| m.word() == w)
    }
}

/// Moore neighbours of `tank` on a `rows × cols` grid without wrap-around.
pub fn moore_neighbors(tank: u32, rows: u32, cols: u32) -> Vec<u32> {
    let (r, c) = ((tank / cols) as i64, (tank % cols) as i64);
    let mut out = Vec::new();
    for dr in -1..=1i64 {
        for dc in -1..=1i64 {
            let (nr, nc) = (r + dr, c + dc);
            if (dr, dc) != (0, 0) && (0..rows as i64).contains(&nr) && (0..cols as i64).contains(&nc) {
                out.push((nr * cols as i64 + nc) as u32);
            }
        }
    }
    out
}

/// Tank pairs for one round of transfers: `k` uniform in `0..=max_transfers`.
pub fn select_transfer_pairs(
    mode: TransferMode,
    tanks: u32,
    grid_shape: Option<(u32, u32)>,
    max_transfers: u32,
    rng: &mut Rng,
) -> Result<Vec<(u32, u32)>, JaError> {
    let shape = match mode {
        TransferMode::None | TransferMode::Single => return Ok(Vec::new()),
        TransferMode::Grid => match grid_shape {
            Some((r, c)) if r * c == tanks && tanks > 0 => Some((r, c)),
            _ => return Err(JaError::GridShape { tanks, shape: grid_shape }),
        },
        TransferMode::Random => None,
    };
    if tanks < 2 {
        return Ok(Vec::new());
    }
    let k = rng.gen_range(0..=max_transfers);
    let mut out = Vec::new();
    for _ in 0..k {
        match shape {
            None => {
                let s = index::sample(rng, tanks as usize, 2);
                out.push((s.index(0) as u32, s.index(1) as u32));
            }
            Some((rows, cols)) => {
                let first = rng.gen_range(0..tanks);
                let ns = moore_neighbors(first, rows, cols);
                if !ns.is_empty() {
                    out.push((first, ns[rng.gen_range(0..ns.len())]));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::node_rng;
    use crate::graph::NodeId;
    use proptest::prelude::*;

    pub(crate) fn rng(seed: u64) -> crate::engine::Rng {
        node_rng(seed, &NodeId::of_name("a:test"))
    }

    fn atom(code: &str) -> Composite {
        Composite::from_code(code).unwrap()
    }

    /// Atom with `n` atoms' worth of mass, for transfer tests.
    fn sized(n: u32, tag: &str) -> Composite {
        let mut c = atom("Ap00000");
        for _ in 1..n {
            c = Composite::linked(c, atom("Ap00000"), (0, 0), 0.1, 0.1);
        }
        Composite::from_parts(*c.matrix(), n, format!("{tag}{}", c.key()), None)
    }

    #[test]
    fn atom_codes_round_trip() {
        let c = atom("App0153");
        assert_eq!(atom_code(c.matrix()).unwrap(), "App0153");
        assert!(Composite::from_code("Am0p000").is_err());
        assert!(Composite::from_code("Ap0009").is_err());
    }

    #[test]
    fn linked_is_symmetric_and_counts_atoms() {
        let (a, b) = (atom("App0000"), atom("Ap00100"));
        let ab = Composite::linked(a.clone(), b.clone(), (0, 2), 0.2, 0.7);
        let ba = Composite::linked(b, a, (2, 0), 0.2, 0.7);
        assert_eq!(ab, ba);
        assert_eq!(ab.atoms(), 2);
        assert_eq!(ab.key(), "(Ap00100 App0000)");
        assert_eq!(ab.bond().unwrap().pair, (2, 0));
    }

    #[test]
    fn decompose_atom_fails() {
        assert_eq!(decompose(&atom("Ap00000"), &WeakestLink, &mut rng(1)), Err(JaError::NoLinks));
    }

    #[test]
    fn forced_break_restores_reactants() {
        let (a, b) = (atom("App0000"), atom("Ap00100"));
        let ab = Composite::linked(a.clone(), b.clone(), (0, 0), 0.3, 0.4);
        let pieces = decompose(&ab, &AlwaysBreak, &mut rng(2)).unwrap().unwrap();
        let mut keys: Vec<&str> = pieces.iter().map(Composite::key).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["Ap00100", "App0000"]);
    }

    #[test]
    fn weakest_link_breaks_lowest_probability() {
        let (a, b, c) = (atom("Ap00000"), atom("App0000"), atom("Appp000"));
        let ab = Composite::linked(a.clone(), b.clone(), (0, 0), 0.3, 0.9);
        let abc = Composite::linked(ab.clone(), c.clone(), (0, 0), 0.1, 0.1);
        let pieces = WeakestLink.pieces(&abc);
        assert_eq!(pieces.len(), 2);
        assert!(pieces.contains(&ab) && pieces.contains(&c));
        let strong = Composite::linked(ab.clone(), c.clone(), (0, 0), 0.39, 1.0);
        let pieces = WeakestLink.pieces(&strong);
        assert_eq!(pieces.len(), 3);
        assert_eq!(pieces.iter().map(Composite::atoms).sum::<u32>(), 3);
    }

    #[test]
    fn decomposition_rate_follows_threshold() {
        let ab = Composite::linked(atom("Ap00000"), atom("App0000"), (0, 0), 0.25, 0.8);
        let mut r = rng(3);
        let n = 20_000;
        let broke = (0..n).filter(|_| decompose(&ab, &WeakestLink, &mut r).unwrap().is_some()).count();
        let p = 1.0 - 0.2;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((broke as f64 / n as f64 - p).abs() < 4.0 * sigma);
    }

    #[test]
    fn balance_worked_example() {
        let tank_a = Vec::from([sized(5, "a"), sized(2, "b")]);
        let tank_b = Vec::from([sized(3, "c"), sized(2, "d")]);
        let (a, b) = balance_transfer(tank_a, tank_b);
        let sizes = |t: &[Composite]| t.iter().map(Composite::atoms).collect::<Vec<_>>();
        assert_eq!(sizes(&a), [5, 2]);
        assert_eq!(sizes(&b), [3, 2]);
        assert_eq!(balance_transfer(Vec::new(), Vec::new()), (Vec::new(), Vec::new()));
    }

    #[test]
    fn moore_neighbourhoods() {
        let mut n = moore_neighbors(4, 3, 3);
        n.sort_unstable();
        assert_eq!(n, [0, 1, 2, 3, 5, 6, 7, 8]);
        assert_eq!(moore_neighbors(0, 3, 3), [1, 3, 4]);
        assert!(moore_neighbors(0, 1, 1).is_empty());
    }

    #[test]
    fn transfer_pair_modes() {
        let mut r = rng(4);
        assert!(select_transfer_pairs(TransferMode::None, 9, None, 10, &mut r).unwrap().is_empty());
        assert!(select_transfer_pairs(TransferMode::Single, 9, None, 10, &mut r).unwrap().is_empty());
        assert!(matches!(
            select_transfer_pairs(TransferMode::Grid, 9, Some((2, 4)), 10, &mut r),
            Err(JaError::GridShape { .. })
        ));
        for _ in 0..200 {
            for (a, b) in select_transfer_pairs(TransferMode::Grid, 9, Some((3, 3)), 10, &mut r).unwrap() {
                assert!(moore_neighbors(a, 3, 3).contains(&b));
            }
            let pairs = select_transfer_pairs(TransferMode::Random, 5, None, 10, &mut r).unwrap();
            assert!(pairs.len() <= 10);
            assert!(pairs.iter().all(|(a, b)| a != b && *a < 5 && *b < 5));
        }
    }

    proptest! {
        #[test]
        fn balance_conserves_and_evens_out(sa in proptest::collection::vec(1u32..8, 0..8), sb in proptest::collection::vec(1u32..8, 0..8)) {
            let a: Vec<Composite> = sa.iter().enumerate().map(|(i, &n)| sized(n, &format!("a{i}"))).collect();
            let b: Vec<Composite> = sb.iter().enumerate().map(|(i, &n)| sized(n, &format!("b{i}"))).collect();
            let mut before: Vec<String> = a.iter().chain(&b).map(|c| c.key().to_string()).collect();
            let (x, y) = balance_transfer(a, b);
            let mut after: Vec<String> = x.iter().chain(&y).map(|c| c.key().to_string()).collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
            let tot = |t: &[Composite]| t.iter().map(|c| i64::from(c.atoms())).sum::<i64>();
            let max = sa.iter().chain(&sb).copied().max().unwrap_or(0);
            prop_assert!((tot(&x) - tot(&y)).abs() <= i64::from(max));
        }
    }
}
