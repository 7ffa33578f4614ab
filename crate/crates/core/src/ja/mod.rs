//! Jordan-algebra chemistry.
//!
//! Atoms are 3×3 complex Hermitian matrices with entries from a small fixed
//! set and nonzero trace. Two particles link into their Jordan product with
//! a probability set by the best-aligned pair of eigenvectors and the
//! closeness of the matching normalised eigenvalues. Every composite keeps
//! its two reactants, so links can break again.

pub mod census;
pub mod link;
pub mod matrix;
pub mod particle;
pub mod system;

use alloc::string::String;

pub use census::{enumerate_atoms, Census, EigenClass};
pub use link::{alignment, best_pair, link_probability, strength};
pub use matrix::{hermitian_eig3, jordan_product, EigError, EigenSystem, Mat3, C64};
pub use particle::{
    balance_transfer, decompose, select_transfer_pairs, AlwaysBreak, Bond, Composite, DecompPolicy, JaParticle,
    TransferMode, WeakestLink,
};
pub use system::{attempt_link, JaConfig, LinkOutcome, TankStats};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum JaError {
    #[error(transparent)]
    Eig(#[from] EigError),
    #[error("link needs exactly two reactants, found {0}")]
    WrongArity(usize),
    #[error("particle has no links")]
    NoLinks,
    #[error("grid shape {shape:?} does not arrange {tanks} tanks")]
    GridShape { tanks: u32, shape: Option<(u32, u32)> },
    #[error("not an atom: {0}")]
    NotAtom(String),
    #[error("bad composite record: {0}")]
    Encoding(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("engine: {0}")]
    Engine(String),
}
