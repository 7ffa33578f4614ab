//! Static graph runtime for artificial chemistries.
//!
//! Graphs of typed container and control nodes are validated statically and
//! executed by a six-phase transition interpreter. Three reference
//! chemistries and their nested composition are built on top.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod behaviors;
pub mod engine;
pub mod graph;
pub mod ja;
pub mod nested;
pub mod state;
pub mod stringcat;
pub mod swarm;

pub use engine::{Behavior, Behaviors, EngineError, Program, Run, RunConfig, TransitionEvent};
pub use graph::{validate, GraphBuilder, GraphDef, NodeId, NodeKind, Severity, Violation, ViolationCode};
pub use state::{EnvStore, EnvValue, LocalState, Particle, ParticleBag, SystemState};
