//! The transition interpreter.
//!
//! Each step runs read, check, pull, process, push and next for the node
//! under the execution pointer. Hooks only see the system state through
//! [`View`] and [`Access`], which refuse anything outside the node's
//! information edges or the per-kind modification rules.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::num::NonZeroU64;

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{has_hard, validate, AccessSets, GraphDef, InfoKind, NodeId, NodeKind, Violation};
use crate::state::{EnvStore, LocalState, Particle, ParticleBag, StateError, SystemState};

/// Random source handed to hooks.
pub type Rng = ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("capability: {node} may not {action} {container}")]
    Capability {
        node: NodeId,
        container: NodeId,
        action: &'static str,
    },
    #[error("{0} has no outgoing control edge")]
    NoTarget(NodeId),
    #[error("{node} routed to `{route}`, which is not one of its targets")]
    BadDecision { node: NodeId, route: String },
    #[error("no behavior `{behavior}` for {node}")]
    MissingBehavior { node: NodeId, behavior: String },
    #[error("graph has {} hard violations", .0.len())]
    InvalidGraph(Vec<Violation>),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("{}: {message}", node.as_ref().map_or_else(|| "behavior".to_string(), |n| n.to_string()))]
    Behavior { node: Option<NodeId>, message: String },
    #[error("subgraph: {0}")]
    Subgraph(Box<EngineError>),
    #[error("subgraph exceeded {0} transitions")]
    SubgraphLimit(u64),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("run already halted")]
    Halted,
}

impl EngineError {
    /// Error raised from inside a hook; the engine fills in the node.
    pub fn behavior(message: impl Into<String>) -> EngineError {
        EngineError::Behavior {
            node: None,
            message: message.into(),
        }
    }

    fn at(self, node: &NodeId) -> EngineError {
        match self {
            EngineError::Behavior { node: None, message } => EngineError::Behavior {
                node: Some(node.clone()),
                message,
            },
            e => e,
        }
    }

    /// Innermost error, looking through subgraph wrappers.
    pub fn root(&self) -> &EngineError {
        match self {
            EngineError::Subgraph(inner) => inner.root(),
            e => e,
        }
    }
}

/// Read-only view of the containers a node may read.
pub struct View<'a, P: Particle> {
    state: &'a SystemState<P>,
    node: &'a NodeId,
    sets: &'a AccessSets,
}

impl<'a, P: Particle> View<'a, P> {
    pub fn node(&self) -> &NodeId {
        self.node
    }

    fn readable(&self, id: &NodeId) -> Result<(), EngineError> {
        if self.sets.readable.contains(id) {
            Ok(())
        } else {
            Err(EngineError::Capability {
                node: self.node.clone(),
                container: id.clone(),
                action: "read",
            })
        }
    }

    pub fn bag(&self, id: &NodeId) -> Result<&'a ParticleBag<P>, EngineError> {
        self.readable(id)?;
        Ok(self.state.bag(id)?)
    }

    pub fn env(&self, id: &NodeId) -> Result<&'a EnvStore, EngineError> {
        self.readable(id)?;
        Ok(self.state.env(id)?)
    }

    /// Copy every readable container into local state.
    pub fn copy_all(&self, local: &mut LocalState<P>) -> Result<(), EngineError> {
        for id in &self.sets.readable {
            if id.kind() == NodeKind::Environment {
                local.env.insert(id.clone(), self.state.read_env(id)?);
            } else {
                local.particles.insert(id.clone(), self.state.read_bag(id)?);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Pull,
    Push,
}

/// Mutating access during the pull and push phases. Pull may only remove,
/// push may only add, and only along the node's pull/push edges.
pub struct Access<'a, P: Particle> {
    state: &'a mut SystemState<P>,
    node: &'a NodeId,
    sets: &'a AccessSets,
    phase: Phase,
    summary: bool,
    touched: &'a mut BTreeSet<NodeId>,
}

impl<'a, P: Particle> Access<'a, P> {
    pub fn node(&self) -> &NodeId {
        self.node
    }

    fn allow(&self, id: &NodeId, kind: InfoKind) -> Result<(), EngineError> {
        let (phase, set, action) = match kind {
            InfoKind::Pull => (Phase::Pull, &self.sets.pullable, "pull from"),
            InfoKind::Push => (Phase::Push, &self.sets.pushable, "push to"),
            InfoKind::Read => (self.phase, &self.sets.readable, "read"),
        };
        let kind_ok = kind == InfoKind::Read
            || self.node.kind().may_modify(id.kind())
            || (self.summary && self.node.kind() == NodeKind::Action && id.kind() == NodeKind::Tank);
        if phase == self.phase && set.contains(id) && kind_ok {
            Ok(())
        } else {
            Err(EngineError::Capability {
                node: self.node.clone(),
                container: id.clone(),
                action,
            })
        }
    }

    pub fn bag(&self, id: &NodeId) -> Result<&ParticleBag<P>, EngineError> {
        self.allow(id, InfoKind::Read)?;
        Ok(self.state.bag(id)?)
    }

    pub fn env(&self, id: &NodeId) -> Result<&EnvStore, EngineError> {
        self.allow(id, InfoKind::Read)?;
        Ok(self.state.env(id)?)
    }

    pub fn remove(&mut self, id: &NodeId, items: &ParticleBag<P>) -> Result<(), EngineError> {
        self.allow(id, InfoKind::Pull)?;
        self.state.remove_particles(id, items)?;
        if !items.is_empty() {
            self.touched.insert(id.clone());
        }
        Ok(())
    }

    pub fn remove_all(&mut self, id: &NodeId) -> Result<ParticleBag<P>, EngineError> {
        self.allow(id, InfoKind::Pull)?;
        let all = self.state.take_particles(id)?;
        if !all.is_empty() {
            self.touched.insert(id.clone());
        }
        Ok(all)
    }

    pub fn remove_vars<'n>(&mut self, id: &NodeId, names: impl IntoIterator<Item = &'n str> + Clone) -> Result<(), EngineError> {
        self.allow(id, InfoKind::Pull)?;
        let any = names.clone().into_iter().next().is_some();
        self.state.remove_env(id, names)?;
        if any {
            self.touched.insert(id.clone());
        }
        Ok(())
    }

    /// Clear an environment store, returning what it held.
    pub fn remove_store(&mut self, id: &NodeId) -> Result<EnvStore, EngineError> {
        self.allow(id, InfoKind::Pull)?;
        let all = self.state.read_env(id)?;
        self.remove_vars(id, all.keys().map(String::as_str))?;
        Ok(all)
    }

    pub fn add(&mut self, id: &NodeId, items: &ParticleBag<P>) -> Result<(), EngineError> {
        self.allow(id, InfoKind::Push)?;
        self.state.add_particles(id, items)?;
        if !items.is_empty() {
            self.touched.insert(id.clone());
        }
        Ok(())
    }

    pub fn add_owned(&mut self, id: &NodeId, items: ParticleBag<P>) -> Result<(), EngineError> {
        self.allow(id, InfoKind::Push)?;
        let any = !items.is_empty();
        self.state.add_particles_owned(id, items)?;
        if any {
            self.touched.insert(id.clone());
        }
        Ok(())
    }

    pub fn add_vars(&mut self, id: &NodeId, items: &EnvStore) -> Result<(), EngineError> {
        self.allow(id, InfoKind::Push)?;
        self.state.add_env(id, items)?;
        if !items.is_empty() {
            self.touched.insert(id.clone());
        }
        Ok(())
    }
}

/// The five component hooks of a control node. Which of them run is
/// decided by the node kind, not by the behavior.
pub trait Behavior<P: Particle> {
    fn read(&self, view: &View<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        view.copy_all(local)
    }

    /// Threshold p; the remaining hooks run iff p < r for a uniform draw r.
    fn check(&self, _local: &LocalState<P>, _rng: &mut Rng) -> f64 {
        0.0
    }

    fn pull(&self, _io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        Ok(())
    }

    fn process(&self, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        Ok(())
    }

    fn push(&self, _io: &mut Access<'_, P>, _local: &mut LocalState<P>) -> Result<(), EngineError> {
        Ok(())
    }
}

fn has_check(kind: NodeKind) -> bool {
    kind == NodeKind::Action
}

fn has_pull_push(kind: NodeKind) -> bool {
    matches!(kind, NodeKind::Sampler | NodeKind::Observer | NodeKind::Action)
}

fn has_process(kind: NodeKind) -> bool {
    matches!(kind, NodeKind::Decision | NodeKind::Observer | NodeKind::Action)
}

/// Named behavior definitions. Nodes bind by behavior name, so several
/// instances may share one definition.
pub struct Behaviors<P: Particle> {
    map: BTreeMap<String, Arc<dyn Behavior<P>>>,
}

impl<P: Particle> Default for Behaviors<P> {
    fn default() -> Self {
        Behaviors { map: BTreeMap::new() }
    }
}

impl<P: Particle> Behaviors<P> {
    pub fn new() -> Self {
        Behaviors::default()
    }

    pub fn insert(&mut self, name: &str, b: impl Behavior<P> + 'static) -> &mut Self {
        self.map.insert(name.to_string(), Arc::new(b));
        self
    }

    pub fn insert_arc(&mut self, name: &str, b: Arc<dyn Behavior<P>>) -> &mut Self {
        self.map.insert(name.to_string(), b);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Behavior<P>>> {
        self.map.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

/// A graph with every control node bound to a behavior.
pub struct Program<P: Particle> {
    graph: GraphDef,
    bound: BTreeMap<NodeId, Arc<dyn Behavior<P>>>,
    access: BTreeMap<NodeId, AccessSets>,
    targets: BTreeMap<NodeId, Vec<NodeId>>,
}

impl<P: Particle> Program<P> {
    /// Validate `graph` and bind behaviors. Hard violations are refused.
    pub fn new(graph: GraphDef, behaviors: &Behaviors<P>) -> Result<Self, EngineError> {
        let violations = validate(&graph);
        if has_hard(&violations) {
            return Err(EngineError::InvalidGraph(violations));
        }
        Program::new_unchecked(graph, behaviors)
    }

    /// Bind without validating. Capability checks still apply at run time.
    pub fn new_unchecked(graph: GraphDef, behaviors: &Behaviors<P>) -> Result<Self, EngineError> {
        let mut bound = BTreeMap::new();
        let mut access = BTreeMap::new();
        let mut targets = BTreeMap::new();
        for id in graph.controls() {
            let sets = graph.access(id).expect("control node of this graph");
            access.insert(id.clone(), sets);
            let t = graph.targets(id).expect("node of this graph");
            targets.insert(id.clone(), t.into_iter().collect());
            if id.kind() == NodeKind::Termination {
                continue;
            }
            let name = graph.behavior_of(id);
            let b = behaviors.get(name).ok_or_else(|| EngineError::MissingBehavior {
                node: id.clone(),
                behavior: name.to_string(),
            })?;
            bound.insert(id.clone(), b.clone());
        }
        Ok(Program {
            graph,
            bound,
            access,
            targets,
        })
    }

    pub fn graph(&self) -> &GraphDef {
        &self.graph
    }

    pub fn fresh_state(&self) -> SystemState<P> {
        SystemState::new(&self.graph)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub seed: u64,
    pub max_transitions: Option<NonZeroU64>,
}

impl RunConfig {
    pub fn new(seed: u64, max_transitions: Option<u64>) -> Result<RunConfig, EngineError> {
        let max_transitions = match max_transitions {
            None => None,
            Some(n) => Some(NonZeroU64::new(n).ok_or_else(|| EngineError::InvalidConfig("max_transitions must be at least 1".into()))?),
        };
        Ok(RunConfig { seed, max_transitions })
    }
}

/// One executed transition.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionEvent {
    pub step: u64,
    pub node: NodeId,
    /// Check threshold, present for actions only.
    pub p: Option<f64>,
    /// Uniform draw the threshold was compared with.
    pub r: Option<f64>,
    pub gate: bool,
    pub touched: Vec<NodeId>,
    pub next: Option<NodeId>,
    pub halted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSummary {
    pub steps: u64,
    pub halted: bool,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Random stream of one node under a root seed.
pub fn node_rng(seed: u64, node: &NodeId) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(&node.to_string()));
    rng
}

/// An executing program: state, pointer and per-node random streams.
pub struct Run<'p, P: Particle> {
    program: &'p Program<P>,
    state: SystemState<P>,
    seed: u64,
    rngs: BTreeMap<NodeId, Rng>,
    local: LocalState<P>,
    steps: u64,
}

impl<'p, P: Particle> Run<'p, P> {
    pub fn new(program: &'p Program<P>, state: SystemState<P>, seed: u64) -> Self {
        Run {
            program,
            state,
            seed,
            rngs: BTreeMap::new(),
            local: LocalState::new(),
            steps: 0,
        }
    }

    pub fn state(&self) -> &SystemState<P> {
        &self.state
    }

    pub fn into_state(self) -> SystemState<P> {
        self.state
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Whether the scratch local state is empty, as it must be between steps.
    pub fn local_is_empty(&self) -> bool {
        self.local.is_empty()
    }

    pub fn step(&mut self) -> Result<TransitionEvent, EngineError> {
        assert!(self.local.is_empty(), "local state must be empty at step entry");
        if self.state.halted {
            return Err(EngineError::Halted);
        }
        let node = self.state.current.clone();
        let kind = node.kind();
        let step = self.steps;
        self.steps += 1;
        if kind == NodeKind::Termination {
            self.state.halted = true;
            return Ok(TransitionEvent {
                step,
                node,
                p: None,
                r: None,
                gate: false,
                touched: Vec::new(),
                next: None,
                halted: true,
            });
        }
        let program = self.program;
        let behavior = program.bound.get(&node).ok_or_else(|| EngineError::MissingBehavior {
            node: node.clone(),
            behavior: program.graph.behavior_of(&node).to_string(),
        })?;
        let sets = &program.access[&node];
        let summary = program.graph.is_summary(&node);
        let seed = self.seed;
        let rng = self.rngs.entry(node.clone()).or_insert_with(|| node_rng(seed, &node));
        let mut touched = BTreeSet::new();
        let result = Self::phases(
            behavior.as_ref(),
            &mut self.state,
            &mut self.local,
            &node,
            sets,
            summary,
            rng,
            &mut touched,
        );
        let (p, r, gate) = match result {
            Ok(g) => g,
            Err(e) => {
                self.local.clear();
                return Err(e.at(&node));
            }
        };
        let next = self.next(&node);
        self.local.clear();
        let next = next?;
        self.state.current = next.clone();
        Ok(TransitionEvent {
            step,
            node,
            p,
            r,
            gate,
            touched: touched.into_iter().collect(),
            next: Some(next),
            halted: false,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn phases(
        behavior: &dyn Behavior<P>,
        state: &mut SystemState<P>,
        local: &mut LocalState<P>,
        node: &NodeId,
        sets: &AccessSets,
        summary: bool,
        rng: &mut Rng,
        touched: &mut BTreeSet<NodeId>,
    ) -> Result<(Option<f64>, Option<f64>, bool), EngineError> {
        let kind = node.kind();
        behavior.read(&View { state, node, sets }, local)?;
        let (p, r, gate) = if has_check(kind) {
            let p = behavior.check(local, rng);
            let r = 1.0 - rng.gen::<f64>();
            (Some(p), Some(r), p < r)
        } else {
            (None, None, true)
        };
        if gate {
            if has_pull_push(kind) {
                let mut io = Access {
                    state: &mut *state,
                    node,
                    sets,
                    phase: Phase::Pull,
                    summary,
                    touched: &mut *touched,
                };
                behavior.pull(&mut io, local, rng)?;
            }
            if has_process(kind) {
                behavior.process(local, rng)?;
            }
            if has_pull_push(kind) {
                let mut io = Access {
                    state,
                    node,
                    sets,
                    phase: Phase::Push,
                    summary,
                    touched,
                };
                behavior.push(&mut io, local)?;
            }
        }
        Ok((p, r, gate))
    }

    fn next(&self, node: &NodeId) -> Result<NodeId, EngineError> {
        let targets = &self.program.targets[node];
        if node.kind() == NodeKind::Decision {
            let route = self.local.route().ok_or_else(|| EngineError::BadDecision {
                node: node.clone(),
                route: String::new(),
            })?;
            return targets
                .iter()
                .find(|t| t.to_string() == route)
                .cloned()
                .ok_or_else(|| EngineError::BadDecision {
                    node: node.clone(),
                    route: route.to_string(),
                });
        }
        match targets.as_slice() {
            [only] => Ok(only.clone()),
            [] => Err(EngineError::NoTarget(node.clone())),
            _ => Err(EngineError::InvalidGraph(Vec::new())),
        }
    }

    /// Step until a termination node halts the run or `limit` steps have
    /// been taken. Every event is handed to `sink` with the state after it.
    pub fn run(
        &mut self,
        limit: Option<NonZeroU64>,
        mut sink: impl FnMut(&TransitionEvent, &SystemState<P>),
    ) -> Result<RunSummary, EngineError> {
        let mut taken = 0;
        while !self.state.halted && limit.is_none_or(|n| taken < n.get()) {
            let ev = self.step()?;
            taken += 1;
            sink(&ev, &self.state);
        }
        Ok(RunSummary {
            steps: taken,
            halted: self.state.halted,
        })
    }

    /// Step from the current node until control comes back to it or the
    /// run halts. Fails after `limit` steps.
    pub fn run_cycle(&mut self, limit: u64) -> Result<u64, EngineError> {
        let head = self.state.current.clone();
        let mut taken = 0;
        loop {
            if taken >= limit {
                return Err(EngineError::SubgraphLimit(limit));
            }
            self.step()?;
            taken += 1;
            if self.state.halted || self.state.current == head {
                return Ok(taken);
            }
        }
    }
}

/// Convenience: run `program` from `state` under `config`, collecting events.
pub fn run_program<P: Particle>(
    program: &Program<P>,
    state: SystemState<P>,
    config: &RunConfig,
) -> Result<(SystemState<P>, Vec<TransitionEvent>), EngineError> {
    let mut run = Run::new(program, state, config.seed);
    let mut log = Vec::new();
    run.run(config.max_transitions, |ev, _| log.push(ev.clone()))?;
    Ok((run.into_state(), log))
}

/// Outer container mapped onto a container of an expanded subgraph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Binding {
    pub outer: NodeId,
    pub inner: NodeId,
    /// The outer contents are copied in before the subgraph runs.
    pub load: bool,
    /// The inner contents are pushed to the outer container afterwards. With
    /// `load` the outer contents are pulled first, so they are replaced.
    pub writeback: bool,
}

impl Binding {
    pub fn rw(outer: &str, inner: &str) -> Binding {
        Binding {
            outer: NodeId::of_name(outer),
            inner: NodeId::of_name(inner),
            load: true,
            writeback: true,
        }
    }

    pub fn read(outer: &str, inner: &str) -> Binding {
        Binding {
            writeback: false,
            ..Binding::rw(outer, inner)
        }
    }

    /// The subgraph starts with the inner container empty and whatever it
    /// ends with is added to the outer one, which is never read. An
    /// environment key already present outside is a collision error.
    pub fn append(outer: &str, inner: &str) -> Binding {
        Binding {
            load: false,
            ..Binding::rw(outer, inner)
        }
    }
}

/// A control node carried out by running a lower-level graph.
///
/// The subgraph starts at `entry` (its start node by default) with the
/// bound containers loaded and runs until it halts or control returns to
/// `entry`. Written-back containers then replace the outer contents.
pub struct Expanded<P: Particle> {
    program: Program<P>,
    entry: Option<NodeId>,
    bindings: Vec<Binding>,
    limit: u64,
    until_halt: bool,
    guard: Option<fn(&LocalState<P>) -> bool>,
}

impl<P: Particle> Expanded<P> {
    pub fn new(program: Program<P>, bindings: Vec<Binding>) -> Self {
        Expanded {
            program,
            entry: None,
            bindings,
            limit: 50_000_000,
            until_halt: false,
            guard: None,
        }
    }

    pub fn entry(mut self, entry: &str) -> Self {
        self.entry = Some(NodeId::of_name(entry));
        self
    }

    pub fn limit(mut self, limit: u64) -> Self {
        self.limit = limit;
        self
    }

    /// Ignore returns to the entry node and run until a termination node.
    pub fn until_halt(mut self) -> Self {
        self.until_halt = true;
        self
    }

    /// Skip the expansion (check returns 1) when `guard` is false on the read state.
    pub fn guard(mut self, guard: fn(&LocalState<P>) -> bool) -> Self {
        self.guard = Some(guard);
        self
    }

    pub fn program(&self) -> &Program<P> {
        &self.program
    }

    fn run_inner(&self, local: &mut LocalState<P>, seed: u64) -> Result<(), EngineError> {
        let mut state = self.program.fresh_state();
        for b in self.bindings.iter().filter(|b| b.load) {
            if b.outer.kind() == NodeKind::Environment {
                if let Some(store) = local.store(&b.outer) {
                    state.add_env(&b.inner, store)?;
                }
            } else if let Some(bag) = local.bag(&b.outer) {
                state.add_particles(&b.inner, bag)?;
            }
        }
        if let Some(entry) = &self.entry {
            state.current = entry.clone();
        }
        let mut run = Run::new(&self.program, state, seed);
        if self.until_halt {
            let limit = NonZeroU64::new(self.limit).ok_or(EngineError::SubgraphLimit(0))?;
            if !run.run(Some(limit), |_, _| {})?.halted {
                return Err(EngineError::SubgraphLimit(self.limit));
            }
        } else {
            run.run_cycle(self.limit)?;
        }
        let state = run.into_state();
        for b in self.bindings.iter().filter(|b| b.writeback) {
            if b.outer.kind() == NodeKind::Environment {
                local.env.insert(b.outer.clone(), state.read_env(&b.inner)?);
            } else {
                local.particles.insert(b.outer.clone(), state.read_bag(&b.inner)?);
            }
        }
        Ok(())
    }
}

impl<P: Particle> Behavior<P> for Expanded<P> {
    fn read(&self, view: &View<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let skip = |id: &NodeId| self.bindings.iter().any(|b| !b.load && b.outer == *id);
        for id in view.sets.readable.iter().filter(|id| !skip(id)) {
            if id.kind() == NodeKind::Environment {
                local.env.insert(id.clone(), view.state.read_env(id)?);
            } else {
                local.particles.insert(id.clone(), view.state.read_bag(id)?);
            }
        }
        Ok(())
    }

    fn check(&self, local: &LocalState<P>, _rng: &mut Rng) -> f64 {
        match self.guard {
            Some(g) if !g(local) => 1.0,
            _ => 0.0,
        }
    }

    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        for b in self.bindings.iter().filter(|b| b.load && b.writeback) {
            if b.outer.kind() == NodeKind::Environment {
                io.remove_store(&b.outer)?;
            } else {
                io.remove_all(&b.outer)?;
            }
        }
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let seed = rng.next_u64();
        self.run_inner(local, seed).map_err(|e| EngineError::Subgraph(Box::new(e)))
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        for b in self.bindings.iter().filter(|b| b.writeback) {
            if b.outer.kind() == NodeKind::Environment {
                if let Some(store) = local.store(&b.outer) {
                    io.add_vars(&b.outer, store)?;
                }
            } else if let Some(bag) = local.bag(&b.outer) {
                io.add(&b.outer, bag)?;
            }
        }
        Ok(())
    }
}
