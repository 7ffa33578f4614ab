//! Link pipeline, link/decomposition loops and their behaviors.
//!
//! Behaviors are generic over any particle type carrying a [`JaParticle`],
//! so the same nodes run inside a composed chemistry.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand::RngCore;

use super::link::{best_vector_pair, link_probability, strength};
use super::matrix::{hermitian_eig3, jordan_product, Mat3, C64, TRACE_EPS};
use super::particle::{
    balance_transfer, select_transfer_pairs, Bond, Composite, DecompPolicy, JaParticle, TransferMode, WeakestLink,
};
use super::{census, JaError};
use crate::behaviors::{counter_observer, local_num, move_all_sampler, pick_instances, store, threshold_decision};
use crate::engine::{Access, Behavior, Behaviors, Binding, EngineError, Expanded, Program, Rng, Run};
use crate::graph::{GraphBuilder, GraphDef, NodeId};
use crate::state::{Carries, EnvStore, EnvValue, LocalState, Particle, ParticleBag, SystemState};

fn id(name: &str) -> NodeId {
    NodeId::of_name(name)
}

fn err(e: impl ToString) -> EngineError {
    EngineError::behavior(e.to_string())
}

// ---- environment encoding -------------------------------------------------

fn nums(xs: impl IntoIterator<Item = f64>) -> EnvValue {
    EnvValue::List(xs.into_iter().map(EnvValue::Num).collect())
}

fn list_nums(v: &EnvValue) -> Option<Vec<f64>> {
    v.as_list()?.iter().map(EnvValue::as_num).collect()
}

fn vectors_value(vs: &[[C64; 3]; 3]) -> EnvValue {
    nums(vs.iter().flatten().flat_map(|c| [c.re, c.im]))
}

fn vectors_from(v: &EnvValue) -> Option<[[C64; 3]; 3]> {
    let xs = list_nums(v)?;
    if xs.len() != 18 {
        return None;
    }
    Some(core::array::from_fn(|i| core::array::from_fn(|k| C64::new(xs[6 * i + 2 * k], xs[6 * i + 2 * k + 1]))))
}

/// A composite as a nested record, bond tree included.
pub fn composite_value(c: &Composite) -> EnvValue {
    let mut r = BTreeMap::new();
    r.insert("key".to_string(), EnvValue::Str(c.key().to_string()));
    r.insert("atoms".to_string(), EnvValue::Num(f64::from(c.atoms())));
    r.insert("matrix".to_string(), nums(c.matrix().to_flat()));
    if let Some(b) = c.bond() {
        let bond = store([
            ("left", composite_value(&b.left)),
            ("right", composite_value(&b.right)),
            ("i", EnvValue::Num(b.pair.0 as f64)),
            ("j", EnvValue::Num(b.pair.1 as f64)),
            ("strength", EnvValue::Num(b.strength)),
            ("alignment", EnvValue::Num(b.alignment)),
        ]);
        r.insert("bond".to_string(), EnvValue::Record(bond));
    }
    EnvValue::Record(r)
}

pub fn composite_from_value(v: &EnvValue) -> Result<Composite, JaError> {
    let bad = |what: &str| JaError::Encoding(what.to_string());
    let r = v.as_record().ok_or_else(|| bad("composite is not a record"))?;
    let key = r.get("key").and_then(EnvValue::as_str).ok_or_else(|| bad("key"))?;
    let atoms = r.get("atoms").and_then(EnvValue::as_num).ok_or_else(|| bad("atoms"))?;
    let matrix = r
        .get("matrix")
        .and_then(list_nums)
        .and_then(|xs| Mat3::from_flat(&xs))
        .ok_or_else(|| bad("matrix"))?;
    let bond = match r.get("bond").map(|b| b.as_record()) {
        None => None,
        Some(None) => return Err(bad("bond")),
        Some(Some(b)) => {
            let num = |k: &str| b.get(k).and_then(EnvValue::as_num).ok_or_else(|| bad(k));
            let part = |k: &str| composite_from_value(b.get(k).ok_or_else(|| bad(k))?);
            Some(Bond {
                left: part("left")?,
                right: part("right")?,
                pair: (num("i")? as usize, num("j")? as usize),
                strength: num("strength")?,
                alignment: num("alignment")?,
            })
        }
    };
    Ok(Composite::from_parts(matrix, atoms as u32, key.to_string(), bond))
}

fn ja_instances<P: Particle + Carries<JaParticle>>(bag: &ParticleBag<P>) -> impl Iterator<Item = &JaParticle> {
    bag.instances().filter_map(|p| p.view())
}

// ---- link pipeline ---------------------------------------------------------

/// Expansion of `a:Link`: one linking attempt on the two particles in `S:Reactants`.
pub fn build_link_micro() -> GraphDef {
    let mut b = GraphBuilder::new();
    for n in [
        "o:internal_struct",
        "o:Alignment",
        "o:Strength",
        "d:Prob",
        "a:New_Mat",
        "d:Valid",
        "s:Pull",
        "a:New_Particle",
        "s:return",
        "t:exit",
        "S:Reactants",
        "V:Mat",
        "V:Eval",
        "V:Evec",
        "V:Pairs",
        "V:Strengths",
        "V:New_Mat",
        "S:New_Part",
    ] {
        b.node(n);
    }
    b.start("o:internal_struct");
    b.chain(&["o:internal_struct", "o:Alignment", "o:Strength", "d:Prob", "a:New_Mat", "d:Valid", "s:Pull"]);
    b.chain(&["s:Pull", "a:New_Particle", "s:return", "t:exit"]);
    b.flow("d:Prob", "t:exit").flow("d:Valid", "t:exit");
    b.read("o:internal_struct", "S:Reactants");
    for v in ["V:Mat", "V:Eval", "V:Evec"] {
        b.rw("o:internal_struct", v);
    }
    b.read("o:Alignment", "V:Evec").rw("o:Alignment", "V:Pairs");
    b.read("o:Strength", "V:Eval").read("o:Strength", "V:Pairs").rw("o:Strength", "V:Strengths");
    b.read("d:Prob", "V:Strengths");
    b.read("a:New_Mat", "V:Mat").rw("a:New_Mat", "V:New_Mat");
    b.read("d:Valid", "V:New_Mat");
    b.take("s:Pull", "S:Reactants");
    for v in ["V:Mat", "V:Pairs", "V:Strengths", "V:New_Mat"] {
        b.read("a:New_Particle", v);
    }
    b.rw("a:New_Particle", "S:New_Part");
    b.take("s:return", "S:New_Part").give("s:return", "S:Reactants");
    b.build().expect("static graph")
}

const SIDES: [&str; 2] = ["A", "B"];

/// Clears `containers`, recomputes them in `process`, pushes the results.
trait Derive<P: Particle> {
    const OUT: &'static [&'static str];
    fn derive(&self, local: &LocalState<P>) -> Result<Vec<EnvStore>, EngineError>;
}

struct Observer<D>(D);

impl<P: Particle, D: Derive<P>> Behavior<P> for Observer<D> {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        for c in D::OUT {
            io.remove_store(&id(c))?;
        }
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let stores = self.0.derive(local)?;
        for (c, s) in D::OUT.iter().zip(stores) {
            *local.store_mut(&id(c)) = s;
        }
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        for c in D::OUT {
            let c = id(c);
            io.add_vars(&c, local.store(&c).expect("set by process"))?;
        }
        Ok(())
    }
}

struct InternalStruct;

impl<P: Particle + Carries<JaParticle>> Derive<P> for InternalStruct {
    const OUT: &'static [&'static str] = &["V:Mat", "V:Eval", "V:Evec"];

    fn derive(&self, local: &LocalState<P>) -> Result<Vec<EnvStore>, EngineError> {
        let bag = local.bag(&id("S:Reactants")).cloned().unwrap_or_default();
        let items: Vec<&JaParticle> = ja_instances(&bag).collect();
        if items.len() != 2 || bag.len() != 2 {
            return Err(err(JaError::WrongArity(bag.len())));
        }
        let (mut mats, mut evals, mut evecs) = (EnvStore::new(), EnvStore::new(), EnvStore::new());
        for (side, p) in SIDES.iter().zip(items) {
            let e = hermitian_eig3(p.composite.matrix()).map_err(err)?;
            let mut rec = composite_value(&p.composite);
            if let EnvValue::Record(r) = &mut rec {
                r.insert("tank".to_string(), EnvValue::Num(f64::from(p.tank)));
            }
            mats.insert(side.to_string(), rec);
            evals.insert(side.to_string(), nums(e.mu));
            evecs.insert(side.to_string(), vectors_value(&e.vectors));
        }
        Ok(vec![mats, evals, evecs])
    }
}

fn side<'a, P: Particle>(local: &'a LocalState<P>, c: &str, s: &str) -> Result<&'a EnvValue, EngineError> {
    local.var(&id(c), s).ok_or_else(|| err(format!("missing {s} in {c}")))
}

struct Alignment;

impl<P: Particle> Derive<P> for Alignment {
    const OUT: &'static [&'static str] = &["V:Pairs"];

    fn derive(&self, local: &LocalState<P>) -> Result<Vec<EnvStore>, EngineError> {
        let v = |s| side(local, "V:Evec", s).and_then(|v| vectors_from(v).ok_or_else(|| err("bad eigenvectors")));
        let (i, j, a) = best_vector_pair(&v("A")?, &v("B")?);
        Ok(vec![store([
            ("i", EnvValue::Num(i as f64)),
            ("j", EnvValue::Num(j as f64)),
            ("alignment", EnvValue::Num(a)),
        ])])
    }
}

struct Strength;

impl<P: Particle> Derive<P> for Strength {
    const OUT: &'static [&'static str] = &["V:Strengths"];

    fn derive(&self, local: &LocalState<P>) -> Result<Vec<EnvStore>, EngineError> {
        let mu = |s| side(local, "V:Eval", s).and_then(|v| list_nums(v).ok_or_else(|| err("bad eigenvalues")));
        let pairs = id("V:Pairs");
        let i = local_num(local, &pairs, "i") as usize;
        let j = local_num(local, &pairs, "j") as usize;
        let (ma, mb) = (mu("A")?, mu("B")?);
        let s = strength(ma[i], mb[j]);
        let p = link_probability(s, local_num(local, &pairs, "alignment"));
        Ok(vec![store([("strength", EnvValue::Num(s)), ("probability", EnvValue::Num(p))])])
    }
}

struct NewMat;

impl<P: Particle> Derive<P> for NewMat {
    const OUT: &'static [&'static str] = &["V:New_Mat"];

    fn derive(&self, local: &LocalState<P>) -> Result<Vec<EnvStore>, EngineError> {
        let m = |s| {
            side(local, "V:Mat", s).and_then(|v| composite_from_value(v).map_err(err)).map(|c| *c.matrix())
        };
        let product = jordan_product(&m("A")?, &m("B")?);
        Ok(vec![store([
            ("matrix", nums(product.to_flat())),
            ("trace", EnvValue::Num(product.trace().re)),
        ])])
    }
}

/// Passes to `a:New_Mat` with probability `p_AB`.
struct Prob;

impl<P: Particle> Behavior<P> for Prob {
    fn process(&self, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let p = local_num(local, &id("V:Strengths"), "probability");
        let r = 1.0 - rng.gen::<f64>();
        local.set_route(&id(if r < p { "a:New_Mat" } else { "t:exit" }));
        Ok(())
    }
}

struct Valid;

impl<P: Particle> Behavior<P> for Valid {
    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let t = local_num(local, &id("V:New_Mat"), "trace");
        local.set_route(&id(if t.abs() > TRACE_EPS { "s:Pull" } else { "t:exit" }));
        Ok(())
    }
}

/// Deletes the reactants.
struct Discard(&'static str);

impl<P: Particle> Behavior<P> for Discard {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_all(&id(self.0))?;
        Ok(())
    }
}

struct NewParticle;

impl<P: Particle + Carries<JaParticle>> Behavior<P> for NewParticle {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_all(&id("S:New_Part"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let part = |s| side(local, "V:Mat", s).and_then(|v| composite_from_value(v).map_err(err));
        let tank = side(local, "V:Mat", "A")?
            .as_record()
            .and_then(|r| r.get("tank"))
            .and_then(EnvValue::as_num)
            .ok_or_else(|| err("reactant tank"))? as u32;
        let pairs = id("V:Pairs");
        let pair = (local_num(local, &pairs, "i") as usize, local_num(local, &pairs, "j") as usize);
        let c = Composite::linked(
            part("A")?,
            part("B")?,
            pair,
            local_num(local, &id("V:Strengths"), "strength"),
            local_num(local, &pairs, "alignment"),
        );
        let stored = side(local, "V:New_Mat", "matrix").ok().and_then(list_nums);
        debug_assert_eq!(stored.as_deref(), Some(&c.matrix().to_flat()[..]));
        let mut bag = ParticleBag::new();
        bag.insert(P::wrap(JaParticle { tank, composite: c }));
        local.particles.insert(id("S:New_Part"), bag);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let c = id("S:New_Part");
        let bag = local.particles.remove(&c).unwrap_or_default();
        io.add(&c, &bag)
    }
}

/// Behaviors of the `a:Link` expansion.
pub fn link_micro_behaviors<P: Particle + Carries<JaParticle> + 'static>() -> Behaviors<P> {
    let mut bs = Behaviors::new();
    bs.insert("internal_struct", Observer(InternalStruct));
    bs.insert("Alignment", Observer(Alignment));
    bs.insert("Strength", Observer(Strength));
    bs.insert("Prob", Prob);
    bs.insert("New_Mat", Observer(NewMat));
    bs.insert("Valid", Valid);
    bs.insert("Pull", Discard("S:Reactants"));
    bs.insert("New_Particle", NewParticle);
    bs.insert("return", move_all_sampler("S:New_Part", "S:Reactants"));
    bs
}

pub fn link_micro_program<P: Particle + Carries<JaParticle> + 'static>() -> Program<P> {
    Program::new(build_link_micro(), &link_micro_behaviors()).expect("link pipeline is valid")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkOutcome {
    pub linked: bool,
    pub reactants: ParticleBag<JaParticle>,
}

/// Run the link pipeline once on a two-particle sample.
pub fn attempt_link(sample: &ParticleBag<JaParticle>, rng: &mut Rng) -> Result<LinkOutcome, JaError> {
    run_link(&link_micro_program(), sample, rng.next_u64())
}

pub(crate) fn run_link(
    program: &Program<JaParticle>,
    sample: &ParticleBag<JaParticle>,
    seed: u64,
) -> Result<LinkOutcome, JaError> {
    if sample.len() != 2 {
        return Err(JaError::WrongArity(sample.len()));
    }
    let reactants = id("S:Reactants");
    let mut state = program.fresh_state();
    state.add_particles(&reactants, sample).map_err(|e| JaError::Engine(e.to_string()))?;
    let mut run = Run::new(program, state, seed);
    run.run_cycle(1_000).map_err(|e| JaError::Engine(e.to_string()))?;
    let out = run.state().read_bag(&reactants).map_err(|e| JaError::Engine(e.to_string()))?;
    Ok(LinkOutcome {
        linked: out != *sample,
        reactants: out,
    })
}

// ---- macro loops -----------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct JaConfig {
    pub tanks: u32,
    pub atoms_per_tank: u32,
    pub link_attempts_per_step: u32,
    pub decomp_attempts_per_step: u32,
    pub transfer_mode: TransferMode,
    pub grid_shape: Option<(u32, u32)>,
    pub max_transfers: u32,
    pub time_bound: Option<u64>,
}

impl Default for JaConfig {
    fn default() -> Self {
        JaConfig {
            tanks: 1,
            atoms_per_tank: 16,
            link_attempts_per_step: 10,
            decomp_attempts_per_step: 10,
            transfer_mode: TransferMode::Single,
            grid_shape: None,
            max_transfers: 10,
            time_bound: None,
        }
    }
}

impl JaConfig {
    pub fn check(&self) -> Result<(), JaError> {
        let bad = |m: &str| Err(JaError::Config(m.to_string()));
        if self.tanks == 0 {
            return bad("tanks must be positive");
        }
        if self.link_attempts_per_step == 0 || self.decomp_attempts_per_step == 0 {
            return bad("attempts per step must be positive");
        }
        if self.transfer_mode == TransferMode::Single && self.tanks != 1 {
            return bad("single mode needs exactly one tank");
        }
        if self.transfer_mode == TransferMode::Grid {
            match self.grid_shape {
                Some((r, c)) if r * c == self.tanks => {}
                shape => return Err(JaError::GridShape { tanks: self.tanks, shape }),
            }
        }
        Ok(())
    }
}

/// The macro graph: load, then alternate link and decomposition loops.
pub fn build_macro(time_bound: bool) -> GraphDef {
    let mut b = GraphBuilder::new();
    for n in [
        "s:Load",
        "o:Time",
        "s:Link_Sample",
        "s:Link_Return",
        "o:Link_Count",
        "d:Link_Loop",
        "s:Decomp_Sample",
        "a:Decomp",
        "s:Decomp_Return",
        "o:Decomp_Count",
        "d:Decomp_Loop",
        "o:Log",
        "s:Transfer",
        "T:Init",
        "T:Tank",
        "S:Reactants",
        "S:Decomp",
        "V:Time",
        "V:Log",
    ] {
        b.node(n);
    }
    b.node("a:Link").summary("a:Link");
    b.start("s:Load");
    b.chain(&["s:Load", "o:Time", "s:Link_Sample", "a:Link", "s:Link_Return", "o:Link_Count", "d:Link_Loop"]);
    b.flow("d:Link_Loop", "s:Link_Sample");
    b.chain(&[
        "d:Link_Loop",
        "s:Decomp_Sample",
        "a:Decomp",
        "s:Decomp_Return",
        "o:Decomp_Count",
        "d:Decomp_Loop",
    ]);
    b.flow("d:Decomp_Loop", "s:Decomp_Sample");
    b.chain(&["d:Decomp_Loop", "o:Log", "s:Transfer", "o:Time"]);
    b.take("s:Load", "T:Init").give("s:Load", "T:Tank");
    b.rw("o:Time", "V:Time");
    b.take("s:Link_Sample", "T:Tank").give("s:Link_Sample", "S:Reactants");
    b.rw("a:Link", "S:Reactants");
    b.take("s:Link_Return", "S:Reactants").give("s:Link_Return", "T:Tank");
    b.rw("o:Link_Count", "V:Time");
    b.read("d:Link_Loop", "V:Time");
    b.take("s:Decomp_Sample", "T:Tank").give("s:Decomp_Sample", "S:Decomp");
    b.rw("a:Decomp", "S:Decomp");
    b.take("s:Decomp_Return", "S:Decomp").give("s:Decomp_Return", "T:Tank");
    b.rw("o:Decomp_Count", "V:Time");
    b.read("d:Decomp_Loop", "V:Time");
    b.read("o:Log", "T:Tank").read("o:Log", "V:Time").give("o:Log", "V:Log");
    b.rw("s:Transfer", "T:Tank");
    if time_bound {
        b.node("t:End").flow("d:Decomp_Loop", "t:End");
    }
    b.build().expect("static graph")
}

/// Advances `time` and zeroes the loop counters.
struct Clock;

impl<P: Particle> Behavior<P> for Clock {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_store(&id("V:Time"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let t = local_num(local, &id("V:Time"), "time");
        *local.store_mut(&id("V:Time")) = store([
            ("time", EnvValue::Num(t + 1.0)),
            ("links", EnvValue::Num(0.0)),
            ("decomps", EnvValue::Num(0.0)),
        ]);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        io.add_vars(&id("V:Time"), local.store(&id("V:Time")).expect("set by process"))
    }
}

/// Moves `k` instances from one tank, chosen uniformly among tanks holding at
/// least `k` particles.
struct TankSample {
    dst: &'static str,
    k: usize,
}

impl<P: Particle + Carries<JaParticle>> Behavior<P> for TankSample {
    fn pull(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let tank = id("T:Tank");
        local.particles.insert(id(self.dst), ParticleBag::new());
        let all = io.bag(&tank)?;
        let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for (p, n) in all.iter() {
            if let Some(j) = p.view() {
                *sizes.entry(j.tank).or_default() += n;
            }
        }
        let eligible: Vec<u32> = sizes.into_iter().filter(|&(_, n)| n >= self.k).map(|(t, _)| t).collect();
        let Some(&chosen) = eligible.choose(rng) else {
            return Ok(());
        };
        let mut part = all.clone();
        part.retain(|p| p.view().is_some_and(|j| j.tank == chosen));
        let picked = pick_instances(&part, self.k, rng);
        io.remove(&tank, &picked)?;
        local.particles.insert(id(self.dst), picked);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let dst = id(self.dst);
        let picked = local.particles.remove(&dst).unwrap_or_default();
        io.add(&dst, &picked)
    }
}

/// One decomposition attempt on the particle in `S:Decomp`. The policy
/// threshold is the check value, so the engine gate draws the break.
struct Decomp(Arc<dyn DecompPolicy>);

fn decomp_target<P: Particle + Carries<JaParticle>>(local: &LocalState<P>) -> Option<&JaParticle> {
    let bag = local.bag(&id("S:Decomp"))?;
    if bag.len() != 1 {
        return None;
    }
    bag.instances().next()?.view()
}

impl<P: Particle + Carries<JaParticle>> Behavior<P> for Decomp {
    fn check(&self, local: &LocalState<P>, _rng: &mut Rng) -> f64 {
        match decomp_target(local) {
            Some(p) if !p.composite.is_atom() => self.0.threshold(&p.composite),
            _ => 1.0,
        }
    }

    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_all(&id("S:Decomp"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let p = decomp_target(local).cloned().ok_or_else(|| err(JaError::NoLinks))?;
        let pieces: ParticleBag<P> = self
            .0
            .pieces(&p.composite)
            .into_iter()
            .map(|c| P::wrap(JaParticle { tank: p.tank, composite: c }))
            .collect();
        local.particles.insert(id("S:Decomp"), pieces);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let c = id("S:Decomp");
        let pieces = local.particles.remove(&c).unwrap_or_default();
        io.add(&c, &pieces)
    }
}

struct DecompLoop {
    attempts: f64,
    time_bound: Option<f64>,
}

impl<P: Particle> Behavior<P> for DecompLoop {
    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let time = id("V:Time");
        let target = if local_num(local, &time, "decomps") < self.attempts {
            "s:Decomp_Sample"
        } else {
            match self.time_bound {
                Some(b) if local_num(local, &time, "time") >= b => "t:End",
                _ => "o:Log",
            }
        };
        local.set_route(&id(target));
        Ok(())
    }
}

/// Per-tank summary statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TankStats {
    pub particles: usize,
    pub atoms: u64,
    pub max_atoms: u32,
    pub mean_atoms: f64,
    pub mean_distinct_atoms: f64,
    /// Mean of `|trace|`.
    pub mean_weight: f64,
    /// Strongest link over all particles.
    pub max_link: f64,
    /// Mean strength over every link in the tank.
    pub mean_link: f64,
}

impl TankStats {
    pub fn of<'a>(particles: impl IntoIterator<Item = &'a Composite>) -> TankStats {
        let mut s = TankStats::default();
        let (mut distinct, mut weight, mut links, mut link_sum) = (0usize, 0.0, 0usize, 0.0);
        for c in particles {
            s.particles += 1;
            s.atoms += u64::from(c.atoms());
            s.max_atoms = s.max_atoms.max(c.atoms());
            distinct += c.distinct_atoms();
            weight += c.matrix().trace().re.abs();
            for b in c.bonds() {
                links += 1;
                link_sum += b.strength;
                s.max_link = s.max_link.max(b.strength);
            }
        }
        if s.particles > 0 {
            let n = s.particles as f64;
            s.mean_atoms = s.atoms as f64 / n;
            s.mean_distinct_atoms = distinct as f64 / n;
            s.mean_weight = weight / n;
        }
        if links > 0 {
            s.mean_link = link_sum / links as f64;
        }
        s
    }

    pub fn to_value(&self) -> EnvValue {
        EnvValue::Record(store([
            ("particles", EnvValue::Num(self.particles as f64)),
            ("atoms", EnvValue::Num(self.atoms as f64)),
            ("max_atoms", EnvValue::Num(f64::from(self.max_atoms))),
            ("mean_atoms", EnvValue::Num(self.mean_atoms)),
            ("mean_distinct_atoms", EnvValue::Num(self.mean_distinct_atoms)),
            ("mean_weight", EnvValue::Num(self.mean_weight)),
            ("max_link", EnvValue::Num(self.max_link)),
            ("mean_link", EnvValue::Num(self.mean_link)),
        ]))
    }
}

/// Composites of every tank index present in `bag`.
pub fn tanks_of<P: Particle + Carries<JaParticle>>(bag: &ParticleBag<P>) -> BTreeMap<u32, Vec<&Composite>> {
    let mut out: BTreeMap<u32, Vec<&Composite>> = BTreeMap::new();
    for p in ja_instances(bag) {
        out.entry(p.tank).or_default().push(&p.composite);
    }
    out
}

/// Appends one record per time step to `V:Log`.
struct Log;

impl<P: Particle + Carries<JaParticle>> Behavior<P> for Log {
    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let time = local_num(local, &id("V:Time"), "time");
        let bag = local.bag(&id("T:Tank")).cloned().unwrap_or_default();
        let all = TankStats::of(ja_instances(&bag).map(|p| &p.composite));
        let tanks = tanks_of(&bag)
            .into_iter()
            .map(|(t, cs)| (t.to_string(), TankStats::of(cs).to_value()))
            .collect();
        let rec = store([
            ("time", EnvValue::Num(time)),
            ("all", all.to_value()),
            ("tanks", EnvValue::Record(tanks)),
        ]);
        *local.store_mut(&id("V:Log")) = store([(format!("t{:08}", time as u64).as_str(), EnvValue::Record(rec))]);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let log = id("V:Log");
        let rec = local.store(&log).cloned().unwrap_or_default();
        io.add_vars(&log, &rec)
    }
}

/// Rebalance each listed pair of tanks in turn. Returns the new bag.
pub fn transfer_between<P: Particle + Carries<JaParticle>>(bag: &ParticleBag<P>, pairs: &[(u32, u32)]) -> ParticleBag<P> {
    let mut contents = bag.clone();
    for &(a, b) in pairs {
        if a == b {
            continue;
        }
        let of = |t: u32, bag: &ParticleBag<P>| -> Vec<Composite> {
            ja_instances(bag).filter(|p| p.tank == t).map(|p| p.composite.clone()).collect()
        };
        let (ta, tb) = balance_transfer(of(a, &contents), of(b, &contents));
        contents.retain(|p| p.view().is_none_or(|j| j.tank != a && j.tank != b));
        for (t, cs) in [(a, ta), (b, tb)] {
            for c in cs {
                contents.insert(P::wrap(JaParticle { tank: t, composite: c }));
            }
        }
    }
    contents
}

/// Tank-to-tank transfers under the configured mode.
struct Transfer {
    mode: TransferMode,
    tanks: u32,
    grid_shape: Option<(u32, u32)>,
    max_transfers: u32,
}

impl<P: Particle + Carries<JaParticle>> Behavior<P> for Transfer {
    fn pull(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let tank = id("T:Tank");
        local.particles.insert(tank.clone(), ParticleBag::new());
        let pairs = select_transfer_pairs(self.mode, self.tanks, self.grid_shape, self.max_transfers, rng).map_err(err)?;
        if pairs.is_empty() {
            return Ok(());
        }
        let before = io.bag(&tank)?.clone();
        let after = transfer_between(&before, &pairs);
        io.remove(&tank, &before.difference(&after))?;
        local.particles.insert(tank, after.difference(&before));
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let tank = id("T:Tank");
        let moved_in = local.particles.remove(&tank).unwrap_or_default();
        io.add(&tank, &moved_in)
    }
}

fn has_pair<P: Particle>(local: &LocalState<P>) -> bool {
    local.bag(&id("S:Reactants")).is_some_and(|b| b.len() == 2)
}

/// Behaviors of the macro graph, with `a:Link` bound to its expansion and
/// the default weakest-link decomposition.
pub fn behaviors<P: Particle + Carries<JaParticle> + 'static>(config: &JaConfig) -> Behaviors<P> {
    behaviors_with(config, Arc::new(WeakestLink))
}

pub fn behaviors_with<P: Particle + Carries<JaParticle> + 'static>(
    config: &JaConfig,
    policy: Arc<dyn DecompPolicy>,
) -> Behaviors<P> {
    let link = Expanded::new(link_micro_program(), vec![Binding::rw("S:Reactants", "S:Reactants")]).guard(has_pair::<P>);
    let mut bs = Behaviors::new();
    bs.insert("Load", move_all_sampler("T:Init", "T:Tank"));
    bs.insert("Time", Clock);
    bs.insert("Link_Sample", TankSample { dst: "S:Reactants", k: 2 });
    bs.insert("Link", link);
    bs.insert("Link_Return", move_all_sampler("S:Reactants", "T:Tank"));
    bs.insert("Link_Count", counter_observer("V:Time", "links", 1.0));
    bs.insert(
        "Link_Loop",
        threshold_decision(
            "V:Time",
            "links",
            f64::from(config.link_attempts_per_step),
            "s:Decomp_Sample",
            "s:Link_Sample",
        ),
    );
    bs.insert("Decomp_Sample", TankSample { dst: "S:Decomp", k: 1 });
    bs.insert("Decomp", Decomp(policy));
    bs.insert("Decomp_Return", move_all_sampler("S:Decomp", "T:Tank"));
    bs.insert("Decomp_Count", counter_observer("V:Time", "decomps", 1.0));
    bs.insert(
        "Decomp_Loop",
        DecompLoop {
            attempts: f64::from(config.decomp_attempts_per_step),
            time_bound: config.time_bound.map(|t| t as f64),
        },
    );
    bs.insert("Log", Log);
    bs.insert(
        "Transfer",
        Transfer {
            mode: config.transfer_mode,
            tanks: config.tanks,
            grid_shape: config.grid_shape,
            max_transfers: config.max_transfers,
        },
    );
    bs
}

pub fn program<P: Particle + Carries<JaParticle> + 'static>(config: &JaConfig) -> Result<Program<P>, EngineError> {
    config.check().map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
    Program::new(build_macro(config.time_bound.is_some()), &behaviors(config))
}

/// `atoms_per_tank` atoms per tank, drawn uniformly from the atom set.
pub fn initial_atoms<P: Particle + Carries<JaParticle>>(config: &JaConfig, rng: &mut Rng) -> ParticleBag<P> {
    let atoms: Vec<Mat3> = census::atoms().collect();
    let mut bag = ParticleBag::new();
    for tank in 0..config.tanks {
        for _ in 0..config.atoms_per_tank {
            let m = atoms[rng.gen_range(0..atoms.len())];
            let composite = Composite::atom(m).expect("enumerated atoms are valid");
            bag.insert(P::wrap(JaParticle { tank, composite }));
        }
    }
    bag
}

pub fn initial_state<P: Particle + Carries<JaParticle>>(
    program: &Program<P>,
    config: &JaConfig,
    rng: &mut Rng,
) -> SystemState<P> {
    let mut s = program.fresh_state();
    s.add_particles(&id("T:Init"), &initial_atoms(config, rng)).expect("T:Init exists");
    s
}

/// Total atoms, free and bound, over every particle container.
pub fn total_atoms<P: Particle + Carries<JaParticle>>(state: &SystemState<P>) -> u64 {
    state
        .particle_containers()
        .flat_map(|(_, bag)| bag.iter())
        .filter_map(|(p, n)| p.view().map(|j| u64::from(j.composite.atoms()) * n as u64))
        .sum()
}

/// Tank indices holding at least one particle.
pub fn occupied_tanks<P: Particle + Carries<JaParticle>>(bag: &ParticleBag<P>) -> BTreeSet<u32> {
    ja_instances(bag).map(|p| p.tank).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::node_rng;
    use crate::ja::census::atoms;

    fn rng(seed: u64) -> Rng {
        node_rng(seed, &id("a:test"))
    }

    fn particle(code: &str) -> JaParticle {
        JaParticle {
            tank: 0,
            composite: Composite::from_code(code).unwrap(),
        }
    }

    fn pair(a: &str, b: &str) -> ParticleBag<JaParticle> {
        [particle(a), particle(b)].into_iter().collect()
    }

    #[test]
    fn graphs_are_valid() {
        for g in [build_link_micro(), build_macro(false), build_macro(true)] {
            let v = crate::graph::validate(&g);
            assert!(!crate::graph::has_hard(&v), "{v:?}");
        }
    }

    #[test]
    fn composite_record_round_trip() {
        let a = particle("App0000").composite;
        let b = particle("Ap00300").composite;
        let ab = Composite::linked(a, b.clone(), (1, 2), 0.25, 0.75);
        let abb = Composite::linked(ab, b, (0, 0), 0.1, 0.5);
        assert_eq!(composite_from_value(&composite_value(&abb)).unwrap(), abb);
    }

    #[test]
    fn wrong_arity() {
        let one: ParticleBag<JaParticle> = [particle("Ap00000")].into_iter().collect();
        assert_eq!(attempt_link(&one, &mut rng(0)), Err(JaError::WrongArity(1)));
    }

    #[test]
    fn link_outcomes_keep_or_replace_reactants() {
        let sample = pair("App0153", "Ap00210");
        let terms = crate::ja::particle::link_terms(&sample.nth(0).unwrap().composite, &sample.nth(1).unwrap().composite).unwrap();
        assert!(terms.probability > 0.0);
        let mut r = rng(1);
        let (mut linked, n) = (0, 4000);
        for _ in 0..n {
            let out = attempt_link(&sample, &mut r).unwrap();
            if out.linked {
                linked += 1;
                assert_eq!(out.reactants.len(), 1);
                let p = out.reactants.instances().next().unwrap();
                assert_eq!(p.composite.atoms(), 2);
                assert_eq!(p.composite.bond().unwrap().strength, terms.strength);
            } else {
                assert_eq!(out.reactants, sample);
            }
        }
        let p = terms.probability;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((linked as f64 / n as f64 - p).abs() < 4.0 * sigma, "{linked} vs {p}");
    }

    /// `d:Prob` replaced by an unconditional pass.
    fn forced_link_program() -> Program<JaParticle> {
        struct Pass;
        impl Behavior<JaParticle> for Pass {
            fn process(&self, local: &mut LocalState<JaParticle>, _rng: &mut Rng) -> Result<(), EngineError> {
                local.set_route(&id("a:New_Mat"));
                Ok(())
            }
        }
        let mut bs = link_micro_behaviors();
        bs.insert("Prob", Pass);
        Program::new(build_link_micro(), &bs).unwrap()
    }

    #[test]
    fn zero_trace_product_rejected() {
        let all: Vec<Composite> = atoms().take(2000).map(|m| Composite::atom(m).unwrap()).collect();
        let (a, b) = all
            .iter()
            .flat_map(|a| all.iter().map(move |b| (a, b)))
            .find(|(a, b)| jordan_product(a.matrix(), b.matrix()).trace().re == 0.0)
            .expect("search finds a zero-trace product");
        let sample: ParticleBag<JaParticle> =
            [a, b].into_iter().map(|c| JaParticle { tank: 0, composite: c.clone() }).collect();
        let out = run_link(&forced_link_program(), &sample, 3).unwrap();
        assert!(!out.linked);
        assert_eq!(out.reactants, sample);
    }

    #[test]
    fn forced_link_then_forced_break_round_trips() {
        let sample = pair("App0153", "Ap00210");
        let out = run_link(&forced_link_program(), &sample, 5).unwrap();
        assert!(out.linked);
        let c = &out.reactants.instances().next().unwrap().composite;
        let pieces = crate::ja::decompose(c, &crate::ja::AlwaysBreak, &mut rng(6)).unwrap().unwrap();
        let back: ParticleBag<JaParticle> = pieces.into_iter().map(|c| JaParticle { tank: 0, composite: c }).collect();
        assert_eq!(back, sample);
    }

    fn small(tanks: u32, mode: TransferMode) -> JaConfig {
        JaConfig {
            tanks,
            atoms_per_tank: 16,
            link_attempts_per_step: 5,
            decomp_attempts_per_step: 5,
            transfer_mode: mode,
            grid_shape: (mode == TransferMode::Grid).then_some((2, tanks / 2)),
            ..JaConfig::default()
        }
    }

    #[test]
    fn atoms_conserved_at_every_step() {
        for (cfg, seed) in [
            (small(1, TransferMode::Single), 1),
            (small(4, TransferMode::Random), 2),
            (small(4, TransferMode::Grid), 3),
        ] {
            let p = program::<JaParticle>(&cfg).unwrap();
            let s = initial_state(&p, &cfg, &mut rng(seed));
            let want = u64::from(cfg.tanks * cfg.atoms_per_tank);
            assert_eq!(total_atoms(&s), want);
            let mut run = Run::new(&p, s, seed);
            let mut linked = false;
            run.run(core::num::NonZeroU64::new(3000), |_, st| {
                assert_eq!(total_atoms(st), want);
                linked |= st.bag(&id("T:Tank")).unwrap().instances().any(|p| p.composite.atoms() > 1);
            })
            .unwrap();
            assert!(linked, "no link formed in {cfg:?}");
        }
    }

    #[test]
    fn single_tank_keeps_tank_index_and_logs() {
        let cfg = JaConfig {
            time_bound: Some(3),
            ..small(1, TransferMode::Single)
        };
        let p = program::<JaParticle>(&cfg).unwrap();
        let s = initial_state(&p, &cfg, &mut rng(9));
        let mut run = Run::new(&p, s, 9);
        run.run(core::num::NonZeroU64::new(100_000), |_, _| {}).unwrap();
        let st = run.into_state();
        assert!(st.halted);
        assert_eq!(occupied_tanks(st.bag(&id("T:Tank")).unwrap()), BTreeSet::from([0]));
        let log = st.env(&id("V:Log")).unwrap();
        assert_eq!(log.len(), 2);
        assert!(log.contains_key("t00000001") && log.contains_key("t00000002"));
    }

    #[test]
    fn none_mode_never_mixes_tanks() {
        let cfg = small(3, TransferMode::None);
        let p = program::<JaParticle>(&cfg).unwrap();
        let s = initial_state(&p, &cfg, &mut rng(4));
        let per_tank = |st: &SystemState<JaParticle>| -> BTreeMap<u32, u64> {
            let mut m = BTreeMap::new();
            for (_, bag) in st.particle_containers() {
                for (p, n) in bag.iter() {
                    *m.entry(p.tank).or_default() += u64::from(p.composite.atoms()) * n as u64;
                }
            }
            m
        };
        let want = per_tank(&s);
        let mut run = Run::new(&p, s, 4);
        run.run(core::num::NonZeroU64::new(2000), |_, st| assert_eq!(per_tank(st), want)).unwrap();
    }

    #[test]
    fn bad_configs() {
        assert!(JaConfig { tanks: 0, ..JaConfig::default() }.check().is_err());
        assert!(matches!(
            JaConfig {
                tanks: 6,
                transfer_mode: TransferMode::Grid,
                grid_shape: Some((2, 2)),
                ..JaConfig::default()
            }
            .check(),
            Err(JaError::GridShape { .. })
        ));
    }

    #[test]
    fn stats_of_small_tank() {
        let a = particle("App0000").composite;
        let b = particle("Ap00300").composite;
        let ab = Composite::linked(a.clone(), b, (0, 0), 0.3, 0.5);
        let s = TankStats::of([&a, &ab]);
        assert_eq!(s.particles, 2);
        assert_eq!(s.atoms, 3);
        assert_eq!(s.max_atoms, 2);
        assert_eq!(s.mean_distinct_atoms, 1.5);
        assert_eq!(s.max_link, 0.3);
        assert_eq!(TankStats::of([]).particles, 0);
    }
}
