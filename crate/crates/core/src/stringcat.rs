//! String concatenation chemistry.
//!
//! Atoms are single letters. A string with two identical adjacent letters
//! splits between them; any other string is concatenated with a second one
//! drawn from the same tank. Tanks are partitions of `T:tanks`, identified by
//! the tank index each particle carries.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::behaviors::{counter_observer, local_num, move_all_sampler, pick_instances, random_pick_sampler, store};
use crate::engine::{Access, Behavior, Behaviors, Binding, EngineError, Expanded, Program, Rng};
use crate::graph::{GraphBuilder, GraphDef, NodeId};
use crate::state::{EnvValue, LocalState, Particle, ParticleBag, SystemState};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct StrParticle {
    pub tank: u32,
    pub text: String,
}

impl StrParticle {
    pub fn new(tank: u32, text: &str) -> Self {
        StrParticle {
            tank,
            text: text.to_string(),
        }
    }
}

impl Particle for StrParticle {
    fn key(&self) -> String {
        format!("{}:{}", self.tank, self.text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StringCatError {
    #[error("`{0}` has no double letter")]
    NoDouble(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Positions `i` with `s[i] == s[i + 1]`, ascending.
pub fn double_indices(s: &str) -> Vec<usize> {
    let b = s.as_bytes();
    (0..b.len().saturating_sub(1)).filter(|&i| b[i] == b[i + 1]).collect()
}

/// Split between the two letters of the double starting at `i`.
pub fn split_at(s: &str, i: usize) -> (String, String) {
    (s[..=i].to_string(), s[i + 1..].to_string())
}

/// Split at a double chosen uniformly among all doubles of `s`.
pub fn split(s: &str, rng: &mut Rng) -> Result<(String, String), StringCatError> {
    let doubles = double_indices(s);
    let i = *doubles.choose(rng).ok_or_else(|| StringCatError::NoDouble(s.to_string()))?;
    Ok(split_at(s, i))
}

pub fn concat(a: &str, b: &str) -> String {
    let mut out = String::with_capacity(a.len() + b.len());
    out.push_str(a);
    out.push_str(b);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct StringCatConfig {
    pub alphabet: String,
    pub copies: usize,
    pub tanks: u32,
    pub reactions_per_step: u32,
    pub max_transfers: u32,
    /// Halt once this many time steps have completed. `None` runs open-ended.
    pub time_bound: Option<u64>,
}

impl Default for StringCatConfig {
    fn default() -> Self {
        StringCatConfig {
            alphabet: "abcdefghijklmnopqrstuvwxyz".to_string(),
            copies: 100,
            tanks: 4,
            reactions_per_step: 100,
            max_transfers: 10,
            time_bound: None,
        }
    }
}

impl StringCatConfig {
    pub fn check(&self) -> Result<(), StringCatError> {
        if self.alphabet.is_empty() || !self.alphabet.bytes().all(|c| c.is_ascii_alphabetic()) {
            return Err(StringCatError::Config("alphabet must be non-empty ASCII letters".into()));
        }
        if self.tanks == 0 {
            return Err(StringCatError::Config("need at least one tank".into()));
        }
        if self.reactions_per_step == 0 {
            return Err(StringCatError::Config("reactions_per_step must be positive".into()));
        }
        Ok(())
    }
}

/// Macro graph, open-ended or with a time-bound termination branch.
pub fn build_macro(open_ended: bool) -> GraphDef {
    let mut b = GraphBuilder::new();
    b.node("s:load").node("o:time").node("o:reactions").node("d:updated").node("s:transfers");
    b.node("a:process").summary("a:process");
    b.node("T:init").node("T:tanks").node("V:time").node("V:reactions");
    b.start("s:load");
    b.chain(&["s:load", "o:time", "a:process", "o:reactions", "d:updated"]);
    b.flow("d:updated", "a:process").flow("d:updated", "s:transfers").flow("s:transfers", "o:time");
    b.take("s:load", "T:init").give("s:load", "T:tanks");
    b.rw("o:time", "V:time").rw("o:time", "V:reactions");
    b.rw("a:process", "T:tanks");
    b.rw("o:reactions", "V:reactions");
    b.read("d:updated", "V:reactions");
    b.rw("s:transfers", "T:tanks");
    if !open_ended {
        b.node("t:end").flow("d:updated", "t:end").read("d:updated", "V:time");
    }
    b.build().expect("static graph")
}

/// Expansion of `a:process`: one reaction in one tank.
pub fn build_micro_process() -> GraphDef {
    let mut b = GraphBuilder::new();
    b.node("s:choose").node("s:sampler").node("d:decomp").node("a:split").node("a:concat");
    b.instance("s:sampler_2", "sampler");
    b.node("s:return").node("s:commit");
    b.node("T:tanks").node("T:tank").node("S:composite");
    b.start("s:choose");
    b.chain(&["s:choose", "s:sampler", "d:decomp", "a:split", "s:return", "s:commit", "s:choose"]);
    b.chain(&["d:decomp", "s:sampler_2", "a:concat", "s:return"]);
    b.take("s:choose", "T:tanks").give("s:choose", "T:tank");
    for s in ["s:sampler", "s:sampler_2"] {
        b.take(s, "T:tank").give(s, "S:composite");
    }
    b.read("d:decomp", "S:composite");
    b.rw("a:split", "S:composite").rw("a:concat", "S:composite");
    b.take("s:return", "S:composite").give("s:return", "T:tank");
    b.take("s:commit", "T:tank").give("s:commit", "T:tanks");
    b.build().expect("static graph")
}

fn id(name: &str) -> NodeId {
    NodeId::of_name(name)
}

/// Moves every particle of one tank, chosen uniformly among non-empty tanks.
struct Choose;

impl Behavior<StrParticle> for Choose {
    fn pull(&self, io: &mut Access<'_, StrParticle>, local: &mut LocalState<StrParticle>, rng: &mut Rng) -> Result<(), EngineError> {
        let tanks = id("T:tanks");
        local.particles.insert(id("T:tank"), ParticleBag::new());
        let all = io.bag(&tanks)?;
        let present: Vec<u32> = all.iter().map(|(p, _)| p.tank).collect::<BTreeSet<_>>().into_iter().collect();
        let Some(&chosen) = present.choose(rng) else {
            return Ok(());
        };
        let mut part = all.clone();
        part.retain(|p| p.tank == chosen);
        io.remove(&tanks, &part)?;
        local.particles.insert(id("T:tank"), part);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, StrParticle>, local: &mut LocalState<StrParticle>) -> Result<(), EngineError> {
        let part = local.particles.remove(&id("T:tank")).unwrap_or_default();
        io.add(&id("T:tank"), &part)
    }
}

struct Decomp;

impl Behavior<StrParticle> for Decomp {
    fn process(&self, local: &mut LocalState<StrParticle>, _rng: &mut Rng) -> Result<(), EngineError> {
        let splittable = local
            .bag(&id("S:composite"))
            .is_some_and(|b| b.instances().any(|p| !double_indices(&p.text).is_empty()));
        local.set_route(&id(if splittable { "a:split" } else { "s:sampler_2" }));
        Ok(())
    }
}

/// Pulls everything from `S:composite` and pushes back the reaction products.
struct Reaction(fn(&ParticleBag<StrParticle>, &mut Rng) -> Result<ParticleBag<StrParticle>, EngineError>);

impl Behavior<StrParticle> for Reaction {
    fn pull(&self, io: &mut Access<'_, StrParticle>, local: &mut LocalState<StrParticle>, _rng: &mut Rng) -> Result<(), EngineError> {
        let taken = io.remove_all(&id("S:composite"))?;
        local.particles.insert(id("S:composite"), taken);
        Ok(())
    }

    fn process(&self, local: &mut LocalState<StrParticle>, rng: &mut Rng) -> Result<(), EngineError> {
        let c = id("S:composite");
        let products = (self.0)(local.bag(&c).expect("pulled"), rng)?;
        local.particles.insert(c, products);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, StrParticle>, local: &mut LocalState<StrParticle>) -> Result<(), EngineError> {
        let products = local.particles.remove(&id("S:composite")).unwrap_or_default();
        io.add(&id("S:composite"), &products)
    }
}

fn split_all(bag: &ParticleBag<StrParticle>, rng: &mut Rng) -> Result<ParticleBag<StrParticle>, EngineError> {
    let mut out = ParticleBag::new();
    for p in bag.instances() {
        match split(&p.text, rng) {
            Ok((l, r)) => {
                out.insert(StrParticle { tank: p.tank, text: l });
                out.insert(StrParticle { tank: p.tank, text: r });
            }
            Err(StringCatError::NoDouble(_)) => out.insert(p.clone()),
            Err(e) => return Err(EngineError::behavior(e.to_string())),
        }
    }
    Ok(out)
}

/// Concatenates a pair. The two particles arrive as a bag, so the sampling
/// order is redrawn uniformly, which has the same distribution.
fn concat_pair(bag: &ParticleBag<StrParticle>, rng: &mut Rng) -> Result<ParticleBag<StrParticle>, EngineError> {
    let mut items: Vec<&StrParticle> = bag.instances().collect();
    if items.len() != 2 {
        return Ok(bag.clone());
    }
    items.shuffle(rng);
    Ok([StrParticle {
        tank: items[0].tank,
        text: concat(&items[0].text, &items[1].text),
    }]
    .into_iter()
    .collect())
}

/// Behaviors of the `a:process` expansion.
pub fn micro_behaviors() -> Behaviors<StrParticle> {
    let mut bs = Behaviors::new();
    bs.insert("choose", Choose);
    bs.insert("sampler", random_pick_sampler("T:tank", "S:composite", 1));
    bs.insert("decomp", Decomp);
    bs.insert("split", Reaction(split_all));
    bs.insert("concat", Reaction(concat_pair));
    bs.insert("return", move_all_sampler("S:composite", "T:tank"));
    bs.insert("commit", move_all_sampler("T:tank", "T:tanks"));
    bs
}

/// Advances `time` and resets the per-step reaction count.
struct Clock;

impl Behavior<StrParticle> for Clock {
    fn pull(&self, io: &mut Access<'_, StrParticle>, _local: &mut LocalState<StrParticle>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_store(&id("V:time"))?;
        io.remove_store(&id("V:reactions"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<StrParticle>, _rng: &mut Rng) -> Result<(), EngineError> {
        let t = local_num(local, &id("V:time"), "time");
        *local.store_mut(&id("V:time")) = store([("time", EnvValue::Num(t + 1.0))]);
        *local.store_mut(&id("V:reactions")) = store([("reactions", EnvValue::Num(0.0))]);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, StrParticle>, local: &mut LocalState<StrParticle>) -> Result<(), EngineError> {
        for c in ["V:time", "V:reactions"] {
            let c = id(c);
            io.add_vars(&c, local.store(&c).expect("set by process"))?;
        }
        Ok(())
    }
}

struct Updated {
    reactions_per_step: f64,
    time_bound: Option<f64>,
}

impl Behavior<StrParticle> for Updated {
    fn process(&self, local: &mut LocalState<StrParticle>, _rng: &mut Rng) -> Result<(), EngineError> {
        let n = local_num(local, &id("V:reactions"), "reactions");
        let target = if n < self.reactions_per_step {
            "a:process"
        } else {
            match self.time_bound {
                Some(bound) if local_num(local, &id("V:time"), "time") >= bound => "t:end",
                _ => "s:transfers",
            }
        };
        local.set_route(&id(target));
        Ok(())
    }
}

/// Moves one particle each way between `k` random tank pairs, `k` uniform in
/// `0..=max_transfers`.
struct Transfers {
    tanks: u32,
    max_transfers: u32,
}

impl Behavior<StrParticle> for Transfers {
    fn pull(&self, io: &mut Access<'_, StrParticle>, local: &mut LocalState<StrParticle>, rng: &mut Rng) -> Result<(), EngineError> {
        let tanks = id("T:tanks");
        local.particles.insert(tanks.clone(), ParticleBag::new());
        if self.tanks < 2 {
            return Ok(());
        }
        let before = io.bag(&tanks)?.clone();
        let mut contents = before.clone();
        let k = rng.gen_range(0..=self.max_transfers);
        for _ in 0..k {
            let pair = rand::seq::index::sample(rng, self.tanks as usize, 2);
            let (a, b) = (pair.index(0) as u32, pair.index(1) as u32);
            for (from, to) in [(a, b), (b, a)] {
                let mut part = contents.clone();
                part.retain(|p| p.tank == from);
                let picked = pick_instances(&part, 1, rng);
                let arrived = picked.instances().next().map(|p| StrParticle { tank: to, text: p.text.clone() });
                if let Some(arrived) = arrived {
                    contents.subtract(&picked);
                    contents.insert(arrived);
                }
            }
        }
        let moved_out = before.difference(&contents);
        let moved_in = contents.difference(&before);
        io.remove(&tanks, &moved_out)?;
        local.particles.insert(tanks, moved_in);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, StrParticle>, local: &mut LocalState<StrParticle>) -> Result<(), EngineError> {
        let tanks = id("T:tanks");
        let moved_in = local.particles.remove(&tanks).unwrap_or_default();
        io.add(&tanks, &moved_in)
    }
}

/// Behaviors of the macro graph with `a:process` bound to its expansion.
pub fn behaviors(config: &StringCatConfig) -> Behaviors<StrParticle> {
    let micro = Program::new(build_micro_process(), &micro_behaviors()).expect("micro graph is valid");
    let mut bs = Behaviors::new();
    bs.insert("load", move_all_sampler("T:init", "T:tanks"));
    bs.insert("time", Clock);
    bs.insert("process", Expanded::new(micro, vec![Binding::rw("T:tanks", "T:tanks")]));
    bs.insert("reactions", counter_observer("V:reactions", "reactions", 1.0));
    bs.insert(
        "updated",
        Updated {
            reactions_per_step: f64::from(config.reactions_per_step),
            time_bound: config.time_bound.map(|t| t as f64),
        },
    );
    bs.insert(
        "transfers",
        Transfers {
            tanks: config.tanks,
            max_transfers: config.max_transfers,
        },
    );
    bs
}

pub fn program(config: &StringCatConfig) -> Result<Program<StrParticle>, EngineError> {
    config.check().map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
    Program::new(build_macro(config.time_bound.is_none()), &behaviors(config))
}

/// Initial atoms: `copies` of every letter, dealt round-robin over the tanks.
pub fn initial_atoms(config: &StringCatConfig) -> ParticleBag<StrParticle> {
    let mut bag = ParticleBag::new();
    let mut next = 0u32;
    for c in config.alphabet.chars() {
        for _ in 0..config.copies {
            bag.insert(StrParticle {
                tank: next % config.tanks,
                text: c.to_string(),
            });
            next += 1;
        }
    }
    bag
}

pub fn initial_state(program: &Program<StrParticle>, config: &StringCatConfig) -> SystemState<StrParticle> {
    let mut s = program.fresh_state();
    s.add_particles(&id("T:init"), &initial_atoms(config)).expect("T:init exists");
    s
}

/// Letter multiset over every particle container, for conservation checks.
pub fn letter_counts(state: &SystemState<StrParticle>) -> [usize; 256] {
    let mut counts = [0usize; 256];
    for (_, bag) in state.particle_containers() {
        for (p, n) in bag.iter() {
            for c in p.text.bytes() {
                counts[c as usize] += n;
            }
        }
    }
    counts
}
