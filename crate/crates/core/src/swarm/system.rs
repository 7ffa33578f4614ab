//! Generation loop, flocking micro graph and their behaviors.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{
    averages, collisions, exchange_on_collisions, perceives, pacekeep, random_walk, step_position,
    Averages, Boid, RecipeParams, SwarmError, Vec2,
};
use crate::behaviors::{local_num, move_all_sampler, store};
use crate::engine::{Access, Behavior, Behaviors, Binding, EngineError, Expanded, Program, Rng, Run, View};
use crate::graph::{GraphBuilder, GraphDef, NodeId};
use crate::state::{Carries, EnvStore, EnvValue, LocalState, Particle, ParticleBag, SystemState};

fn id(name: &str) -> NodeId {
    NodeId::of_name(name)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwarmConfig {
    /// Bound of each whim and random-walk component.
    pub whim: f64,
    /// Boids closer than this collide.
    pub collision_radius: f64,
    /// Whether collisions exchange parameters.
    pub exchange: bool,
    pub dt: f64,
    /// Side of the square initial positions are drawn from.
    pub box_size: f64,
    /// Whether `s:Log` keeps past generations in `T:external`.
    pub keep_history: bool,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            whim: 0.5,
            collision_radius: 3.0,
            exchange: true,
            dt: 1.0,
            box_size: 500.0,
            keep_history: true,
        }
    }
}

impl SwarmConfig {
    pub fn check(&self) -> Result<(), SwarmError> {
        let bad = |m: &str| Err(SwarmError::Config(m.to_string()));
        if !(self.whim >= 0.0 && self.whim.is_finite()) {
            return bad("whim must be a finite nonnegative number");
        }
        if self.collision_radius.is_nan() || self.collision_radius < 0.0 {
            return bad("collision_radius must be nonnegative");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.box_size > 0.0 && self.box_size.is_finite()) {
            return bad("box_size must be positive");
        }
        Ok(())
    }
}

pub fn build_macro() -> GraphDef {
    let mut b = GraphBuilder::new();
    for n in [
        "s:Load_Parameters",
        "o:Generation",
        "s:Copy_to_Previous",
        "a:Flock",
        "a:Move",
        "o:Collisions",
        "a:Update_Params",
        "s:Log",
        "T:Parameters",
        "S:n",
        "T:n_prev",
        "T:external",
        "V:Generation",
        "V:Collisions",
    ] {
        b.node(n);
    }
    b.start("s:Load_Parameters");
    b.chain(&[
        "s:Load_Parameters",
        "o:Generation",
        "s:Copy_to_Previous",
        "a:Flock",
        "a:Move",
        "o:Collisions",
        "a:Update_Params",
        "s:Log",
        "o:Generation",
    ]);
    b.take("s:Load_Parameters", "T:Parameters").give("s:Load_Parameters", "S:n");
    b.rw("o:Generation", "V:Generation");
    b.read("s:Copy_to_Previous", "S:n").give("s:Copy_to_Previous", "T:n_prev");
    b.rw("a:Flock", "S:n").read("a:Flock", "T:n_prev");
    b.rw("a:Move", "S:n").read("a:Move", "V:Generation");
    b.read("o:Collisions", "S:n").rw("o:Collisions", "V:Collisions");
    b.rw("a:Update_Params", "S:n").read("a:Update_Params", "V:Collisions");
    b.take("s:Log", "T:n_prev").give("s:Log", "T:external");
    b.build().expect("static graph")
}

/// The flocking loop behind `a:Flock`, one boid per pass.
pub fn build_flock_micro() -> GraphDef {
    let mut b = GraphBuilder::new();
    for n in [
        "s:Update_Boid",
        "s:Find_Neighbours",
        "o:Local_Averages",
        "s:Pull_Boid",
        "d:Flock",
        "a:Cohesion",
        "a:Alignment",
        "a:Separation",
        "a:Whim",
        "a:Random_Walk",
        "a:Pacekeeping",
        "s:Push_Boid",
        "d:Updated",
        "s:Push_Update",
        "t:Flock_Done",
        "S:n",
        "T:n_prev",
        "S:boid",
        "S:Neighbours",
        "S:n_new",
        "V:Averages",
    ] {
        b.node(n);
    }
    b.start("s:Update_Boid");
    b.chain(&["s:Update_Boid", "s:Find_Neighbours", "o:Local_Averages", "s:Pull_Boid", "d:Flock"]);
    b.chain(&["d:Flock", "a:Cohesion", "a:Alignment", "a:Separation", "a:Whim", "a:Pacekeeping"]);
    b.chain(&["d:Flock", "a:Random_Walk", "a:Pacekeeping"]);
    b.chain(&["a:Pacekeeping", "s:Push_Boid", "d:Updated", "s:Update_Boid"]);
    b.chain(&["d:Updated", "s:Push_Update", "t:Flock_Done"]);
    b.read("s:Update_Boid", "S:n").give("s:Update_Boid", "S:boid");
    b.read("s:Find_Neighbours", "S:boid")
        .read("s:Find_Neighbours", "T:n_prev")
        .rw("s:Find_Neighbours", "S:Neighbours");
    b.read("o:Local_Averages", "S:boid")
        .read("o:Local_Averages", "S:Neighbours")
        .rw("o:Local_Averages", "V:Averages");
    b.read("s:Pull_Boid", "S:boid").take("s:Pull_Boid", "S:n");
    b.read("d:Flock", "V:Averages");
    for a in ["a:Cohesion", "a:Alignment", "a:Separation"] {
        b.rw(a, "S:boid").read(a, "V:Averages");
    }
    for a in ["a:Whim", "a:Random_Walk", "a:Pacekeeping"] {
        b.rw(a, "S:boid");
    }
    b.take("s:Push_Boid", "S:boid").give("s:Push_Boid", "S:n_new");
    b.read("d:Updated", "S:n");
    b.take("s:Push_Update", "S:n_new").give("s:Push_Update", "S:n");
    b.build().expect("static graph")
}

fn boid_instances<P: Particle + Carries<Boid>>(bag: &ParticleBag<P>) -> impl Iterator<Item = &Boid> {
    bag.instances().filter_map(Carries::view)
}

/// Boids of a container in key order.
pub fn boids<P: Particle + Carries<Boid>>(bag: &ParticleBag<P>) -> Vec<&Boid> {
    boid_instances(bag).collect()
}

fn copy_bags<P: Particle>(view: &View<'_, P>, local: &mut LocalState<P>, names: &[&str]) -> Result<(), EngineError> {
    for n in names {
        let c = id(n);
        local.particles.insert(c.clone(), view.bag(&c)?.clone());
    }
    Ok(())
}

fn the_boid<P: Particle + Carries<Boid>>(local: &LocalState<P>) -> Result<Boid, EngineError> {
    local
        .bag(&id("S:boid"))
        .and_then(|b| boid_instances(b).next())
        .cloned()
        .ok_or_else(|| EngineError::behavior("S:boid holds no boid"))
}

fn averages_value(a: Option<&Averages>) -> EnvStore {
    match a {
        None => store([("n", EnvValue::Num(0.0))]),
        Some(a) => store([
            ("n", EnvValue::Num(a.n as f64)),
            ("x", EnvValue::Vec2(a.x)),
            ("v", EnvValue::Vec2(a.v)),
            ("s", EnvValue::Vec2(a.s)),
        ]),
    }
}

fn averages_from<P: Particle>(local: &LocalState<P>) -> Option<Averages> {
    let v = id("V:Averages");
    let n = local_num(local, &v, "n") as usize;
    if n == 0 {
        return None;
    }
    let get = |k| local.var(&v, k).and_then(EnvValue::as_vec2);
    Some(Averages {
        x: get("x")?,
        v: get("v")?,
        s: get("s")?,
        n,
    })
}

/// Copies one boid of `S:n`, chosen uniformly, into `S:boid`.
struct UpdateBoid;

impl<P: Particle + Carries<Boid>> Behavior<P> for UpdateBoid {
    fn read(&self, _view: &View<'_, P>, _local: &mut LocalState<P>) -> Result<(), EngineError> {
        Ok(())
    }

    fn pull(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let n = io.bag(&id("S:n"))?;
        let mut picked = ParticleBag::new();
        if !n.is_empty() {
            picked.insert(n.nth(rng.gen_range(0..n.len())).expect("index below len").clone());
        }
        local.particles.insert(id("S:boid"), picked);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let picked = local.particles.remove(&id("S:boid")).unwrap_or_default();
        io.add_owned(&id("S:boid"), picked)
    }
}

/// Replaces `S:Neighbours` with the snapshot boids the current boid perceives.
struct FindNeighbours;

impl<P: Particle + Carries<Boid>> Behavior<P> for FindNeighbours {
    fn read(&self, view: &View<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let nb = id("S:Neighbours");
        let found = match view.bag(&id("S:boid"))?.instances().find_map(Carries::view) {
            Some(me) => {
                let prev = view.bag(&id("T:n_prev"))?;
                prev.filtered(|p| Carries::<Boid>::view(p).is_some_and(|o| perceives(me, o)))
            }
            None => ParticleBag::new(),
        };
        local.particles.insert(nb, found);
        Ok(())
    }

    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_all(&id("S:Neighbours"))?;
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let nb = id("S:Neighbours");
        let found = local.particles.remove(&nb).unwrap_or_default();
        io.add_owned(&nb, found)
    }
}

struct LocalAverages;

impl<P: Particle + Carries<Boid>> Behavior<P> for LocalAverages {
    fn read(&self, view: &View<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let me = view.bag(&id("S:boid"))?.instances().find_map(Carries::view);
        let ns: Vec<&Boid> = boid_instances(view.bag(&id("S:Neighbours"))?).collect();
        let avg = me.and_then(|me| averages(me, &ns));
        *local.store_mut(&id("V:Averages")) = averages_value(avg.as_ref());
        Ok(())
    }

    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_store(&id("V:Averages"))?;
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        io.add_vars(&id("V:Averages"), local.store(&id("V:Averages")).expect("set by read"))
    }
}

/// Removes the boid being updated from the current generation.
struct PullBoid;

impl<P: Particle + Carries<Boid>> Behavior<P> for PullBoid {
    fn read(&self, view: &View<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        copy_bags(view, local, &["S:boid"])
    }

    fn pull(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let boid = local.particles.remove(&id("S:boid")).unwrap_or_default();
        io.remove(&id("S:n"), &boid)
    }
}

struct FlockDecision;

impl<P: Particle> Behavior<P> for FlockDecision {
    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let target = if local_num(local, &id("V:Averages"), "n") > 0.0 {
            "a:Cohesion"
        } else {
            "a:Random_Walk"
        };
        local.set_route(&id(target));
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Rule {
    Cohesion,
    Alignment,
    Separation,
    Whim(f64),
    RandomWalk(f64),
    Pacekeeping,
}

/// One step of the per-boid update, rewriting the boid in `S:boid`.
struct BoidRule(Rule);

impl<P: Particle + Carries<Boid>> Behavior<P> for BoidRule {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_all(&id("S:boid"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let mut b = the_boid(local)?;
        let avg = || averages_from(local).ok_or_else(|| EngineError::behavior("no neighbour averages"));
        let add = |a: Vec2, d: Vec2| [a[0] + d[0], a[1] + d[1]];
        match self.0 {
            Rule::Cohesion => b.accel = super::cohesion(&b, &avg()?),
            Rule::Alignment => b.accel = add(b.accel, super::alignment(&b, &avg()?)),
            Rule::Separation => b.accel = add(b.accel, super::separation(&b, &avg()?)),
            Rule::Whim(s) => b.accel = add(b.accel, random_walk(s, rng)),
            Rule::RandomWalk(s) => b.accel = random_walk(s, rng),
            Rule::Pacekeeping => b.next_vel = pacekeep(b.vel, b.accel, &b.params, rng),
        }
        local.particles.insert(id("S:boid"), ParticleBag::from_iter([P::wrap(b)]));
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let c = id("S:boid");
        let b = local.particles.remove(&c).unwrap_or_default();
        io.add_owned(&c, b)
    }
}

struct PushBoid;

impl<P: Particle> Behavior<P> for PushBoid {
    fn read(&self, view: &View<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        copy_bags(view, local, &["S:boid"])
    }

    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_all(&id("S:boid"))?;
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let b = local.particles.remove(&id("S:boid")).unwrap_or_default();
        io.add_owned(&id("S:n_new"), b)
    }
}

struct Updated;

impl<P: Particle> Behavior<P> for Updated {
    fn read(&self, view: &View<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let left = view.bag(&id("S:n"))?.len();
        local.store_mut(&id("S:n")).insert("left".into(), EnvValue::Num(left as f64));
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let target = if local_num(local, &id("S:n"), "left") > 0.0 {
            "s:Update_Boid"
        } else {
            "s:Push_Update"
        };
        local.set_route(&id(target));
        Ok(())
    }
}

pub fn flock_micro_behaviors<P: Particle + Carries<Boid> + 'static>(config: &SwarmConfig) -> Behaviors<P> {
    let mut bs = Behaviors::new();
    bs.insert("Update_Boid", UpdateBoid);
    bs.insert("Find_Neighbours", FindNeighbours);
    bs.insert("Local_Averages", LocalAverages);
    bs.insert("Pull_Boid", PullBoid);
    bs.insert("Flock", FlockDecision);
    bs.insert("Cohesion", BoidRule(Rule::Cohesion));
    bs.insert("Alignment", BoidRule(Rule::Alignment));
    bs.insert("Separation", BoidRule(Rule::Separation));
    bs.insert("Whim", BoidRule(Rule::Whim(config.whim)));
    bs.insert("Random_Walk", BoidRule(Rule::RandomWalk(config.whim)));
    bs.insert("Pacekeeping", BoidRule(Rule::Pacekeeping));
    bs.insert("Push_Boid", PushBoid);
    bs.insert("Updated", Updated);
    bs.insert("Push_Update", move_all_sampler("S:n_new", "S:n"));
    bs
}

pub fn flock_micro_program<P: Particle + Carries<Boid> + 'static>(config: &SwarmConfig) -> Program<P> {
    Program::new(build_flock_micro(), &flock_micro_behaviors(config)).expect("static graph binds")
}

/// Sampler moving every boid from `src` to `dst`, placed uniformly in the
/// box with a random heading at normal speed.
pub struct Placement {
    src: NodeId,
    dst: NodeId,
    box_size: f64,
}

pub fn placement_sampler(src: &str, dst: &str, box_size: f64) -> Placement {
    Placement {
        src: id(src),
        dst: id(dst),
        box_size,
    }
}

impl<P: Particle + Carries<Boid>> Behavior<P> for Placement {
    fn pull(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let params = io.remove_all(&self.src)?;
        let mut placed = ParticleBag::new();
        for (p, n) in params.iter() {
            let Some(b) = p.view() else {
                placed.insert_n(p.clone(), n);
                continue;
            };
            for _ in 0..n {
                let mut b = b.clone();
                b.pos = [rng.gen_range(0.0..self.box_size), rng.gen_range(0.0..self.box_size)];
                let theta = rng.gen_range(0.0..core::f64::consts::TAU);
                b.vel = [libm::cos(theta) * b.params.vn, libm::sin(theta) * b.params.vn];
                placed.insert(P::wrap(b));
            }
        }
        local.particles.insert(self.dst.clone(), placed);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let placed = local.particles.remove(&self.dst).unwrap_or_default();
        io.add_owned(&self.dst, placed)
    }
}

struct Generation;

impl<P: Particle> Behavior<P> for Generation {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_store(&id("V:Generation"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let g = local_num(local, &id("V:Generation"), "generation");
        *local.store_mut(&id("V:Generation")) = store([("generation", EnvValue::Num(g + 1.0))]);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        io.add_vars(&id("V:Generation"), local.store(&id("V:Generation")).expect("set by process"))
    }
}

struct CopyToPrevious;

impl<P: Particle> Behavior<P> for CopyToPrevious {
    fn read(&self, view: &View<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        copy_bags(view, local, &["S:n"])
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let snapshot = local.particles.remove(&id("S:n")).unwrap_or_default();
        io.add_owned(&id("T:n_prev"), snapshot)
    }
}

/// Takes each boid's pending velocity and advances its position.
struct Move {
    dt: f64,
}

impl<P: Particle + Carries<Boid>> Behavior<P> for Move {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_all(&id("S:n"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let generation = local_num(local, &id("V:Generation"), "generation") as u64;
        let n = local.particles.remove(&id("S:n")).unwrap_or_default();
        let moved = n
            .instances()
            .map(|p| match p.view() {
                Some(b) => {
                    let mut b = b.clone();
                    b.vel = b.next_vel;
                    b.pos = step_position(b.pos, b.vel, self.dt);
                    b.accel = [0.0; 2];
                    b.generation = generation;
                    P::wrap(b)
                }
                None => p.clone(),
            })
            .collect();
        local.particles.insert(id("S:n"), moved);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let moved = local.particles.remove(&id("S:n")).unwrap_or_default();
        io.add_owned(&id("S:n"), moved)
    }
}

pub fn pairs_value(pairs: &[(u32, u32)]) -> EnvValue {
    EnvValue::List(
        pairs
            .iter()
            .map(|&(a, b)| EnvValue::List(vec![EnvValue::Num(f64::from(a)), EnvValue::Num(f64::from(b))]))
            .collect(),
    )
}

/// Collision pairs stored under `pairs`, ids ascending.
pub fn pairs_from(store: &EnvStore) -> Vec<(u32, u32)> {
    let Some(list) = store.get("pairs").and_then(EnvValue::as_list) else {
        return Vec::new();
    };
    list.iter()
        .filter_map(|p| match p.as_list()? {
            [a, b] => Some((a.as_num()? as u32, b.as_num()? as u32)),
            _ => None,
        })
        .collect()
}

struct Collisions {
    radius: f64,
}

impl<P: Particle + Carries<Boid>> Behavior<P> for Collisions {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_store(&id("V:Collisions"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let pairs = collisions(boid_instances(local.bag(&id("S:n")).expect("read")), self.radius);
        *local.store_mut(&id("V:Collisions")) = store([
            ("count", EnvValue::Num(pairs.len() as f64)),
            ("pairs", pairs_value(&pairs)),
        ]);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        io.add_vars(&id("V:Collisions"), local.store(&id("V:Collisions")).expect("set by process"))
    }
}

/// Exchanges parameters across the recorded collision pairs.
struct UpdateParams {
    exchange: bool,
}

impl<P: Particle + Carries<Boid>> Behavior<P> for UpdateParams {
    fn check(&self, local: &LocalState<P>, _rng: &mut Rng) -> f64 {
        let any = local_num(local, &id("V:Collisions"), "count") > 0.0;
        if self.exchange && any {
            0.0
        } else {
            1.0
        }
    }

    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_all(&id("S:n"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let pairs = pairs_from(local.store(&id("V:Collisions")).expect("read"));
        let n = local.particles.remove(&id("S:n")).unwrap_or_default();
        let mut others = Vec::new();
        let mut bs: alloc::collections::BTreeMap<u32, Boid> = alloc::collections::BTreeMap::new();
        for p in n.instances() {
            match p.view() {
                Some(b) => {
                    bs.insert(b.id, b.clone());
                }
                None => others.push(p.clone()),
            }
        }
        exchange_on_collisions(&mut bs, &pairs, rng);
        let out = bs.into_values().map(P::wrap).chain(others).collect();
        local.particles.insert(id("S:n"), out);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let n = local.particles.remove(&id("S:n")).unwrap_or_default();
        io.add_owned(&id("S:n"), n)
    }
}

/// Moves the previous generation into `T:external`, or drops it.
struct Log {
    keep: bool,
}

impl<P: Particle> Behavior<P> for Log {
    fn read(&self, view: &View<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        copy_bags(view, local, &["T:n_prev"])
    }

    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_all(&id("T:n_prev"))?;
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let prev = local.particles.remove(&id("T:n_prev")).unwrap_or_default();
        if self.keep {
            io.add_owned(&id("T:external"), prev)?;
        }
        Ok(())
    }
}

fn has_boids<P: Particle>(local: &LocalState<P>) -> bool {
    local.bag(&id("S:n")).is_some_and(|b| !b.is_empty())
}

pub fn behaviors<P: Particle + Carries<Boid> + 'static>(config: &SwarmConfig) -> Behaviors<P> {
    let flock = Expanded::new(
        flock_micro_program(config),
        vec![Binding::rw("S:n", "S:n"), Binding::read("T:n_prev", "T:n_prev")],
    )
    .until_halt()
    .guard(has_boids::<P>);
    let mut bs = Behaviors::new();
    bs.insert("Load_Parameters", placement_sampler("T:Parameters", "S:n", config.box_size));
    bs.insert("Generation", Generation);
    bs.insert("Copy_to_Previous", CopyToPrevious);
    bs.insert("Flock", flock);
    bs.insert("Move", Move { dt: config.dt });
    bs.insert("Collisions", Collisions { radius: config.collision_radius });
    bs.insert("Update_Params", UpdateParams { exchange: config.exchange });
    bs.insert("Log", Log { keep: config.keep_history });
    bs
}

pub fn program<P: Particle + Carries<Boid> + 'static>(config: &SwarmConfig) -> Result<Program<P>, EngineError> {
    config.check().map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
    Program::new(build_macro(), &behaviors(config))
}

/// One boid per recipe count, ids in recipe order, `Vn` clamped to `Vm`.
pub fn recipe_boids(recipe: &[(u32, RecipeParams)]) -> Result<Vec<Boid>, SwarmError> {
    let mut out = Vec::new();
    for (count, p) in recipe {
        if p.to_array().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SwarmError::Config("recipe parameters must be finite and nonnegative".into()));
        }
        if p.c5 > 1.0 {
            return Err(SwarmError::Config("c5 must lie in [0, 1]".into()));
        }
        for _ in 0..*count {
            out.push(Boid::new(out.len() as u32, p.clamped()));
        }
    }
    Ok(out)
}

/// Fresh state with the recipe's boids waiting in `T:Parameters`.
pub fn initial_state<P: Particle + Carries<Boid>>(
    program: &Program<P>,
    recipe: &[(u32, RecipeParams)],
) -> Result<SystemState<P>, SwarmError> {
    let mut s = program.fresh_state();
    let bag = recipe_boids(recipe)?.into_iter().map(P::wrap).collect();
    s.add_particles(&id("T:Parameters"), &bag).expect("T:Parameters exists");
    Ok(s)
}

pub fn generation<P: Particle>(state: &SystemState<P>) -> u64 {
    state
        .env(&id("V:Generation"))
        .ok()
        .and_then(|s| s.get("generation"))
        .and_then(EnvValue::as_num)
        .unwrap_or(0.0) as u64
}

/// Run `n` generations. `frame` sees the state once the boids are placed
/// and again after each completed generation. Returns transitions taken.
pub fn run_generations<P: Particle + Carries<Boid>>(
    run: &mut Run<'_, P>,
    n: u64,
    mut frame: impl FnMut(u64, &SystemState<P>),
) -> Result<u64, EngineError> {
    let head = id("o:Generation");
    let mut taken = 0;
    while run.state().current != head {
        run.step()?;
        taken += 1;
    }
    frame(generation(run.state()), run.state());
    for _ in 0..n {
        loop {
            run.step()?;
            taken += 1;
            if run.state().current == head || run.state().halted {
                break;
            }
        }
        frame(generation(run.state()), run.state());
    }
    Ok(taken)
}
