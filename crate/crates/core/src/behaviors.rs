//! Reusable node behaviors.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;

use crate::engine::{Access, Behavior, EngineError, Rng};
use crate::graph::NodeId;
use crate::state::{EnvStore, EnvValue, LocalState, Particle, ParticleBag};

/// Observer adding `increment` to one numeric variable by remove-then-add.
/// A missing variable starts at `increment`.
pub struct CounterObserver {
    env: NodeId,
    var: String,
    increment: f64,
}

pub fn counter_observer(env: &str, var: &str, increment: f64) -> CounterObserver {
    CounterObserver {
        env: NodeId::of_name(env),
        var: var.to_string(),
        increment,
    }
}

impl<P: Particle> Behavior<P> for CounterObserver {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        if io.env(&self.env)?.contains_key(&self.var) {
            io.remove_vars(&self.env, [self.var.as_str()])?;
        }
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let store = local.store_mut(&self.env);
        let old = match store.get(&self.var) {
            None => 0.0,
            Some(v) => v
                .as_num()
                .ok_or_else(|| EngineError::behavior(alloc::format!("`{}` is not a number", self.var)))?,
        };
        store.insert(self.var.clone(), EnvValue::Num(old + self.increment));
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let value = local.var(&self.env, &self.var).cloned().expect("set by process");
        io.add_vars(&self.env, &EnvStore::from([(self.var.clone(), value)]))
    }
}

/// Sampler moving the whole contents of `src` into `dst`.
pub struct MoveAll {
    src: NodeId,
    dst: NodeId,
}

pub fn move_all_sampler(src: &str, dst: &str) -> MoveAll {
    MoveAll {
        src: NodeId::of_name(src),
        dst: NodeId::of_name(dst),
    }
}

impl<P: Particle> Behavior<P> for MoveAll {
    fn pull(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let moved = io.remove_all(&self.src)?;
        local.particles.insert(self.dst.clone(), moved);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let moved = local.particles.remove(&self.dst).unwrap_or_default();
        io.add(&self.dst, &moved)
    }
}

/// Sampler moving `k` particles, drawn uniformly without replacement, from
/// `src` to `dst`. Takes the whole bag when it holds fewer than `k`.
pub struct RandomPick {
    src: NodeId,
    dst: NodeId,
    k: usize,
}

pub fn random_pick_sampler(src: &str, dst: &str, k: usize) -> RandomPick {
    RandomPick {
        src: NodeId::of_name(src),
        dst: NodeId::of_name(dst),
        k,
    }
}

/// Draw up to `k` instances of `bag` uniformly without replacement.
pub fn pick_instances<P: Particle>(bag: &ParticleBag<P>, k: usize, rng: &mut Rng) -> ParticleBag<P> {
    let n = bag.len();
    let k = k.min(n);
    let mut chosen: Vec<usize> = index::sample(rng, n, k).into_vec();
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|i| bag.nth(i).expect("index below len").clone())
        .collect()
}

impl<P: Particle> Behavior<P> for RandomPick {
    fn pull(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let picked = pick_instances(io.bag(&self.src)?, self.k, rng);
        io.remove(&self.src, &picked)?;
        local.particles.insert(self.dst.clone(), picked);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let moved = local.particles.remove(&self.dst).unwrap_or_default();
        io.add(&self.dst, &moved)
    }
}

/// Decision routing to `done` once `var >= bound`, else to `other`.
pub struct ThresholdDecision {
    env: NodeId,
    var: String,
    bound: f64,
    done: NodeId,
    other: NodeId,
}

pub fn threshold_decision(env: &str, var: &str, bound: f64, done: &str, other: &str) -> ThresholdDecision {
    ThresholdDecision {
        env: NodeId::of_name(env),
        var: var.to_string(),
        bound,
        done: NodeId::of_name(done),
        other: NodeId::of_name(other),
    }
}

impl<P: Particle> Behavior<P> for ThresholdDecision {
    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let value = local.var(&self.env, &self.var).and_then(EnvValue::as_num);
        let Some(value) = value else {
            return Err(EngineError::BadDecision {
                node: self.done.clone(),
                route: alloc::format!("missing `{}` in {}", self.var, self.env),
            });
        };
        let target = if value >= self.bound { &self.done } else { &self.other };
        local.set_route(target);
        Ok(())
    }
}

/// Number stored under `var` in local copy of `env`, zero when absent.
pub fn local_num<P: Particle>(local: &LocalState<P>, env: &NodeId, var: &str) -> f64 {
    local.var(env, var).and_then(EnvValue::as_num).unwrap_or(0.0)
}

/// Build a store from name/value pairs.
pub fn store<const N: usize>(pairs: [(&str, EnvValue); N]) -> EnvStore {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Behaviors, Program, Run};
    use crate::graph::GraphBuilder;
    use proptest::prelude::*;

    #[derive(Clone, Debug, PartialEq)]
    struct S(String);

    impl Particle for S {
        fn key(&self) -> String {
            self.0.clone()
        }
    }

    fn id(s: &str) -> NodeId {
        s.parse().unwrap()
    }

    fn counter_program() -> Program<S> {
        let mut b = GraphBuilder::new();
        b.node("o:time").node("V:time").start("o:time").flow("o:time", "o:time").rw("o:time", "V:time");
        let mut bs = Behaviors::new();
        bs.insert("time", counter_observer("V:time", "t", 1.0));
        Program::new(b.build().unwrap(), &bs).unwrap()
    }

    #[test]
    fn counter_increments_existing_and_initialises_missing() {
        let p = counter_program();
        let t = id("V:time");
        for (start, want) in [(Some(0.0), 1.0), (Some(41.0), 42.0), (None, 1.0)] {
            let mut s = p.fresh_state();
            if let Some(x) = start {
                s.add_env(&t, &store([("t", EnvValue::Num(x))])).unwrap();
            }
            let mut run = Run::new(&p, s, 0);
            let ev = run.step().unwrap();
            assert_eq!(run.state().env(&t).unwrap()["t"], EnvValue::Num(want));
            assert_eq!(ev.touched, core::slice::from_ref(&t));
            assert!(run.local_is_empty());
        }
    }

    fn sampler_program(b: impl Behavior<S> + 'static) -> Program<S> {
        let mut g = GraphBuilder::new();
        g.node("s:move").node("T:tank").node("S:composite");
        g.start("s:move").flow("s:move", "s:move").take("s:move", "T:tank").give("s:move", "S:composite");
        let mut bs = Behaviors::new();
        bs.insert("move", b);
        Program::new(g.build().unwrap(), &bs).unwrap()
    }

    fn bag_of(items: &[&str]) -> ParticleBag<S> {
        items.iter().map(|s| S(s.to_string())).collect()
    }

    #[test]
    fn random_pick_single_particle() {
        let p = sampler_program(random_pick_sampler("T:tank", "S:composite", 1));
        let mut s = p.fresh_state();
        s.add_particles(&id("T:tank"), &bag_of(&["tau"])).unwrap();
        let mut run = Run::new(&p, s, 0);
        run.step().unwrap();
        assert!(run.state().bag(&id("T:tank")).unwrap().is_empty());
        assert_eq!(run.state().bag(&id("S:composite")).unwrap(), &bag_of(&["tau"]));
    }

    #[test]
    fn move_all_from_empty_is_noop() {
        let p = sampler_program(move_all_sampler("T:tank", "S:composite"));
        let s = p.fresh_state();
        let mut run = Run::new(&p, s.clone(), 0);
        let ev = run.step().unwrap();
        assert!(ev.touched.is_empty());
        assert_eq!(run.state().bag(&id("S:composite")).unwrap(), s.bag(&id("S:composite")).unwrap());
    }

    #[test]
    fn threshold_routes() {
        let mut g = GraphBuilder::new();
        g.node("d:updated").node("V:reactions").node("a:process").node("s:transfers");
        g.start("d:updated").read("d:updated", "V:reactions");
        g.flow("d:updated", "a:process").flow("d:updated", "s:transfers");
        g.flow("a:process", "d:updated").flow("s:transfers", "d:updated");
        struct Nop;
        impl Behavior<S> for Nop {}
        let mut bs = Behaviors::new();
        bs.insert("updated", threshold_decision("V:reactions", "n", 10.0, "s:transfers", "a:process"));
        bs.insert("process", Nop).insert("transfers", Nop);
        let p = Program::new(g.build().unwrap(), &bs).unwrap();
        for (n, want) in [(Some(10.0), "s:transfers"), (Some(3.0), "a:process")] {
            let mut s = p.fresh_state();
            s.add_env(&id("V:reactions"), &store([("n", EnvValue::Num(n.unwrap()))])).unwrap();
            let before = s.clone();
            let mut run = Run::new(&p, s, 0);
            let ev = run.step().unwrap();
            assert_eq!(ev.next, Some(id(want)));
            let after = run.into_state();
            assert!(before.same_contents(&after));
        }
        let mut run = Run::new(&p, p.fresh_state(), 0);
        assert!(matches!(run.step(), Err(EngineError::BadDecision { .. })));
    }

    proptest! {
        #[test]
        fn random_pick_caps_at_bag_size(n in 0usize..6, k in 0usize..9, seed in any::<u64>()) {
            let p = sampler_program(random_pick_sampler("T:tank", "S:composite", k));
            let mut s = p.fresh_state();
            let names: Vec<String> = (0..n).map(|i| alloc::format!("p{}", i % 3)).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            s.add_particles(&id("T:tank"), &bag_of(&refs)).unwrap();
            let mut run = Run::new(&p, s, seed);
            run.step().unwrap();
            let moved = run.state().bag(&id("S:composite")).unwrap().len();
            prop_assert_eq!(moved, k.min(n));
            prop_assert_eq!(run.state().bag(&id("T:tank")).unwrap().len(), n - k.min(n));
        }
    }
}
