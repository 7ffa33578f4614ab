//! Bag-valued containers, environment stores and the system state.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::graph::{GraphDef, NodeId, NodeKind, LOCAL_ROUTE};

/// A chemistry particle. Two particles with the same key count as the same
/// species in a bag.
pub trait Particle: Clone + fmt::Debug {
    fn key(&self) -> String;
}

/// Access to a chemistry's own particle type inside a wider particle type.
/// Lets one chemistry's behaviors run inside a composed system.
pub trait Carries<T> {
    fn view(&self) -> Option<&T>;
    fn wrap(inner: T) -> Self;
}

impl<T> Carries<T> for T {
    fn view(&self) -> Option<&T> {
        Some(self)
    }

    fn wrap(inner: T) -> T {
        inner
    }
}

#[derive(Clone, Debug)]
struct Entry<P> {
    particle: P,
    count: usize,
}

/// Multiset of particles keyed by [`Particle::key`].
#[derive(Clone, Debug)]
pub struct ParticleBag<P> {
    entries: BTreeMap<String, Entry<P>>,
    total: usize,
}

impl<P> Default for ParticleBag<P> {
    fn default() -> Self {
        ParticleBag {
            entries: BTreeMap::new(),
            total: 0,
        }
    }
}

impl<P: Particle> PartialEq for ParticleBag<P> {
    fn eq(&self, other: &Self) -> bool {
        self.total == other.total
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((ka, a), (kb, b))| ka == kb && a.count == b.count)
    }
}

impl<P: Particle> FromIterator<P> for ParticleBag<P> {
    fn from_iter<I: IntoIterator<Item = P>>(iter: I) -> Self {
        let mut bag = ParticleBag::new();
        for p in iter {
            bag.insert(p);
        }
        bag
    }
}

impl<P: Particle> ParticleBag<P> {
    pub fn new() -> Self {
        ParticleBag::default()
    }

    pub fn insert(&mut self, p: P) {
        self.insert_n(p, 1);
    }

    pub fn insert_n(&mut self, p: P, n: usize) {
        if n == 0 {
            return;
        }
        self.total += n;
        self.entries
            .entry(p.key())
            .and_modify(|e| e.count += n)
            .or_insert(Entry { particle: p, count: n });
    }

    /// Remove `n` copies of the species `key`. Returns false, leaving the
    /// bag untouched, when fewer than `n` are present.
    pub fn remove_key(&mut self, key: &str, n: usize) -> bool {
        match self.entries.get_mut(key) {
            Some(e) if e.count >= n => {
                e.count -= n;
                self.total -= n;
                if e.count == 0 {
                    self.entries.remove(key);
                }
                true
            }
            None if n == 0 => true,
            _ => false,
        }
    }

    /// Total number of particles, counting copies.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Number of distinct species.
    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    pub fn count(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.count)
    }

    pub fn get(&self, key: &str) -> Option<&P> {
        self.entries.get(key).map(|e| &e.particle)
    }

    /// Species with their counts, in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&P, usize)> {
        self.entries.values().map(|e| (&e.particle, e.count))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Every particle instance, copies repeated, in key order.
    pub fn instances(&self) -> impl Iterator<Item = &P> {
        self.entries
            .values()
            .flat_map(|e| core::iter::repeat_n(&e.particle, e.count))
    }

    /// The `index`-th instance in key order.
    pub fn nth(&self, mut index: usize) -> Option<&P> {
        for e in self.entries.values() {
            if index < e.count {
                return Some(&e.particle);
            }
            index -= e.count;
        }
        None
    }

    /// Bag union, counts summed.
    pub fn extend(&mut self, other: &ParticleBag<P>) {
        if self.is_empty() {
            self.clone_from(other);
            return;
        }
        for (k, e) in &other.entries {
            self.total += e.count;
            match self.entries.get_mut(k) {
                Some(mine) => mine.count += e.count,
                None => {
                    self.entries.insert(k.clone(), e.clone());
                }
            }
        }
    }

    /// Remove a subbag. Fails without modifying `self` if `other` is not a subbag.
    pub fn subtract(&mut self, other: &ParticleBag<P>) -> bool {
        if !subbag(other, self) {
            return false;
        }
        for (p, n) in other.iter() {
            self.remove_key(&p.key(), n);
        }
        true
    }

    /// Instances of `self` in excess of `other`.
    pub fn difference(&self, other: &ParticleBag<P>) -> ParticleBag<P> {
        let mut out = ParticleBag::new();
        for (k, e) in &self.entries {
            out.insert_n(e.particle.clone(), e.count.saturating_sub(other.count(k)));
        }
        out
    }

    /// Copy of the species satisfying `keep`, with their counts.
    pub fn filtered(&self, mut keep: impl FnMut(&P) -> bool) -> ParticleBag<P> {
        let entries: BTreeMap<String, Entry<P>> = self
            .entries
            .iter()
            .filter(|(_, e)| keep(&e.particle))
            .map(|(k, e)| (k.clone(), e.clone()))
            .collect();
        let total = entries.values().map(|e| e.count).sum();
        ParticleBag { entries, total }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&P) -> bool) {
        self.entries.retain(|_, e| keep(&e.particle));
        self.total = self.entries.values().map(|e| e.count).sum();
    }

    pub fn take_all(&mut self) -> ParticleBag<P> {
        core::mem::take(self)
    }
}

/// True iff every species count in `a` is at most its count in `b`.
pub fn subbag<P: Particle>(a: &ParticleBag<P>, b: &ParticleBag<P>) -> bool {
    a.entries.iter().all(|(k, e)| b.count(k) >= e.count)
}

/// An environment variable value.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvValue {
    Num(f64),
    Str(String),
    Vec2([f64; 2]),
    List(Vec<EnvValue>),
    Record(BTreeMap<String, EnvValue>),
}

impl EnvValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            EnvValue::Num(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            EnvValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_vec2(&self) -> Option<[f64; 2]> {
        match self {
            EnvValue::Vec2(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[EnvValue]> {
        match self {
            EnvValue::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_record(&self) -> Option<&BTreeMap<String, EnvValue>> {
        match self {
            EnvValue::Record(r) => Some(r),
            _ => None,
        }
    }
}

/// Named variables of one environment container.
pub type EnvStore = BTreeMap<String, EnvValue>;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("unknown container {0}")]
    UnknownContainer(NodeId),
    #[error("{0} is not a {1} container")]
    WrongKind(NodeId, &'static str),
    #[error("variable `{1}` already present in {0}")]
    EnvCollision(NodeId, String),
    #[error("items to remove are not present in {0}")]
    NotPresent(NodeId),
}

/// Global state: execution pointer, particle containers and environments.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState<P: Particle> {
    pub current: NodeId,
    particles: BTreeMap<NodeId, ParticleBag<P>>,
    environments: BTreeMap<NodeId, EnvStore>,
    pub halted: bool,
}

impl<P: Particle> SystemState<P> {
    /// Empty containers for every tank, sample and environment of `g`,
    /// with the pointer at the start node.
    pub fn new(g: &GraphDef) -> Self {
        let mut particles = BTreeMap::new();
        let mut environments = BTreeMap::new();
        for id in g.containers() {
            if id.kind() == NodeKind::Environment {
                environments.insert(id.clone(), EnvStore::new());
            } else {
                particles.insert(id.clone(), ParticleBag::new());
            }
        }
        SystemState {
            current: g.start().clone(),
            particles,
            environments,
            halted: false,
        }
    }

    pub fn has_container(&self, id: &NodeId) -> bool {
        self.particles.contains_key(id) || self.environments.contains_key(id)
    }

    pub fn bag(&self, id: &NodeId) -> Result<&ParticleBag<P>, StateError> {
        self.particles.get(id).ok_or_else(|| self.missing(id, "particle"))
    }

    pub fn env(&self, id: &NodeId) -> Result<&EnvStore, StateError> {
        self.environments.get(id).ok_or_else(|| self.missing(id, "environment"))
    }

    fn missing(&self, id: &NodeId, want: &'static str) -> StateError {
        if self.has_container(id) {
            StateError::WrongKind(id.clone(), want)
        } else {
            StateError::UnknownContainer(id.clone())
        }
    }

    /// Deep copy of a particle container.
    pub fn read_bag(&self, id: &NodeId) -> Result<ParticleBag<P>, StateError> {
        self.bag(id).cloned()
    }

    /// Deep copy of an environment store.
    pub fn read_env(&self, id: &NodeId) -> Result<EnvStore, StateError> {
        self.env(id).cloned()
    }

    pub fn add_particles(&mut self, id: &NodeId, items: &ParticleBag<P>) -> Result<(), StateError> {
        self.bag(id)?;
        self.particles.get_mut(id).expect("checked").extend(items);
        Ok(())
    }

    /// As [`Self::add_particles`], moving `items` in when the container is empty.
    pub fn add_particles_owned(&mut self, id: &NodeId, items: ParticleBag<P>) -> Result<(), StateError> {
        self.bag(id)?;
        let bag = self.particles.get_mut(id).expect("checked");
        if bag.is_empty() {
            *bag = items;
        } else {
            bag.extend(&items);
        }
        Ok(())
    }

    pub fn remove_particles(&mut self, id: &NodeId, items: &ParticleBag<P>) -> Result<(), StateError> {
        self.bag(id)?;
        if self.particles.get_mut(id).expect("checked").subtract(items) {
            Ok(())
        } else {
            Err(StateError::NotPresent(id.clone()))
        }
    }

    /// Empty a particle container, returning its contents.
    pub fn take_particles(&mut self, id: &NodeId) -> Result<ParticleBag<P>, StateError> {
        self.bag(id)?;
        Ok(self.particles.get_mut(id).expect("checked").take_all())
    }

    /// Insert variables. A name already present is an error and nothing is added.
    pub fn add_env(&mut self, id: &NodeId, items: &EnvStore) -> Result<(), StateError> {
        let store = self.env(id)?;
        if let Some(name) = items.keys().find(|k| store.contains_key(*k)) {
            return Err(StateError::EnvCollision(id.clone(), name.clone()));
        }
        let store = self.environments.get_mut(id).expect("checked");
        store.extend(items.iter().map(|(k, v)| (k.clone(), v.clone())));
        Ok(())
    }

    /// Delete the named variables; all must be present.
    pub fn remove_env<'a>(&mut self, id: &NodeId, names: impl IntoIterator<Item = &'a str> + Clone) -> Result<(), StateError> {
        let store = self.env(id)?;
        if names.clone().into_iter().any(|n| !store.contains_key(n)) {
            return Err(StateError::NotPresent(id.clone()));
        }
        let store = self.environments.get_mut(id).expect("checked");
        for n in names {
            store.remove(n);
        }
        Ok(())
    }

    pub fn particle_containers(&self) -> impl Iterator<Item = (&NodeId, &ParticleBag<P>)> {
        self.particles.iter()
    }

    pub fn environments(&self) -> impl Iterator<Item = (&NodeId, &EnvStore)> {
        self.environments.iter()
    }

    /// Container contents equal, ignoring the pointer and halt flag.
    pub fn same_contents(&self, other: &Self) -> bool {
        self.particles == other.particles && self.environments == other.environments
    }

    /// Particles across all particle containers, counting copies.
    pub fn total_particles(&self) -> usize {
        self.particles.values().map(ParticleBag::len).sum()
    }
}

/// Per-transition scratch space, destroyed at `next`.
#[derive(Clone, Debug)]
pub struct LocalState<P> {
    pub particles: BTreeMap<NodeId, ParticleBag<P>>,
    pub env: BTreeMap<NodeId, EnvStore>,
}

impl<P> Default for LocalState<P> {
    fn default() -> Self {
        LocalState {
            particles: BTreeMap::new(),
            env: BTreeMap::new(),
        }
    }
}

const ROUTE_VAR: &str = "next";

impl<P: Particle> LocalState<P> {
    pub fn new() -> Self {
        LocalState::default()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty() && self.env.is_empty()
    }

    pub fn clear(&mut self) {
        self.particles.clear();
        self.env.clear();
    }

    pub fn bag(&self, id: &NodeId) -> Option<&ParticleBag<P>> {
        self.particles.get(id)
    }

    pub fn bag_mut(&mut self, id: &NodeId) -> &mut ParticleBag<P> {
        self.particles.entry(id.clone()).or_default()
    }

    pub fn store(&self, id: &NodeId) -> Option<&EnvStore> {
        self.env.get(id)
    }

    pub fn store_mut(&mut self, id: &NodeId) -> &mut EnvStore {
        self.env.entry(id.clone()).or_default()
    }

    pub fn var(&self, id: &NodeId, name: &str) -> Option<&EnvValue> {
        self.env.get(id).and_then(|s| s.get(name))
    }

    /// Record the decision target in `V:_local`.
    pub fn set_route(&mut self, target: &NodeId) {
        self.store_mut(&NodeId::local_route())
            .insert(ROUTE_VAR.to_string(), EnvValue::Str(target.to_string()));
    }

    pub fn route(&self) -> Option<&str> {
        self.env
            .iter()
            .find(|(id, _)| id.label() == LOCAL_ROUTE && id.kind() == NodeKind::Environment)
            .and_then(|(_, s)| s.get(ROUTE_VAR))
            .and_then(EnvValue::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use alloc::vec;

    #[derive(Clone, Debug, PartialEq)]
    struct S(&'static str);

    impl Particle for S {
        fn key(&self) -> String {
            self.0.to_string()
        }
    }

    fn bag(items: &[(&'static str, usize)]) -> ParticleBag<S> {
        let mut b = ParticleBag::new();
        for (k, n) in items {
            b.insert_n(S(k), *n);
        }
        b
    }

    fn id(s: &str) -> NodeId {
        s.parse().unwrap()
    }

    fn state() -> SystemState<S> {
        let mut b = GraphBuilder::new();
        b.node("a:split").node("S:composite").node("T:tank").node("V:time");
        b.start("a:split").flow("a:split", "a:split");
        SystemState::new(&b.build().unwrap())
    }

    #[test]
    fn subbag_cases() {
        assert!(subbag(&bag(&[]), &bag(&[("x", 3)])));
        assert!(!subbag(&bag(&[("x", 2)]), &bag(&[("x", 1)])));
        assert!(subbag(&bag(&[("x", 1), ("y", 1)]), &bag(&[("x", 2), ("y", 1), ("z", 3)])));
    }

    #[test]
    fn state_has_exactly_the_graph_containers() {
        let s = state();
        assert_eq!(s.particle_containers().count(), 2);
        assert_eq!(s.environments().count(), 1);
        assert_eq!(s.current, id("a:split"));
        assert!(matches!(s.bag(&id("V:time")), Err(StateError::WrongKind(..))));
        assert!(matches!(s.bag(&id("T:nope")), Err(StateError::UnknownContainer(_))));
    }

    #[test]
    fn read_is_a_copy() {
        let mut s = state();
        let c = id("S:composite");
        assert!(s.read_bag(&id("T:tank")).unwrap().is_empty());
        s.add_particles(&c, &bag(&[("prexxpost", 1)])).unwrap();
        let mut copy = s.read_bag(&c).unwrap();
        assert_eq!(copy, bag(&[("prexxpost", 1)]));
        copy.insert(S("other"));
        assert_eq!(s.read_bag(&c).unwrap(), bag(&[("prexxpost", 1)]));
        assert_eq!(s.read_bag(&c).unwrap(), s.read_bag(&c).unwrap());
    }

    #[test]
    fn add_and_remove_particles() {
        let mut s = state();
        let c = id("S:composite");
        s.add_particles(&c, &bag(&[("prex", 1), ("xpost", 1)])).unwrap();
        assert_eq!(s.bag(&c).unwrap().len(), 2);
        let before = s.clone();
        s.add_particles(&c, &bag(&[])).unwrap();
        assert_eq!(s, before);
        assert_eq!(s.remove_particles(&c, &bag(&[("prex", 2)])), Err(StateError::NotPresent(c.clone())));
        assert_eq!(s, before);
        s.remove_particles(&c, &bag(&[("prex", 1)])).unwrap();
        s.remove_particles(&c, &bag(&[("xpost", 1)])).unwrap();
        assert!(s.bag(&c).unwrap().is_empty());
        assert_eq!(s.bag(&c).unwrap().distinct(), 0);
    }

    #[test]
    fn env_collision_and_remove() {
        let mut s = state();
        let t = id("V:time");
        let time = |x| EnvStore::from([("time".to_string(), EnvValue::Num(x))]);
        s.add_env(&t, &time(4.0)).unwrap();
        assert_eq!(s.add_env(&t, &time(5.0)), Err(StateError::EnvCollision(t.clone(), "time".into())));
        assert_eq!(s.remove_env(&t, ["nope"]), Err(StateError::NotPresent(t.clone())));
        s.remove_env(&t, ["time"]).unwrap();
        assert!(s.env(&t).unwrap().is_empty());
    }

    #[test]
    fn bag_queries() {
        let b = bag(&[("b", 2), ("a", 1)]);
        assert_eq!(b.instances().map(|p| p.0).collect::<Vec<_>>(), vec!["a", "b", "b"]);
        assert_eq!(b.nth(2).unwrap().0, "b");
        assert!(b.nth(3).is_none());
        let mut c = b.clone();
        c.retain(|p| p.0 == "b");
        assert_eq!(c, bag(&[("b", 2)]));
        assert_ne!(b, c);
    }

    #[test]
    fn local_route_round_trip() {
        let mut l: LocalState<S> = LocalState::new();
        assert!(l.is_empty());
        assert_eq!(l.route(), None);
        l.set_route(&id("s:sampler"));
        assert_eq!(l.route(), Some("s:sampler"));
        l.clear();
        assert!(l.is_empty());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    #[derive(Clone, Debug)]
    struct K(u8);

    impl Particle for K {
        fn key(&self) -> String {
            alloc::format!("{}", self.0)
        }
    }

    fn arb_bag() -> impl Strategy<Value = ParticleBag<K>> {
        proptest::collection::vec((0u8..6, 1usize..4), 0..8).prop_map(|v| {
            let mut b = ParticleBag::new();
            for (k, n) in v {
                b.insert_n(K(k), n);
            }
            b
        })
    }

    proptest! {
        #[test]
        fn add_then_remove_is_identity(a in arb_bag(), b in arb_bag()) {
            let mut c = a.clone();
            c.extend(&b);
            prop_assert_eq!(c.len(), a.len() + b.len());
            prop_assert!(subbag(&b, &c));
            prop_assert!(c.subtract(&b));
            prop_assert_eq!(c, a);
        }

        #[test]
        fn subbag_matches_definition(a in arb_bag(), b in arb_bag()) {
            let expected = (0u8..6).all(|k| {
                let key = alloc::format!("{k}");
                a.count(&key) <= b.count(&key)
            });
            prop_assert_eq!(subbag(&a, &b), expected);
        }
    }
}
