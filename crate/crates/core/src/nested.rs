//! Nested composition of the Jordan-algebra and swarm chemistries.
//!
//! Boid `i` stands for JA tank `i`. Tank statistics set boid parameters
//! through `V:parameters`, and boid collisions recorded in `V:transfers`
//! move particles between the matching tanks. Each chemistry's loop runs
//! as one expanded action per round.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::behaviors::{move_all_sampler, store};
use crate::engine::{Access, Behavior, Behaviors, Binding, EngineError, Expanded, Program, Rng};
use crate::graph::{GraphBuilder, GraphDef, NodeId};
use crate::ja::particle::moore_neighbors;
use crate::ja::system::{initial_atoms, tanks_of, transfer_between};
use crate::ja::{self, Composite, JaConfig, JaError, JaParticle, TankStats, TransferMode};
use crate::state::{Carries, EnvStore, EnvValue, LocalState, Particle, ParticleBag, SystemState};
use crate::swarm::system::{boids, pairs_from, pairs_value, placement_sampler};
use crate::swarm::{self, clamp_speed, collisions, exchange_on_collisions, Boid, RecipeParams, SwarmConfig, SwarmError};

fn id(name: &str) -> NodeId {
    NodeId::of_name(name)
}

fn err(e: impl ToString) -> EngineError {
    EngineError::behavior(e.to_string())
}

pub const JA: &str = "ja";
pub const SWARM: &str = "swarm";

#[derive(Clone, Debug, PartialEq)]
pub enum NestedParticle {
    Ja(JaParticle),
    Boid(Boid),
}

impl Particle for NestedParticle {
    fn key(&self) -> String {
        match self {
            NestedParticle::Ja(j) => j.key(),
            NestedParticle::Boid(b) => b.key(),
        }
    }
}

impl Carries<JaParticle> for NestedParticle {
    fn view(&self) -> Option<&JaParticle> {
        match self {
            NestedParticle::Ja(j) => Some(j),
            NestedParticle::Boid(_) => None,
        }
    }

    fn wrap(inner: JaParticle) -> Self {
        NestedParticle::Ja(inner)
    }
}

impl Carries<Boid> for NestedParticle {
    fn view(&self) -> Option<&Boid> {
        match self {
            NestedParticle::Boid(b) => Some(b),
            NestedParticle::Ja(_) => None,
        }
    }

    fn wrap(inner: Boid) -> Self {
        NestedParticle::Boid(inner)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
    VIII,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::I,
        Variant::II,
        Variant::III,
        Variant::IV,
        Variant::V,
        Variant::VI,
        Variant::VII,
        Variant::VIII,
    ];

    pub fn roman(self) -> &'static str {
        match self {
            Variant::I => "I",
            Variant::II => "II",
            Variant::III => "III",
            Variant::IV => "IV",
            Variant::V => "V",
            Variant::VI => "VI",
            Variant::VII => "VII",
            Variant::VIII => "VIII",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Variant::I => "nested",
            Variant::II => "nested without collision transfers",
            Variant::III => "swarm with collision exchange",
            Variant::IV => "swarm without collisions",
            Variant::V => "JA single tank",
            Variant::VI => "JA tanks without interaction",
            Variant::VII => "JA tanks with random transfers",
            Variant::VIII => "JA tanks with grid transfers",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.roman())
    }
}

impl FromStr for Variant {
    type Err = NestedError;

    fn from_str(s: &str) -> Result<Variant, NestedError> {
        let up = s.trim().to_ascii_uppercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.roman() == up)
            .ok_or_else(|| NestedError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum NestedError {
    #[error("tank index {0} out of range")]
    UnknownTank(u32),
    #[error("{tanks} tanks cannot index {boids} boids")]
    IndexMismatch { tanks: u32, boids: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ja(#[from] JaError),
    #[error(transparent)]
    Swarm(#[from] SwarmError),
}

pub const R_RANGE: (f64, f64) = (10.0, 300.0);
pub const VN_RANGE: (f64, f64) = (1.0, 20.0);
pub const VM_MAX: f64 = 40.0;

/// Affine map from tank statistics to boid parameters, clamped to the
/// parameter ranges. Each input is scaled to `[0, 1]` first.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterMap {
    /// Particle count giving the top of the range.
    pub count_scale: f64,
    /// Mean atoms per particle giving the top of the range.
    pub atoms_scale: f64,
    /// Mean link strength giving the top of the range.
    pub link_scale: f64,
}

impl Default for ParameterMap {
    fn default() -> Self {
        ParameterMap {
            count_scale: 32.0,
            atoms_scale: 8.0,
            link_scale: ja::link::MAX_STRENGTH,
        }
    }
}

fn unit(x: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        (x / scale).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn lerp((lo, hi): (f64, f64), t: f64) -> f64 {
    lo + (hi - lo) * t
}

impl ParameterMap {
    /// `R` follows mean size, `Vn`, `c1` and `c5` follow particle count,
    /// `Vm` and `c2` follow mean link strength, `c3` follows mean size.
    pub fn params(&self, s: &TankStats) -> RecipeParams {
        let n = unit(s.particles as f64, self.count_scale);
        let m = unit(s.mean_atoms, self.atoms_scale);
        let l = unit(s.mean_link, self.link_scale);
        let vn = lerp(VN_RANGE, n);
        RecipeParams {
            r: lerp(R_RANGE, m),
            vn,
            vm: lerp((vn, VM_MAX), l),
            c1: n,
            c2: l,
            c3: m,
            c4: 0.0,
            c5: n,
        }
    }

    pub fn check(&self) -> Result<(), NestedError> {
        if [self.count_scale, self.atoms_scale, self.link_scale]
            .iter()
            .all(|x| *x > 0.0 && x.is_finite())
        {
            Ok(())
        } else {
            Err(NestedError::Config("mapping scales must be positive".into()))
        }
    }
}

/// Parameters for tanks `0..tanks`, empty tanks included.
pub fn parameter_setting(
    tanks: &BTreeMap<u32, Vec<&Composite>>,
    count: u32,
    map: &ParameterMap,
) -> Result<Vec<RecipeParams>, NestedError> {
    if let Some(&bad) = tanks.keys().find(|&&t| t >= count) {
        return Err(NestedError::UnknownTank(bad));
    }
    Ok((0..count)
        .map(|t| map.params(&TankStats::of(tanks.get(&t).into_iter().flatten().copied())))
        .collect())
}

/// Rebalance the tanks of each collided pair in order.
pub fn collision_transfer<P: Particle + Carries<JaParticle>>(
    bag: &ParticleBag<P>,
    pairs: &[(u32, u32)],
    tanks: u32,
) -> Result<ParticleBag<P>, NestedError> {
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= tanks || *b >= tanks) {
        return Err(NestedError::UnknownTank(a.max(b)));
    }
    Ok(transfer_between(bag, pairs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NestedConfig {
    pub variant: Variant,
    /// JA tanks, and boids.
    pub tanks: u32,
    pub atoms_per_tank: u32,
    pub link_attempts_per_step: u32,
    pub decomp_attempts_per_step: u32,
    pub max_transfers: u32,
    pub grid_shape: Option<(u32, u32)>,
    pub swarm: SwarmConfig,
    pub map: ParameterMap,
}

fn near_square(n: u32) -> (u32, u32) {
    let mut r = libm::sqrt(f64::from(n)) as u32;
    while r > 1 && !n.is_multiple_of(r) {
        r -= 1;
    }
    (r.max(1), n / r.max(1))
}

impl NestedConfig {
    /// Sixteen tanks of sixteen atoms, or one tank for variant V.
    pub fn new(variant: Variant) -> NestedConfig {
        let tanks = if variant == Variant::V { 1 } else { 16 };
        NestedConfig {
            variant,
            tanks,
            atoms_per_tank: 16,
            link_attempts_per_step: 10,
            decomp_attempts_per_step: 10,
            max_transfers: 10,
            grid_shape: Some(near_square(tanks)),
            swarm: SwarmConfig {
                box_size: 100.0,
                ..SwarmConfig::default()
            },
            map: ParameterMap::default(),
        }
    }

    pub fn check(&self) -> Result<(), NestedError> {
        if self.variant == Variant::V && self.tanks != 1 {
            return Err(NestedError::Config("variant V runs a single tank".into()));
        }
        self.ja_config().check()?;
        if self.variant == Variant::VIII {
            match self.grid_shape {
                Some((r, c)) if r * c == self.tanks => {}
                shape => {
                    return Err(JaError::GridShape {
                        tanks: self.tanks,
                        shape,
                    }
                    .into())
                }
            }
        }
        self.swarm.check()?;
        self.map.check()
    }

    /// Settings of the inner JA loop. Transfers happen outside it.
    pub fn ja_config(&self) -> JaConfig {
        JaConfig {
            tanks: self.tanks,
            atoms_per_tank: self.atoms_per_tank,
            link_attempts_per_step: self.link_attempts_per_step,
            decomp_attempts_per_step: self.decomp_attempts_per_step,
            transfer_mode: TransferMode::None,
            grid_shape: self.grid_shape,
            max_transfers: self.max_transfers,
            time_bound: None,
        }
    }

    /// Settings of the inner swarm loop. Exchange happens outside it.
    pub fn swarm_config(&self) -> SwarmConfig {
        SwarmConfig {
            exchange: false,
            keep_history: false,
            ..self.swarm.clone()
        }
    }
}

/// Control flow and info edges of one variant.
pub fn build_variant(v: Variant) -> GraphDef {
    use Variant::*;
    let mut b = GraphBuilder::new();
    for n in ["s:LoadTank", "T:InitTank", "T:Tank"] {
        b.node(n).owner(n, JA);
    }
    for n in ["s:LoadSwarm", "T:InitSwarm", "T:Swarm"] {
        b.node(n).owner(n, SWARM);
    }
    b.start("s:LoadTank").flow("s:LoadTank", "s:LoadSwarm");
    b.take("s:LoadTank", "T:InitTank").give("s:LoadTank", "T:Tank");
    b.take("s:LoadSwarm", "T:InitSwarm").give("s:LoadSwarm", "T:Swarm");

    let cycle: &[&str] = match v {
        I => &[
            "o:Parameter_Setting",
            "a:Update_Parameters",
            "a:Swarm_Update",
            "o:Collisions",
            "a:Transfer_Particles",
            "a:JA_AChem_Update",
        ],
        II => &["o:Parameter_Setting", "a:Update_Parameters", "a:Swarm_Update", "a:JA_AChem_Update"],
        III => &["a:Update_Parameters", "a:Swarm_Update", "o:Collisions"],
        IV => &["a:Swarm_Update"],
        V | VI => &["a:JA_AChem_Update"],
        VII => &["o:Random_Transfers", "a:Transfer_Particles", "a:JA_AChem_Update"],
        VIII => &["a:Transfer_Particles", "a:JA_AChem_Update"],
    };
    let has = |n: &str| cycle.contains(&n);
    let mut shared = Vec::new();
    if has("o:Parameter_Setting") {
        shared.push("V:parameters");
    }
    if has("o:Collisions") || has("o:Random_Transfers") {
        shared.push("V:transfers");
    }
    for n in shared {
        b.node(n);
    }
    for n in cycle {
        b.node(n);
    }
    if has("a:Swarm_Update") {
        b.node("V:Generation").owner("V:Generation", SWARM);
    }
    if has("a:JA_AChem_Update") {
        b.node("V:Time").owner("V:Time", JA).node("V:Log").owner("V:Log", JA);
    }
    for n in ["a:Update_Parameters", "a:Swarm_Update", "o:Collisions"] {
        if has(n) {
            b.owner(n, SWARM);
        }
    }
    for n in ["o:Parameter_Setting", "o:Random_Transfers", "a:Transfer_Particles", "a:JA_AChem_Update"] {
        if has(n) {
            b.owner(n, JA);
        }
    }
    for n in ["a:Update_Parameters", "a:Swarm_Update", "a:Transfer_Particles", "a:JA_AChem_Update"] {
        if has(n) {
            b.summary(n);
        }
    }

    b.flow("s:LoadSwarm", cycle[0]);
    let mut ring: Vec<&str> = cycle.to_vec();
    ring.push(cycle[0]);
    b.chain(&ring);

    if has("o:Parameter_Setting") {
        b.read("o:Parameter_Setting", "T:Tank").rw("o:Parameter_Setting", "V:parameters");
    }
    if has("a:Update_Parameters") {
        let source = if v == III { "V:transfers" } else { "V:parameters" };
        b.rw("a:Update_Parameters", "T:Swarm").read("a:Update_Parameters", source);
    }
    if has("a:Swarm_Update") {
        b.rw("a:Swarm_Update", "T:Swarm").rw("a:Swarm_Update", "V:Generation");
    }
    if has("o:Collisions") {
        b.read("o:Collisions", "T:Swarm").rw("o:Collisions", "V:transfers");
    }
    if has("o:Random_Transfers") {
        b.rw("o:Random_Transfers", "V:transfers");
    }
    if has("a:Transfer_Particles") {
        b.rw("a:Transfer_Particles", "T:Tank");
        if v != VIII {
            b.read("a:Transfer_Particles", "V:transfers");
        }
    }
    if has("a:JA_AChem_Update") {
        b.rw("a:JA_AChem_Update", "T:Tank")
            .rw("a:JA_AChem_Update", "V:Time")
            .rw("a:JA_AChem_Update", "V:Log");
    }
    b.build().expect("static graph")
}

/// Info edges joining a control node to a container owned by another
/// chemistry. Unowned containers are shared.
pub fn color_violations(g: &GraphDef) -> Vec<(NodeId, NodeId)> {
    g.info_edges()
        .filter(|e| match g.owner_of(&e.container) {
            Some(o) => g.owner_of(&e.control) != Some(o),
            None => false,
        })
        .map(|e| (e.control.clone(), e.container.clone()))
        .collect()
}

fn params_value(p: &RecipeParams) -> EnvValue {
    EnvValue::List(p.to_array().into_iter().map(EnvValue::Num).collect())
}

fn params_from(v: &EnvValue) -> Option<RecipeParams> {
    let xs: Vec<f64> = v.as_list()?.iter().map(EnvValue::as_num).collect::<Option<_>>()?;
    Some(RecipeParams::from_array(xs.try_into().ok()?))
}

/// Writes one parameter record per tank into `V:parameters`.
struct ParameterSetting {
    tanks: u32,
    map: ParameterMap,
}

impl<P: Particle + Carries<JaParticle>> Behavior<P> for ParameterSetting {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_store(&id("V:parameters"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let bag = local.bag(&id("T:Tank")).cloned().unwrap_or_default();
        let params = parameter_setting(&tanks_of(&bag), self.tanks, &self.map).map_err(err)?;
        *local.store_mut(&id("V:parameters")) = params
            .iter()
            .enumerate()
            .map(|(i, p)| (i.to_string(), params_value(p)))
            .collect();
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        io.add_vars(&id("V:parameters"), local.store(&id("V:parameters")).expect("set by process"))
    }
}

enum ParamSource {
    /// Take the record of the boid's tank from `V:parameters`.
    Tanks,
    /// Exchange across the pairs in `V:transfers`.
    Collisions,
}

struct UpdateParameters(ParamSource);

impl<P: Particle + Carries<Boid>> Behavior<P> for UpdateParameters {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_all(&id("T:Swarm"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let swarm = local.particles.remove(&id("T:Swarm")).unwrap_or_default();
        let mut bs: BTreeMap<u32, Boid> = boids(&swarm).into_iter().map(|b| (b.id, b.clone())).collect();
        match self.0 {
            ParamSource::Tanks => {
                let records = local.store(&id("V:parameters")).cloned().unwrap_or_default();
                if records.len() != bs.len() {
                    return Err(err(NestedError::IndexMismatch {
                        tanks: records.len() as u32,
                        boids: bs.len(),
                    }));
                }
                for b in bs.values_mut() {
                    let p = records
                        .get(&b.id.to_string())
                        .and_then(params_from)
                        .ok_or_else(|| err(NestedError::UnknownTank(b.id)))?;
                    b.params = p;
                    b.vel = clamp_speed(b.vel, p.vm);
                }
            }
            ParamSource::Collisions => {
                let pairs = local.store(&id("V:transfers")).map(pairs_from).unwrap_or_default();
                exchange_on_collisions(&mut bs, &pairs, rng);
            }
        }
        local.particles.insert(id("T:Swarm"), bs.into_values().map(P::wrap).collect());
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let swarm = local.particles.remove(&id("T:Swarm")).unwrap_or_default();
        io.add_owned(&id("T:Swarm"), swarm)
    }
}

/// Records boid collisions into `V:transfers`.
struct RecordCollisions {
    radius: f64,
}

fn set_transfers<P: Particle>(local: &mut LocalState<P>, pairs: &[(u32, u32)]) {
    *local.store_mut(&id("V:transfers")) = store([
        ("count", EnvValue::Num(pairs.len() as f64)),
        ("pairs", pairs_value(pairs)),
    ]);
}

impl<P: Particle + Carries<Boid>> Behavior<P> for RecordCollisions {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_store(&id("V:transfers"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        let swarm = local.bag(&id("T:Swarm")).cloned().unwrap_or_default();
        set_transfers(local, &collisions(boids(&swarm), self.radius));
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        io.add_vars(&id("V:transfers"), local.store(&id("V:transfers")).expect("set by process"))
    }
}

/// Records up to `max_transfers` uniformly chosen tank pairs.
struct RandomTransfers {
    tanks: u32,
    max_transfers: u32,
}

impl<P: Particle> Behavior<P> for RandomTransfers {
    fn pull(&self, io: &mut Access<'_, P>, _local: &mut LocalState<P>, _rng: &mut Rng) -> Result<(), EngineError> {
        io.remove_store(&id("V:transfers"))?;
        Ok(())
    }

    fn process(&self, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let pairs = ja::select_transfer_pairs(TransferMode::Random, self.tanks, None, self.max_transfers, rng).map_err(err)?;
        set_transfers(local, &pairs);
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        io.add_vars(&id("V:transfers"), local.store(&id("V:transfers")).expect("set by process"))
    }
}

enum PairSource {
    Recorded,
    Grid { shape: (u32, u32), max_transfers: u32 },
}

/// Rebalances tank pairs, read from `V:transfers` or drawn on the grid.
struct TransferParticles {
    source: PairSource,
    tanks: u32,
}

impl<P: Particle + Carries<JaParticle>> Behavior<P> for TransferParticles {
    fn pull(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>, rng: &mut Rng) -> Result<(), EngineError> {
        let tank = id("T:Tank");
        let pairs = match self.source {
            PairSource::Recorded => local.store(&id("V:transfers")).map(pairs_from).unwrap_or_default(),
            PairSource::Grid { shape, max_transfers } => {
                ja::select_transfer_pairs(TransferMode::Grid, self.tanks, Some(shape), max_transfers, rng).map_err(err)?
            }
        };
        local.particles.insert(tank.clone(), ParticleBag::new());
        if pairs.is_empty() {
            return Ok(());
        }
        let before = io.bag(&tank)?.clone();
        let after = collision_transfer(&before, &pairs, self.tanks).map_err(err)?;
        io.remove(&tank, &before.difference(&after))?;
        local.particles.insert(tank, after.difference(&before));
        Ok(())
    }

    fn push(&self, io: &mut Access<'_, P>, local: &mut LocalState<P>) -> Result<(), EngineError> {
        let moved_in = local.particles.remove(&id("T:Tank")).unwrap_or_default();
        io.add_owned(&id("T:Tank"), moved_in)
    }
}

fn has_swarm<P: Particle>(local: &LocalState<P>) -> bool {
    local.bag(&id("T:Swarm")).is_some_and(|b| !b.is_empty())
}

pub fn behaviors(config: &NestedConfig) -> Result<Behaviors<NestedParticle>, EngineError> {
    let swarm_step = Expanded::new(
        swarm::system::program(&config.swarm_config())?,
        vec![Binding::rw("T:Swarm", "S:n"), Binding::rw("V:Generation", "V:Generation")],
    )
    .entry("o:Generation")
    .guard(has_swarm::<NestedParticle>);
    let ja_step = Expanded::new(
        ja::system::program(&config.ja_config())?,
        vec![
            Binding::rw("T:Tank", "T:Tank"),
            Binding::rw("V:Time", "V:Time"),
            Binding::append("V:Log", "V:Log"),
        ],
    )
    .entry("o:Time");
    let source = if config.variant == Variant::III {
        ParamSource::Collisions
    } else {
        ParamSource::Tanks
    };
    let pairs = match (config.variant, config.grid_shape) {
        (Variant::VIII, Some(shape)) => PairSource::Grid {
            shape,
            max_transfers: config.max_transfers,
        },
        _ => PairSource::Recorded,
    };
    let mut bs = Behaviors::new();
    bs.insert("LoadTank", move_all_sampler("T:InitTank", "T:Tank"));
    bs.insert("LoadSwarm", placement_sampler("T:InitSwarm", "T:Swarm", config.swarm.box_size));
    bs.insert(
        "Parameter_Setting",
        ParameterSetting {
            tanks: config.tanks,
            map: config.map.clone(),
        },
    );
    bs.insert("Update_Parameters", UpdateParameters(source));
    bs.insert("Swarm_Update", swarm_step);
    bs.insert(
        "Collisions",
        RecordCollisions {
            radius: config.swarm.collision_radius,
        },
    );
    bs.insert(
        "Random_Transfers",
        RandomTransfers {
            tanks: config.tanks,
            max_transfers: config.max_transfers,
        },
    );
    bs.insert(
        "Transfer_Particles",
        TransferParticles {
            source: pairs,
            tanks: config.tanks,
        },
    );
    bs.insert("JA_AChem_Update", ja_step);
    Ok(bs)
}

pub fn program(config: &NestedConfig) -> Result<Program<NestedParticle>, EngineError> {
    config.check().map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
    Program::new(build_variant(config.variant), &behaviors(config)?)
}

/// Random atoms in `T:InitTank` and one boid per tank in `T:InitSwarm`,
/// its parameters set from its starting tank.
pub fn initial_state(
    program: &Program<NestedParticle>,
    config: &NestedConfig,
    rng: &mut Rng,
) -> Result<SystemState<NestedParticle>, NestedError> {
    let atoms: ParticleBag<NestedParticle> = initial_atoms(&config.ja_config(), rng);
    let params = parameter_setting(&tanks_of(&atoms), config.tanks, &config.map)?;
    let swarm: ParticleBag<NestedParticle> = params
        .iter()
        .enumerate()
        .map(|(i, p)| NestedParticle::Boid(Boid::new(i as u32, *p)))
        .collect();
    let mut s = program.fresh_state();
    s.add_particles(&id("T:InitTank"), &atoms).expect("T:InitTank exists");
    s.add_particles(&id("T:InitSwarm"), &swarm).expect("T:InitSwarm exists");
    Ok(s)
}

/// Moore neighbours on the configured grid, for reporting.
pub fn grid_neighbors(config: &NestedConfig, tank: u32) -> Vec<u32> {
    match config.grid_shape {
        Some((r, c)) => moore_neighbors(tank, r, c),
        None => Vec::new(),
    }
}

/// JA particles of `T:Tank`, for comparing runs.
pub fn tank_contents(state: &SystemState<NestedParticle>) -> ParticleBag<NestedParticle> {
    state.bag(&id("T:Tank")).cloned().unwrap_or_default()
}

pub fn parameters_store(params: &[RecipeParams]) -> EnvStore {
    params.iter().enumerate().map(|(i, p)| (i.to_string(), params_value(p))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{node_rng, Run, TransitionEvent};
    use crate::graph::{has_hard, validate, Severity, ViolationCode};
    use crate::ja::system::total_atoms;
    use crate::ja::balance_transfer;
    use core::num::NonZeroU64;

    fn rng(seed: u64) -> Rng {
        node_rng(seed, &id("a:test"))
    }

    fn small(v: Variant) -> NestedConfig {
        let mut c = NestedConfig::new(v);
        if v != Variant::V {
            c.tanks = 4;
            c.grid_shape = Some((2, 2));
        }
        c.atoms_per_tank = 6;
        c.link_attempts_per_step = 3;
        c.decomp_attempts_per_step = 3;
        c
    }

    fn start(config: &NestedConfig, seed: u64) -> (Program<NestedParticle>, SystemState<NestedParticle>) {
        let p = program(config).unwrap();
        let s = initial_state(&p, config, &mut rng(seed)).unwrap();
        (p, s)
    }

    fn composite(code: &str) -> Composite {
        Composite::from_code(code).unwrap()
    }

    #[test]
    fn variants_validate_with_only_notation_warnings() {
        for v in Variant::ALL {
            let g = build_variant(v);
            let vs = validate(&g);
            assert!(!has_hard(&vs), "{v}: {vs:?}");
            assert!(vs.iter().all(|x| x.code == ViolationCode::NotationAbuse && x.severity == Severity::Warn));
            assert!(color_violations(&g).is_empty(), "{v}");
        }
        let abuse: Vec<String> = validate(&build_variant(Variant::I))
            .into_iter()
            .map(|v| v.location.to_string())
            .collect();
        assert_eq!(
            abuse,
            [
                "(a:JA_AChem_Update, T:Tank)",
                "(a:Swarm_Update, T:Swarm)",
                "(a:Transfer_Particles, T:Tank)",
                "(a:Update_Parameters, T:Swarm)",
            ]
        );
    }

    #[test]
    fn variant_shapes() {
        let iv = build_variant(Variant::IV);
        assert!(iv
            .node_ids()
            .all(|n| !["Collisions", "Update_Parameters", "Transfer_Particles"].contains(&n.label())));
        assert_eq!(build_variant(Variant::V), build_variant(Variant::VI));
        let ii = build_variant(Variant::II);
        assert!(!ii.contains(&id("a:Transfer_Particles")) && !ii.contains(&id("o:Collisions")));
        assert!(build_variant(Variant::I).contains(&id("a:Transfer_Particles")));
        assert_eq!("viii".parse::<Variant>().unwrap(), Variant::VIII);
        assert!("IX".parse::<Variant>().is_err());
    }

    #[test]
    fn crossing_an_owner_is_caught() {
        let mut b = GraphBuilder::new();
        b.node("o:Spy").owner("o:Spy", SWARM).node("T:Tank").owner("T:Tank", JA).node("V:shared");
        b.start("o:Spy").flow("o:Spy", "o:Spy");
        b.read("o:Spy", "T:Tank").rw("o:Spy", "V:shared");
        assert_eq!(color_violations(&b.build().unwrap()), [(id("o:Spy"), id("T:Tank"))]);
    }

    #[test]
    fn parameter_map_cases() {
        let map = ParameterMap::default();
        let empty = map.params(&TankStats::default());
        assert_eq!(empty, RecipeParams::from_array([10.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let tanks: BTreeMap<u32, Vec<&Composite>> = BTreeMap::new();
        assert_eq!(parameter_setting(&tanks, 2, &map).unwrap(), [empty, empty]);

        let a = composite("Ap00210");
        let b = composite("App0153");
        let mut tanks: BTreeMap<u32, Vec<&Composite>> = BTreeMap::new();
        tanks.insert(0, vec![&a, &b]);
        tanks.insert(1, vec![&a, &b]);
        let ps = parameter_setting(&tanks, 2, &map).unwrap();
        assert_eq!(ps[0], ps[1]);
        tanks.insert(5, vec![&a]);
        assert_eq!(parameter_setting(&tanks, 2, &map), Err(NestedError::UnknownTank(5)));

        for n in 0..40 {
            let mut last = f64::NEG_INFINITY;
            for k in 0..60 {
                let s = TankStats {
                    particles: n,
                    mean_atoms: f64::from(k) * 0.25,
                    mean_link: 0.1,
                    ..TankStats::default()
                };
                let p = map.params(&s);
                assert!(p.r >= last);
                assert!(p.vn <= p.vm && p.vm <= VM_MAX && (0.0..=1.0).contains(&p.c5));
                last = p.r;
            }
        }
    }

    fn ja_bag(items: &[(u32, &str)]) -> ParticleBag<NestedParticle> {
        items
            .iter()
            .map(|&(tank, code)| NestedParticle::Ja(JaParticle { tank, composite: composite(code) }))
            .collect()
    }

    #[test]
    fn collision_transfer_cases() {
        let bag = ja_bag(&[(0, "Ap00210"), (0, "App0153"), (0, "Ap00100"), (1, "Ap00300"), (2, "App0000")]);
        assert_eq!(collision_transfer(&bag, &[], 3).unwrap(), bag);
        let after = collision_transfer(&bag, &[(0, 1)], 3).unwrap();
        let of = |b: &ParticleBag<NestedParticle>, t| -> Vec<Composite> {
            let mut v: Vec<Composite> = tanks_of(b).get(&t).into_iter().flatten().map(|c| (*c).clone()).collect();
            v.sort_by_key(|c| c.key().to_string());
            v
        };
        let (want_a, want_b) = balance_transfer(of(&bag, 0), of(&bag, 1));
        let sorted = |mut v: Vec<Composite>| {
            v.sort_by_key(|c| c.key().to_string());
            v
        };
        assert_eq!(of(&after, 0), sorted(want_a));
        assert_eq!(of(&after, 1), sorted(want_b));
        assert_eq!(of(&after, 2), of(&bag, 2));
        let atoms = |b: &ParticleBag<NestedParticle>| -> u32 { tanks_of(b).values().flatten().map(|c| c.atoms()).sum() };
        assert_eq!(atoms(&after), atoms(&bag));
        assert_eq!(collision_transfer(&bag, &[(0, 3)], 3), Err(NestedError::UnknownTank(3)));
    }

    #[test]
    fn bad_configs() {
        let mut c = NestedConfig::new(Variant::V);
        c.tanks = 2;
        assert!(c.check().is_err());
        let mut c = NestedConfig::new(Variant::VIII);
        c.grid_shape = Some((3, 3));
        assert!(matches!(c.check(), Err(NestedError::Ja(JaError::GridShape { .. }))));
        let mut c = NestedConfig::new(Variant::I);
        c.map.count_scale = 0.0;
        assert!(c.check().is_err());
        assert!(NestedConfig::new(Variant::VIII).check().is_ok());
    }

    fn run_checked(config: &NestedConfig, seed: u64, steps: u64) -> SystemState<NestedParticle> {
        let (p, s) = start(config, seed);
        let total = total_atoms(&s);
        assert_eq!(total, u64::from(config.tanks * config.atoms_per_tank));
        let mut run = Run::new(&p, s, seed);
        run.run(NonZeroU64::new(steps), |_: &TransitionEvent, st| {
            assert_eq!(total_atoms(st), total);
        })
        .unwrap();
        run.into_state()
    }

    #[test]
    fn atoms_conserved_in_every_ja_variant() {
        for v in [Variant::I, Variant::II, Variant::V, Variant::VI, Variant::VII, Variant::VIII] {
            let mut config = small(v);
            config.swarm.collision_radius = 40.0;
            let end = run_checked(&config, 11, 40);
            assert!(!tank_contents(&end).is_empty(), "{v}");
        }
    }

    #[test]
    fn swarm_variants_keep_their_boids() {
        for v in [Variant::III, Variant::IV] {
            let mut config = small(v);
            config.swarm.collision_radius = 60.0;
            let end = run_checked(&config, 5, 30);
            assert_eq!(boids(end.bag(&id("T:Swarm")).unwrap()).len(), 4);
        }
    }

    #[test]
    fn collisions_move_particles_between_tanks() {
        let mut config = small(Variant::I);
        config.swarm.collision_radius = 1e6;
        let (p, s) = start(&config, 3);
        let mut run = Run::new(&p, s, 3);
        let mut moved = false;
        run.run(NonZeroU64::new(40), |ev, _| {
            if ev.node == id("a:Transfer_Particles") && ev.touched.contains(&id("T:Tank")) {
                moved = true;
            }
        })
        .unwrap();
        assert!(moved);
    }

    /// Tank contents after `rounds` JA updates.
    fn after_rounds(config: &NestedConfig, seed: u64, rounds: usize) -> ParticleBag<NestedParticle> {
        let (p, s) = start(config, seed);
        let mut run = Run::new(&p, s, seed);
        let mut done = 0;
        while done < rounds {
            let ev = run.step().unwrap();
            if ev.node == id("a:JA_AChem_Update") {
                done += 1;
            }
            if ev.node == id("o:Collisions") {
                let pairs = pairs_from(run.state().env(&id("V:transfers")).unwrap());
                assert!(pairs.is_empty());
            }
        }
        tank_contents(run.state())
    }

    #[test]
    fn without_collisions_i_matches_ii() {
        let mut one = small(Variant::I);
        one.swarm.collision_radius = 0.0;
        let two = NestedConfig {
            variant: Variant::II,
            ..one.clone()
        };
        for seed in [1, 2] {
            assert_eq!(after_rounds(&one, seed, 8), after_rounds(&two, seed, 8));
        }
    }

    #[test]
    fn parameters_follow_tanks() {
        let config = small(Variant::II);
        let (p, s) = start(&config, 9);
        let mut run = Run::new(&p, s, 9);
        run.run(NonZeroU64::new(5), |_, _| {}).unwrap();
        let st = run.state();
        let tanks = tank_contents(st);
        let want = parameter_setting(&tanks_of(&tanks), config.tanks, &config.map).unwrap();
        for b in boids(st.bag(&id("T:Swarm")).unwrap()) {
            assert_eq!(b.params, want[b.id as usize]);
        }
    }
}
