//! Swarm chemistry.
//!
//! Boids carry their own recipe parameters, flock against a snapshot of the
//! previous generation and swap parameters when they collide.

pub mod system;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::index;
use rand::Rng as _;

use crate::engine::Rng;
use crate::state::Particle;

pub use system::SwarmConfig;

pub type Vec2 = [f64; 2];

fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

pub fn norm(a: Vec2) -> f64 {
    libm::hypot(a[0], a[1])
}

/// Recipe parameters in file order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecipeParams {
    /// Perception radius.
    pub r: f64,
    /// Normal speed.
    pub vn: f64,
    /// Maximum speed.
    pub vm: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Stored and exchanged, never used by the update rules.
    pub c4: f64,
    pub c5: f64,
}

pub const VN_SLOT: usize = 1;
pub const VM_SLOT: usize = 2;

impl RecipeParams {
    pub fn to_array(&self) -> [f64; 8] {
        [self.r, self.vn, self.vm, self.c1, self.c2, self.c3, self.c4, self.c5]
    }

    pub fn from_array(a: [f64; 8]) -> RecipeParams {
        RecipeParams {
            r: a[0],
            vn: a[1],
            vm: a[2],
            c1: a[3],
            c2: a[4],
            c3: a[5],
            c4: a[6],
            c5: a[7],
        }
    }

    /// Copy with `Vn` lowered to `Vm` where it exceeds it.
    pub fn clamped(&self) -> RecipeParams {
        RecipeParams {
            vn: self.vn.min(self.vm),
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SwarmError {
    #[error("line {line}: expected 8 parameters, found {found}")]
    Arity { line: usize, found: usize },
    #[error("line {line}: negative count")]
    NegativeCount { line: usize },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// `COUNT * (p1, ..., p8)` per line; blank lines and `#` comments are skipped.
pub fn parse_recipe(text: &str) -> Result<Vec<(u32, RecipeParams)>, SwarmError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let syntax = |m: &str| SwarmError::Syntax {
            line,
            message: m.to_string(),
        };
        let (count, rest) = body.split_once('*').ok_or_else(|| syntax("missing `*`"))?;
        let count: i64 = count.trim().parse().map_err(|_| syntax("bad count"))?;
        if count < 0 {
            return Err(SwarmError::NegativeCount { line });
        }
        let inner = rest
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| syntax("parameters must be in parentheses"))?;
        let values: Vec<f64> = inner
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| syntax("bad number")))
            .collect::<Result<_, _>>()?;
        if values.len() != 8 {
            return Err(SwarmError::Arity {
                line,
                found: values.len(),
            });
        }
        let count = u32::try_from(count).map_err(|_| syntax("count too large"))?;
        out.push((count, RecipeParams::from_array(values.try_into().expect("length checked"))));
    }
    Ok(out)
}

pub fn format_recipe(recipe: &[(u32, RecipeParams)]) -> String {
    let mut s = String::new();
    for (count, p) in recipe {
        let vals: Vec<String> = p.to_array().iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(s, "{count} * ({})", vals.join(", "));
    }
    s
}

pub fn population(recipe: &[(u32, RecipeParams)]) -> u32 {
    recipe.iter().map(|(n, _)| n).sum()
}

/// The multi-species recipe used in the examples.
pub const PULSING_EYE: &str = "\
102 * (293.86, 17.06, 38.3, 0.81, 0.05, 0.83, 0.2, 0.9)
124 * (226.18, 19.27, 24.57, 0.95, 0.84, 13.09, 0.07, 0.8)
74 * (49.98, 8.44, 4.39, 0.92, 0.14, 96.92, 0.13, 0.51)
";

#[derive(Clone, Debug, PartialEq)]
pub struct Boid {
    pub id: u32,
    /// Generation of the last move.
    pub generation: u64,
    pub pos: Vec2,
    pub vel: Vec2,
    /// Acceleration built up by the flocking actions.
    pub accel: Vec2,
    /// Velocity to take at the next move.
    pub next_vel: Vec2,
    pub params: RecipeParams,
}

impl Boid {
    pub fn new(id: u32, params: RecipeParams) -> Boid {
        Boid {
            id,
            generation: 0,
            pos: [0.0; 2],
            vel: [0.0; 2],
            accel: [0.0; 2],
            next_vel: [0.0; 2],
            params,
        }
    }

    pub fn speed(&self) -> f64 {
        norm(self.vel)
    }
}

impl Particle for Boid {
    fn key(&self) -> String {
        format!("b{:06}@{}", self.id, self.generation)
    }
}

/// Whether `other` is a different boid within `boid.params.r`, boundary included.
pub fn perceives(boid: &Boid, other: &Boid) -> bool {
    other.id != boid.id && norm(sub(other.pos, boid.pos)) <= boid.params.r
}

pub fn neighbors<'a>(boid: &Boid, snapshot: impl IntoIterator<Item = &'a Boid>) -> Vec<&'a Boid> {
    snapshot.into_iter().filter(|o| perceives(boid, o)).collect()
}

/// Crowding denominator floor.
pub const SEPARATION_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Averages {
    pub x: Vec2,
    pub v: Vec2,
    pub s: Vec2,
    pub n: usize,
}

pub fn averages(boid: &Boid, neighbors: &[&Boid]) -> Option<Averages> {
    if neighbors.is_empty() {
        return None;
    }
    let n = neighbors.len() as f64;
    let (mut x, mut v, mut s) = ([0.0; 2], [0.0; 2], [0.0; 2]);
    for o in neighbors {
        x = add(x, o.pos);
        v = add(v, o.vel);
        let d = sub(boid.pos, o.pos);
        let d2 = (d[0] * d[0] + d[1] * d[1]).max(SEPARATION_EPS);
        s = add(s, scale(d, 1.0 / d2));
    }
    Some(Averages {
        x: scale(x, 1.0 / n),
        v: scale(v, 1.0 / n),
        s: scale(s, 1.0 / n),
        n: neighbors.len(),
    })
}

pub fn cohesion(boid: &Boid, avg: &Averages) -> Vec2 {
    scale(sub(avg.x, boid.pos), boid.params.c1)
}

pub fn alignment(boid: &Boid, avg: &Averages) -> Vec2 {
    scale(sub(avg.v, boid.vel), boid.params.c2)
}

pub fn separation(boid: &Boid, avg: &Averages) -> Vec2 {
    scale(avg.s, boid.params.c3)
}

/// Both components uniform in `[-bound, bound]`.
pub fn random_walk(bound: f64, rng: &mut Rng) -> Vec2 {
    [rng.gen_range(-bound..=bound), rng.gen_range(-bound..=bound)]
}

/// Cohesion, alignment, separation and whim, summed.
pub fn flock_accel(boid: &Boid, avg: &Averages, whim: f64, rng: &mut Rng) -> Vec2 {
    let a = add(add(cohesion(boid, avg), alignment(boid, avg)), separation(boid, avg));
    add(a, random_walk(whim, rng))
}

/// Apply `a`, cap at `Vm`, then pull toward `Vn` by `c5`. A zero speed
/// before the last step gets a random heading.
pub fn pacekeep(v: Vec2, a: Vec2, p: &RecipeParams, rng: &mut Rng) -> Vec2 {
    let mut w = add(v, a);
    let s = norm(w);
    if s > 0.0 {
        w = scale(w, (p.vm / s).min(1.0));
    }
    let s = norm(w);
    if s == 0.0 {
        let theta = rng.gen_range(0.0..core::f64::consts::TAU);
        return scale([libm::cos(theta), libm::sin(theta)], p.c5 * p.vn);
    }
    add(scale(w, p.c5 * p.vn / s), scale(w, 1.0 - p.c5))
}

/// Swap `k` random parameter slots, `k` uniform in `1..=8`. A swap that
/// would leave either side with `Vn > Vm` is skipped.
pub fn exchange_params(a: &RecipeParams, b: &RecipeParams, rng: &mut Rng) -> (RecipeParams, RecipeParams) {
    let k = rng.gen_range(1..=8);
    let mut slots = index::sample(rng, 8, k).into_vec();
    slots.sort_unstable();
    let (mut x, mut y) = (a.to_array(), b.to_array());
    for s in slots {
        let (mut nx, mut ny) = (x, y);
        core::mem::swap(&mut nx[s], &mut ny[s]);
        let ok = |p: &[f64; 8]| p[VN_SLOT] <= p[VM_SLOT];
        if (s == VN_SLOT || s == VM_SLOT) && !(ok(&nx) && ok(&ny)) {
            continue;
        }
        x = nx;
        y = ny;
    }
    (RecipeParams::from_array(x), RecipeParams::from_array(y))
}

/// Unordered pairs closer than `radius`, ascending by id.
pub fn collisions<'a>(boids: impl IntoIterator<Item = &'a Boid>, radius: f64) -> Vec<(u32, u32)> {
    let mut bs: Vec<&Boid> = boids.into_iter().collect();
    bs.sort_by_key(|b| b.id);
    let mut out = Vec::new();
    for (i, a) in bs.iter().enumerate() {
        for b in &bs[i + 1..] {
            if norm(sub(a.pos, b.pos)) < radius {
                out.push((a.id, b.id));
            }
        }
    }
    out
}

/// Exchange parameters across each pair in order, then cap both speeds at
/// the new `Vm`. Pairs naming an absent boid are skipped.
pub fn exchange_on_collisions(boids: &mut BTreeMap<u32, Boid>, pairs: &[(u32, u32)], rng: &mut Rng) {
    for &(a, b) in pairs {
        let (Some(pa), Some(pb)) = (boids.get(&a), boids.get(&b)) else {
            continue;
        };
        let (na, nb) = exchange_params(&pa.params, &pb.params, rng);
        for (i, params) in [(a, na), (b, nb)] {
            let boid = boids.get_mut(&i).expect("present");
            boid.params = params;
            boid.vel = clamp_speed(boid.vel, params.vm);
        }
    }
}

pub(crate) fn clamp_speed(v: Vec2, vm: f64) -> Vec2 {
    let s = norm(v);
    if s > vm && s > 0.0 {
        scale(v, vm / s)
    } else {
        v
    }
}

pub(crate) fn step_position(pos: Vec2, vel: Vec2, dt: f64) -> Vec2 {
    add(pos, scale(vel, dt))
}
