//! Event logs, state snapshots and swarm frames.

use std::io::{self, Write};

use metachem_core::engine::TransitionEvent;
use metachem_core::graph::NodeId;
use metachem_core::ja::system::composite_value;
use metachem_core::ja::JaParticle;
use metachem_core::nested::NestedParticle;
use metachem_core::state::{Carries, EnvStore, EnvValue, Particle, SystemState};
use metachem_core::stringcat::StrParticle;
use metachem_core::swarm::Boid;
use serde_json::{json, Map, Value};

/// Chemistry-supplied serializer for snapshots.
pub trait ParticleJson {
    fn to_json(&self) -> Value;
}

impl ParticleJson for StrParticle {
    fn to_json(&self) -> Value {
        json!({ "tank": self.tank, "text": self.text })
    }
}

impl ParticleJson for JaParticle {
    fn to_json(&self) -> Value {
        json!({ "tank": self.tank, "composite": env_json(&composite_value(&self.composite)) })
    }
}

impl ParticleJson for Boid {
    fn to_json(&self) -> Value {
        json!({
            "id": self.id,
            "generation": self.generation,
            "pos": self.pos,
            "vel": self.vel,
            "params": self.params.to_array(),
        })
    }
}

impl ParticleJson for NestedParticle {
    fn to_json(&self) -> Value {
        match self {
            NestedParticle::Ja(j) => j.to_json(),
            NestedParticle::Boid(b) => b.to_json(),
        }
    }
}

pub fn env_json(v: &EnvValue) -> Value {
    match v {
        EnvValue::Num(x) => json!(x),
        EnvValue::Str(s) => json!(s),
        EnvValue::Vec2(xy) => json!(xy),
        EnvValue::List(xs) => Value::Array(xs.iter().map(env_json).collect()),
        EnvValue::Record(r) => Value::Object(r.iter().map(|(k, v)| (k.clone(), env_json(v))).collect()),
    }
}

fn store_json(s: &EnvStore) -> Value {
    Value::Object(s.iter().map(|(k, v)| (k.clone(), env_json(v))).collect())
}

pub fn event_json(ev: &TransitionEvent) -> Value {
    json!({
        "step": ev.step,
        "node": ev.node.to_string(),
        "p": ev.p,
        "r": ev.r,
        "gate": ev.gate,
        "containers_touched": ev.touched.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "next": ev.next.as_ref().map(ToString::to_string),
    })
}

/// One JSON record per line.
pub struct EventLog<W: Write> {
    out: W,
}

impl<W: Write> EventLog<W> {
    pub fn new(out: W) -> Self {
        EventLog { out }
    }

    pub fn record(&mut self, ev: &TransitionEvent) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &event_json(ev))?;
        self.out.write_all(b"\n")
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// The whole system state: pointer, halt flag, every bag with counts and
/// every environment store.
pub fn snapshot_json<P: Particle + ParticleJson>(state: &SystemState<P>, meta: Value) -> Value {
    let mut containers = Map::new();
    for (id, bag) in state.particle_containers() {
        let items: Vec<Value> = bag
            .iter()
            .map(|(p, n)| json!({ "key": p.key(), "count": n, "particle": p.to_json() }))
            .collect();
        containers.insert(id.to_string(), json!({ "size": bag.len(), "particles": items }));
    }
    for (id, store) in state.environments() {
        containers.insert(id.to_string(), json!({ "vars": store_json(store) }));
    }
    json!({
        "meta": meta,
        "current": state.current.to_string(),
        "halted": state.halted,
        "containers": containers,
    })
}

pub const FRAME_HEADER: [&str; 14] = ["step", "boid_id", "x", "y", "vx", "vy", "R", "Vn", "Vm", "c1", "c2", "c3", "c4", "c5"];

/// Frames CSV, one row per boid per sampled step.
pub struct FrameWriter<W: Write> {
    csv: csv::Writer<W>,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut csv = csv::Writer::from_writer(out);
        csv.write_record(FRAME_HEADER)?;
        Ok(FrameWriter { csv })
    }

    pub fn frame<'a>(&mut self, step: u64, boids: impl IntoIterator<Item = &'a Boid>) -> csv::Result<()> {
        let mut bs: Vec<&Boid> = boids.into_iter().collect();
        bs.sort_by_key(|b| b.id);
        for b in bs {
            let mut row = vec![step.to_string(), b.id.to_string()];
            row.extend([b.pos[0], b.pos[1], b.vel[0], b.vel[1]].iter().map(f64::to_string));
            row.extend(b.params.to_array().iter().map(f64::to_string));
            self.csv.write_record(&row)?;
        }
        Ok(())
    }

    pub fn finish(self) -> io::Result<W> {
        self.csv.into_inner().map_err(|e| e.into_error())
    }
}

/// Boids held in `container`.
pub fn boids_in<'a, P: Particle + Carries<Boid>>(state: &'a SystemState<P>, container: &NodeId) -> Vec<&'a Boid> {
    state
        .bag(container)
        .map(|bag| bag.instances().filter_map(|p| Carries::<Boid>::view(p)).collect())
        .unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRow {
    pub step: u64,
    pub boid_id: u32,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub params: [f64; 8],
}

/// Parse a frames CSV, checking the header and every field.
pub fn read_frames(text: &str) -> Result<Vec<FrameRow>, String> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(FRAME_HEADER.iter().copied()) {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let bad = |f: usize| format!("row {}: bad field {}", i + 1, FRAME_HEADER[f]);
        let num = |f: usize| rec[f].parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(f));
        let mut params = [0.0; 8];
        for (k, p) in params.iter_mut().enumerate() {
            *p = num(6 + k)?;
        }
        rows.push(FrameRow {
            step: rec[0].parse().map_err(|_| bad(0))?,
            boid_id: rec[1].parse().map_err(|_| bad(1))?,
            pos: [num(2)?, num(3)?],
            vel: [num(4)?, num(5)?],
            params,
        });
    }
    Ok(rows)
}
