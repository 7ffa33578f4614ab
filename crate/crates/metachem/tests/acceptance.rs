//! One pass/fail line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the output.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use metachem::core::engine::{node_rng, run_program, Behavior, Behaviors, EngineError, Program, Rng, Run, RunConfig};
use metachem::core::state::LocalState;
use metachem::core::graph::{validate, GraphBuilder, NodeId, NodeKind, Severity, ViolationCode};
use metachem::core::ja::census::atoms;
use metachem::core::ja::link::{alignment, best_pair, strength};
use metachem::core::ja::matrix::{eigen_residual, hermitian_eig3, jordan_product, Mat3};
use metachem::core::ja::system::total_atoms;
use metachem::core::ja::JaParticle;
use metachem::core::nested::{self, build_variant, color_violations, tank_contents, NestedConfig, NestedParticle, Variant};
use metachem::core::state::{Particle, ParticleBag, SystemState};
use metachem::core::stringcat::{self, StrParticle, StringCatConfig};
use metachem::core::swarm::{self, norm, parse_recipe, Boid, SwarmConfig, PULSING_EYE};
use metachem::core::ja;
use metachem::builtin::SHIPPED;
use metachem::records::{read_frames, snapshot_json, ParticleJson};
use serde_json::json;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn id(s: &str) -> NodeId {
    NodeId::of_name(s)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metachem"))
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let out = bin().arg("enumerate-atoms").output().map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let field = |line: &str, key: &str| -> Option<i64> {
        let words: Vec<&str> = line.split_whitespace().collect();
        words.iter().position(|w| *w == key).and_then(|i| words.get(i + 1)?.trim_start_matches('+').parse().ok())
    };
    let line = |prefix: &str| text.lines().find(|l| l.starts_with(prefix)).unwrap_or("");
    let count = line("# count");
    let classes = line("# eigen_classes");
    let hermitian = field(line("# hermitian"), "hermitian");
    let (atoms, reference, delta) = (field(count, "count"), field(count, "reference"), field(count, "delta"));
    let k = field(classes, "eigen_classes");
    ensure(out.status.success(), format!("exit {:?}", out.status.code()))?;
    ensure(k == Some(66), format!("classes {k:?}, reference 66"))?;
    ensure(
        atoms == Some(14580) && reference == Some(14574) && delta == Some(6) && hermitian == Some(19683),
        format!("count line `{count}`"),
    )?;
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "classes 66 = reference 66; atoms 14580 vs reference 14574 (delta +6), upper bound 19683; {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let p = Program::new(stringcat::build_micro_process(), &stringcat::micro_behaviors()).map_err(|e| e.to_string())?;
    let want: ParticleBag<StrParticle> = [StrParticle::new(0, "prex"), StrParticle::new(0, "xpost")].into_iter().collect();
    for seed in 0..20 {
        let mut s = p.fresh_state();
        s.add_particles(&id("S:composite"), &[StrParticle::new(0, "prexxpost")].into_iter().collect())
            .map_err(|e| e.to_string())?;
        s.current = id("a:split");
        let mut run = Run::new(&p, s, seed);
        let ev = run.step().map_err(|e| e.to_string())?;
        ensure(ev.gate, "a:split gate closed")?;
        let got = run.state().bag(&id("S:composite")).map_err(|e| e.to_string())?;
        ensure(got == &want, format!("seed {seed}: got {:?}", got.keys().collect::<Vec<_>>()))?;
    }
    Ok("a:split on {prexxpost} gives {prex, xpost} for seeds 0..20".into())
}

fn criterion_3() -> Outcome {
    let config = NestedConfig::new(Variant::V);
    let p = nested::program(&config).map_err(|e| e.to_string())?;
    let s = nested::initial_state(&p, &config, &mut node_rng(3, &id("T:InitTank"))).map_err(|e| e.to_string())?;
    let total = total_atoms(&s);
    ensure(total == 16, format!("initial atoms {total}"))?;
    let mut run = Run::new(&p, s, 3);
    let mut breaks = 0;
    for _ in 0..10_000 {
        run.step().map_err(|e| e.to_string())?;
        if total_atoms(run.state()) != total {
            breaks += 1;
        }
    }
    ensure(breaks == 0, format!("{breaks} steps changed the atom total"))?;
    // the same check inside the JA loop itself, at every inner transition
    let ja_config = config.ja_config();
    let jp = ja::system::program::<JaParticle>(&ja::JaConfig {
        transfer_mode: ja::TransferMode::Single,
        ..ja_config
    })
    .map_err(|e| e.to_string())?;
    let js = ja::system::initial_state(&jp, &ja_config, &mut node_rng(3, &id("T:Init")));
    let mut inner = Run::new(&jp, js, 3);
    let mut linked = 0;
    for _ in 0..10_000 {
        let ev = inner.step().map_err(|e| e.to_string())?;
        ensure(total_atoms(inner.state()) == 16, format!("inner step {} changed the total", ev.step))?;
        linked = linked.max(16 - inner.state().total_particles() as u64);
    }
    ensure(linked > 0, "no links formed, conservation is vacuous")?;
    let particles = tank_contents(run.state()).len();
    Ok(format!(
        "variant V, 16 atoms: total 16 at all 10^4 outer and 10^4 inner transitions ({particles} particles at the end)"
    ))
}

struct Fixed(f64);

impl<P: Particle> Behavior<P> for Fixed {
    fn check(&self, _: &LocalState<P>, _: &mut Rng) -> f64 {
        self.0
    }
}

struct PushToTank;

impl Behavior<StrParticle> for PushToTank {
    fn push(&self, io: &mut metachem::core::engine::Access<'_, StrParticle>, _: &mut LocalState<StrParticle>) -> Result<(), EngineError> {
        io.add(&id("T:tank"), &[StrParticle::new(0, "x")].into_iter().collect())
    }
}

fn contents<P: Particle + ParticleJson>(s: &SystemState<P>) -> String {
    snapshot_json(s, json!(null))["containers"].to_string()
}

/// Steps `run`, comparing state bytes around decisions and terminations
/// and checking local state is empty after every transition.
fn audit<P: Particle + ParticleJson>(run: &mut Run<'_, P>, steps: usize) -> Result<(usize, usize), String> {
    let (mut controls, mut locals) = (0, 0);
    for _ in 0..steps {
        if run.state().halted {
            break;
        }
        let kind = run.state().current.kind();
        let before = matches!(kind, NodeKind::Decision | NodeKind::Termination).then(|| contents(run.state()));
        let ev = run.step().map_err(|e| e.to_string())?;
        if let Some(b) = before {
            ensure(b == contents(run.state()), format!("{} altered the state", ev.node))?;
            controls += 1;
        }
        ensure(run.local_is_empty(), format!("local state left after {}", ev.node))?;
        locals += 1;
    }
    Ok((controls, locals))
}

fn criterion_4() -> Outcome {
    let mut parts = Vec::new();

    // (a) gate rate
    let p = 0.3;
    let n = 100_000u64;
    let mut b = GraphBuilder::new();
    b.node("a:gate").start("a:gate").flow("a:gate", "a:gate");
    let mut bs: Behaviors<StrParticle> = Behaviors::new();
    bs.insert("gate", Fixed(p));
    let gate = Program::new(b.build().map_err(|e| e.to_string())?, &bs).map_err(|e| e.to_string())?;
    let (_, log) = run_program(&gate, gate.fresh_state(), &RunConfig::new(11, Some(n)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let passes = log.iter().filter(|e| e.gate).count() as f64;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    let z = (passes - n as f64 * (1.0 - p)) / sd;
    ensure(z.abs() < 3.0, format!("(a) pass rate {} is {z:.2} sd from 0.7", passes / n as f64))?;
    parts.push(format!("(a) rate {:.4} at p=0.3, z={z:.2}", passes / n as f64));

    // (b) and (c) on real chemistries
    let sc = StringCatConfig {
        copies: 4,
        tanks: 3,
        reactions_per_step: 6,
        time_bound: Some(30),
        ..StringCatConfig::default()
    };
    let sp = stringcat::program(&sc).map_err(|e| e.to_string())?;
    let (c1, l1) = audit(&mut Run::new(&sp, stringcat::initial_state(&sp, &sc), 5), 200_000)?;
    let jc = ja::JaConfig {
        tanks: 2,
        atoms_per_tank: 8,
        transfer_mode: ja::TransferMode::Random,
        time_bound: Some(20),
        ..ja::JaConfig::default()
    };
    let jp = ja::system::program::<JaParticle>(&jc).map_err(|e| e.to_string())?;
    let js = ja::system::initial_state(&jp, &jc, &mut node_rng(5, &id("T:Init")));
    let (c2, l2) = audit(&mut Run::new(&jp, js, 5), 200_000)?;
    let sw = swarm::system::program::<Boid>(&SwarmConfig::default()).map_err(|e| e.to_string())?;
    let recipe = parse_recipe("20 * (40, 2, 4, 0.5, 0.5, 0.5, 0, 0.5)").map_err(|e| e.to_string())?;
    let ss = swarm::system::initial_state(&sw, &recipe).map_err(|e| e.to_string())?;
    let (c3, l3) = audit(&mut Run::new(&sw, ss, 5), 300)?;
    ensure(c1 > 0 && c2 > 0, "no decisions exercised")?;
    parts.push(format!("(b) {} decision/termination steps byte-identical", c1 + c2 + c3));
    parts.push(format!("(c) local empty after {} transitions", l1 + l2 + l3));

    // (d) capability
    let mut b = GraphBuilder::new();
    b.node("a:act").node("T:tank").start("a:act").flow("a:act", "a:act").give("a:act", "T:tank");
    let mut bs = Behaviors::new();
    bs.insert("act", PushToTank);
    let g = b.build().map_err(|e| e.to_string())?;
    ensure(
        validate(&g).iter().any(|v| v.code == ViolationCode::AccessPush && v.severity == Severity::Hard),
        "(d) validate missed ACCESS_PUSH",
    )?;
    let cp = Program::new_unchecked(g, &bs).map_err(|e| e.to_string())?;
    let mut run = Run::new(&cp, cp.fresh_state(), 0);
    match run.step() {
        Err(EngineError::Capability { .. }) => {}
        other => return Err(format!("(d) expected CAPABILITY, got {other:?}")),
    }
    ensure(run.state().bag(&id("T:tank")).map(|b| b.is_empty()).unwrap_or(false), "(d) tank was modified")?;
    parts.push("(d) CAPABILITY on action push to tank".into());

    // (e) equal seeds
    let logs = |seed| {
        let s = stringcat::initial_state(&sp, &sc);
        run_program(&sp, s, &RunConfig::new(seed, Some(5000)).unwrap()).map(|(_, l)| l)
    };
    let (a, b2, c) = (logs(9).map_err(|e| e.to_string())?, logs(9).map_err(|e| e.to_string())?, logs(10).map_err(|e| e.to_string())?);
    ensure(a == b2, "(e) equal seeds gave different logs")?;
    ensure(a != c, "(e) different seeds gave equal logs")?;
    parts.push("(e) equal-seed logs identical".into());
    Ok(parts.join("; "))
}

fn criterion_5() -> Outcome {
    let all: Vec<Mat3> = atoms().collect();
    let eig: Vec<_> = all.iter().map(hermitian_eig3).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let (mut res, mut mu) = (0.0f64, 0.0f64);
    for (m, e) in all.iter().zip(&eig) {
        res = res.max(eigen_residual(m, e));
        mu = mu.max((e.mu.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(res <= 1e-9, format!("residual {res:e}"))?;
    ensure(mu <= 1e-12, format!("mu sum error {mu:e}"))?;
    let n = all.len();
    let mut herm = 0.0f64;
    for k in 0..10_000 {
        let (i, j) = ((k * 7919) % n, (k * 104_729 + 13) % n);
        let p = jordan_product(&all[i], &all[j]);
        ensure(p.is_hermitian(1e-12), format!("product {i},{j} not Hermitian"))?;
        for u in &eig[i].vectors {
            for v in &eig[j].vectors {
                let a = alignment(u, v);
                ensure((0.0..=1.0).contains(&a), format!("alignment {a}"))?;
            }
        }
        let (_, _, a) = best_pair(&eig[i], &eig[j]);
        ensure((0.0..=1.0).contains(&a), format!("best alignment {a}"))?;
        herm += 1.0;
    }
    let peak = strength(0.4, 0.4);
    let want = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    ensure((peak - want).abs() <= 1e-12, format!("strength {peak} vs {want}"))?;
    Ok(format!(
        "{n} atoms: max residual {res:.1e}, max |sum mu - 1| {mu:.1e}; {herm} products Hermitian; alignments in [0,1]; peak strength 1/sqrt(2 pi)"
    ))
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let frames = dir.path().join("frames.csv");
    let recipe = concat!(env!("CARGO_MANIFEST_DIR"), "/recipes/pulsing_eye.txt");
    let started = Instant::now();
    let out = bin()
        .args(["run", "swarm", "--seed", "1", "--recipe", recipe, "--steps", "100", "--frames-every", "10", "--frames-out"])
        .arg(&frames)
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(out.status.success(), format!("run failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    let text = std::fs::read_to_string(&frames).map_err(|e| e.to_string())?;
    let rows = read_frames(&text)?;
    let mut steps: Vec<u64> = rows.iter().map(|r| r.step).collect();
    steps.dedup();
    ensure(steps == (0..=100).step_by(10).collect::<Vec<_>>(), format!("frame steps {steps:?}"))?;
    for s in &steps {
        let block: Vec<_> = rows.iter().filter(|r| r.step == *s).collect();
        let ids: std::collections::BTreeSet<u32> = block.iter().map(|r| r.boid_id).collect();
        ensure(block.len() == 300 && ids.len() == 300, format!("step {s}: {} rows", block.len()))?;
    }
    let worst = rows
        .iter()
        .map(|r| norm(r.vel) - r.params[2])
        .fold(f64::NEG_INFINITY, f64::max);
    ensure(worst <= 1e-9, format!("speed exceeds Vm by {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;

    // c5 = 1, whim off, exchange off: every speed is Vn after one generation
    let mut recipe = parse_recipe(PULSING_EYE).map_err(|e| e.to_string())?;
    for (_, p) in &mut recipe {
        p.c5 = 1.0;
    }
    let config = SwarmConfig {
        whim: 0.0,
        exchange: false,
        ..SwarmConfig::default()
    };
    let p = swarm::system::program::<Boid>(&config).map_err(|e| e.to_string())?;
    let s = swarm::system::initial_state(&p, &recipe).map_err(|e| e.to_string())?;
    let mut run = Run::new(&p, s, 2);
    let mut err = 0.0f64;
    let mut seen = 0;
    swarm::system::run_generations(&mut run, 1, |g, st| {
        if g == 1 {
            for b in swarm::system::boids(st.bag(&id("S:n")).unwrap()) {
                err = err.max((b.speed() - b.params.vn).abs());
                seen += 1;
            }
        }
    })
    .map_err(|e| e.to_string())?;
    ensure(seen == 300 && err <= 1e-9, format!("{seen} boids, max |speed - Vn| {err:e}"))?;
    Ok(format!(
        "300 boids x 11 frames, max speed - Vm {worst:.1e}; c5=1 gives speed Vn (err {err:.1e}); {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn nested_run(config: &NestedConfig, seed: u64, ja_rounds: usize) -> Result<(ParticleBag<NestedParticle>, usize), String> {
    let p = nested::program(config).map_err(|e| e.to_string())?;
    let s = nested::initial_state(&p, config, &mut node_rng(seed, &id("T:InitTank"))).map_err(|e| e.to_string())?;
    let total = total_atoms(&s);
    let mut run = Run::new(&p, s, seed);
    let (mut done, mut collisions) = (0, 0);
    while done < ja_rounds {
        let ev = run.step().map_err(|e| e.to_string())?;
        ensure(total_atoms(run.state()) == total, format!("{} changed the atom total", ev.node))?;
        match ev.node.label() {
            "JA_AChem_Update" => done += 1,
            "Collisions" => {
                let store = run.state().env(&id("V:transfers")).map_err(|e| e.to_string())?;
                collisions += swarm::system::pairs_from(store).len();
            }
            _ => {}
        }
    }
    Ok((tank_contents(run.state()), collisions))
}

fn criterion_7() -> Outcome {
    let mut one = NestedConfig::new(Variant::I);
    one.swarm.collision_radius = 0.0;
    let two = NestedConfig {
        variant: Variant::II,
        ..one.clone()
    };
    for seed in [1, 2, 3] {
        let (a, hits) = nested_run(&one, seed, 10)?;
        let (b, _) = nested_run(&two, seed, 10)?;
        ensure(hits == 0, format!("seed {seed}: {hits} collisions"))?;
        ensure(a == b, format!("seed {seed}: I and II tanks differ"))?;
    }
    let mut conserved = Vec::new();
    for v in [Variant::I, Variant::II, Variant::V, Variant::VI, Variant::VII, Variant::VIII] {
        let mut c = NestedConfig::new(v);
        c.swarm.collision_radius = 20.0;
        nested_run(&c, 4, 10)?;
        conserved.push(v.roman());
    }
    for v in Variant::ALL {
        let bad = color_violations(&build_variant(v));
        ensure(bad.is_empty(), format!("variant {v} crosses colours: {bad:?}"))?;
    }
    ensure(build_variant(Variant::V) == build_variant(Variant::VI), "V and VI graphs differ")?;
    let (v, vi) = (NestedConfig::new(Variant::V), NestedConfig::new(Variant::VI));
    ensure(v.tanks == 1 && vi.tanks > 1, "V and VI configs do not differ in tank count")?;
    Ok(format!(
        "I = II without collisions (3 seeds); atoms conserved in {}; colour separation on all 8; V and VI share one graph, tanks {} vs {}",
        conserved.join(","),
        v.tanks,
        vi.tanks
    ))
}

fn criterion_8() -> Outcome {
    let mut names = Vec::new();
    for s in &SHIPPED {
        let g = s.parse().map_err(|e| format!("{}: {e}", s.file))?;
        let vs = validate(&g);
        let hard: Vec<_> = vs.iter().filter(|v| v.severity == Severity::Hard).collect();
        ensure(hard.is_empty(), format!("{}: {hard:?}", s.file))?;
        if s.name == "nested_macro" {
            let abuse = vs.iter().filter(|v| v.code == ViolationCode::NotationAbuse).count();
            ensure(abuse == 4, format!("nested graph gives {abuse} NOTATION_ABUSE warnings"))?;
        }
        names.push(s.name);
    }
    Ok(format!("{} files with zero hard violations; nested graph has exactly 4 NOTATION_ABUSE", names.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("atom enumeration", criterion_1),
        ("stringcat split example", criterion_2),
        ("mass conservation", criterion_3),
        ("engine semantics", criterion_4),
        ("JA numerics", criterion_5),
        ("swarm properties", criterion_6),
        ("nested coupling", criterion_7),
        ("graph validation corpus", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = f();
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
