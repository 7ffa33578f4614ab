//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metachem_core::engine::{node_rng, EngineError, Program, Run, TransitionEvent};
use metachem_core::graph::{has_hard, validate, NodeId, Severity};
use metachem_core::ja::census::{enumerate_atoms, REFERENCE_ATOM_COUNT, REFERENCE_CLASS_COUNT};
use metachem_core::ja::particle::atom_code;
use metachem_core::ja::{self, JaParticle};
use metachem_core::nested::{self, NestedParticle, Variant};
use metachem_core::state::{Carries, Particle, SystemState};
use metachem_core::stringcat::{self, StrParticle};
use metachem_core::swarm::{self, parse_recipe, Boid, PULSING_EYE};
use serde_json::{json, Value};

use crate::config::ConfigFile;
use crate::builtin;
use crate::graph_file::{parse_graph, to_dot};
use crate::records::{boids_in, snapshot_json, EventLog, FrameWriter, ParticleJson};

#[derive(Parser, Debug)]
#[command(name = "metachem", version, about = "Static graph artificial chemistry runtime")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a graph file. Exit 0 when clean, 1 on hard violations, 2 when unparsable.
    Validate { file: PathBuf },
    /// Run a chemistry and write its log, snapshot and frames.
    Run(RunArgs),
    /// Enumerate the JA atom set and cluster eigenvalues.
    EnumerateAtoms {
        /// Write the class CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render a graph file, or a built-in graph, as Graphviz DOT.
    ExportDot {
        #[arg(required_unless_present = "builtin", conflicts_with = "builtin")]
        file: Option<PathBuf>,
        /// One of the shipped graph names.
        #[arg(long)]
        builtin: Option<String>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Chemistry {
    Stringcat,
    Ja,
    Swarm,
    Nested,
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    #[arg(value_enum)]
    pub chemistry: Option<Chemistry>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop after this many outer transitions.
    #[arg(long)]
    pub max_transitions: Option<u64>,
    /// Time steps (stringcat, ja), generations (swarm) or loop rounds (nested).
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    /// Write a frame every N rounds. Implies a frames file.
    #[arg(long)]
    pub frames_every: Option<u64>,
    #[arg(long)]
    pub frames_out: Option<PathBuf>,
    #[arg(long)]
    pub log_out: Option<PathBuf>,
    #[arg(long)]
    pub snapshot_out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Cap applied when a run has neither a step count nor a transition limit.
pub const DEFAULT_MAX_TRANSITIONS: u64 = 100_000;
pub const DEFAULT_FRAMES: &str = "frames.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input files or arguments.
    #[error("{0}")]
    Usage(String),
    /// The run itself failed or a check did not pass.
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError::Domain(e.to_string())
    }
}

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Parse `args` (program name first) and run the command, writing reports
/// to `out`. Returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Validate { file } => cmd_validate(&file, out),
        Command::Run(args) => cmd_run(args, out).map(|_| 0),
        Command::EnumerateAtoms { csv } => cmd_enumerate_atoms(csv.as_deref(), out),
        Command::ExportDot { file, builtin, out: path } => {
            let g = match (file, builtin) {
                (Some(f), _) => parse_graph(&read(&f)?).map_err(usage)?,
                (None, Some(name)) => builtin::by_name(&name)
                    .ok_or_else(|| usage(format!("no built-in graph `{name}`; try one of {}", builtin::names().join(", "))))?
                    .graph(),
                (None, None) => return Err(usage("give a file or --builtin")),
            };
            let dot = to_dot(&g);
            match path {
                Some(p) => fs::write(p, dot)?,
                None => out.write_all(dot.as_bytes())?,
            }
            Ok(0)
        }
    }
}

pub fn cmd_validate(file: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let g = parse_graph(&read(file)?).map_err(|e| usage(format!("{}: {e}", file.display())))?;
    let vs = validate(&g);
    for v in &vs {
        writeln!(out, "{v}")?;
    }
    let hard = vs.iter().filter(|v| v.severity == Severity::Hard).count();
    writeln!(out, "{}: {hard} errors, {} warnings", file.display(), vs.len() - hard)?;
    Ok(if has_hard(&vs) { 1 } else { 0 })
}

pub fn cmd_enumerate_atoms(csv_path: Option<&Path>, out: &mut dyn Write) -> Result<i32, CliError> {
    let started = Instant::now();
    let census = enumerate_atoms().map_err(|e| CliError::Domain(e.to_string()))?;
    let classes = census.class_count();
    let delta = census.atoms as i64 - REFERENCE_ATOM_COUNT as i64;
    writeln!(out, "# hermitian {}", census.hermitian)?;
    writeln!(out, "# count {} reference {REFERENCE_ATOM_COUNT} delta {delta:+}", census.atoms)?;
    writeln!(
        out,
        "# eigen_classes {classes} reference {REFERENCE_CLASS_COUNT} (raw {}, signed {})",
        census.raw_classes.len(),
        census.mu_classes.len()
    )?;
    writeln!(out, "# runtime {:.2}s", started.elapsed().as_secs_f64())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| CliError::Io(io::Error::other(e));
    w.write_record(["class", "abs_mu1", "abs_mu2", "abs_mu3", "members", "example"]).map_err(io_err)?;
    for (i, c) in census.magnitude_classes.iter().enumerate() {
        let code = atom_code(&c.example).unwrap_or_default();
        let row = [i.to_string(), c.values[0].to_string(), c.values[1].to_string(), c.values[2].to_string(), c.members.to_string(), code];
        w.write_record(&row).map_err(io_err)?;
    }
    let table = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    match csv_path {
        Some(p) => fs::write(p, table)?,
        None => out.write_all(&table)?,
    }
    Ok(if classes == REFERENCE_CLASS_COUNT { 0 } else { 1 })
}

/// Result of a driven run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub transitions: u64,
    pub rounds: u64,
    pub halted: bool,
    pub particles: usize,
}

/// Step `run` until it halts, `max` transitions pass, or control has come
/// back to `head` `rounds` times. `sink` sees every event, and the round
/// number whenever control reaches `head`.
pub fn drive<P: Particle>(
    run: &mut Run<'_, P>,
    head: Option<&NodeId>,
    rounds: Option<u64>,
    max: Option<u64>,
    mut sink: impl FnMut(&TransitionEvent, &SystemState<P>, Option<u64>) -> Result<(), CliError>,
) -> Result<RunReport, CliError> {
    let mut transitions = 0;
    let mut arrivals: u64 = 0;
    let done = |arrivals: u64| match (head, rounds) {
        (Some(_), Some(n)) => arrivals > n,
        _ => false,
    };
    while !run.state().halted && max.is_none_or(|m| transitions < m) && !done(arrivals) {
        let ev = run.step()?;
        transitions += 1;
        let at_head = head.filter(|h| run.state().current == **h).map(|_| {
            arrivals += 1;
            arrivals - 1
        });
        sink(&ev, run.state(), at_head)?;
    }
    Ok(RunReport {
        transitions,
        rounds: arrivals.saturating_sub(1),
        halted: run.state().halted,
        particles: run.state().total_particles(),
    })
}

struct Outputs {
    log: Option<EventLog<BufWriter<fs::File>>>,
    frames: Option<(FrameWriter<BufWriter<fs::File>>, u64)>,
    /// Container the frames are drawn from.
    boids: NodeId,
}

impl Outputs {
    fn open(args: &RunArgs, boids: Option<NodeId>) -> Result<Outputs, CliError> {
        let log = match &args.log_out {
            Some(p) => Some(EventLog::new(BufWriter::new(fs::File::create(p)?))),
            None => None,
        };
        let frames = if boids.is_some() && (args.frames_every.is_some() || args.frames_out.is_some()) {
            let path = args.frames_out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_FRAMES));
            let every = args.frames_every.unwrap_or(1);
            if every == 0 {
                return Err(usage("--frames-every must be at least 1"));
            }
            let w = FrameWriter::new(BufWriter::new(fs::File::create(path)?)).map_err(|e| io::Error::other(e.to_string()))?;
            Some((w, every))
        } else {
            None
        };
        Ok(Outputs {
            log,
            frames,
            boids: boids.unwrap_or_else(|| NodeId::of_name("S:none")),
        })
    }

    fn event<P: Particle + Carries<Boid>>(&mut self, ev: &TransitionEvent, st: &SystemState<P>, round: Option<u64>) -> Result<(), CliError> {
        if let Some(log) = &mut self.log {
            log.record(ev)?;
        }
        if let (Some((w, every)), Some(r)) = (&mut self.frames, round) {
            if r % *every == 0 {
                w.frame(r, boids_in(st, &self.boids)).map_err(|e| io::Error::other(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        if let Some(log) = self.log {
            log.finish()?;
        }
        if let Some((w, _)) = self.frames {
            w.finish()?.flush()?;
        }
        Ok(())
    }
}

fn log_only(log: &mut Option<EventLog<BufWriter<fs::File>>>, ev: &TransitionEvent) -> Result<(), CliError> {
    if let Some(log) = log {
        log.record(ev)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish_run<P: Particle + ParticleJson>(
    args: &RunArgs,
    name: &str,
    seed: u64,
    report: &RunReport,
    state: &SystemState<P>,
    extra: Value,
    started: Instant,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if let Some(p) = &args.snapshot_out {
        let meta = json!({
            "chemistry": name,
            "seed": seed,
            "transitions": report.transitions,
            "rounds": report.rounds,
            "config": extra,
        });
        let text = serde_json::to_string_pretty(&snapshot_json(state, meta)).map_err(io::Error::other)?;
        fs::write(p, text + "\n")?;
    }
    writeln!(
        out,
        "{name}: steps={} rounds={} particles={} halted={} runtime={:.3}s",
        report.transitions,
        report.rounds,
        report.particles,
        report.halted,
        started.elapsed().as_secs_f64()
    )?;
    Ok(())
}

pub fn cmd_run(args: RunArgs, out: &mut dyn Write) -> Result<RunReport, CliError> {
    let file = match &args.config {
        Some(p) => ConfigFile::parse(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => ConfigFile::default(),
    };
    let chem = args.chemistry.ok_or_else(|| usage("missing chemistry: stringcat, ja, swarm or nested"))?;
    let seed = args.seed.or(file.run.seed).unwrap_or(0);
    let steps = args.steps.or(file.run.steps);
    let mut max = args.max_transitions.or(file.run.max_transitions);
    if steps.is_none() && max.is_none() {
        max = Some(DEFAULT_MAX_TRANSITIONS);
    }
    let args = RunArgs {
        frames_every: args.frames_every.or(file.run.frames_every),
        recipe: args.recipe.clone().or(file.run.recipe.clone().map(PathBuf::from)),
        variant: args.variant.clone().or(file.run.variant.clone()),
        ..args
    };
    let started = Instant::now();
    match chem {
        Chemistry::Stringcat => {
            let mut config = file.stringcat();
            config.time_bound = steps;
            let p = stringcat::program(&config)?;
            let state = stringcat::initial_state(&p, &config);
            let extra = json!({ "tanks": config.tanks, "copies": config.copies, "alphabet": config.alphabet });
            simple::<StrParticle>(&args, "stringcat", &p, state, seed, max, extra, started, out)
        }
        Chemistry::Ja => {
            let mut config = file.ja().map_err(usage)?;
            config.time_bound = steps;
            let p = ja::system::program::<JaParticle>(&config)?;
            let state = ja::system::initial_state(&p, &config, &mut node_rng(seed, &NodeId::of_name("T:Init")));
            let extra = json!({
                "tanks": config.tanks,
                "atoms_per_tank": config.atoms_per_tank,
                "transfer_mode": config.transfer_mode.word(),
            });
            simple::<JaParticle>(&args, "ja", &p, state, seed, max, extra, started, out)
        }
        Chemistry::Swarm => {
            let recipe_text = match &args.recipe {
                Some(p) => read(p)?,
                None => PULSING_EYE.to_string(),
            };
            let recipe = parse_recipe(&recipe_text).map_err(usage)?;
            let config = file.swarm();
            let p = swarm::system::program::<Boid>(&config)?;
            let state = swarm::system::initial_state(&p, &recipe).map_err(usage)?;
            let head = NodeId::of_name("o:Generation");
            let extra = json!({ "boids": swarm::population(&recipe), "whim": config.whim, "collision_radius": config.collision_radius });
            framed::<Boid>(&args, "swarm", &p, state, seed, &head, &NodeId::of_name("S:n"), steps, max, extra, started, out)
        }
        Chemistry::Nested => {
            let variant: Variant = args.variant.as_deref().unwrap_or("I").parse().map_err(usage)?;
            let config = file.nested(variant);
            config.check().map_err(usage)?;
            let p = nested::program(&config)?;
            let state = nested::initial_state(&p, &config, &mut node_rng(seed, &NodeId::of_name("T:InitTank"))).map_err(usage)?;
            let load = NodeId::of_name("s:LoadSwarm");
            let head = p.graph().targets(&load).map_err(usage)?.into_iter().next().ok_or_else(|| usage("variant graph has no loop"))?;
            let extra = json!({
                "variant": variant.roman(),
                "tanks": config.tanks,
                "atoms_per_tank": config.atoms_per_tank,
                "mapping": {
                    "count_scale": config.map.count_scale,
                    "atoms_scale": config.map.atoms_scale,
                    "link_scale": config.map.link_scale,
                },
            });
            framed::<NestedParticle>(&args, "nested", &p, state, seed, &head, &NodeId::of_name("T:Swarm"), steps, max, extra, started, out)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simple<P: Particle + ParticleJson>(
    args: &RunArgs,
    name: &str,
    program: &Program<P>,
    state: SystemState<P>,
    seed: u64,
    max: Option<u64>,
    extra: Value,
    started: Instant,
    out: &mut dyn Write,
) -> Result<RunReport, CliError> {
    if args.frames_every.is_some() || args.frames_out.is_some() {
        return Err(usage(format!("{name} has no boids to write frames for")));
    }
    let mut outputs = Outputs::open(args, None)?;
    let mut run = Run::new(program, state, seed);
    let report = drive(&mut run, None, None, max, |ev, _, _| log_only(&mut outputs.log, ev))?;
    outputs.finish()?;
    finish_run(args, name, seed, &report, run.state(), extra, started, out)?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn framed<P: Particle + ParticleJson + Carries<Boid>>(
    args: &RunArgs,
    name: &str,
    program: &Program<P>,
    state: SystemState<P>,
    seed: u64,
    head: &NodeId,
    boids: &NodeId,
    steps: Option<u64>,
    max: Option<u64>,
    extra: Value,
    started: Instant,
    out: &mut dyn Write,
) -> Result<RunReport, CliError> {
    let mut outputs = Outputs::open(args, Some(boids.clone()))?;
    let mut run = Run::new(program, state, seed);
    let report = drive(&mut run, Some(head), steps, max, |ev, st, round| outputs.event(ev, st, round))?;
    outputs.finish()?;
    finish_run(args, name, seed, &report, run.state(), extra, started, out)?;
    Ok(report)
}
