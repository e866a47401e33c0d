//! The `ngpm` command-line tool.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{bisect_particles, calibrate_equal_time, median, summarize, BenchRecord, BenchReport, ThresholdRow};
use crate::constraints::{CircuitConstraint, Likelihood, ShapeConstraint, SIGMA_CIRCUIT, TAU_CIRCUIT};
use crate::corpus::{save_target, AnnotatedTarget, CorpusManifest, CorpusSpec};
use crate::error::{Error, Result};
use crate::exec::ModelProgram;
use crate::geom::{Point, TurtleState};
use crate::guide::{Ablation, GuideConfig, ParameterStore};
use crate::models::{ChainConfig, ChainProgram, VineConfig, VineProgram};
use crate::raster::save_mask_png;
use crate::smc::{diagnostics_csv, smc_run, ResampleStrategy, Selection, SmcConfig};
use crate::trace::{read_trace, write_trace, TraceHeader};
use crate::train::{build_feature_cache, generate_dataset, train_guide, Task, TrainConfig, TrainingExample};

const DATASET_FORMAT: &str = "ngpm-dataset/1";
const DATASET_MANIFEST: &str = "dataset.json";
const RUN_MANIFEST: &str = "run.json";

#[derive(Parser, Debug)]
#[command(name = "ngpm", version, about = "Neurally-guided procedural models with SMC")]
pub struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Canvas size as WIDTHxHEIGHT.
    #[arg(long, global = true, default_value = "129x97", value_parser = parse_canvas)]
    pub canvas: (usize, usize),
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_canvas(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.parse().map_err(|_| "bad width")?;
    let h: usize = h.parse().map_err(|_| "bad height")?;
    if w < 8 || h < 8 {
        return Err("canvas must be at least 8x8".into());
    }
    Ok((w, h))
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate training traces with unguided SMC.
    GenData(GenDataArgs),
    /// Train guide networks on a generated dataset.
    Train(TrainArgs),
    /// Run SMC once and write the selected output.
    Sample(SampleArgs),
    /// Sweep particle counts over targets and variants.
    Bench(BenchArgs),
    /// Run a small pipeline twice and check the artifacts are identical.
    Selftest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProgramKind {
    Chain,
    Vine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodKind {
    Shape,
    Circuit,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ProgramKind::Chain)]
    pub program: ProgramKind,
    /// TOML file overriding the program's default parameters.
    #[arg(long)]
    pub program_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LikelihoodKind::Shape)]
    pub likelihood: LikelihoodKind,
    /// `synth:N`, `plus:N`, or a corpus manifest path (shape likelihood).
    #[arg(long, default_value = "synth:100")]
    pub corpus: String,
    /// Target fill fraction (circuit likelihood).
    #[arg(long, default_value_t = TAU_CIRCUIT)]
    pub tau: f64,
    #[arg(long, default_value_t = SIGMA_CIRCUIT)]
    pub sigma_circuit: f64,
    #[arg(long, default_value_t = 1.0)]
    pub oob_weight: f64,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub examples: u64,
    #[arg(long, default_value_t = 600, value_parser = clap::value_parser!(u64).range(1..))]
    pub particles: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    pub iterations: usize,
    #[arg(long, value_enum, default_value_t = Ablation::All)]
    pub ablation: Ablation,
    /// Mixture components per gaussian site.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub mixture: u64,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub eval_every: u64,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Index of the target within the corpus.
    #[arg(long, default_value_t = 0)]
    pub target: usize,
    /// Guide checkpoint; unguided when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub particles: u64,
    /// Choose the particle count so an unguided run takes about this many seconds.
    #[arg(long)]
    pub equal_time: Option<f64>,
    #[arg(long, value_enum, default_value_t = Selection::MaxWeight)]
    pub selection: Selection,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// `NAME=CHECKPOINT` for guided variants, or `unguided`.
    #[arg(long = "variant", required = true)]
    pub variants: Vec<String>,
    /// Comma-separated particle counts.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub particles: Vec<usize>,
    /// Repetitions per (variant, particle count, target).
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    /// Use only the first K corpus targets.
    #[arg(long)]
    pub targets: Option<usize>,
    /// Score thresholds for the particles-needed table.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<f64>,
    /// Largest particle count the threshold search may try.
    #[arg(long, default_value_t = 1000)]
    pub max_particles: usize,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
}

/// A constructed program.
pub enum AnyProgram {
    Chain(ChainProgram),
    Vine(VineProgram),
}

/// Constructed tasks for one likelihood family.
pub enum AnyTasks {
    Shape(Vec<Task<ShapeConstraint>>),
    Circuit(Vec<Task<CircuitConstraint>>),
}

macro_rules! dispatch {
    ($prog:expr, $tasks:expr, |$p:ident, $t:ident| $body:expr) => {
        match ($prog, $tasks) {
            (AnyProgram::Chain($p), AnyTasks::Shape($t)) => $body,
            (AnyProgram::Chain($p), AnyTasks::Circuit($t)) => $body,
            (AnyProgram::Vine($p), AnyTasks::Shape($t)) => $body,
            (AnyProgram::Vine($p), AnyTasks::Circuit($t)) => $body,
        }
    };
}

impl AnyProgram {
    pub fn build(kind: ProgramKind, config: Option<&Path>) -> Result<Self> {
        Ok(match kind {
            ProgramKind::Chain => AnyProgram::Chain(ChainProgram::new(match config {
                Some(p) => ChainConfig::load(p)?,
                None => ChainConfig::default(),
            })?),
            ProgramKind::Vine => AnyProgram::Vine(VineProgram::new(match config {
                Some(p) => VineConfig::load(p)?,
                None => VineConfig::default(),
            })?),
        })
    }

    fn from_toml(kind: ProgramKind, text: &str) -> Result<Self> {
        let err = |e: toml::de::Error| Error::parse("program config", e.to_string());
        Ok(match kind {
            ProgramKind::Chain => AnyProgram::Chain(ChainProgram::new(toml::from_str(text).map_err(err)?)?),
            ProgramKind::Vine => AnyProgram::Vine(VineProgram::new(toml::from_str(text).map_err(err)?)?),
        })
    }

    fn config_toml(&self) -> String {
        match self {
            AnyProgram::Chain(p) => toml::to_string(&p.cfg),
            AnyProgram::Vine(p) => toml::to_string(&p.cfg),
        }
        .expect("config serializes")
    }

    fn sites(&self) -> &[crate::exec::SiteDecl] {
        match self {
            AnyProgram::Chain(p) => p.sites(),
            AnyProgram::Vine(p) => p.sites(),
        }
    }
}

/// Circuit settings recorded with a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub tau: f64,
    pub sigma: f64,
    pub oob_weight: f64,
}

impl CircuitSpec {
    fn task(&self, width: usize, height: usize) -> Result<Task<CircuitConstraint>> {
        let mut c = CircuitConstraint::new(width, height);
        c.tau = self.tau;
        c.sigma = self.sigma;
        c.oob_weight = self.oob_weight;
        c.validate()?;
        Ok(circuit_task(c))
    }
}

/// Circuit programs start at the canvas center heading right.
pub fn circuit_task(constraint: CircuitConstraint) -> Task<CircuitConstraint> {
    let start = TurtleState::new(
        Point::new((constraint.width / 2) as f64, (constraint.height / 2) as f64),
        0.0,
        1.0,
    );
    Task {
        id: "circuit".into(),
        constraint,
        start,
    }
}

/// Shape tasks from annotated targets.
pub fn shape_tasks(targets: &[AnnotatedTarget]) -> Result<Vec<Task<ShapeConstraint>>> {
    targets
        .iter()
        .map(|t| {
            Ok(Task {
                id: t.source_id.clone(),
                constraint: ShapeConstraint::new(t.mask.clone())?,
                start: t.start_turtle(),
            })
        })
        .collect()
}

fn build_tasks(args: &ModelArgs, seed: u64, (w, h): (usize, usize)) -> Result<(AnyTasks, Vec<AnnotatedTarget>)> {
    match args.likelihood {
        LikelihoodKind::Shape => {
            let targets = CorpusSpec::parse(&args.corpus)?.load(seed, w, h)?;
            Ok((AnyTasks::Shape(shape_tasks(&targets)?), targets))
        }
        LikelihoodKind::Circuit => {
            let spec = CircuitSpec {
                tau: args.tau,
                sigma: args.sigma_circuit,
                oob_weight: args.oob_weight,
            };
            Ok((AnyTasks::Circuit(vec![spec.task(w, h)?]), Vec::new()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleEntry {
    pub id: usize,
    pub task: usize,
    pub task_id: String,
    pub seed: u64,
    pub trace: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub id: usize,
    pub task: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub program: ProgramKind,
    pub program_config: String,
    pub likelihood: LikelihoodKind,
    pub circuit: Option<CircuitSpec>,
    pub canvas: (usize, usize),
    pub corpus: String,
    pub seed: u64,
    pub gen_particles: usize,
    pub requested: usize,
    pub examples: Vec<ExampleEntry>,
    pub skipped: Vec<SkippedEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `run.json` with the flags, seed and a sha256 of every other file under `out`.
fn write_run_manifest(out: &Path, command: &str, flags: &[String], seed: u64) -> Result<()> {
    let mut files = BTreeMap::new();
    for entry in walkdir::WalkDir::new(out).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Config(format!("walking {}: {e}", out.display())))?;
        if !entry.file_type().is_file() || entry.file_name() == RUN_MANIFEST {
            continue;
        }
        let rel = entry.path().strip_prefix(out).unwrap_or(entry.path());
        let bytes = std::fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        files.insert(rel.to_string_lossy().replace('\\', "/"), sha256_hex(&bytes));
    }
    let manifest = serde_json::json!({
        "command": command,
        "flags": flags,
        "seed": seed,
        "files": files,
    });
    write_file(&out.join(RUN_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")
}

pub fn cmd_gen_data(cli: &Cli, args: &GenDataArgs) -> Result<()> {
    let program = AnyProgram::build(args.model.program, args.model.program_config.as_deref())?;
    let (tasks, targets) = build_tasks(&args.model, cli.seed, cli.canvas)?;
    let cfg = TrainConfig {
        num_examples: args.examples as usize,
        gen_particles: args.particles as usize,
        seed: cli.seed,
        ..Default::default()
    };
    let t0 = Instant::now();
    let (generated, task_ids) = dispatch!(&program, &tasks, |p, t| {
        (generate_dataset(p, t, &cfg)?, t.iter().map(|x| x.id.clone()).collect::<Vec<_>>())
    });
    let secs = t0.elapsed().as_secs_f64();

    let out = &cli.out;
    if !targets.is_empty() {
        let dir = out.join("targets");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut entries = Vec::new();
        for t in &targets {
            entries.push(save_target(t, &dir)?);
        }
        let m = CorpusManifest {
            entries,
            augment: false,
        };
        write_file(&dir.join("corpus.txt"), m.to_text(&dir))?;
    }
    let header_program = match args.model.program {
        ProgramKind::Chain => "chain",
        ProgramKind::Vine => "vine",
    };
    let mut entries = Vec::new();
    for ex in &generated.examples {
        let name = format!("examples/{:05}.trace", ex.id);
        let text = write_trace(
            &TraceHeader {
                program: header_program.into(),
                seed: ex.seed,
            },
            &ex.trace,
        );
        write_file(&out.join(&name), &text)?;
        write_file(
            &out.join(format!("examples/{:05}.ref", ex.id)),
            format!("{} {}\n", ex.task, task_ids[ex.task]),
        )?;
        entries.push(ExampleEntry {
            id: ex.id,
            task: ex.task,
            task_id: task_ids[ex.task].clone(),
            seed: ex.seed,
            trace: name,
            sha256: sha256_hex(text.as_bytes()),
        });
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        program: args.model.program,
        program_config: program.config_toml(),
        likelihood: args.model.likelihood,
        circuit: (args.model.likelihood == LikelihoodKind::Circuit).then(|| CircuitSpec {
            tau: args.model.tau,
            sigma: args.model.sigma_circuit,
            oob_weight: args.model.oob_weight,
        }),
        canvas: cli.canvas,
        corpus: args.model.corpus.clone(),
        seed: cli.seed,
        gen_particles: cfg.gen_particles,
        requested: cfg.num_examples,
        examples: entries,
        skipped: generated
            .skipped
            .iter()
            .map(|s| SkippedEntry {
                id: s.id,
                task: s.task,
                reason: s.reason.clone(),
            })
            .collect(),
    };
    write_file(&out.join(DATASET_MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!(
        "generated {} examples ({} skipped) in {:.2}s, {:.2} examples/s",
        generated.examples.len(),
        generated.skipped.len(),
        secs,
        generated.examples.len() as f64 / secs.max(1e-9)
    );
    Ok(())
}

/// A dataset read back from disk.
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub program: AnyProgram,
    pub tasks: AnyTasks,
    pub examples: Vec<TrainingExample>,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest: DatasetManifest = serde_json::from_str(&read_text(&dir.join(DATASET_MANIFEST))?)?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::parse("dataset", format!("unknown format {:?}", manifest.format)));
    }
    let program = AnyProgram::from_toml(manifest.program, &manifest.program_config)?;
    let (w, h) = manifest.canvas;
    let tasks = match manifest.likelihood {
        LikelihoodKind::Shape => {
            let targets = crate::corpus::load_corpus(&dir.join("targets/corpus.txt"), None)?;
            AnyTasks::Shape(shape_tasks(&targets)?)
        }
        LikelihoodKind::Circuit => {
            let spec = manifest
                .circuit
                .clone()
                .ok_or_else(|| Error::parse("dataset", "circuit dataset without circuit settings"))?;
            AnyTasks::Circuit(vec![spec.task(w, h)?])
        }
    };
    let mut examples = Vec::with_capacity(manifest.examples.len());
    for e in &manifest.examples {
        let corrupt = |err: Error| Error::CorruptExample {
            id: e.id,
            source: Box::new(err),
        };
        let text = read_text(&dir.join(&e.trace)).map_err(corrupt)?;
        if sha256_hex(text.as_bytes()) != e.sha256 {
            return Err(corrupt(Error::parse(&e.trace, "content hash differs from the manifest")));
        }
        let (_, trace) = read_trace(&text).map_err(corrupt)?;
        examples.push(TrainingExample {
            id: e.id,
            task: e.task,
            trace,
            seed: e.seed,
            particles: manifest.gen_particles,
        });
    }
    Ok(LoadedDataset {
        manifest,
        program,
        tasks,
        examples,
    })
}

pub fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let data = load_dataset(&args.data)?;
    if data.examples.is_empty() {
        return Err(Error::Config(format!("{} has no examples", args.data.display())));
    }
    let config = GuideConfig {
        features: args.ablation.feature_set(),
        mixture_k: args.mixture as usize,
        channels: 1,
        has_target: data.manifest.likelihood == LikelihoodKind::Shape,
        init_seed: cli.seed,
    };
    let mut store = ParameterStore::for_sites(config, data.program.sites())?;
    let cfg = TrainConfig {
        iterations: args.iterations,
        seed: cli.seed,
        eval_every: args.eval_every as usize,
        ..Default::default()
    };
    let t0 = Instant::now();
    let cache = dispatch!(&data.program, &data.tasks, |p, t| build_feature_cache(p, t, &data.examples, &store)?);
    let log = train_guide(&mut store, &cache, &cfg)?;
    store.save(&cli.out.join("checkpoint.json")).or_else(|_| {
        std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
        store.save(&cli.out.join("checkpoint.json"))
    })?;
    write_file(&cli.out.join("curve.csv"), log.curve_csv())?;
    let last = log.curve.last().expect("curve has the initial row");
    println!(
        "trained {} iterations in {:.2}s; heldout objective {:.4} -> {:.4}; {} steps skipped",
        args.iterations,
        t0.elapsed().as_secs_f64(),
        log.curve[0].heldout_obj,
        last.heldout_obj,
        log.skipped_steps
    );
    Ok(())
}

fn load_guide(path: Option<&Path>) -> Result<Option<ParameterStore>> {
    path.map(ParameterStore::load).transpose()
}

#[derive(Serialize)]
struct SampleResult {
    particles: usize,
    target: String,
    score: f64,
    log_weight: f64,
    log_marginal: f64,
    trace_sha256: String,
    checkpoint_sha256: Option<String>,
}

fn run_sample<P: ModelProgram, L: Likelihood>(
    cli: &Cli,
    args: &SampleArgs,
    program: &P,
    tasks: &[Task<L>],
    guide: Option<&ParameterStore>,
) -> Result<()> {
    let task = tasks.get(args.target).ok_or_else(|| {
        Error::Config(format!("target {} out of range ({} targets)", args.target, tasks.len()))
    })?;
    let mut cfg = SmcConfig {
        num_particles: args.particles as usize,
        resample: ResampleStrategy::EssThreshold(0.5),
        seed: cli.seed,
        selection: args.selection,
        parallel: false,
    };
    if let Some(budget) = args.equal_time {
        let cost = |n: usize| {
            let c = SmcConfig {
                num_particles: n,
                ..cfg.clone()
            };
            let t0 = Instant::now();
            let _ = smc_run(program, &task.constraint, None, &c, task.start);
            t0.elapsed().as_secs_f64()
        };
        cfg.num_particles = calibrate_equal_time(budget, 100_000, cost);
    }
    let t0 = Instant::now();
    let out = match smc_run(program, &task.constraint, guide, &cfg, task.start) {
        Ok(o) => o,
        Err(Error::DegeneratePopulation { step, diagnostics }) => {
            let path = cli.out.join("diagnostics.csv");
            write_file(&path, diagnostics_csv(&diagnostics))?;
            return Err(Error::Config(format!(
                "degenerate particle population at step {step}; diagnostics in {}",
                path.display()
            )));
        }
        Err(e) => return Err(e),
    };
    let secs = t0.elapsed().as_secs_f64();
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    save_mask_png(&out.canvas, &cli.out.join("sample.png"))?;
    write_file(&cli.out.join("diagnostics.csv"), diagnostics_csv(&out.diagnostics))?;
    write_file(
        &cli.out.join("sample.trace"),
        write_trace(&TraceHeader { program: program.name().into(), seed: cli.seed }, &out.trace),
    )?;
    let result = SampleResult {
        particles: cfg.num_particles,
        target: task.id.clone(),
        score: out.score,
        log_weight: out.log_weight,
        log_marginal: out.log_marginal,
        trace_sha256: out.trace.hash_hex(),
        checkpoint_sha256: guide.map(|g| g.hash_hex()),
    };
    write_file(&cli.out.join("result.json"), serde_json::to_string_pretty(&result)? + "\n")?;
    println!("N={} seconds={:.4} score={:?}", cfg.num_particles, secs, out.score);
    Ok(())
}

pub fn cmd_sample(cli: &Cli, args: &SampleArgs) -> Result<()> {
    let program = AnyProgram::build(args.model.program, args.model.program_config.as_deref())?;
    let (tasks, _) = build_tasks(&args.model, cli.seed, cli.canvas)?;
    let guide = load_guide(args.checkpoint.as_deref())?;
    dispatch!(&program, &tasks, |p, t| run_sample(cli, args, p, t, guide.as_ref()))
}

struct Variant {
    name: String,
    guide: Option<ParameterStore>,
    hash: Option<String>,
}

fn parse_variants(specs: &[String]) -> Vec<Variant> {
    let mut out = Vec::new();
    for s in specs {
        if s == "unguided" {
            out.push(Variant {
                name: s.clone(),
                guide: None,
                hash: None,
            });
            continue;
        }
        let Some((name, path)) = s.split_once('=') else {
            log::warn!("variant {s:?} is neither `unguided` nor NAME=CHECKPOINT; skipped");
            continue;
        };
        match ParameterStore::load(Path::new(path)) {
            Ok(store) => {
                let hash = store.hash_hex();
                out.push(Variant {
                    name: name.to_string(),
                    guide: Some(store),
                    hash: Some(hash),
                });
            }
            Err(e) => log::warn!("variant {name}: {e}; skipped"),
        }
    }
    out
}

const STREAM_BENCH: u64 = 0x4245;

/// One timed single-threaded SMC run per (target, rep) at `n` particles.
fn bench_condition<P: ModelProgram, L: Likelihood>(
    program: &P,
    tasks: &[Task<L>],
    variant: &Variant,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    use rayon::prelude::*;
    let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..reps).map(move |r| (t, r))).collect();
    jobs.par_iter()
        .map(|&(t, r)| {
            let run_seed = crate::rng::stream_id(&[seed, STREAM_BENCH, t as u64, r as u64]);
            let cfg = SmcConfig {
                num_particles: n,
                seed: run_seed,
                ..SmcConfig::new(n, run_seed)
            };
            let t0 = Instant::now();
            let out = smc_run(program, &tasks[t].constraint, variant.guide.as_ref(), &cfg, tasks[t].start)?;
            Ok(BenchRecord {
                variant: variant.name.clone(),
                particles: n,
                target: tasks[t].id.clone(),
                seed: run_seed,
                checkpoint_hash: variant.hash.clone(),
                seconds: t0.elapsed().as_secs_f64(),
                score: out.score,
            })
        })
        .collect()
}

fn run_bench<P: ModelProgram, L: Likelihood>(cli: &Cli, args: &BenchArgs, program: &P, tasks: &[Task<L>]) -> Result<()> {
    let variants = parse_variants(&args.variants);
    if variants.is_empty() {
        return Err(Error::Config("every benchmark variant was skipped".into()));
    }
    let tasks = &tasks[..args.targets.unwrap_or(tasks.len()).min(tasks.len())];
    let reps = args.reps as usize;
    let mut report = BenchReport::default();
    for v in &variants {
        for &n in &args.particles {
            report.records.extend(bench_condition(program, tasks, v, n.max(1), reps, cli.seed)?);
        }
    }
    report.summaries = summarize(&report.records, args.bootstrap, cli.seed);
    for v in &variants {
        for &threshold in &args.thresholds {
            let mut cache: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            let mut eval = |n: usize| -> f64 {
                if let Some(&(m, _)) = cache.get(&n) {
                    return m;
                }
                let recs = bench_condition(program, tasks, v, n, reps, cli.seed).unwrap_or_default();
                if recs.is_empty() {
                    return f64::NEG_INFINITY;
                }
                let m = median(&recs.iter().map(|r| r.score).collect::<Vec<_>>());
                let s = median(&recs.iter().map(|r| r.seconds).collect::<Vec<_>>());
                cache.insert(n, (m, s));
                m
            };
            let found = bisect_particles(args.max_particles, threshold, &mut eval);
            report.thresholds.push(ThresholdRow {
                variant: v.name.clone(),
                threshold,
                particles: found,
                median_seconds: found.and_then(|n| cache.get(&n).map(|c| c.1)),
            });
        }
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    write_file(&cli.out.join("records.csv"), report.records_csv())?;
    write_file(&cli.out.join("summary.csv"), report.summary_csv())?;
    write_file(&cli.out.join("thresholds.csv"), report.thresholds_csv())?;
    write_file(&cli.out.join("report.json"), report.to_json() + "\n")?;
    print!("{}", report.summary_csv());
    Ok(())
}

pub fn cmd_bench(cli: &Cli, args: &BenchArgs) -> Result<()> {
    let program = AnyProgram::build(args.model.program, args.model.program_config.as_deref())?;
    let (tasks, _) = build_tasks(&args.model, cli.seed, cli.canvas)?;
    dispatch!(&program, &tasks, |p, t| run_bench(cli, args, p, t))
}

/// Run manifests name input paths, so the pass directory is masked out.
fn collect_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let root = dir.display().to_string();
    let mut out = BTreeMap::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Config(format!("walking {}: {e}", dir.display())))?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(dir).unwrap_or(entry.path()).to_string_lossy().into_owned();
            let mut bytes = std::fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            if entry.file_name() == RUN_MANIFEST {
                bytes = String::from_utf8_lossy(&bytes).replace(&root, "<pass>").into_bytes();
            }
            out.insert(rel, bytes);
        }
    }
    Ok(out)
}

fn selftest_pass(root: &Path, seed: u64) -> Result<()> {
    let s = seed.to_string();
    let data = root.join("data");
    let train = root.join("train");
    let sample = root.join("sample");
    let ck = train.join("checkpoint.json");
    let steps: [Vec<String>; 3] = [
        vec!["gen-data", "--program", "chain", "--corpus", "synth:6", "--examples", "8", "--particles", "20"]
            .into_iter()
            .map(String::from)
            .chain(["--out".into(), data.display().to_string()])
            .collect(),
        vec!["train", "--iterations", "100", "--eval-every", "50", "--data"]
            .into_iter()
            .map(String::from)
            .chain([data.display().to_string(), "--out".into(), train.display().to_string()])
            .collect(),
        vec!["sample", "--program", "chain", "--corpus", "synth:6", "--target", "2", "--particles", "10", "--checkpoint"]
            .into_iter()
            .map(String::from)
            .chain([ck.display().to_string(), "--out".into(), sample.display().to_string()])
            .collect(),
    ];
    for step in steps {
        let mut argv: Vec<String> = vec!["ngpm".into(), "--seed".into(), s.clone(), "--canvas".into(), "48x48".into()];
        argv.extend(step);
        let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Config(e.to_string()))?;
        execute(&cli, &argv)?;
    }
    Ok(())
}

pub fn cmd_selftest(cli: &Cli) -> Result<bool> {
    let root = cli.out.join("selftest");
    let a = root.join("a");
    let b = root.join("b");
    for d in [&a, &b] {
        if d.exists() {
            std::fs::remove_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        selftest_pass(d, cli.seed)?;
    }
    let fa = collect_files(&a)?;
    let fb = collect_files(&b)?;
    let mut identical = fa.keys().eq(fb.keys());
    for (name, bytes) in &fa {
        let same = fb.get(name) == Some(bytes);
        if !same {
            println!("differs: {name}");
            identical = false;
        }
    }
    println!(
        "selftest: {} artifacts compared, {}",
        fa.len(),
        if identical { "byte-identical" } else { "MISMATCH" }
    );
    Ok(identical)
}

/// Flags as given, minus the output directory, for the run manifest.
fn manifest_flags(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv.iter().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out" {
            skip = true;
            continue;
        }
        if a.starts_with("--out=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

fn execute(cli: &Cli, argv: &[String]) -> Result<bool> {
    let name = match &cli.command {
        Command::GenData(a) => {
            cmd_gen_data(cli, a)?;
            "gen-data"
        }
        Command::Train(a) => {
            cmd_train(cli, a)?;
            "train"
        }
        Command::Sample(a) => {
            cmd_sample(cli, a)?;
            "sample"
        }
        Command::Bench(a) => {
            cmd_bench(cli, a)?;
            "bench"
        }
        Command::Selftest => return cmd_selftest(cli),
    };
    write_run_manifest(&cli.out, name, &manifest_flags(argv), cli.seed)?;
    Ok(true)
}

/// Parses `args` (including the program name) and runs the command.
/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &argv) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    run(std::env::args_os())
}
