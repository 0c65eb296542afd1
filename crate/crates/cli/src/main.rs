//! `poinav` command-line front end.
//!
//! Exit codes: 0 ok, 2 usage or config error, 3 I/O error, 4 invalid scene,
//! 5 network requested while offline, 6 episode failure.

mod config;
mod render;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{ConfigError, ConfigFile};
use poinav_core::metrics::aggregate_report;
use poinav_core::rlvr::{self, GrpoConfig, ToyPrompt};
use poinav_core::runner::{self, EpisodeTrace, SceneEntry};
use poinav_core::simulator::procgen::{generate, ProcgenParams};
use poinav_core::{PolicyKind, RunConfig, RunError, Scene, SceneError, Timing};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Scene(String),
    #[error("network access requested while offline")]
    Offline,
    #[error("{0}")]
    Episode(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Scene(_) => 4,
            CliError::Offline => 5,
            CliError::Episode(_) => 6,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Scene(s) => s.into(),
            RunError::Offline => CliError::Offline,
            RunError::Config(m) => CliError::Usage(m),
            RunError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Episode(other.to_string()),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io(io) => CliError::Io(format!("reading scene: {io}")),
            other => CliError::Scene(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            ConfigError::Parse { .. } => CliError::Usage(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "poinav", version, about = "Object-goal navigation over points of interest")]
struct Cli {
    /// TOML config; its values override command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Forbid network access; the remote policy is refused.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode.
    Run(RunArgs),
    /// Run scenes × seeds and aggregate metrics.
    Batch(BatchArgs),
    /// Collect epsilon-greedy decisions as reward-training JSONL.
    GenData(GenDataArgs),
    /// Train the toy categorical policy with GRPO.
    TrainToy(TrainArgs),
    /// Draw a trace as SVG (and optionally PGM / PoI JSON).
    Render(RenderArgs),
    /// Check scene files.
    ValidateScene(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TimingArg {
    Wall,
    Off,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    PolicyKind::parse(s)
        .ok_or_else(|| format!("unknown policy {s:?} (greedy, random, epsilon, scripted, remote-vlm, nearest-frontier)"))
}

#[derive(Args)]
struct EpisodeArgs {
    #[arg(long, value_parser = parse_policy, default_value = "greedy")]
    policy: PolicyKind,
    /// Reply rules for the scripted policy (JSON).
    #[arg(long)]
    script: Option<PathBuf>,
    /// Chat-completions base URL for the remote policy.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_steps: Option<u32>,
    #[arg(long)]
    tau_choice: Option<usize>,
    /// `off` records zero wall time so outputs are byte-reproducible.
    #[arg(long, value_enum, default_value = "wall")]
    timing: TimingArg,
}

impl EpisodeArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        cfg.policy = self.policy;
        cfg.script = self.script.clone();
        if let Some(e) = &self.endpoint {
            cfg.remote.endpoint = e.clone();
        }
        if let Some(m) = &self.model {
            cfg.remote.model = m.clone();
        }
        cfg.max_steps = self.max_steps;
        if let Some(t) = self.tau_choice {
            cfg.tau_choice = t;
        }
        cfg.timing = match self.timing {
            TimingArg::Wall => Timing::Wall,
            TimingArg::Off => Timing::Off,
        };
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for trace.json, trajectory.jsonl, record.json and map.pgm.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Archive every decision prompt under OUT/prompts.
    #[arg(long)]
    archive_prompts: bool,
    #[command(flatten)]
    episode: EpisodeArgs,
}

#[derive(Args)]
struct BatchArgs {
    /// Scene files or directories of them.
    #[arg(long, num_args = 1.., required = true)]
    scenes: Vec<PathBuf>,
    /// Comma list (`0,1,2`) or half-open range (`0..3`).
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Directory for report.json, report.txt, episodes.jsonl and traces/.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    episode: EpisodeArgs,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, num_args = 1.., required = true)]
    scenes: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    t_prob: f64,
    #[arg(long, default_value_t = 10)]
    episodes: u64,
    /// Episode `e` uses seed SEED + e.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory: dataset.jsonl plus prompts/.
    #[arg(long)]
    out: PathBuf,
    /// Skip the prompt image archive.
    #[arg(long)]
    no_prompts: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// JSONL written by gen-data.
    #[arg(long, conflicts_with_all = ["live", "fixed"])]
    dataset: Option<PathBuf>,
    /// Collect prompts from fresh simulator episodes.
    #[arg(long, conflicts_with = "fixed")]
    live: bool,
    /// The single prompt with candidate distances (2, 4, 6).
    #[arg(long)]
    fixed: bool,
    /// Scenes for --live; procedural scenes when omitted.
    #[arg(long, num_args = 1..)]
    scenes: Vec<PathBuf>,
    /// Episodes collected for --live.
    #[arg(long, default_value_t = 8)]
    episodes: u64,
    #[arg(long)]
    group_size: Option<usize>,
    /// KL coefficient.
    #[arg(long)]
    beta: Option<f64>,
    /// Ratio clip epsilon.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Learning curve and final weights as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    trace: PathBuf,
    /// SVG output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the explored map as PGM.
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Also write the PoI table as JSON.
    #[arg(long)]
    poi_json: Option<PathBuf>,
    /// Draw this scene's objects.
    #[arg(long)]
    scene: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("bad --seeds {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

/// Expands directories to their `*.json` files, sorted.
fn scene_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load_scenes(inputs: &[PathBuf]) -> Result<Vec<Arc<Scene>>, CliError> {
    scene_paths(inputs)?
        .iter()
        .map(|p| Scene::load(p).map(Arc::new).map_err(CliError::from))
        .collect()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

struct Ctx {
    file: Option<ConfigFile>,
    offline: bool,
}

impl Ctx {
    fn run_config(&self, mut base: RunConfig) -> Result<RunConfig, CliError> {
        base.offline = self.offline;
        let mut cfg = match &self.file {
            Some(f) => f.apply_run(&base)?,
            None => base,
        };
        cfg.offline |= self.offline;
        Ok(cfg)
    }

    fn grpo_config(&self, base: GrpoConfig) -> Result<GrpoConfig, CliError> {
        Ok(match &self.file {
            Some(f) => f.apply_grpo(&base)?,
            None => base,
        })
    }
}

fn trace_file_name(t: &EpisodeTrace) -> String {
    let safe: String = t
        .scene
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}_s{}.json", t.seed)
}

fn cmd_run(ctx: &Ctx, a: RunArgs) -> Result<(), CliError> {
    let scene = Arc::new(Scene::load(&a.scene)?);
    let mut base = RunConfig {
        seed: a.seed,
        ..Default::default()
    };
    a.episode.apply(&mut base);
    if a.archive_prompts {
        let out = a
            .out
            .as_ref()
            .ok_or_else(|| CliError::Usage("--archive-prompts needs --out".into()))?;
        base.prompt_archive = Some(out.join("prompts"));
    }
    let cfg = ctx.run_config(base)?;
    let trace = runner::run_episode(scene, &cfg)?;
    if let Some(out) = &a.out {
        write(&out.join("trace.json"), trace.to_json())?;
        write(&out.join("trajectory.jsonl"), trace.trajectory_jsonl())?;
        write(
            &out.join("record.json"),
            serde_json::to_string_pretty(&trace.record).expect("record serializes"),
        )?;
        write(&out.join("map.pgm"), render::pgm(&trace.map))?;
    }
    let report = aggregate_report(std::slice::from_ref(&trace.record)).map_err(|e| CliError::Episode(e.to_string()))?;
    print!("{}", report.to_table());
    println!(
        "{} after {} steps, final distance {:.2} m",
        if trace.record.success { "success" } else { "failure" },
        trace.record.steps,
        trace.record.final_distance
    );
    match &trace.record.failure {
        Some(f) if f.starts_with("policy:") => Err(CliError::Episode(f.clone())),
        _ => Ok(()),
    }
}

fn cmd_batch(ctx: &Ctx, a: BatchArgs) -> Result<(), CliError> {
    let seeds = parse_seeds(&a.seeds)?;
    let entries: Vec<SceneEntry> = scene_paths(&a.scenes)?.iter().map(|p| SceneEntry::load(p)).collect();
    let mut base = RunConfig {
        jobs: a.jobs,
        ..Default::default()
    };
    a.episode.apply(&mut base);
    let cfg = ctx.run_config(base)?;
    if entries.iter().all(|e| e.scene.is_err()) {
        let why: Vec<String> = entries
            .iter()
            .filter_map(|e| e.scene.as_ref().err().map(|m| format!("{}: {m}", e.label)))
            .collect();
        return Err(CliError::Scene(format!("no loadable scenes: {}", why.join("; "))));
    }
    let result = runner::run_batch(&entries, &seeds, &cfg)?;
    if let Some(out) = &a.out {
        write(&out.join("report.json"), result.report.to_json() + "\n")?;
        write(&out.join("report.txt"), result.report.to_table())?;
        let mut lines = String::new();
        for t in &result.traces {
            lines.push_str(&serde_json::to_string(&t.record).expect("record serializes"));
            lines.push('\n');
        }
        write(&out.join("episodes.jsonl"), lines)?;
        for t in &result.traces {
            write(&out.join("traces").join(trace_file_name(t)), t.to_json())?;
        }
    }
    print!("{}", result.report.to_table());
    Ok(())
}

fn cmd_gen_data(ctx: &Ctx, a: GenDataArgs) -> Result<(), CliError> {
    let scenes = load_scenes(&a.scenes)?;
    let cfg = ctx.run_config(RunConfig {
        t_prob: a.t_prob,
        jobs: a.jobs,
        timing: Timing::Off,
        ..Default::default()
    })?;
    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let archive = (!a.no_prompts).then_some(a.out.as_path());
    let samples = runner::collect_dataset(&scenes, a.episodes, a.seed, &cfg, archive)?;
    write(&a.out.join("dataset.jsonl"), rlvr::to_jsonl(&samples))?;
    println!("{} samples from {} episodes", samples.len(), a.episodes);
    Ok(())
}

fn live_scenes(paths: &[PathBuf]) -> Result<Vec<Arc<Scene>>, CliError> {
    if !paths.is_empty() {
        return load_scenes(paths);
    }
    (0..4)
        .map(|i| {
            Scene::from_file(generate(&format!("live_{i}"), 5000 + i, &ProcgenParams::default()))
                .map(Arc::new)
                .map_err(CliError::from)
        })
        .collect()
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> Result<(), CliError> {
    let mut base = GrpoConfig::default();
    if let Some(g) = a.group_size {
        base.group_size = g;
    }
    if let Some(b) = a.beta {
        base.kl_coef = b;
    }
    if let Some(c) = a.clip {
        base.clip_epsilon = c;
    }
    if let Some(l) = a.lr {
        base.learning_rate = l;
    }
    let grpo = ctx.grpo_config(base)?;
    if a.dataset.is_none() && !a.live && !a.fixed {
        return Err(CliError::Usage("train-toy needs one of --dataset, --live or --fixed".into()));
    }
    let samples = if let Some(path) = &a.dataset {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Some(rlvr::from_jsonl(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?)
    } else if a.live {
        let scenes = live_scenes(&a.scenes)?;
        let cfg = ctx.run_config(RunConfig {
            timing: Timing::Off,
            ..Default::default()
        })?;
        Some(runner::collect_dataset(&scenes, a.episodes, a.seed, &cfg, None)?)
    } else {
        None
    };
    let prompts: Vec<ToyPrompt> = match samples {
        // decisions with a single candidate carry no learning signal
        Some(s) => s
            .iter()
            .filter(|s| s.distances.len() >= 2)
            .filter_map(|s| ToyPrompt::from_sample(s).ok())
            .collect(),
        None => vec![ToyPrompt::fixed_example()],
    };
    if prompts.is_empty() {
        return Err(CliError::Usage("no usable prompts (need at least two candidates)".into()));
    }
    let report = rlvr::train_toy(&prompts, &grpo, a.iters, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let every = (a.iters / 10).max(1);
    for (i, (s, e)) in report.sampled_reward.iter().zip(&report.expected_reward).enumerate() {
        if (i + 1) % every == 0 || i + 1 == a.iters {
            println!("iter {:4}  sampled {s:.4}  expected {e:.4}", i + 1);
        }
    }
    println!(
        "{} prompt(s); final expected soft reward {:.4}",
        prompts.len(),
        report.final_expected()
    );
    if let Some(out) = &a.out {
        write(out, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.trace).map_err(io_err(&a.trace))?;
    let trace: EpisodeTrace =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", a.trace.display())))?;
    if trace.schema != runner::TRACE_SCHEMA {
        return Err(CliError::Usage(format!(
            "trace schema {:?}, expected {:?}",
            trace.schema,
            runner::TRACE_SCHEMA
        )));
    }
    let scene = a.scene.as_deref().map(Scene::load).transpose()?;
    write(&a.out, render::svg(&trace, scene.as_ref()))?;
    if let Some(p) = &a.pgm {
        write(p, render::pgm(&trace.map))?;
    }
    if let Some(p) = &a.poi_json {
        write(p, serde_json::to_string_pretty(&trace.pois).expect("pois serialize") + "\n")?;
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<(), CliError> {
    let mut worst: Option<CliError> = None;
    for p in scene_paths(&a.paths)? {
        match Scene::load(&p) {
            Ok(s) => {
                let d = s.goal_distance(&s.start.position()).unwrap_or(f64::INFINITY);
                println!(
                    "ok {}: {} ({}x{} cells, {} objects, goal {:.2} m away)",
                    p.display(),
                    s.name,
                    s.ground_truth.width(),
                    s.ground_truth.height(),
                    s.objects.len(),
                    d
                );
            }
            Err(e) => {
                println!("invalid {}: {e}", p.display());
                let e = CliError::from(e);
                if worst.as_ref().is_none_or(|w| e.code() > w.code()) {
                    worst = Some(e);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file = match cli.config.as_deref().map(ConfigFile::load).transpose() {
        Ok(f) => f,
        Err(e) => {
            let e = CliError::from(e);
            eprintln!("error: {e}");
            return ExitCode::from(e.code());
        }
    };
    let ctx = Ctx {
        file,
        offline: cli.offline,
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&ctx, a),
        Command::Batch(a) => cmd_batch(&ctx, a),
        Command::GenData(a) => cmd_gen_data(&ctx, a),
        Command::TrainToy(a) => cmd_train(&ctx, a),
        Command::Render(a) => cmd_render(a),
        Command::ValidateScene(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
