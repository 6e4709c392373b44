use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use revise_core::grpo::toy::train_toy_from;
use revise_core::grpo::ToyPolicy;
use revise_core::reward::score_trajectory;
use revise_core::synth::{generate_task, OracleBackend, SyntheticTask};
use revise_core::{AnswerSet, ModelBackend, Termination};
use revise::batch::{run_item, ItemErrorKind, SynthResolver, VideoResolver};
use revise::bench::{self, frontier_csv, render_table, BenchError, Evaluation, SweepCell, Variant};
use revise::config::{RunConfig, SettingsError};
use revise::manifest::{load_manifest, read_jsonl, QaItem};
use revise::records::{write_jsonl, TrajectoryRecord};
use revise::synth_export::{export_dataset, generate_dataset, load_tasks, TASKS_FILE};
use revise::toy_io::{curve_csv, parse_policy, render_policy};
use revise::{FrameDirResolver, HttpBackend};
use serde_json::json;

const EXIT_USAGE: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_PROTOCOL: u8 = 4;
const EXIT_DATA: u8 = 5;

#[derive(Parser)]
#[command(name = "revise", version, about = "Multi-round sparse frame selection for video question answering")]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Episodes run concurrently.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `oracle` or `http`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Parent directory of run directories.
    #[arg(long = "out-dir", global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question.
    Run(RunArgs),
    /// Score a manifest.
    Evaluate(DataArgs),
    /// Evaluate a grid of round and frame budgets.
    Sweep(SweepArgs),
    /// Evaluate with state carry-over and structured summaries switched off.
    Ablate(AblateArgs),
    /// Recompute rewards of logged trajectories and check them.
    RewardScore(RewardArgs),
    /// Train the toy selection policy with GRPO.
    TrainToy(ToyArgs),
    /// Write a synthetic dataset.
    SynthGen(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Build a synthetic task from this seed.
    #[arg(long, conflicts_with = "video")]
    synth_seed: Option<u64>,
    /// Frame directory.
    #[arg(long, requires = "question")]
    video: Option<PathBuf>,
    #[arg(long)]
    question: Option<String>,
    /// Answer option; repeat for each.
    #[arg(long = "option")]
    options: Vec<String>,
    /// Gold answer, label or text.
    #[arg(long)]
    answer: Option<String>,
    /// Task file for the oracle backend.
    #[arg(long)]
    tasks: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Task file for the oracle backend; defaults to tasks.jsonl beside the manifest.
    #[arg(long)]
    tasks: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated `T:cap` cells.
    #[arg(long, default_value = "1:6,2:4,3:6,4:4", value_parser = parse_grid)]
    grid: Grid,
}

#[derive(Clone)]
struct Grid(Vec<(usize, usize)>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    s.split(',')
        .map(|cell| {
            let (t, c) = cell
                .trim()
                .split_once([':', 'x'])
                .ok_or_else(|| format!("bad cell {cell:?}, want T:cap"))?;
            let t = t.trim().parse().map_err(|_| format!("bad T in {cell:?}"))?;
            let c = c.trim().parse().map_err(|_| format!("bad cap in {cell:?}"))?;
            Ok((t, c))
        })
        .collect::<Result<_, _>>()
        .map(Grid)
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Subset of full, no_state_carryover, no_structured_fields, neither.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Vec<Variant>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("unknown variant {s}"))
}

#[derive(Args)]
struct RewardArgs {
    /// trajectories.jsonl from an earlier run.
    #[arg(long)]
    trajectories: PathBuf,
}

#[derive(Args)]
struct ToyArgs {
    /// Start from this checkpoint instead of the default policy.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset directory; must be empty or absent.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<SettingsError> for Failure {
    fn from(e: SettingsError) -> Self {
        Failure::new(EXIT_USAGE, e.to_string())
    }
}

fn io_fail(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::new(EXIT_DATA, format!("{}: {e}", path.display()))
}

type Outcome = Result<(), Failure>;

enum Backend {
    Oracle(OracleBackend),
    Http(HttpBackend),
}

impl Backend {
    fn as_dyn(&self) -> &dyn ModelBackend {
        match self {
            Backend::Oracle(b) => b,
            Backend::Http(b) => b,
        }
    }

    fn record_stats(&self, dir: &Path) -> Outcome {
        if let Backend::Http(h) = self {
            let s = h.stats();
            let text = format!(
                "calls={}\nattempts={}\nbackoffs={}\nscoring_logprobs={}\nscoring_sampled={}\n",
                s.calls, s.attempts, s.backoffs, s.logprob_scorings, s.sampled_scorings
            );
            let p = dir.join("backend_stats.txt");
            fs::write(&p, text).map_err(io_fail(&p))?;
        }
        Ok(())
    }
}

struct Ctx {
    cfg: RunConfig,
    run_dir: PathBuf,
}

impl Ctx {
    fn open(cfg: RunConfig, command: &str) -> Result<Self, Failure> {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
        let base = cfg.out_dir();
        let mut run_dir = base.join(format!("{stamp}-{command}"));
        let mut n = 1;
        while run_dir.exists() {
            run_dir = base.join(format!("{stamp}-{command}-{n}"));
            n += 1;
        }
        fs::create_dir_all(&run_dir).map_err(io_fail(&run_dir))?;
        write_config(&cfg, &run_dir)?;
        println!("run directory: {}", run_dir.display());
        Ok(Self { cfg, run_dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn backend(&self, tasks: Vec<SyntheticTask>) -> Result<Backend, Failure> {
        if self.cfg.backend_is_http() {
            return HttpBackend::new(self.cfg.http_config(Some(&self.run_dir)))
                .map(Backend::Http)
                .map_err(|e| Failure::new(EXIT_BACKEND, format!("cannot start HTTP backend: {e}")));
        }
        if tasks.is_empty() {
            return Err(Failure::new(
                EXIT_USAGE,
                "the oracle backend needs task descriptions (--tasks or the `tasks` key)",
            ));
        }
        Ok(Backend::Oracle(OracleBackend::new(tasks, self.cfg.oracle_rules())))
    }

    /// Tasks for the oracle backend: explicit path, then config, then the
    /// file beside the manifest.
    fn tasks(&self, explicit: Option<&Path>, manifest: Option<&Path>) -> Result<Vec<SyntheticTask>, Failure> {
        if self.cfg.backend_is_http() {
            return Ok(Vec::new());
        }
        let beside = manifest
            .and_then(Path::parent)
            .map(|d| d.join(TASKS_FILE))
            .filter(|p| p.exists());
        match explicit.map(Path::to_path_buf).or_else(|| self.cfg.tasks_path()).or(beside) {
            Some(p) => load_tasks(&p).map_err(|e| Failure::new(EXIT_DATA, e.to_string())),
            None => Ok(Vec::new()),
        }
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Outcome {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
        fs::write(&p, text + "\n").map_err(io_fail(&p))
    }

    fn config_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = RunConfig::keys()
            .map(|k| (k.to_string(), json!(self.cfg.get(k))))
            .collect();
        serde_json::Value::Object(map)
    }

    fn save_evaluation(&self, prefix: &str, ev: &Evaluation) -> Outcome {
        let p = self.path(&format!("{prefix}trajectories.jsonl"));
        write_jsonl(&p, &ev.records).map_err(io_fail(&p))?;
        let p = self.path(&format!("{prefix}errors.jsonl"));
        write_jsonl(&p, &ev.errors).map_err(io_fail(&p))
    }
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Outcome {
    let p = dir.join("config.txt");
    fs::write(&p, cfg.to_kv()).map_err(io_fail(&p))
}

fn bench_fail(e: BenchError) -> Failure {
    match e {
        BenchError::EmptyDataset => Failure::new(EXIT_DATA, e.to_string()),
        BenchError::EmptyGrid | BenchError::Config(_) => Failure::new(EXIT_USAGE, e.to_string()),
    }
}

/// Nonzero when nothing could be scored.
fn evaluation_status(ev: &Evaluation) -> Outcome {
    if !ev.records.is_empty() {
        return Ok(());
    }
    let backend = ev.errors.iter().any(|e| e.kind == "backend");
    let first = ev.errors.first().map(|e| e.message.clone()).unwrap_or_default();
    Err(Failure::new(
        if backend { EXIT_BACKEND } else { EXIT_DATA },
        format!("no item could be scored; first error: {first}"),
    ))
}

fn load_items(path: &Path) -> Result<Vec<QaItem>, Failure> {
    load_manifest(path).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))
}

fn cmd_run(ctx: Ctx, args: RunArgs) -> Outcome {
    let cfg = &ctx.cfg;
    let (item, tasks, resolver): (QaItem, Vec<SyntheticTask>, Box<dyn VideoResolver>) = match (args.synth_seed, &args.video) {
        (Some(seed), _) => {
            let spec = cfg.synth_spec();
            let task = generate_task(seed, spec.length, spec.k_max, spec.n_options)
                .and_then(|t| t.with_fps(spec.fps))
                .map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
            let item = QaItem {
                id: task.id.clone(),
                video_path: PathBuf::new(),
                question: task.question.clone(),
                options: task.options.clone(),
                answer: task.correct.clone(),
                category: None,
            };
            (item, vec![task.clone()], Box::new(SynthResolver::new([task])))
        }
        (None, Some(video)) => {
            if args.options.len() < 2 {
                return Err(Failure::new(EXIT_USAGE, "give at least two --option values"));
            }
            let options = AnswerSet::from_texts(&args.options);
            let answer = match &args.answer {
                Some(a) => options
                    .resolve(a)
                    .map(|o| o.label.clone())
                    .ok_or_else(|| Failure::new(EXIT_USAGE, format!("--answer {a:?} is not an option")))?,
                None => String::new(),
            };
            let item = QaItem {
                id: video.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                video_path: video.clone(),
                question: args.question.clone().unwrap_or_default(),
                options,
                answer,
                category: None,
            };
            (item, ctx.tasks(args.tasks.as_deref(), None)?, Box::new(FrameDirResolver))
        }
        (None, None) => return Err(Failure::new(EXIT_USAGE, "give --synth-seed or --video")),
    };
    let backend = ctx.backend(tasks)?;
    let episode = cfg.episode_config()?;
    let result = run_item(&item, &*resolver, backend.as_dyn(), &episode);
    backend.record_stats(&ctx.run_dir)?;
    let traj = match result {
        Ok(t) => t,
        Err(e) => {
            let code = match e.kind {
                ItemErrorKind::Backend => EXIT_BACKEND,
                ItemErrorKind::Video => EXIT_DATA,
                ItemErrorKind::Config => EXIT_USAGE,
            };
            return Err(Failure::new(code, format!("{}: {}", e.id, e.message)));
        }
    };
    let mut rec = TrajectoryRecord::new(&item.id, &item.answer, None, traj);
    if episode.score_options && !item.answer.is_empty() {
        let weights = cfg.reward_weights();
        if let Ok(r) = score_trajectory(&rec.trajectory, &item.answer, None, &weights) {
            rec.reward = Some(r);
            rec.reward_weights = Some(weights);
        }
    }
    let p = ctx.path("trajectories.jsonl");
    write_jsonl(&p, std::slice::from_ref(&rec)).map_err(io_fail(&p))?;
    println!(
        "answer={} rounds={} frames={} termination={:?}{}",
        rec.answer.as_deref().unwrap_or("-"),
        rec.tau,
        rec.frames_used,
        rec.termination,
        if item.answer.is_empty() {
            String::new()
        } else {
            format!(" correct={}", rec.correct)
        }
    );
    if rec.termination == Termination::ProtocolFailure {
        return Err(Failure::new(EXIT_PROTOCOL, "no parseable answer was produced"));
    }
    Ok(())
}

fn cmd_evaluate(ctx: Ctx, args: DataArgs) -> Outcome {
    let items = load_items(&args.manifest)?;
    let backend = ctx.backend(ctx.tasks(args.tasks.as_deref(), Some(&args.manifest))?)?;
    let cfg = &ctx.cfg;
    let ev = bench::evaluate(
        "evaluate",
        &items,
        &FrameDirResolver,
        backend.as_dyn(),
        &cfg.episode_config()?,
        &cfg.reward_weights(),
        cfg.parallelism(),
    )
    .map_err(bench_fail)?;
    backend.record_stats(&ctx.run_dir)?;
    ctx.save_evaluation("", &ev)?;
    ctx.write_json("report.json", &json!({"config": ctx.config_json(), "report": ev.report}))?;
    print!("{}", render_table(&[&ev.report]));
    evaluation_status(&ev)
}

fn cmd_sweep(ctx: Ctx, args: SweepArgs) -> Outcome {
    let items = load_items(&args.data.manifest)?;
    let backend = ctx.backend(ctx.tasks(args.data.tasks.as_deref(), Some(&args.data.manifest))?)?;
    let cfg = &ctx.cfg;
    let results = bench::sweep(
        &items,
        &FrameDirResolver,
        backend.as_dyn(),
        &cfg.episode_config()?,
        &args.grid.0,
        &cfg.reward_weights(),
        cfg.parallelism(),
    )
    .map_err(bench_fail)?;
    backend.record_stats(&ctx.run_dir)?;
    let reports = ctx.path("reports");
    let cells_dir = ctx.path("cells");
    for d in [&reports, &cells_dir] {
        fs::create_dir_all(d).map_err(io_fail(d))?;
    }
    for (cell, ev) in &results {
        ctx.write_json(
            &format!("reports/{}.json", cell.name),
            &json!({"config": ctx.config_json(), "cell": cell}),
        )?;
        ctx.save_evaluation(&format!("cells/{}.", cell.name), ev)?;
    }
    let cells: Vec<SweepCell> = results.iter().map(|(c, _)| c.clone()).collect();
    let p = ctx.path("frontier.csv");
    fs::write(&p, frontier_csv(&cells)).map_err(io_fail(&p))?;
    print!("{}", render_table(&cells.iter().map(|c| &c.report).collect::<Vec<_>>()));
    Ok(())
}

fn cmd_ablate(ctx: Ctx, args: AblateArgs) -> Outcome {
    let items = load_items(&args.data.manifest)?;
    let backend = ctx.backend(ctx.tasks(args.data.tasks.as_deref(), Some(&args.data.manifest))?)?;
    let cfg = &ctx.cfg;
    let variants = if args.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        args.variants
    };
    let results = bench::ablate_components(
        &items,
        &FrameDirResolver,
        backend.as_dyn(),
        &cfg.episode_config()?,
        &variants,
        &cfg.reward_weights(),
        cfg.parallelism(),
    )
    .map_err(bench_fail)?;
    backend.record_stats(&ctx.run_dir)?;
    let reports = ctx.path("reports");
    fs::create_dir_all(&reports).map_err(io_fail(&reports))?;
    for (v, ev) in &results {
        ctx.write_json(
            &format!("reports/{}.json", v.name()),
            &json!({"config": ctx.config_json(), "variant": v, "report": ev.report}),
        )?;
        ctx.save_evaluation(&format!("{}.", v.name()), ev)?;
    }
    let table = render_table(&results.iter().map(|(_, ev)| &ev.report).collect::<Vec<_>>());
    let p = ctx.path("ablation.txt");
    fs::write(&p, &table).map_err(io_fail(&p))?;
    print!("{table}");
    Ok(())
}

fn cmd_reward_score(ctx: Ctx, args: RewardArgs) -> Outcome {
    let records: Vec<TrajectoryRecord> =
        read_jsonl(&args.trajectories).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    let fallback = ctx.cfg.reward_weights();
    let mut out = Vec::with_capacity(records.len());
    let (mut checked, mut mismatched) = (0usize, 0usize);
    for rec in &records {
        let weights = rec.reward_weights.unwrap_or(fallback);
        let replay = score_trajectory(&rec.trajectory, &rec.gold, None, &weights);
        let (total, exact, error) = match (&replay, &rec.reward) {
            (Ok(r), Some(stored)) => {
                checked += 1;
                let same = r == stored;
                mismatched += usize::from(!same);
                (Some(r.total), Some(same), None)
            }
            (Ok(r), None) => (Some(r.total), None, None),
            (Err(e), stored) => {
                if stored.is_some() {
                    checked += 1;
                    mismatched += 1;
                }
                (None, stored.as_ref().map(|_| false), Some(e.to_string()))
            }
        };
        out.push(json!({
            "id": rec.id,
            "total": total,
            "stored_total": rec.reward.as_ref().map(|r| r.total),
            "exact": exact,
            "error": error,
            "trace": replay.ok(),
        }));
    }
    let p = ctx.path("rewards.jsonl");
    write_jsonl(&p, &out).map_err(io_fail(&p))?;
    println!("replayed {} trajectories; {checked} had stored rewards, {mismatched} differ", records.len());
    if mismatched > 0 {
        return Err(Failure::new(EXIT_DATA, format!("{mismatched} replayed rewards differ from the log")));
    }
    Ok(())
}

fn cmd_train_toy(ctx: Ctx, args: ToyArgs) -> Outcome {
    let initial = match &args.init {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_fail(p))?;
            parse_policy(&text).map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", p.display())))?
        }
        None => ToyPolicy::default(),
    };
    let cfg = &ctx.cfg;
    let curve = train_toy_from(initial, &cfg.toy_config(), &cfg.reward_weights(), cfg.seed())
        .map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    let p = ctx.path("curve.csv");
    fs::write(&p, curve_csv(&curve)).map_err(io_fail(&p))?;
    let p = ctx.path("policy.txt");
    fs::write(&p, render_policy(&curve.policy)).map_err(io_fail(&p))?;
    if let (Some(a), Some(b)) = (curve.points.first(), curve.points.last()) {
        println!(
            "iteration {}: return {:.3} rounds {:.2} frames {:.2} accuracy {:.3}",
            a.iteration, a.mean_return, a.mean_tau, a.mean_frames, a.accuracy
        );
        println!(
            "iteration {}: return {:.3} rounds {:.2} frames {:.2} accuracy {:.3}",
            b.iteration, b.mean_return, b.mean_tau, b.mean_frames, b.accuracy
        );
    }
    Ok(())
}

fn cmd_synth_gen(cfg: RunConfig, args: SynthArgs) -> Outcome {
    if args.out.exists() && fs::read_dir(&args.out).map_err(io_fail(&args.out))?.next().is_some() {
        return Err(Failure::new(
            EXIT_USAGE,
            format!("{} exists and is not empty", args.out.display()),
        ));
    }
    let spec = cfg.synth_spec();
    let tasks = generate_dataset(&spec).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    export_dataset(&tasks, &args.out, Some(&spec)).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
    write_config(&cfg, &args.out)?;
    println!("wrote {} items to {}", tasks.len(), args.out.display());
    Ok(())
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::new(EXIT_USAGE, format!("--set {s:?}: expected KEY=VALUE")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(p) = cli.parallelism {
        out.push(("parallelism".into(), p.to_string()));
    }
    if let Some(s) = cli.seed {
        out.push(("seed".into(), s.to_string()));
    }
    if let Some(b) = &cli.backend {
        out.push(("backend".into(), b.clone()));
    }
    if let Some(d) = &cli.out_dir {
        out.push(("out_dir".into(), d.to_string_lossy().into_owned()));
    }
    Ok(out)
}

fn dispatch(cli: Cli) -> Outcome {
    let cfg = RunConfig::layered(cli.config.as_deref(), &overrides(&cli)?)?;
    match cli.command {
        Command::Run(a) => cmd_run(Ctx::open(cfg, "run")?, a),
        Command::Evaluate(a) => cmd_evaluate(Ctx::open(cfg, "evaluate")?, a),
        Command::Sweep(a) => cmd_sweep(Ctx::open(cfg, "sweep")?, a),
        Command::Ablate(a) => cmd_ablate(Ctx::open(cfg, "ablate")?, a),
        Command::RewardScore(a) => cmd_reward_score(Ctx::open(cfg, "reward-score")?, a),
        Command::TrainToy(a) => cmd_train_toy(Ctx::open(cfg, "train-toy")?, a),
        Command::SynthGen(a) => cmd_synth_gen(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = writeln!(std::io::stderr(), "error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
