use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use loho::curator::{extract_samples, segment, synthesize_failure, SupervisionSample, DEFAULT_STRIDE};
use loho::executor::executor_by_name;
use loho::manager::{manager_by_name, DEFAULT_WAYPOINTS};
use loho::metrics::{intention_score, progress_score, score_pair, wilson_interval, NormTrajectory, DEFAULT_RMSE_POINTS, Z95};
use loho::orchestrator::{DEFAULT_BUDGET, DEFAULT_INTERVAL};
use loho::render::{render_trace, Canvas, TraceStyle};
use loho::{run_batch, run_episode, EpisodeConfig, EpisodeLog, ExecutorConfig, Mode, Outcome, Pixel, PurePursuit, Scene, ScriptedManager};

/// Usage problems exit with 1, bad inputs or failed episodes with 2.
enum CliError {
    Usage(String),
    Data(String),
}

type CliResult<T> = Result<T, CliError>;

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

#[derive(Parser)]
#[command(name = "loho", version, about = "Receding-horizon manipulation simulator, metrics and data curation")]
struct Cli {
    /// TOML file with defaults for run/batch/curate options; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its JSONL log.
    Run(RunArgs),
    /// Run a range of seeds and write logs plus CSV summaries.
    Batch(BatchArgs),
    /// Score predicted vs reference trajectories.
    Eval(EvalArgs),
    /// Turn episode logs into supervision samples.
    Curate(CurateArgs),
    /// Draw a supervision sample's trace into a PPM image.
    RenderTrace(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Closed,
    Open,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Closed => Mode::ClosedLoop,
            ModeArg::Open => Mode::OpenLoop,
        }
    }
}

#[derive(Args)]
struct EpisodeArgs {
    /// Scene description (JSON).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Task manager name; `scripted` by default.
    #[arg(long)]
    manager: Option<String>,
    /// Executor name; `pure_pursuit` by default.
    #[arg(long)]
    executor: Option<String>,
    /// `closed` replans every interval, `open` plans once at frame 0.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Executor steps between manager calls.
    #[arg(long)]
    interval: Option<u64>,
    /// Maximum simulator steps per episode.
    #[arg(long)]
    budget: Option<u64>,
    /// Grasp slip probability; overrides the scene.
    #[arg(long)]
    p_slip: Option<f64>,
    /// How far a slipped object is knocked, in workspace meters; overrides the scene.
    #[arg(long)]
    drop_radius: Option<f64>,
    /// Waypoints per manager trace.
    #[arg(long)]
    k_wp: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write gzip-compressed logs.
    #[arg(long)]
    gzip: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    episode: EpisodeArgs,
    /// Defaults to the scene's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    episode: EpisodeArgs,
    /// Half-open seed range, e.g. `0..500`.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL with one `{"id"?, "predicted", "reference"}` object per line, pixel coordinates.
    input: PathBuf,
    /// Resampling points for RMSE.
    #[arg(long, default_value_t = DEFAULT_RMSE_POINTS)]
    m: usize,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurateArgs {
    /// Episode logs, or directories containing `episode_*.jsonl[.gz]`.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Supervision JSONL destination.
    #[arg(long)]
    out: PathBuf,
    /// Frames between samples.
    #[arg(long)]
    stride: Option<u64>,
    /// Waypoints per target trace.
    #[arg(long)]
    k_wp: Option<usize>,
    /// Recovery samples synthesized per episode.
    #[arg(long)]
    failures: Option<usize>,
    /// Seed for recovery sample synthesis.
    #[arg(long)]
    seed: Option<u64>,
    /// Also render each sample's trace to `<dir>/sample_<n>.ppm`.
    #[arg(long)]
    render_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    width: u32,
    #[arg(long, default_value_t = 256)]
    height: u32,
}

#[derive(Args)]
struct RenderArgs {
    /// Supervision JSONL.
    input: PathBuf,
    /// Zero-based line index of the sample.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 256)]
    width: u32,
    #[arg(long, default_value_t = 256)]
    height: u32,
    /// Shade the line from the start color to the end color.
    #[arg(long)]
    gradient: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scene: Option<PathBuf>,
    manager: Option<String>,
    executor: Option<String>,
    mode: Option<ModeArg>,
    interval: Option<u64>,
    budget: Option<u64>,
    p_slip: Option<f64>,
    drop_radius: Option<f64>,
    k_wp: Option<usize>,
    out: Option<PathBuf>,
    gzip: Option<bool>,
    seed: Option<u64>,
    seeds: Option<String>,
    jobs: Option<usize>,
    stride: Option<u64>,
    failures: Option<usize>,
}

fn load_file_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(data(path.display()))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Everything needed to run episodes, after merging flags, file and defaults.
struct Resolved {
    scene: Scene,
    base: EpisodeConfig,
    manager: String,
    executor: String,
    k_wp: usize,
    out: PathBuf,
    gzip: bool,
}

fn resolve(args: &EpisodeArgs, file: &FileConfig) -> CliResult<Resolved> {
    let scene_path = args
        .scene
        .clone()
        .or_else(|| file.scene.clone())
        .ok_or_else(|| CliError::Usage("--scene is required".into()))?;
    let text = fs::read_to_string(&scene_path).map_err(data(scene_path.display()))?;
    let scene = Scene::from_json(&text).map_err(data(scene_path.display()))?;

    let mut base = EpisodeConfig::from_scene(&scene);
    base.mode = args.mode.or(file.mode).map_or(Mode::ClosedLoop, Mode::from);
    base.manager_interval = args.interval.or(file.interval).unwrap_or(DEFAULT_INTERVAL);
    base.step_budget = args.budget.or(file.budget).unwrap_or(DEFAULT_BUDGET);
    if let Some(p) = args.p_slip.or(file.p_slip) {
        base.failure.p_slip = p;
    }
    if let Some(r) = args.drop_radius.or(file.drop_radius) {
        base.failure.drop_radius = r;
    }
    base.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let k_wp = args.k_wp.or(file.k_wp).unwrap_or(DEFAULT_WAYPOINTS);
    if k_wp < 2 {
        return Err(CliError::Usage("--k-wp must be >= 2".into()));
    }
    Ok(Resolved {
        scene,
        base,
        manager: args.manager.clone().or_else(|| file.manager.clone()).unwrap_or_else(|| ScriptedManager::NAME.into()),
        executor: args
            .executor
            .clone()
            .or_else(|| file.executor.clone())
            .unwrap_or_else(|| PurePursuit::NAME.into()),
        k_wp,
        out: args.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
        gzip: args.gzip || file.gzip.unwrap_or(false),
    })
}

fn agents(r: &Resolved) -> CliResult<(Box<dyn loho::TaskManager>, Box<dyn loho::Executor>)> {
    let manager =
        manager_by_name(&r.manager, r.k_wp).ok_or_else(|| CliError::Usage(format!("unknown manager {:?}", r.manager)))?;
    let cfg = ExecutorConfig::for_sim(r.scene.projection(), &r.scene.params);
    let executor =
        executor_by_name(&r.executor, cfg).ok_or_else(|| CliError::Usage(format!("unknown executor {:?}", r.executor)))?;
    Ok((manager, executor))
}

fn log_path(dir: &Path, log: &EpisodeLog, gzip: bool) -> PathBuf {
    let name = log.file_name();
    dir.join(if gzip { format!("{name}.gz") } else { name })
}

fn write_log(dir: &Path, log: &EpisodeLog, gzip: bool) -> CliResult<PathBuf> {
    let path = log_path(dir, log, gzip);
    log.save(&path).map_err(data(path.display()))?;
    Ok(path)
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Success => "success",
        Outcome::BudgetExhausted => "budget_exhausted",
        Outcome::TraceExhausted => "trace_exhausted",
    }
}

fn cmd_run(args: &RunArgs, file: &FileConfig) -> CliResult<()> {
    let r = resolve(&args.episode, file)?;
    let (manager, executor) = agents(&r)?;
    let seed = args.seed.or(file.seed).unwrap_or(r.scene.seed);
    let cfg = r.base.clone().with_seed(seed);
    let log = run_episode(&cfg, &r.scene, manager.as_ref(), executor.as_ref()).map_err(data(format!("seed {seed}")))?;
    fs::create_dir_all(&r.out).map_err(data(r.out.display()))?;
    let path = write_log(&r.out, &log, r.gzip)?;
    info!(
        "seed {seed}: {} after {} frames, {} manager calls",
        outcome_name(log.outcome),
        log.frames(),
        log.invocations.len()
    );
    println!("{}", path.display());
    Ok(())
}

fn parse_seed_range(s: &str) -> CliResult<std::ops::Range<u64>> {
    let bad = || CliError::Usage(format!("seed range {s:?} must look like START..END"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a > b {
        return Err(bad());
    }
    Ok(a..b)
}

#[derive(Serialize)]
struct EpisodeRow {
    seed: u64,
    outcome: String,
    frames: u64,
    invocations: usize,
    progress_score: f64,
    intention_score: f64,
    grasp_attempts: usize,
}

#[derive(Serialize)]
struct SummaryRow {
    episodes: usize,
    successes: usize,
    errors: usize,
    success_rate: f64,
    wilson_low: f64,
    wilson_high: f64,
    mean_progress_score: f64,
    mean_intention_score: f64,
}

fn cmd_batch(args: &BatchArgs, file: &FileConfig) -> CliResult<()> {
    let r = resolve(&args.episode, file)?;
    let (manager, executor) = agents(&r)?;
    let range = args
        .seeds
        .as_deref()
        .or(file.seeds.as_deref())
        .ok_or_else(|| CliError::Usage("--seeds is required".into()))
        .and_then(parse_seed_range)?;
    let jobs = args
        .jobs
        .or(file.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let configs: Vec<EpisodeConfig> = range.map(|s| r.base.clone().with_seed(s)).collect();
    info!("running {} episodes on {jobs} workers", configs.len());

    let results = run_batch(&configs, &r.scene, manager.as_ref(), executor.as_ref(), jobs)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    fs::create_dir_all(&r.out).map_err(data(r.out.display()))?;
    let mut rows = Vec::with_capacity(results.len());
    let mut errors = 0;
    for (cfg, result) in configs.iter().zip(&results) {
        match result {
            Ok(log) => {
                write_log(&r.out, log, r.gzip)?;
                let is = intention_score(log);
                rows.push(EpisodeRow {
                    seed: cfg.seed,
                    outcome: outcome_name(log.outcome).into(),
                    frames: log.frames(),
                    invocations: log.invocations.len(),
                    progress_score: progress_score(log),
                    intention_score: is.value,
                    grasp_attempts: is.attempts,
                });
            }
            Err(e) => {
                warn!("seed {}: {e}", cfg.seed);
                errors += 1;
                rows.push(EpisodeRow {
                    seed: cfg.seed,
                    outcome: "error".into(),
                    frames: 0,
                    invocations: 0,
                    progress_score: 0.0,
                    intention_score: 0.0,
                    grasp_attempts: 0,
                });
            }
        }
    }

    let episodes_csv = r.out.join("episodes.csv");
    let mut w = csv::Writer::from_path(&episodes_csv).map_err(data(episodes_csv.display()))?;
    for row in &rows {
        w.serialize(row).map_err(data(episodes_csv.display()))?;
    }
    w.flush().map_err(data(episodes_csv.display()))?;

    let n = rows.len();
    let successes = rows.iter().filter(|r| r.outcome == "success").count();
    let mean = |f: fn(&EpisodeRow) -> f64| if n == 0 { 0.0 } else { rows.iter().map(f).sum::<f64>() / n as f64 };
    let rate = if n == 0 { 0.0 } else { successes as f64 / n as f64 };
    let (lo, hi) = wilson_interval(rate, n, Z95);
    let summary = SummaryRow {
        episodes: n,
        successes,
        errors,
        success_rate: rate,
        wilson_low: lo,
        wilson_high: hi,
        mean_progress_score: mean(|r| r.progress_score),
        mean_intention_score: mean(|r| r.intention_score),
    };
    let summary_csv = r.out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_csv).map_err(data(summary_csv.display()))?;
    w.serialize(&summary).map_err(data(summary_csv.display()))?;
    w.flush().map_err(data(summary_csv.display()))?;
    info!("success {successes}/{n} ({rate:.3}, 95% CI {lo:.3}..{hi:.3})");

    if errors > 0 {
        return Err(CliError::Data(format!("{errors} episode(s) failed")));
    }
    Ok(())
}

#[derive(Deserialize)]
struct TrajectoryPair {
    #[serde(default)]
    id: Option<String>,
    predicted: Vec<[f64; 2]>,
    reference: Vec<[f64; 2]>,
}

fn normalize(points: &[[f64; 2]]) -> Result<NormTrajectory, loho::metrics::MetricError> {
    NormTrajectory::new(points.iter().map(|p| (p[0] / 1000.0, p[1] / 1000.0)).collect())
}

/// Shortest round-trip form that always keeps a decimal point.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    if args.m < 2 {
        return Err(CliError::Usage("--m must be >= 2".into()));
    }
    let input = File::open(&args.input).map_err(data(args.input.display()))?;
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(File::create(p).map_err(data(p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["id", "dfd", "hausdorff", "rmse"]).map_err(data("csv"))?;
    let mut sums = [0.0; 3];
    let mut count = 0usize;
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(data(args.input.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let where_ = format!("{} line {}", args.input.display(), i + 1);
        let pair: TrajectoryPair = serde_json::from_str(&line).map_err(data(&where_))?;
        let p = normalize(&pair.predicted).map_err(data(&where_))?;
        let q = normalize(&pair.reference).map_err(data(&where_))?;
        let s = score_pair(&p, &q, args.m).map_err(data(&where_))?;
        let id = pair.id.unwrap_or_else(|| count.to_string());
        w.write_record([id, fmt_f64(s.dfd), fmt_f64(s.hausdorff), fmt_f64(s.rmse)])
            .map_err(data("csv"))?;
        for (acc, v) in sums.iter_mut().zip([s.dfd, s.hausdorff, s.rmse]) {
            *acc += v;
        }
        count += 1;
    }
    if count > 0 {
        let mean = sums.map(|v| fmt_f64(v / count as f64));
        w.write_record(["mean", &mean[0], &mean[1], &mean[2]]).map_err(data("csv"))?;
    }
    w.flush().map_err(data("csv"))?;
    Ok(())
}

fn collect_logs(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(data(p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    name.starts_with("episode_") && (name.ends_with(".jsonl") || name.ends_with(".jsonl.gz"))
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn cmd_curate(args: &CurateArgs, file: &FileConfig) -> CliResult<()> {
    let stride = args.stride.or(file.stride).unwrap_or(DEFAULT_STRIDE);
    let k_wp = args.k_wp.or(file.k_wp).unwrap_or(DEFAULT_WAYPOINTS);
    let failures = args.failures.or(file.failures).unwrap_or(0);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    if stride == 0 || k_wp < 2 {
        return Err(CliError::Usage("--stride must be >= 1 and --k-wp >= 2".into()));
    }
    if let Some(dir) = &args.render_dir {
        fs::create_dir_all(dir).map_err(data(dir.display()))?;
    }

    let out = File::create(&args.out).map_err(data(args.out.display()))?;
    let mut out = BufWriter::new(out);
    let mut written = 0usize;
    for path in collect_logs(&args.logs)? {
        let log = EpisodeLog::load(&path).map_err(data(path.display()))?;
        let spans = match segment(&log) {
            Ok(s) => s,
            Err(e) => {
                warn!("{}: skipped ({e})", path.display());
                continue;
            }
        };
        let mut samples = match extract_samples(&log, &spans, stride, k_wp) {
            Ok(s) => s,
            Err(e) => {
                warn!("{}: skipped ({e})", path.display());
                continue;
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ log.config.seed.rotate_left(32));
        for _ in 0..failures {
            match synthesize_failure(&log, &spans, k_wp, &mut rng) {
                Ok(s) => samples.push(s),
                Err(e) => {
                    warn!("{}: no recovery sample ({e})", path.display());
                    break;
                }
            }
        }
        for mut sample in samples {
            if let (Some(dir), Some(trace)) = (&args.render_dir, &sample.target_trace) {
                let img = dir.join(format!("sample_{written}.ppm"));
                let canvas = Canvas::new(args.width, args.height, [0; 3]).map_err(|e| CliError::Usage(e.to_string()))?;
                let canvas = render_trace(canvas, trace, &TraceStyle::default());
                let f = File::create(&img).map_err(data(img.display()))?;
                canvas.write_ppm(BufWriter::new(f)).map_err(data(img.display()))?;
                sample.image = Some(img.display().to_string());
            }
            serde_json::to_writer(&mut out, &sample).map_err(data(args.out.display()))?;
            out.write_all(b"\n").map_err(data(args.out.display()))?;
            written += 1;
        }
    }
    out.flush().map_err(data(args.out.display()))?;
    info!("wrote {written} samples to {}", args.out.display());
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> CliResult<()> {
    let input = File::open(&args.input).map_err(data(args.input.display()))?;
    let line = BufReader::new(input)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .nth(args.index)
        .ok_or_else(|| CliError::Data(format!("{} has no sample {}", args.input.display(), args.index)))?
        .map_err(data(args.input.display()))?;
    let sample: SupervisionSample = serde_json::from_str(&line).map_err(data(args.input.display()))?;
    let trace = sample
        .target_trace
        .ok_or_else(|| CliError::Data(format!("sample {} is terminal and has no trace", args.index)))?;
    let canvas = Canvas::new(args.width, args.height, [0; 3]).map_err(|e| CliError::Usage(e.to_string()))?;
    let style = TraceStyle {
        gradient: args.gradient,
        ..TraceStyle::default()
    };
    let canvas = render_trace(canvas, &trace, &style);
    let f = File::create(&args.out).map_err(data(args.out.display()))?;
    let mut w = BufWriter::new(f);
    canvas.write_ppm(&mut w).map_err(data(args.out.display()))?;
    w.flush().map_err(data(args.out.display()))?;
    let head: Pixel = trace.head();
    info!("rendered {} waypoints from ({}, {})", trace.waypoints().len(), head.x, head.y);
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let file = load_file_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Run(a) => cmd_run(a, &file),
        Command::Batch(a) => cmd_batch(a, &file),
        Command::Eval(a) => cmd_eval(a),
        Command::Curate(a) => cmd_curate(a, &file),
        Command::RenderTrace(a) => cmd_render(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LOHO_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
