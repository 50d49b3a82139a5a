use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spar::formats::{load_world, render_trajectories, write_trajectories, Checkpoint};
use spar::report::{build_report, final_tsv, write_report};
use spar::run::{
    self, checkpoint_file, collect_shared, load_buffer, load_config, load_novice, pretrain, run_full, train_method,
    RunDir, SHARED_BUFFER_FILE,
};
use spar::session::{serve, Session, SessionConfig, TimeoutPolicy};
use spar_core::hitl::PolicyMode;
use spar_core::learn::Method;
use spar_core::net::NetParams;
use spar_core::protocol::{sample_starts, ExperimentConfig};
use spar_core::world::{RiverWorld, WorldSpec};

#[derive(Parser)]
#[command(name = "spar", version, about = "Statewise preference alignment experiments and live sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the world and config, pretrain and evaluate the novice.
    Pretrain(PretrainArgs),
    /// Collect overseen rollouts into a trajectory log.
    Rollout(RolloutArgs),
    /// Sequential per-episode retraining with checkpoints.
    Retrain(RetrainArgs),
    /// Overseer-free evaluation of a checkpoint on every start.
    Evaluate(EvaluateArgs),
    /// Build the report tables from the run directory.
    Report(RunArg),
    /// Live session for a remote operator.
    Serve(ServeArgs),
    /// Pretrain, shared rollouts, every method and the report in one go.
    Protocol(PretrainArgs),
}

#[derive(Args)]
struct RunArg {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// World definition JSON; the built-in river when absent.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    run: RunArg,
    #[command(flatten)]
    config: ConfigArgs,
    /// Methods to run; all when absent.
    #[arg(long = "method")]
    methods: Vec<Method>,
    /// Let each method collect its own rollouts instead of sharing the
    /// novice's.
    #[arg(long)]
    fresh_rollouts: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OverseerKind {
    Scripted,
    Remote,
}

#[derive(Args)]
struct RolloutArgs {
    #[command(flatten)]
    run: RunArg,
    #[command(flatten)]
    config: ConfigArgs,
    /// Roll out this method's final checkpoint instead of the novice.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, value_enum, default_value = "scripted")]
    overseer: OverseerKind,
    /// Output log; `shared_buffer.jsonl` in the run directory by default.
    #[arg(long)]
    shared_buffer: Option<PathBuf>,
    #[command(flatten)]
    remote: RemoteArgs,
}

#[derive(Args)]
struct RetrainArgs {
    #[command(flatten)]
    run: RunArg,
    /// Methods to retrain; all configured methods when absent.
    #[arg(long = "method")]
    methods: Vec<Method>,
    /// Trajectory log every method trains on.
    #[arg(long)]
    shared_buffer: Option<PathBuf>,
    #[arg(long)]
    fresh_rollouts: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Reward-to-go horizon K.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArg,
    /// Final checkpoint of this method; the novice when neither this nor
    /// --checkpoint is given.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, conflicts_with = "method")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "greedy")]
    mode: Mode,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Sampled,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnTimeout {
    Accept,
    Pause,
}

#[derive(Args)]
struct RemoteArgs {
    #[arg(long, default_value_t = 8765)]
    port: u16,
    /// Session token the operator must present.
    #[arg(long)]
    token: Option<String>,
    /// Retrain every N executed steps when the window holds an intervention.
    #[arg(long)]
    online_retrain: Option<usize>,
    /// Method for online and requested retrains.
    #[arg(long, default_value = "SPAR-H")]
    retrain_method: Method,
    /// Decision timeout in milliseconds; none by default.
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long, value_enum, default_value = "pause")]
    on_timeout: OnTimeout,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    run: RunArg,
    #[command(flatten)]
    config: ConfigArgs,
    /// Start from this method's final checkpoint instead of the novice.
    #[arg(long)]
    method: Option<Method>,
    #[command(flatten)]
    remote: RemoteArgs,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> spar::Result<()> {
    match cmd {
        Command::Pretrain(a) => {
            let cfg = experiment(None, &a.config, &a.methods, a.fresh_rollouts)?;
            let mut run = RunDir::create(&a.run.run)?;
            let (_, eval) = pretrain(&mut run, &cfg)?;
            println!(
                "novice: coverage {:.3} after {} updates; baseline mean {} std {}",
                eval.coverage, eval.updates, eval.baseline.mean, eval.baseline.std
            );
            Ok(())
        }
        Command::Protocol(a) => {
            let cfg = experiment(None, &a.config, &a.methods, a.fresh_rollouts)?;
            let run = run_full(&a.run.run, &cfg)?;
            print!("{}", final_tsv(&build_report(&run)?));
            Ok(())
        }
        Command::Rollout(a) => rollout(a),
        Command::Retrain(a) => retrain(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => {
            let mut run = RunDir::open(&a.run)?;
            let report = build_report(&run)?;
            write_report(&mut run, &report)?;
            print!("{}", final_tsv(&report));
            Ok(())
        }
        Command::Serve(a) => {
            let mut run = RunDir::open(&a.run.run)?;
            let cfg = experiment(Some(&run), &a.config, &[], false)?;
            let params = starting_params(&run, a.method, &cfg)?;
            let session = remote_session(&mut run, &cfg, params, &a.remote)?;
            let t = session.completed().len();
            println!("session {}: {t} episodes, {} retrains", session.id(), session.retrains());
            Ok(())
        }
    }
}

/// The run's config, or a fresh one, with flag overrides applied.
fn experiment(
    run: Option<&RunDir>,
    flags: &ConfigArgs,
    methods: &[Method],
    fresh: bool,
) -> spar::Result<ExperimentConfig> {
    let stored = match run {
        Some(r) if r.exists(run::CONFIG_FILE) => Some(load_config(r)?),
        _ => None,
    };
    let world: WorldSpec = match &flags.world {
        Some(p) => load_world(p)?.spec().clone(),
        None => stored.as_ref().map_or_else(WorldSpec::default_river, |c| c.world.clone()),
    };
    let seed = flags.seed.or(stored.as_ref().map(|c| c.seed)).unwrap_or(1);
    let mut cfg = match stored {
        Some(c) if flags.world.is_none() && flags.seed.is_none() && flags.episodes.is_none() => c,
        _ => ExperimentConfig::new(world.clone(), seed)?,
    };
    if let Some(n) = flags.episodes {
        cfg.num_episodes = n;
        cfg.starts = sample_starts(&RiverWorld::new(world)?, n, seed)?;
    }
    if !methods.is_empty() {
        cfg.methods = methods.to_vec();
    }
    if fresh {
        cfg.shared_rollouts = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn final_checkpoint(run: &RunDir, cfg: &ExperimentConfig, method: Method) -> PathBuf {
    run.path(&checkpoint_file(method, cfg.num_episodes.saturating_sub(1)))
}

fn starting_params(run: &RunDir, method: Option<Method>, cfg: &ExperimentConfig) -> spar::Result<NetParams> {
    match method {
        Some(m) => Ok(Checkpoint::load(&final_checkpoint(run, cfg, m))?.params),
        None => load_novice(run),
    }
}

fn rollout(a: RolloutArgs) -> spar::Result<()> {
    let mut run = RunDir::open(&a.run.run)?;
    let cfg = experiment(Some(&run), &a.config, &[], false)?;
    let params = starting_params(&run, a.method, &cfg)?;
    let buffer = match a.overseer {
        OverseerKind::Scripted => {
            let world = RiverWorld::new(cfg.world.clone())?;
            spar_core::protocol::collect_rollouts(&world, &params, &cfg)?
        }
        OverseerKind::Remote => remote_session(&mut run, &cfg, params, &a.remote)?.completed().clone(),
    };
    match &a.shared_buffer {
        Some(path) => match path.strip_prefix(run.root()) {
            Ok(rel) => run.put(&rel.to_string_lossy(), "trajectories", &render_trajectories(buffer.trajectories()))?,
            Err(_) => write_trajectories(path, buffer.trajectories())?,
        },
        None => run.put(SHARED_BUFFER_FILE, "trajectories", &render_trajectories(buffer.trajectories()))?,
    }
    let table = spar_core::protocol::intervention_table(&buffer);
    for r in &table.rows {
        println!("episode {}: {} steps, {} interventions", r.episode, r.steps, r.interventions);
    }
    println!(
        "overall: {} steps, {} interventions ({:.2}%)",
        table.overall.steps,
        table.overall.interventions,
        100.0 * table.overall.rate
    );
    Ok(())
}

fn retrain(a: RetrainArgs) -> spar::Result<()> {
    let mut run = RunDir::open(&a.run.run)?;
    let mut cfg = load_config(&run)?;
    let h = &mut cfg.hyper;
    h.alpha = a.alpha.unwrap_or(h.alpha);
    h.eta = a.eta.unwrap_or(h.eta);
    h.lambda = a.lambda.unwrap_or(h.lambda);
    h.horizon = a.horizon.unwrap_or(h.horizon);
    h.epochs = a.epochs.unwrap_or(h.epochs);
    h.lr = a.lr.unwrap_or(h.lr);
    if a.fresh_rollouts {
        cfg.shared_rollouts = false;
    }
    cfg.validate()?;
    let novice = load_novice(&run)?;
    let shared = if cfg.shared_rollouts {
        let path = a.shared_buffer.clone().unwrap_or_else(|| run.path(SHARED_BUFFER_FILE));
        Some(if path.exists() {
            load_buffer(&path)?
        } else {
            collect_shared(&mut run, &cfg, &novice, SHARED_BUFFER_FILE)?
        })
    } else {
        None
    };
    let methods = if a.methods.is_empty() { cfg.methods.clone() } else { a.methods };
    for m in methods {
        let result = train_method(&mut run, &cfg, &novice, m, shared.as_ref())?;
        let rewards = result.final_rewards();
        let (mean, std) = spar_core::protocol::mean_std(&rewards);
        println!("{m}: final mean {mean} std {std}");
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> spar::Result<()> {
    let mut run = RunDir::open(&a.run.run)?;
    let mut cfg = load_config(&run)?;
    cfg.eval_mode = match a.mode {
        Mode::Greedy => PolicyMode::Greedy,
        Mode::Sampled => PolicyMode::Sampled,
    };
    let (label, params) = match (&a.checkpoint, a.method) {
        (Some(p), _) => (file_label(p), Checkpoint::load(p)?.params),
        (None, Some(m)) => (run::slug(m), Checkpoint::load(&final_checkpoint(&run, &cfg, m))?.params),
        (None, None) => ("novice".to_owned(), load_novice(&run)?),
    };
    let summary = run::evaluate_params(&cfg, &params, &cfg.starts)?;
    let mode = match a.mode {
        Mode::Greedy => "greedy",
        Mode::Sampled => "sampled",
    };
    run.put_json(&format!("evaluations/{label}_{mode}.json"), "evaluation", &summary)?;
    println!("{label}: rewards {:?} mean {} std {}", summary.rewards(), summary.mean, summary.std);
    Ok(())
}

fn file_label(p: &Path) -> String {
    p.file_stem().map_or_else(|| "checkpoint".to_owned(), |s| s.to_string_lossy().into_owned())
}

fn remote_session(
    run: &mut RunDir,
    cfg: &ExperimentConfig,
    params: NetParams,
    remote: &RemoteArgs,
) -> spar::Result<Session> {
    let n = (0..)
        .find(|i| !run.path(&format!("sessions/{i}")).exists())
        .expect("unbounded range");
    let mut scfg = SessionConfig::new(format!("session-{}-{n}", cfg.seed), cfg.starts.clone(), cfg.seed);
    scfg.method = remote.retrain_method;
    scfg.hyper = spar_core::learn::HyperParams {
        seed: cfg.seed,
        ..cfg.hyper
    };
    scfg.online_retrain_interval = remote.online_retrain;
    scfg.decision_timeout = remote.timeout_ms.map(Duration::from_millis);
    scfg.on_timeout = match remote.on_timeout {
        OnTimeout::Accept => TimeoutPolicy::AutoAccept,
        OnTimeout::Pause => TimeoutPolicy::Pause,
    };
    scfg.token.clone_from(&remote.token);
    scfg.out_dir = Some(run.path(&format!("sessions/{n}")));
    let world = RiverWorld::new(cfg.world.clone())?;
    let listener = TcpListener::bind(("127.0.0.1", remote.port))
        .map_err(|e| spar::Error::Session(format!("bind port {}: {e}", remote.port)))?;
    eprintln!("session {} on ws://127.0.0.1:{}", scfg.session_id, remote.port);
    let session = serve(listener, Session::new(scfg, world, params)?)?;
    let dir = format!("sessions/{n}");
    let mut names: Vec<String> = std::fs::read_dir(run.path(&dir))
        .map_err(spar::Error::io(run.path(&dir)))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    names.sort();
    for name in names {
        let kind = if name.ends_with(".ckpt") { "checkpoint" } else { "trajectories" };
        run.adopt(&format!("{dir}/{name}"), kind)?;
    }
    Ok(session)
}
