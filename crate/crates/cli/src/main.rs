use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use airsep::checkpoint::{load_checkpoint, Checkpoint};
use airsep::error::{CheckpointError, Error, Result};
use airsep::experiment::{evaluate, parse_count_range, sweep, sweep_csv, EvalConfig, EvalReport};
use airsep::geometry::{load_sector_set, SectorSet};
use airsep::policy::{EncoderKind, NetConfig, Policy};
use airsep::sim::RewardParams;
use airsep::train::{detect_convergence, train, ActionMode, ConvergenceStop, LearningCurve, TrainConfig};

#[derive(Parser)]
#[command(name = "airsep", version, about = "Sector simulator and multi-agent PPO experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write learning_curve.csv, update_log.csv and model.ckpt.
    Train(TrainArgs),
    /// Evaluate a frozen checkpoint on unseen episode seeds.
    Evaluate(EvalArgs),
    /// Evaluate a checkpoint over a range of aircraft counts.
    Sweep(SweepArgs),
    /// First episode whose rolling mean score reaches the optimum, or "-".
    Convergence(ConvergenceArgs),
    /// Histogram of hold / accelerate / decelerate decisions.
    ActionDist(EvalArgs),
}

#[derive(Args)]
struct RewardArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Penalty for any speed change.
    #[arg(long)]
    psi: Option<f64>,
}

impl RewardArgs {
    fn params(&self) -> RewardParams {
        let d = RewardParams::default();
        RewardParams {
            alpha: self.alpha.unwrap_or(d.alpha),
            delta: self.delta.unwrap_or(d.delta),
            psi: self.psi.unwrap_or(d.psi),
            ..d
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    workers: usize,
    #[arg(long)]
    episodes: usize,
    #[arg(long, default_value = "attention")]
    encoder: String,
    #[arg(long)]
    out: PathBuf,
    /// Start from this checkpoint's parameters.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long = "n-aircraft", default_value_t = 30)]
    n_aircraft: usize,
    #[arg(long = "episodes-per-round", default_value_t = 30)]
    episodes_per_round: usize,
    /// Write a checkpoint every this many rounds.
    #[arg(long = "checkpoint-every")]
    checkpoint_every: Option<usize>,
    /// Stop once the rolling mean score reaches this value.
    #[arg(long = "stop-at")]
    stop_at: Option<f64>,
    #[arg(long, default_value_t = 150)]
    window: usize,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    reward: RewardArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long = "n-aircraft", default_value_t = 30)]
    n_aircraft: usize,
    /// Expected encoder; rejected if the checkpoint holds another.
    #[arg(long)]
    encoder: Option<String>,
    /// Take the most probable action instead of sampling.
    #[arg(long)]
    greedy: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    reward: RewardArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// start:end:step, end inclusive.
    #[arg(long, default_value = "10:100:10")]
    aircraft: String,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long)]
    curve: PathBuf,
    #[arg(long)]
    optimal: f64,
    #[arg(long, default_value_t = 150)]
    window: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e);
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Convergence(a) => cmd_convergence(a),
        Command::ActionDist(a) => cmd_action_dist(a),
    }
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    let io = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(io)?.next().is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (pass --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(io)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn check_encoder(ckpt: &Checkpoint, expected: Option<&str>) -> Result<()> {
    if let Some(name) = expected {
        let kind: EncoderKind = name.parse()?;
        if kind != ckpt.config.encoder {
            return Err(CheckpointError::LayoutMismatch(format!(
                "checkpoint holds a {} network, {} was requested",
                ckpt.config.encoder, kind
            ))
            .into());
        }
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let encoder: EncoderKind = a.encoder.parse()?;
    let sectors = load_sector_set(&a.config)?;
    let (net, init) = match &a.init {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            check_encoder(&ckpt, Some(&a.encoder))?;
            (ckpt.config, Some(ckpt.params))
        }
        None => (NetConfig::with_encoder(encoder), None),
    };
    let mut config = TrainConfig::new(sectors, net);
    config.n_total = a.n_aircraft;
    config.workers = a.workers;
    config.episodes_per_round = a.episodes_per_round;
    config.total_episodes = a.episodes;
    config.seed = a.seed;
    config.reward = a.reward.params();
    config.checkpoint_every = a.checkpoint_every;
    config.init = init;
    config.stop = a.stop_at.map(|target| ConvergenceStop { target, window: a.window });
    config.validate()?;
    prepare_out_dir(&a.out, a.force)?;
    config.out_dir = Some(a.out.clone());
    let outcome = train(&config)?;
    let scores = outcome.curve.scores();
    let tail = &scores[scores.len().saturating_sub(150)..];
    println!(
        "episodes {} updates {} final_mean_score {}",
        outcome.curve.len(),
        outcome.updates.len(),
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    );
    if let Some(e) = outcome.converged_at {
        println!("converged_at {e}");
    }
    Ok(())
}

struct Loaded {
    policy: Policy,
    sectors: SectorSet,
    config: EvalConfig,
}

fn load_for_eval(a: &EvalArgs) -> Result<Loaded> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    check_encoder(&ckpt, a.encoder.as_deref())?;
    let sectors = load_sector_set(&a.config)?;
    let mut config = EvalConfig::new(a.n_aircraft, a.episodes, a.seed);
    config.workers = a.workers;
    config.reward = a.reward.params();
    if a.greedy {
        config.mode = ActionMode::Greedy;
    }
    Ok(Loaded {
        policy: Policy::from_params(ckpt.config, ckpt.params)?,
        sectors,
        config,
    })
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    let l = load_for_eval(&a)?;
    prepare_out_dir(&a.out, a.force)?;
    let report = evaluate(&l.policy, &l.sectors, &l.config)?;
    report.write(&a.out)?;
    print!("{}", report.summary());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let counts = parse_count_range(&a.aircraft)?;
    let l = load_for_eval(&a.eval)?;
    prepare_out_dir(&a.eval.out, a.eval.force)?;
    let points = sweep(&l.policy, &l.sectors, &counts, &l.config)?;
    let csv = sweep_csv(&points);
    write(&a.eval.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_convergence(a: ConvergenceArgs) -> Result<()> {
    if a.window == 0 {
        return Err(Error::Config("window must be >= 1".into()));
    }
    let curve = LearningCurve::load(&a.curve)?;
    match detect_convergence(&curve.scores(), a.optimal, a.window) {
        Some(e) => println!("{e}"),
        None => println!("-"),
    }
    Ok(())
}

fn cmd_action_dist(a: EvalArgs) -> Result<()> {
    let l = load_for_eval(&a)?;
    prepare_out_dir(&a.out, a.force)?;
    let report: EvalReport = evaluate(&l.policy, &l.sectors, &l.config)?;
    let csv = report.actions.to_csv();
    write(&a.out.join("action_dist.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
