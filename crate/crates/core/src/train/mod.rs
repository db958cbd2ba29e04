//! Synchronous rollout/update loop: workers run whole episodes under a frozen
//! parameter snapshot, then the single learner performs one PPO update.

mod curve;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use curve::{detect_convergence, EpisodeRecord, EpisodeStats, LearningCurve, CURVE_HEADER};

use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::geometry::{SectorConfig, SectorSet};
use crate::policy::{sample_action, NetConfig, Policy};
use crate::ppo::{update, AgentTrajectory, HyperParams, RolloutBatch, Transition, UpdateStats};
use crate::seed::{mix, mix3, tag};
use crate::sim::{Action, AircraftId, RewardParams, SimState};
use crate::tensor::{AdamConfig, AdamState, ParamSet};


pub const UPDATE_LOG_HEADER: &str =
    "round,param_version,episodes,samples,steps,actor_loss,critic_loss,entropy,mean_ratio,clip_fraction,grad_norm";

/// Seed of episode `slot` in collection round `round`.
pub fn episode_seed(master: u64, round: u64, slot: u64) -> u64 {
    mix3(master, round, slot)
}

/// Seed of evaluation episode `k`; disjoint from every training stream.
pub fn eval_seed(master: u64, k: u64) -> u64 {
    mix3(master ^ tag::EVAL, tag::EVAL, k)
}

/// Sector drawn for an episode, uniform over the set.
pub fn sector_index(episode_seed: u64, n_sectors: usize) -> usize {
    (mix(episode_seed, tag::SECTOR) % n_sectors as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub seed: u64,
    pub sector: usize,
    pub stats: EpisodeStats,
    /// Ascending by aircraft id. Empty unless trajectories were requested.
    pub trajectories: Vec<AgentTrajectory>,
}

/// Episode parameters shared by training and evaluation.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub sectors: Vec<Arc<SectorConfig>>,
    pub n_total: usize,
    /// Reward coefficients; separation radii come from each sector.
    pub reward: RewardParams,
    pub mode: ActionMode,
}

impl EpisodeSetup {
    pub fn new(sectors: &SectorSet, n_total: usize, reward: RewardParams) -> Self {
        EpisodeSetup {
            sectors: sectors.sectors.iter().cloned().map(Arc::new).collect(),
            n_total,
            reward,
            mode: ActionMode::Sample,
        }
    }
}

/// Runs one full episode. Every aircraft samples from its own RNG stream
/// keyed by (episode seed, aircraft id), acting only on its own observation.
pub fn run_episode(policy: &Policy, setup: &EpisodeSetup, seed: u64, keep_trajectories: bool) -> Result<EpisodeResult> {
    let sector_ix = sector_index(seed, setup.sectors.len());
    let sector = Arc::clone(&setup.sectors[sector_ix]);
    let reward = RewardParams {
        d_los: sector.params.d_los,
        d_alert: sector.params.d_alert,
        ..setup.reward
    };
    let (mut state, mut obs) = SimState::reset_with(sector, setup.n_total, seed, reward)?;
    let action_root = mix(seed, tag::ACTION);
    let mut rngs: BTreeMap<AircraftId, ChaCha8Rng> = BTreeMap::new();
    let mut open: BTreeMap<AircraftId, Vec<Transition>> = BTreeMap::new();
    let mut done: Vec<AgentTrajectory> = Vec::new();
    let mut stats = EpisodeStats::default();
    while !state.is_terminal() {
        if obs.is_empty() {
            state.idle_step()?;
            obs = state.observations();
            continue;
        }
        let outs = policy.evaluate(&obs)?;
        let mut actions = BTreeMap::new();
        let mut chosen = Vec::with_capacity(obs.len());
        for (o, out) in obs.iter().zip(&outs) {
            let k = match setup.mode {
                ActionMode::Greedy => out.greedy(),
                ActionMode::Sample => {
                    let rng = rngs
                        .entry(o.id)
                        .or_insert_with(|| ChaCha8Rng::seed_from_u64(mix(action_root, o.id as u64)));
                    sample_action(&out.probs, rng)?.0
                }
            };
            let action = Action::from_index(k).expect("three actions");
            match action {
                Action::Hold => stats.n_hold += 1,
                Action::Accelerate => stats.n_accel += 1,
                Action::Decelerate => stats.n_decel += 1,
            }
            actions.insert(o.id, action);
            chosen.push(k);
        }
        let outcome = state.step(&actions)?;
        let mut pending: BTreeMap<AircraftId, (usize, usize)> = BTreeMap::new();
        for (i, o) in obs.iter().enumerate() {
            pending.insert(o.id, (i, chosen[i]));
        }
        let mut obs_by_id: BTreeMap<AircraftId, _> = obs.into_iter().map(|o| (o.id, o)).collect();
        for tr in &outcome.transitions {
            stats.ret += tr.reward;
            if !keep_trajectories {
                continue;
            }
            let (i, k) = pending[&tr.id];
            let t = Transition {
                obs: obs_by_id.remove(&tr.id).expect("observation of acting aircraft"),
                action: k,
                log_prob: outs[i].log_probs[k],
                value: outs[i].value,
                reward: tr.reward,
                done: tr.done,
            };
            let list = open.entry(tr.id).or_default();
            list.push(t);
            if tr.done {
                done.push(AgentTrajectory {
                    episode: 0,
                    aircraft: tr.id,
                    transitions: open.remove(&tr.id).expect("open trajectory"),
                });
            }
        }
        obs = outcome.observations;
    }
    stats.score = state.episode_score()?;
    stats.los_events = state.los_events();
    done.sort_by_key(|t| t.aircraft);
    Ok(EpisodeResult {
        seed,
        sector: sector_ix,
        stats,
        trajectories: done,
    })
}

/// Maps `f` over `items` on `pool`, returning results in input order no
/// matter which worker finishes first.
pub(crate) fn ordered_map<I: Sync, O: Send>(
    pool: &rayon::ThreadPool,
    items: &[I],
    f: impl Fn(&I) -> O + Sync + Send,
) -> Vec<O> {
    pool.install(|| items.par_iter().map(f).collect())
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Runs the given episodes in parallel and reduces them in seed order. The
/// first failing episode (in that order) aborts the round.
pub fn run_episodes(
    pool: &rayon::ThreadPool,
    policy: &Policy,
    setup: &EpisodeSetup,
    seeds: &[u64],
    keep_trajectories: bool,
) -> Result<Vec<EpisodeResult>> {
    ordered_map(pool, seeds, |&s| {
        run_episode(policy, setup, s, keep_trajectories).map_err(|e| Error::Worker {
            seed: s,
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect()
}

/// One collection round under the current parameter snapshot.
pub fn collect_round(
    pool: &rayon::ThreadPool,
    policy: &Policy,
    setup: &EpisodeSetup,
    seeds: &[u64],
) -> Result<(RolloutBatch, Vec<EpisodeStats>)> {
    let results = run_episodes(pool, policy, setup, seeds, true)?;
    let mut trajectories = Vec::new();
    let mut stats = Vec::with_capacity(results.len());
    for (slot, r) in results.into_iter().enumerate() {
        stats.push(r.stats);
        trajectories.extend(r.trajectories.into_iter().map(|mut t| {
            t.episode = slot;
            t
        }));
    }
    Ok((
        RolloutBatch {
            version: policy.params.version,
            trajectories,
        },
        stats,
    ))
}

/// Stop once the trailing `window`-episode mean score reaches `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStop {
    pub target: f64,
    pub window: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub sectors: SectorSet,
    pub n_total: usize,
    pub workers: usize,
    pub episodes_per_round: usize,
    pub total_episodes: usize,
    pub seed: u64,
    pub net: NetConfig,
    pub hyper: HyperParams,
    pub reward: RewardParams,
    /// Write a checkpoint every this many rounds (needs `out_dir`).
    pub checkpoint_every: Option<usize>,
    /// Where the curve, update log and checkpoints go.
    pub out_dir: Option<PathBuf>,
    /// Starting parameters (transfer learning); fresh initialization if unset.
    pub init: Option<ParamSet<f32>>,
    pub stop: Option<ConvergenceStop>,
}

impl TrainConfig {
    pub fn new(sectors: SectorSet, net: NetConfig) -> Self {
        TrainConfig {
            sectors,
            n_total: 30,
            workers: 30,
            episodes_per_round: 30,
            total_episodes: 30,
            seed: 0,
            net,
            hyper: HyperParams::default(),
            reward: RewardParams::default(),
            checkpoint_every: None,
            out_dir: None,
            init: None,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.episodes_per_round == 0 {
            return Err(Error::Config("workers and episodes_per_round must be >= 1".into()));
        }
        if self.total_episodes < self.episodes_per_round {
            return Err(Error::Config(format!(
                "episode budget {} is smaller than one round ({})",
                self.total_episodes, self.episodes_per_round
            )));
        }
        if self.n_total == 0 || self.sectors.is_empty() {
            return Err(Error::Config("need at least one aircraft and one sector".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        self.net.validate()?;
        self.hyper.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub curve: LearningCurve,
    pub updates: Vec<UpdateStats>,
    /// Convergence episode when a stop criterion was configured and met.
    pub converged_at: Option<usize>,
}

struct Logs {
    dir: PathBuf,
    curve: BufWriter<File>,
    updates: BufWriter<File>,
}

impl Logs {
    fn create(dir: &std::path::Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str, header: &str| -> Result<BufWriter<File>> {
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(w, "{header}").map_err(|e| Error::io(&path, e))?;
            Ok(w)
        };
        Ok(Logs {
            dir: dir.to_path_buf(),
            curve: open("learning_curve.csv", CURVE_HEADER)?,
            updates: open("update_log.csv", UPDATE_LOG_HEADER)?,
        })
    }

    fn flush(&mut self) -> Result<()> {
        let dir = self.dir.clone();
        self.curve.flush().map_err(|e| Error::io(&dir, e))?;
        self.updates.flush().map_err(|e| Error::io(&dir, e))
    }
}

/// Trains until the episode budget is spent (or the stop criterion fires).
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut policy = match &config.init {
        Some(p) => {
            let mut p = p.clone();
            p.version = 0;
            Policy::from_params(config.net.clone(), p)?
        }
        None => Policy::new(config.net.clone(), config.seed)?,
    };
    let setup = EpisodeSetup::new(&config.sectors, config.n_total, config.reward);
    let pool = worker_pool(config.workers)?;
    let mut adam = AdamState::new(
        &policy.params,
        AdamConfig {
            lr: config.hyper.lr,
            ..AdamConfig::default()
        },
    );
    let mut logs = config.out_dir.as_deref().map(Logs::create).transpose()?;
    let mut curve = LearningCurve::default();
    let mut updates = Vec::new();
    let mut converged_at = None;
    let mut round = 0u64;
    while curve.len() < config.total_episodes {
        let n = config.episodes_per_round.min(config.total_episodes - curve.len());
        let seeds: Vec<u64> = (0..n as u64).map(|s| episode_seed(config.seed, round, s)).collect();
        let (batch, stats) = collect_round(&pool, &policy, &setup, &seeds)?;
        for s in stats {
            curve.push(s, policy.params.version);
            if let Some(l) = logs.as_mut() {
                let row = curve.records.last().expect("just pushed").csv_row();
                writeln!(l.curve, "{row}").map_err(|e| Error::io(&l.dir, e))?;
            }
        }
        if config.net.encoder.is_trainable() {
            let st = update(&mut policy.params, &config.net, &batch, &config.hyper, &mut adam, config.seed)?;
            if let Some(l) = logs.as_mut() {
                writeln!(
                    l.updates,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    round,
                    policy.params.version,
                    n,
                    st.samples,
                    st.steps,
                    st.actor_loss,
                    st.critic_loss,
                    st.entropy,
                    st.mean_ratio,
                    st.clip_fraction,
                    st.grad_norm
                )
                .map_err(|e| Error::io(&l.dir, e))?;
            }
            updates.push(st);
        }
        round += 1;
        if let Some(l) = logs.as_mut() {
            l.flush()?;
            if config.checkpoint_every.is_some_and(|k| round % k as u64 == 0) {
                let path = l.dir.join(format!("checkpoint_ep{:06}.ckpt", curve.len()));
                save_checkpoint(&path, &config.net, &policy.params)?;
            }
        }
        if let Some(stop) = config.stop {
            if let Some(e) = detect_convergence(&curve.scores(), stop.target, stop.window) {
                converged_at = Some(e);
                break;
            }
        }
    }
    if let Some(l) = logs.as_mut() {
        l.flush()?;
        save_checkpoint(&l.dir.join("model.ckpt"), &config.net, &policy.params)?;
    }
    Ok(TrainOutcome {
        policy,
        curve,
        updates,
        converged_at,
    })
}
