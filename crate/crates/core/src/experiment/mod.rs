//! Frozen-policy experiments: evaluation on unseen seeds, aircraft-count
//! sweeps and action histograms, plus their CSV outputs.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SectorSet;
use crate::policy::Policy;
use crate::sim::RewardParams;
use crate::train::{eval_seed, run_episodes, worker_pool, ActionMode, EpisodeSetup, EpisodeStats};


pub const EVAL_HEADER: &str = "episode,seed,sector,score,return,los_events,n_hold,n_accel,n_decel";
pub const SWEEP_HEADER: &str = "n_aircraft,normalized_score";
pub const ACTION_HEADER: &str = "action,count,fraction";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    pub workers: usize,
    pub n_total: usize,
    pub mode: ActionMode,
    pub reward: RewardParams,
}

impl EvalConfig {
    pub fn new(n_total: usize, episodes: usize, seed: u64) -> Self {
        EvalConfig {
            episodes,
            seed,
            workers: 1,
            n_total,
            mode: ActionMode::Sample,
            reward: RewardParams::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.n_total == 0 || self.workers == 0 {
            return Err(Error::Config("episodes, aircraft count and workers must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub episode: usize,
    pub seed: u64,
    pub sector: usize,
    pub stats: EpisodeStats,
}

/// Counts of chosen actions over every decision of every agent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionHistogram {
    pub hold: usize,
    pub accelerate: usize,
    pub decelerate: usize,
}

impl ActionHistogram {
    pub fn total(&self) -> usize {
        self.hold + self.accelerate + self.decelerate
    }

    /// (hold, accelerate, decelerate) fractions; all zero without decisions.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let n = self.total();
        if n == 0 {
            return (0.0, 0.0, 0.0);
        }
        let n = n as f64;
        (
            self.hold as f64 / n,
            self.accelerate as f64 / n,
            self.decelerate as f64 / n,
        )
    }

    pub fn to_csv(&self) -> String {
        let (h, a, d) = self.fractions();
        format!(
            "{ACTION_HEADER}\nhold,{},{h}\naccelerate,{},{a}\ndecelerate,{},{d}\n",
            self.hold, self.accelerate, self.decelerate
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: Vec<EvalEpisode>,
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero for a single episode.
    pub std: f64,
    pub median: f64,
    pub los_events: usize,
    pub actions: ActionHistogram,
}

impl EvalReport {
    pub fn from_episodes(episodes: Vec<EvalEpisode>) -> Self {
        let scores: Vec<f64> = episodes.iter().map(|e| e.stats.score as f64).collect();
        let (mean, std, median) = score_stats(&scores);
        let mut actions = ActionHistogram::default();
        let mut los_events = 0;
        for e in &episodes {
            actions.hold += e.stats.n_hold;
            actions.accelerate += e.stats.n_accel;
            actions.decelerate += e.stats.n_decel;
            los_events += e.stats.los_events;
        }
        EvalReport {
            episodes,
            mean,
            std,
            median,
            los_events,
            actions,
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.stats.score as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(EVAL_HEADER);
        s.push('\n');
        for e in &self.episodes {
            let t = &e.stats;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.episode, e.seed, e.sector, t.score, t.ret, t.los_events, t.n_hold, t.n_accel, t.n_decel
            ));
        }
        s
    }

    /// Parses `eval_episodes.csv` and recomputes every statistic from it.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::Csv { line: 1, msg: e.to_string() })?
            .unwrap_or_default();
        if header.trim() != EVAL_HEADER {
            return Err(Error::Csv {
                line: 1,
                msg: format!("expected header `{EVAL_HEADER}`"),
            });
        }
        let mut episodes = Vec::new();
        for (k, line) in lines.enumerate() {
            let line_no = k + 2;
            let line = line.map_err(|e| Error::Csv { line: line_no, msg: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Csv { line: line_no, msg };
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 9 {
                return Err(bad(format!("expected 9 fields, found {}", f.len())));
            }
            let int = |i: usize| f[i].parse::<u64>().map_err(|_| bad(format!("field {} `{}` is not an integer", i + 1, f[i])));
            let ret = f[4]
                .parse::<f64>()
                .map_err(|_| bad(format!("field 5 `{}` is not a number", f[4])))?;
            episodes.push(EvalEpisode {
                episode: int(0)? as usize,
                seed: int(1)?,
                sector: int(2)? as usize,
                stats: EpisodeStats {
                    score: int(3)? as usize,
                    ret,
                    los_events: int(5)? as usize,
                    n_hold: int(6)? as usize,
                    n_accel: int(7)? as usize,
                    n_decel: int(8)? as usize,
                },
            });
        }
        Ok(Self::from_episodes(episodes))
    }

    pub fn summary(&self) -> String {
        let (h, a, d) = self.actions.fractions();
        format!(
            "episodes {}\nmean {}\nstd {}\nmedian {}\nlos_events {}\nhold {h}\naccelerate {a}\ndecelerate {d}\n",
            self.episodes.len(),
            self.mean,
            self.std,
            self.median,
            self.los_events
        )
    }

    /// Writes `eval_episodes.csv` and `eval_summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("eval_episodes.csv"), &self.to_csv())?;
        write_file(&dir.join("eval_summary.txt"), &self.summary())
    }
}

/// Mean, sample standard deviation and median of `xs` (all zero if empty).
pub fn score_stats(xs: &[f64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    (mean, std, median)
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs `config.episodes` episodes with frozen weights on evaluation seeds.
pub fn evaluate(policy: &Policy, sectors: &SectorSet, config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let mut setup = EpisodeSetup::new(sectors, config.n_total, config.reward);
    setup.mode = config.mode;
    let seeds: Vec<u64> = (0..config.episodes as u64).map(|k| eval_seed(config.seed, k)).collect();
    let pool = worker_pool(config.workers)?;
    let results = run_episodes(&pool, policy, &setup, &seeds, false)?;
    Ok(EvalReport::from_episodes(
        results
            .into_iter()
            .enumerate()
            .map(|(k, r)| EvalEpisode {
                episode: k,
                seed: r.seed,
                sector: r.sector,
                stats: r.stats,
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_aircraft: usize,
    pub mean_score: f64,
    pub normalized_score: f64,
}

/// Evaluates the same policy at every aircraft count; the seed set is the
/// same at every count.
pub fn sweep(policy: &Policy, sectors: &SectorSet, counts: &[usize], config: &EvalConfig) -> Result<Vec<SweepPoint>> {
    if counts.is_empty() {
        return Err(Error::Config("empty aircraft-count range".into()));
    }
    counts
        .iter()
        .map(|&n| {
            let report = evaluate(policy, sectors, &EvalConfig { n_total: n, ..config.clone() })?;
            Ok(SweepPoint {
                n_aircraft: n,
                mean_score: report.mean,
                normalized_score: normalized_score(report.mean, n),
            })
        })
        .collect()
}

pub fn normalized_score(mean_score: f64, n_aircraft: usize) -> f64 {
    mean_score / n_aircraft as f64
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for p in points {
        s.push_str(&format!("{},{}\n", p.n_aircraft, p.normalized_score));
    }
    s
}

/// Parses `start:end:step` (end inclusive) or a single count.
pub fn parse_count_range(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("invalid aircraft range `{text}` (expected start:end:step)"));
    let parts: Vec<usize> = text
        .split(':')
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, end, step) = match parts[..] {
        [n] => (n, n, 1),
        [a, b] => (a, b, 1),
        [a, b, s] => (a, b, s),
        _ => return Err(bad()),
    };
    if start == 0 || step == 0 || end < start {
        return Err(bad());
    }
    Ok((start..=end).step_by(step).collect())
}
