use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "episode,score,return,los_events,n_hold,n_accel,n_decel,param_version";

/// Per-episode outcome.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub score: usize,
    /// Sum of all agents' rewards.
    pub ret: f64,
    pub los_events: usize,
    pub n_hold: usize,
    pub n_accel: usize,
    pub n_decel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub stats: EpisodeStats,
    pub param_version: u64,
}

impl EpisodeRecord {
    pub fn csv_row(&self) -> String {
        let s = &self.stats;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.episode, s.score, s.ret, s.los_events, s.n_hold, s.n_accel, s.n_decel, self.param_version
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub records: Vec<EpisodeRecord>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, stats: EpisodeStats, param_version: u64) {
        self.records.push(EpisodeRecord {
            episode: self.records.len(),
            stats,
            param_version,
        });
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.stats.score as f64).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CURVE_HEADER}")?;
        for r in &self.records {
            writeln!(out, "{}", r.csv_row())?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to memory");
        String::from_utf8(buf).expect("ascii")
    }

    /// Parses a curve written by [`LearningCurve::write_csv`]. Line numbers in
    /// errors are 1-based and count the header.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::Csv { line: 1, msg: e.to_string() })?
            .ok_or(Error::Csv { line: 1, msg: "empty file".into() })?;
        if header.trim() != CURVE_HEADER {
            return Err(Error::Csv {
                line: 1,
                msg: format!("expected header `{CURVE_HEADER}`"),
            });
        }
        let mut curve = LearningCurve::default();
        for (k, line) in lines.enumerate() {
            let line_no = k + 2;
            let line = line.map_err(|e| Error::Csv { line: line_no, msg: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Csv { line: line_no, msg };
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 8 {
                return Err(bad(format!("expected 8 fields, found {}", f.len())));
            }
            let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad(format!("field {} `{}` is not an integer", i + 1, f[i])));
            let episode = int(0)?;
            if episode != curve.len() {
                return Err(bad(format!("episode {episode} out of sequence (expected {})", curve.len())));
            }
            let ret = f[2]
                .parse::<f64>()
                .map_err(|_| bad(format!("field 3 `{}` is not a number", f[2])))?;
            let stats = EpisodeStats {
                score: int(1)?,
                ret,
                los_events: int(3)?,
                n_hold: int(4)?,
                n_accel: int(5)?,
                n_decel: int(6)?,
            };
            curve.push(stats, int(7)? as u64);
        }
        Ok(curve)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// First episode `e >= window - 1` whose trailing `window`-episode mean score
/// reaches `optimal`.
pub fn detect_convergence(scores: &[f64], optimal: f64, window: usize) -> Option<usize> {
    if window == 0 || scores.len() < window {
        return None;
    }
    let mut sum: f64 = scores[..window].iter().sum();
    if sum / window as f64 >= optimal {
        return Some(window - 1);
    }
    for e in window..scores.len() {
        sum += scores[e] - scores[e - window];
        if sum / window as f64 >= optimal {
            return Some(e);
        }
    }
    None
}
