//! Python bindings: a stepping simulator, training, evaluation and a few
//! numeric helpers. Errors surface as `AirsepError("category: message")`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use airsep::checkpoint::load_checkpoint;
use airsep::experiment::{evaluate as run_eval, EvalConfig};
use airsep::geometry::load_sector_set;
use airsep::policy::{EncoderKind, NetConfig, Policy};
use airsep::sim::{Action, RewardParams, SimState};
use airsep::train::{detect_convergence as detect, train as run_train, ActionMode, TrainConfig};

create_exception!(airsep_py, AirsepError, PyException);

fn py_err(e: airsep::Error) -> PyErr {
    AirsepError::new_err(format!("{}: {}", e.category(), e))
}

fn action_from(k: usize) -> PyResult<Action> {
    Action::from_index(k).ok_or_else(|| AirsepError::new_err(format!("config: action index {k} not in 0..3")))
}

/// One episode stepped from Python. Actions are 0 = decelerate, 1 = hold,
/// 2 = accelerate.
#[pyclass(module = "airsep_py")]
struct Simulator {
    state: SimState,
}

#[pymethods]
impl Simulator {
    #[new]
    #[pyo3(signature = (config, n_aircraft, seed = 0))]
    fn new(config: PathBuf, n_aircraft: usize, seed: u64) -> PyResult<Self> {
        let set = load_sector_set(&config).map_err(py_err)?;
        if set.len() != 1 {
            return Err(AirsepError::new_err("config: the simulator needs a single sector, not a mixture"));
        }
        let sector = Arc::new(set.sectors[0].clone());
        let (state, _) = SimState::reset(sector, n_aircraft, seed).map_err(py_err)?;
        Ok(Simulator { state })
    }

    /// Ids of the aircraft that must act this step.
    fn active_ids(&self) -> Vec<u32> {
        self.state.active_ids()
    }

    /// Normalized (ownship, intruders) feature lists for one active aircraft.
    #[allow(clippy::type_complexity)]
    fn features(&self, id: u32) -> PyResult<(Vec<f32>, Vec<Vec<f32>>)> {
        let obs = self
            .state
            .observation(id)
            .ok_or_else(|| AirsepError::new_err(format!("sim: aircraft {id} is not active")))?;
        let intruders = (0..obs.intruders.len()).map(|k| obs.intruder_features(k).to_vec()).collect();
        Ok((obs.ownship_features().to_vec(), intruders))
    }

    /// Advances one decision interval; idles when nobody is airborne.
    /// Returns {id: (reward, done)}.
    #[pyo3(signature = (actions = BTreeMap::new()))]
    fn step(&mut self, actions: BTreeMap<u32, usize>) -> PyResult<BTreeMap<u32, (f64, bool)>> {
        if self.state.active().next().is_none() {
            self.state.idle_step().map_err(py_err)?;
            return Ok(BTreeMap::new());
        }
        let mut map = BTreeMap::new();
        for (id, k) in actions {
            map.insert(id, action_from(k)?);
        }
        let out = self.state.step(&map).map_err(py_err)?;
        Ok(out.transitions.iter().map(|t| (t.id, (t.reward, t.done))).collect())
    }

    fn is_terminal(&self) -> bool {
        self.state.is_terminal()
    }

    /// Conflict-free exits; only valid once the episode is over.
    fn score(&self) -> PyResult<usize> {
        self.state.episode_score().map_err(py_err)
    }

    fn los_events(&self) -> usize {
        self.state.los_events()
    }

    #[getter]
    fn clock(&self) -> u32 {
        self.state.clock
    }
}

/// Trains from scratch and writes logs plus `model.ckpt` into `out`.
/// Returns the per-episode scores.
#[pyfunction]
#[pyo3(signature = (config, out, episodes, encoder = "attention", n_aircraft = 30, seed = 0, workers = 1))]
fn train(
    config: PathBuf,
    out: PathBuf,
    episodes: usize,
    encoder: &str,
    n_aircraft: usize,
    seed: u64,
    workers: usize,
) -> PyResult<Vec<f64>> {
    let encoder: EncoderKind = encoder.parse().map_err(py_err)?;
    let sectors = load_sector_set(&config).map_err(py_err)?;
    let mut c = TrainConfig::new(sectors, NetConfig::with_encoder(encoder));
    c.total_episodes = episodes;
    c.n_total = n_aircraft;
    c.seed = seed;
    c.workers = workers;
    c.out_dir = Some(out);
    Ok(run_train(&c).map_err(py_err)?.curve.scores())
}

/// Evaluates a checkpoint; returns (scores, mean, std, median,
/// (hold, accelerate, decelerate) counts).
#[pyfunction]
#[pyo3(signature = (checkpoint, config, episodes = 200, n_aircraft = 30, seed = 0, greedy = false))]
#[allow(clippy::type_complexity)]
fn evaluate(
    checkpoint: PathBuf,
    config: PathBuf,
    episodes: usize,
    n_aircraft: usize,
    seed: u64,
    greedy: bool,
) -> PyResult<(Vec<f64>, f64, f64, f64, (usize, usize, usize))> {
    let ckpt = load_checkpoint(&checkpoint).map_err(py_err)?;
    let policy = Policy::from_params(ckpt.config, ckpt.params).map_err(py_err)?;
    let sectors = load_sector_set(&config).map_err(py_err)?;
    let mut cfg = EvalConfig::new(n_aircraft, episodes, seed);
    if greedy {
        cfg.mode = ActionMode::Greedy;
    }
    let r = run_eval(&policy, &sectors, &cfg).map_err(py_err)?;
    let a = r.actions;
    Ok((r.scores(), r.mean, r.std, r.median, (a.hold, a.accelerate, a.decelerate)))
}

#[pyfunction]
#[pyo3(signature = (scores, optimal, window = 150))]
fn detect_convergence(scores: Vec<f64>, optimal: f64, window: usize) -> Option<usize> {
    detect(&scores, optimal, window)
}

/// `values` carries one extra bootstrap entry.
#[pyfunction]
#[pyo3(signature = (rewards, values, gamma = 0.99, lam = 0.95))]
fn compute_gae(rewards: Vec<f64>, values: Vec<f64>, gamma: f64, lam: f64) -> PyResult<Vec<f64>> {
    airsep::ppo::compute_gae(&rewards, &values, gamma, lam).map_err(py_err)
}

/// Reward with the default coefficients; `distance` is None when alone.
#[pyfunction]
fn reward(distance: Option<f64>, action: usize) -> PyResult<f64> {
    Ok(RewardParams::default().reward(distance, action_from(action)?))
}

#[pymodule]
fn airsep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AirsepError", m.py().get_type::<AirsepError>())?;
    m.add_class::<Simulator>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(detect_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(compute_gae, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    Ok(())
}
