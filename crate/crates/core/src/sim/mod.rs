//! Multi-agent episodic sector simulation.
//!
//! Aircraft fly fixed routes under point-mass speed dynamics integrated at
//! 1 s, while agents choose a speed advisory every 12 s decision interval.

mod observation;
mod reward;
mod spawn;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use observation::{
    build_observation, IntruderState, Normalizer, Observation, OwnshipState, INTRUDER_FEATURES,
    OWNSHIP_FEATURES,
};
pub use reward::RewardParams;
pub use spawn::{generate_spawn_schedule, SpawnSchedule, GAP_CHOICES, GAP_STEP_S, MIN_GAP_S};

use crate::error::{Error, Result};
use crate::geometry::{euclidean_distance, Point, SectorConfig};
use crate::seed;

pub type AircraftId = u32;

/// Seconds between agent decisions.
pub const DECISION_INTERVAL_S: u32 = 12;
/// Integration step in seconds.
pub const SUB_STEP_S: u32 = 1;

/// Speed advisory. The discriminant is the policy output index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Decelerate = 0,
    Hold = 1,
    Accelerate = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Decelerate, Action::Hold, Action::Accelerate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<Action> {
        Action::ALL.get(k).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Decelerate => "decelerate",
            Action::Hold => "hold",
            Action::Accelerate => "accelerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftState {
    pub id: AircraftId,
    /// Index into `SectorConfig::routes`.
    pub route_index: usize,
    pub s: f64,
    pub v: f64,
    pub v_cmd: f64,
    pub a: f64,
    pub spawn_time: u32,
    pub active: bool,
    pub exited: bool,
    pub ever_in_los: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosRecord {
    pub time: u32,
    pub a: AircraftId,
    pub b: AircraftId,
    pub distance: f64,
}

/// Outcome of one decision interval for one acting agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTransition {
    pub id: AircraftId,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
    /// Post-motion distance to the closest other aircraft used for the reward.
    pub closest: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub transitions: Vec<AgentTransition>,
    /// Observations of every aircraft active after the step (including fresh
    /// spawns), ascending by id.
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub sector: Arc<SectorConfig>,
    pub reward: RewardParams,
    pub clock: u32,
    /// Every aircraft spawned so far, ascending by id of spawn order.
    pub aircraft: Vec<AircraftState>,
    pub schedule: SpawnSchedule,
    pending: Vec<(u32, AircraftId, usize)>,
    next_pending: usize,
    pub los_log: Vec<LosRecord>,
    pub los_pairs: BTreeSet<(AircraftId, AircraftId)>,
}

impl SimState {
    /// Starts an episode with default reward coefficients (radii taken from
    /// the sector).
    pub fn reset(
        sector: Arc<SectorConfig>,
        n_total: usize,
        seed: u64,
    ) -> Result<(SimState, Vec<Observation>)> {
        let reward = RewardParams {
            d_los: sector.params.d_los,
            d_alert: sector.params.d_alert,
            ..RewardParams::default()
        };
        Self::reset_with(sector, n_total, seed, reward)
    }

    pub fn reset_with(
        sector: Arc<SectorConfig>,
        n_total: usize,
        seed: u64,
        reward: RewardParams,
    ) -> Result<(SimState, Vec<Observation>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(seed, seed::tag::SPAWN));
        let schedule = generate_spawn_schedule(&mut rng, sector.routes.len(), n_total)?;
        let pending = schedule.entries();
        let mut state = SimState {
            sector,
            reward,
            clock: 0,
            aircraft: Vec::with_capacity(n_total),
            schedule,
            pending,
            next_pending: 0,
            los_log: Vec::new(),
            los_pairs: BTreeSet::new(),
        };
        state.activate_due_spawns();
        let obs = state.observations();
        Ok((state, obs))
    }

    fn activate_due_spawns(&mut self) {
        let v0 = self.sector.params.v_nominal;
        while let Some(&(t, id, route_index)) = self.pending.get(self.next_pending) {
            if t > self.clock {
                break;
            }
            self.aircraft.push(AircraftState {
                id,
                route_index,
                s: 0.0,
                v: v0,
                v_cmd: v0,
                a: 0.0,
                spawn_time: t,
                active: true,
                exited: false,
                ever_in_los: false,
            });
            self.next_pending += 1;
        }
    }

    pub fn active(&self) -> impl Iterator<Item = &AircraftState> + '_ {
        self.aircraft.iter().filter(|a| a.active)
    }

    pub fn active_ids(&self) -> Vec<AircraftId> {
        let mut ids: Vec<_> = self.active().map(|a| a.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn aircraft(&self, id: AircraftId) -> Option<&AircraftState> {
        self.aircraft.iter().find(|a| a.id == id)
    }

    pub fn position(&self, ac: &AircraftState) -> Point {
        self.sector.routes[ac.route_index].position_clamped(ac.s)
    }

    pub fn spawns_pending(&self) -> bool {
        self.next_pending < self.pending.len()
    }

    pub fn observation(&self, id: AircraftId) -> Option<Observation> {
        let own = self.aircraft(id).filter(|a| a.active)?;
        Some(build_observation(&self.sector, &self.aircraft, own))
    }

    /// Observations of all active aircraft, ascending by id.
    pub fn observations(&self) -> Vec<Observation> {
        let mut active: Vec<&AircraftState> = self.active().collect();
        active.sort_by_key(|a| a.id);
        active
            .into_iter()
            .map(|own| build_observation(&self.sector, &self.aircraft, own))
            .collect()
    }

    /// Distance from `own` to the closest other active aircraft.
    pub fn closest_distance(&self, id: AircraftId) -> Option<f64> {
        let own = self.aircraft(id)?;
        self.closest_from(self.position(own), id)
    }

    fn closest_from(&self, p: Point, id: AircraftId) -> Option<f64> {
        self.active()
            .filter(|o| o.id != id)
            .map(|o| euclidean_distance(p, self.position(o)))
            .min_by(|a, b| a.total_cmp(b))
    }

    pub fn reward_for(&self, id: AircraftId, action: Action) -> f64 {
        self.reward.reward(self.closest_distance(id), action)
    }

    pub fn is_terminal(&self) -> bool {
        !self.spawns_pending() && self.active().next().is_none()
    }

    /// Aircraft that exited without ever losing separation.
    pub fn episode_score(&self) -> Result<usize> {
        if !self.is_terminal() {
            return Err(Error::Sim("episode_score requested before terminal state".into()));
        }
        Ok(self.goals())
    }

    /// Conflict-free exits so far.
    pub fn goals(&self) -> usize {
        self.aircraft
            .iter()
            .filter(|a| a.exited && !a.ever_in_los)
            .count()
    }

    /// Advances one decision interval. `actions` must cover exactly the
    /// active aircraft.
    pub fn step(&mut self, actions: &BTreeMap<AircraftId, Action>) -> Result<StepOutcome> {
        if self.is_terminal() {
            return Err(Error::Sim("step called on a terminal state".into()));
        }
        for id in actions.keys() {
            if !self.aircraft(*id).is_some_and(|a| a.active) {
                return Err(Error::Sim(format!("action for inactive or unknown aircraft {id}")));
            }
        }
        let acting = self.active_ids();
        if let Some(missing) = acting.iter().find(|id| !actions.contains_key(id)) {
            return Err(Error::Sim(format!("missing action for active aircraft {missing}")));
        }

        let p = self.sector.params;
        for ac in self.aircraft.iter_mut().filter(|a| a.active) {
            let delta = match actions[&ac.id] {
                Action::Decelerate => -p.dv_cmd,
                Action::Hold => 0.0,
                Action::Accelerate => p.dv_cmd,
            };
            ac.v_cmd = (ac.v_cmd + delta).clamp(p.v_min, p.v_max);
        }

        let mut exit_points: BTreeMap<AircraftId, Point> = BTreeMap::new();
        let dt = SUB_STEP_S as f64;
        for _ in 0..DECISION_INTERVAL_S / SUB_STEP_S {
            self.clock += SUB_STEP_S;
            for ac in self.aircraft.iter_mut().filter(|a| a.active) {
                let diff = ac.v_cmd - ac.v;
                if diff.abs() < p.accel_mag * dt {
                    ac.v = ac.v_cmd;
                    ac.a = 0.0;
                } else {
                    ac.a = p.accel_mag.copysign(diff);
                    ac.v += ac.a * dt;
                }
                ac.s += ac.v * dt / 3600.0;
                let route = &self.sector.routes[ac.route_index];
                if ac.s >= route.length() {
                    ac.s = route.length();
                    ac.active = false;
                    ac.exited = true;
                    exit_points.insert(ac.id, route.exit());
                }
            }
            self.record_los();
        }

        let mut transitions = Vec::with_capacity(acting.len());
        for id in acting {
            let action = actions[&id];
            let closest = match exit_points.get(&id) {
                Some(&exit) => self.closest_from(exit, id),
                None => self.closest_distance(id),
            };
            transitions.push(AgentTransition {
                id,
                action,
                reward: self.reward.reward(closest, action),
                done: exit_points.contains_key(&id),
                closest,
            });
        }

        self.activate_due_spawns();
        Ok(StepOutcome {
            transitions,
            observations: self.observations(),
        })
    }

    /// Advances the clock by one interval while no aircraft is active.
    pub fn idle_step(&mut self) -> Result<()> {
        if self.active().next().is_some() {
            return Err(Error::Sim("idle_step with active aircraft".into()));
        }
        if self.is_terminal() {
            return Err(Error::Sim("step called on a terminal state".into()));
        }
        self.clock += DECISION_INTERVAL_S;
        self.activate_due_spawns();
        Ok(())
    }

    fn record_los(&mut self) {
        let d_los = self.reward.d_los;
        let pos: Vec<(usize, Point)> = self
            .aircraft
            .iter()
            .enumerate()
            .filter(|(_, a)| a.active)
            .map(|(k, a)| (k, self.position(a)))
            .collect();
        for (n, &(i, pi)) in pos.iter().enumerate() {
            for &(j, pj) in &pos[n + 1..] {
                let d = euclidean_distance(pi, pj);
                if d < d_los {
                    let (a, b) = (self.aircraft[i].id, self.aircraft[j].id);
                    let (a, b) = (a.min(b), a.max(b));
                    self.aircraft[i].ever_in_los = true;
                    self.aircraft[j].ever_in_los = true;
                    self.los_pairs.insert((a, b));
                    self.los_log.push(LosRecord {
                        time: self.clock,
                        a,
                        b,
                        distance: d,
                    });
                }
            }
        }
    }

    /// Distinct aircraft pairs that lost separation at some point.
    pub fn los_events(&self) -> usize {
        self.los_pairs.len()
    }
}
