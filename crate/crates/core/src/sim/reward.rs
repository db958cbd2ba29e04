use serde::{Deserialize, Serialize};

use super::Action;

/// Reward coefficients. `d_los`/`d_alert` bound the shaped band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub alpha: f64,
    pub delta: f64,
    pub psi: f64,
    pub d_los: f64,
    pub d_alert: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            alpha: 0.1,
            delta: 0.05,
            psi: 0.001,
            d_los: 3.0,
            d_alert: 10.0,
        }
    }
}

impl RewardParams {
    /// Separation term from the distance to the closest other aircraft.
    /// `None` means the agent is alone in the sector.
    ///
    /// Note the band term `-alpha + delta * d` is positive for `d > alpha /
    /// delta`; with the default constants that covers the whole band.
    pub fn state_term(&self, closest: Option<f64>) -> f64 {
        match closest {
            Some(d) if d < self.d_los => -1.0,
            Some(d) if d < self.d_alert => -self.alpha + self.delta * d,
            _ => 0.0,
        }
    }

    pub fn action_term(&self, action: Action) -> f64 {
        match action {
            Action::Hold => 0.0,
            Action::Decelerate | Action::Accelerate => -self.psi,
        }
    }

    pub fn reward(&self, closest: Option<f64>, action: Action) -> f64 {
        self.state_term(closest) + self.action_term(action)
    }
}
