//! PPO with clipped surrogate, entropy bonus and a GAE-trained critic.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{forward_graph, InputBatch, NetConfig};
use crate::seed::{mix3, tag};
use crate::sim::{AircraftId, Observation};
use crate::tensor::{adam_step, clip_grad_norm, AdamState, Graph, ParamSet, Scalar, Tensor, Var};


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub lr: f64,
    pub value_coeff: f64,
    pub update_epochs: usize,
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
    /// Transitions per gradient step; `None` means one full-batch step per
    /// epoch.
    pub minibatch_size: Option<usize>,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            gamma: 0.99,
            lambda: 0.95,
            epsilon: 0.2,
            beta: 1e-4,
            lr: 1e-4,
            value_coeff: 0.5,
            update_epochs: 3,
            max_grad_norm: None,
            normalize_advantages: true,
            minibatch_size: Some(512),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::Config(format!("gamma and lambda must lie in [0, 1]: {self:?}")));
        }
        if !(self.epsilon > 0.0) || !(self.beta >= 0.0) || !(self.lr > 0.0) || !(self.value_coeff >= 0.0) {
            return Err(Error::Config(format!("need epsilon > 0, beta >= 0, lr > 0, value_coeff >= 0: {self:?}")));
        }
        if self.update_epochs == 0 || self.minibatch_size == Some(0) {
            return Err(Error::Config("update_epochs and minibatch_size must be >= 1".into()));
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    /// Log-probability of `action` under the collecting parameters.
    pub log_prob: f32,
    /// Critic estimate under the collecting parameters.
    pub value: f32,
    pub reward: f64,
    pub done: bool,
}

/// One aircraft's experience in one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrajectory {
    pub episode: usize,
    pub aircraft: AircraftId,
    pub transitions: Vec<Transition>,
}

impl AgentTrajectory {
    pub fn validate(&self) -> Result<()> {
        let n = self.transitions.len();
        let dones = self.transitions.iter().filter(|t| t.done).count();
        if n == 0 || dones != 1 || !self.transitions[n - 1].done {
            return Err(Error::Sim(format!(
                "trajectory of aircraft {} (episode {}) must end with its only terminal transition",
                self.aircraft, self.episode
            )));
        }
        if self.transitions.iter().any(|t| !t.reward.is_finite()) {
            return Err(Error::Sim(format!("non-finite reward for aircraft {}", self.aircraft)));
        }
        Ok(())
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    /// Collection-time values with the terminal bootstrap 0 appended.
    pub fn values_with_bootstrap(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.transitions.iter().map(|t| t.value as f64).collect();
        v.push(0.0);
        v
    }
}

/// Trajectories of one collection round, all produced by parameter set
/// `version`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub version: u64,
    pub trajectories: Vec<AgentTrajectory>,
}

impl RolloutBatch {
    pub fn transition_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.transitions.len()).sum()
    }
}

/// Generalized advantage estimates by the backward recursion
/// `A_t = delta_t + gamma * lambda * A_{t+1}`.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::Config(format!(
            "gae needs len(values) = len(rewards) + 1, got {} and {}",
            values.len(),
            rewards.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut next = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        next = delta + gamma * lambda * next;
        adv[t] = next;
    }
    Ok(adv)
}

/// A transition ready for the loss: advantage and critic target attached.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'b> {
    pub obs: &'b Observation,
    pub action: usize,
    pub old_log_prob: f32,
    pub advantage: f64,
    pub value_target: f64,
    /// Index of the source trajectory in the batch.
    pub trajectory: usize,
}

/// Flattens a batch into samples with GAE advantages (optionally normalized
/// over the whole batch) and value targets `A + V_old`.
pub fn prepare_samples<'b>(batch: &'b RolloutBatch, hyper: &HyperParams) -> Result<Vec<Sample<'b>>> {
    let mut out = Vec::with_capacity(batch.transition_count());
    for (ti, traj) in batch.trajectories.iter().enumerate() {
        traj.validate()?;
        let adv = compute_gae(&traj.rewards(), &traj.values_with_bootstrap(), hyper.gamma, hyper.lambda)?;
        if adv.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFiniteLoss {
                trajectory: format!("episode {} aircraft {}", traj.episode, traj.aircraft),
            });
        }
        for (t, a) in traj.transitions.iter().zip(adv) {
            out.push(Sample {
                obs: &t.obs,
                action: t.action,
                old_log_prob: t.log_prob,
                advantage: a,
                value_target: a + t.value as f64,
                trajectory: ti,
            });
        }
    }
    if hyper.normalize_advantages && out.len() > 1 {
        let n = out.len() as f64;
        let mean = out.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = out.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        for s in &mut out {
            s.advantage = (s.advantage - mean) / std;
        }
    }
    Ok(out)
}

/// Graph handles of the PPO objective terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub actor: Var,
    pub critic: Var,
    pub entropy: Var,
    pub total: Var,
    /// Per-sample probability ratio, `[B]`.
    pub ratio: Var,
    /// Per-sample clipped surrogate, `[B]`.
    pub surrogate: Var,
    /// Per-sample squared critic residual, `[B]`.
    pub critic_residual: Var,
}

/// Builds `L_pi + c_v * L_v` for `samples`, where
/// `L_pi = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) - beta * mean(H)` and
/// `L_v = mean((V - V_target)^2)`.
pub fn ppo_losses<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    params: &'a ParamSet<T>,
    config: &NetConfig,
    samples: &[Sample<'_>],
    hyper: &HyperParams,
) -> Result<LossVars> {
    if samples.is_empty() {
        return Err(Error::Config("ppo loss over an empty batch".into()));
    }
    let b = samples.len();
    let batch = InputBatch::<T>::new(samples.iter().map(|s| s.obs), config);
    let out = forward_graph(g, params, config, &batch)?;
    let logp = g.select_cols(out.log_probs, samples.iter().map(|s| s.action).collect())?;
    let old = g.constant(Tensor::vector(samples.iter().map(|s| T::from_f64(s.old_log_prob as f64)).collect()));
    let adv = g.constant(Tensor::vector(samples.iter().map(|s| T::from_f64(s.advantage)).collect()));
    let diff = g.sub(logp, old)?;
    let ratio = g.exp(diff);
    let unclipped = g.mul(ratio, adv)?;
    let clipped = g.clip(ratio, 1.0 - hyper.epsilon, 1.0 + hyper.epsilon);
    let clipped = g.mul(clipped, adv)?;
    let surrogate = g.minimum(unclipped, clipped)?;

    let probs = g.exp(out.log_probs);
    let plogp = g.mul(probs, out.log_probs)?;
    let neg_h = g.sum_cols(plogp);
    let mean_neg_h = g.mean(neg_h);
    let entropy = g.scale(mean_neg_h, -1.0);

    let mean_surr = g.mean(surrogate);
    let neg_surr = g.scale(mean_surr, -1.0);
    let bonus = g.scale(entropy, -hyper.beta);
    let actor = g.add(neg_surr, bonus)?;

    let target = g.constant(Tensor::new(vec![b, 1], samples.iter().map(|s| T::from_f64(s.value_target)).collect())?);
    let resid = g.sub(out.value, target)?;
    let sq = g.mul(resid, resid)?;
    let critic = g.mean(sq);
    let critic_residual = g.sum_cols(sq);

    let weighted = g.scale(critic, hyper.value_coeff);
    let total = g.add(actor, weighted)?;
    Ok(LossVars {
        actor,
        critic,
        entropy,
        total,
        ratio,
        surrogate,
        critic_residual,
    })
}

/// Diagnostics of one [`update`], averaged over its gradient steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub steps: usize,
    pub samples: usize,
}

fn non_finite_loss<T: Scalar>(g: &Graph<'_, T>, lv: &LossVars, samples: &[Sample<'_>], batch: &RolloutBatch) -> Error {
    let surr = g.value(lv.surrogate).data();
    let resid = g.value(lv.critic_residual).data();
    let bad = (0..samples.len()).find(|&i| !surr[i].is_finite() || !resid[i].is_finite());
    let trajectory = match bad {
        Some(i) => {
            let t = &batch.trajectories[samples[i].trajectory];
            format!("episode {} aircraft {}", t.episode, t.aircraft)
        }
        None => "entropy term".into(),
    };
    Error::NonFiniteLoss { trajectory }
}

/// `update_epochs` passes of Adam over the batch, in seeded shuffled
/// minibatches. Rejects batches not collected under `params.version`, and
/// bumps the version on success.
pub fn update(
    params: &mut ParamSet<f32>,
    config: &NetConfig,
    batch: &RolloutBatch,
    hyper: &HyperParams,
    adam: &mut AdamState,
    seed: u64,
) -> Result<UpdateStats> {
    hyper.validate()?;
    if batch.version != params.version {
        return Err(Error::StaleBatch {
            batch: batch.version,
            params: params.version,
        });
    }
    let samples = prepare_samples(batch, hyper)?;
    if samples.is_empty() {
        return Err(Error::Config("update on an empty batch".into()));
    }
    let mb = hyper.minibatch_size.unwrap_or(samples.len()).min(samples.len());
    let mut rng = ChaCha8Rng::seed_from_u64(mix3(seed, tag::SHUFFLE, batch.version));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = UpdateStats {
        samples: samples.len(),
        ..UpdateStats::default()
    };
    let mut clipped = 0usize;
    let mut seen = 0usize;
    for _ in 0..hyper.update_epochs {
        if mb < samples.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(mb) {
            let part: Vec<Sample<'_>> = chunk.iter().map(|&i| samples[i]).collect();
            let mut grads = {
                let mut g = Graph::new();
                let lv = ppo_losses(&mut g, params, config, &part, hyper)?;
                let total = g.value(lv.total).item();
                if !total.is_finite() {
                    return Err(non_finite_loss(&g, &lv, &part, batch));
                }
                stats.actor_loss += g.value(lv.actor).item() as f64;
                stats.critic_loss += g.value(lv.critic).item() as f64;
                stats.entropy += g.value(lv.entropy).item() as f64;
                for &r in g.value(lv.ratio).data() {
                    stats.mean_ratio += r as f64;
                    if (r as f64 - 1.0).abs() > hyper.epsilon {
                        clipped += 1;
                    }
                }
                seen += part.len();
                g.backward(lv.total)?
            };
            stats.grad_norm += match hyper.max_grad_norm {
                Some(m) => clip_grad_norm(&mut grads, m),
                None => clip_grad_norm(&mut grads, f64::INFINITY),
            };
            adam_step(params, &grads, adam)?;
            stats.steps += 1;
        }
    }
    let steps = stats.steps as f64;
    stats.actor_loss /= steps;
    stats.critic_loss /= steps;
    stats.entropy /= steps;
    stats.grad_norm /= steps;
    stats.mean_ratio /= seen as f64;
    stats.clip_fraction = clipped as f64 / seen as f64;
    params.version += 1;
    Ok(stats)
}
