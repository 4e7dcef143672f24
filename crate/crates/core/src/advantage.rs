//! Generalized advantage estimation over a rollout window.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numcore::ParamVector;
use crate::policy::Action;

/// `T` transitions collected under one frozen policy.
///
/// `values` has length `T + 1`: the last entry is the bootstrap `V(s_T)`.
/// `dones[t]` marks that the episode ended after transition `t`
/// (termination or time limit); accumulation never crosses it.
#[derive(Clone, Debug, Default)]
pub struct RolloutBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Per-transition `∇θ log π(a_t|s_t)` under the rollout policy.
    pub scores: Vec<ParamVector>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if t == 0 {
            return Err(Error::Empty("rollout batch"));
        }
        check_dim(t, self.states.len())?;
        check_dim(t, self.actions.len())?;
        check_dim(t, self.dones.len())?;
        check_dim(t, self.log_probs.len())?;
        check_dim(t + 1, self.values.len())?;
        if !self.scores.is_empty() {
            check_dim(t, self.scores.len())?;
        }
        Ok(())
    }

    pub fn gae(&self, gamma: f64, lambda_gae: f64) -> Result<GaeOutput> {
        self.validate()?;
        compute_gae(&self.rewards, &self.values, &self.dones, gamma, lambda_gae)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaeOutput {
    pub deltas: Vec<f64>,
    pub advantages: Vec<f64>,
    /// `advantages[t] + values[t]`; the critic's regression target.
    pub returns: Vec<f64>,
}

fn check_inputs(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda_gae: f64) -> Result<()> {
    if rewards.is_empty() {
        return Err(Error::Empty("rollout batch"));
    }
    check_dim(rewards.len(), dones.len())?;
    check_dim(rewards.len() + 1, values.len())?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if !(0.0..=1.0).contains(&lambda_gae) {
        return Err(Error::InvalidArgument(format!("lambda_gae must lie in [0, 1], got {lambda_gae}")));
    }
    if !rewards.iter().chain(values).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("rewards or values"));
    }
    Ok(())
}

fn td_residuals(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let next = if dones[t] { 0.0 } else { values[t + 1] };
            r + gamma * next - values[t]
        })
        .collect()
}

/// Backward recursion `A_t = δ_t + γλ(1 − done_t)·A_{t+1}`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda_gae: f64,
) -> Result<GaeOutput> {
    check_inputs(rewards, values, dones, gamma, lambda_gae)?;
    let deltas = td_residuals(rewards, values, dones, gamma);
    let decay = gamma * lambda_gae;
    let mut advantages = vec![0.0; deltas.len()];
    let mut running = 0.0;
    for t in (0..deltas.len()).rev() {
        if dones[t] {
            running = 0.0;
        }
        running = deltas[t] + decay * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(GaeOutput { deltas, advantages, returns })
}

/// Literal `A_t = Σ_l (γλ)^l δ_{t+l}`, stopping after the first episode end.
/// Quadratic in `T`; used to check [`compute_gae`].
pub fn gae_bruteforce_oracle(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda_gae: f64,
) -> Result<GaeOutput> {
    check_inputs(rewards, values, dones, gamma, lambda_gae)?;
    let deltas = td_residuals(rewards, values, dones, gamma);
    let n = deltas.len();
    let decay = gamma * lambda_gae;
    let advantages: Vec<f64> = (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for l in 0..n - t {
                sum += decay.powi(l as i32) * deltas[t + l];
                if dones[t + l] {
                    break;
                }
            }
            sum
        })
        .collect();
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(GaeOutput { deltas, advantages, returns })
}
