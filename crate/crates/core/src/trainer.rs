//! The actor-critic training loop.
//!
//! Each iteration collects `T` transitions with the current stochastic
//! policy, computes GAE advantages, takes one actor step with the configured
//! optimizer, then `critic_epochs` full-batch Adam descent steps on the
//! critic's mean squared error against the GAE returns.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::advantage::{GaeOutput, RolloutBatch};
use crate::envs::{ActionSpace, Env, EnvKind};
use crate::error::{check_dim, Error, Result};
use crate::fisher::{assumption_diagnostics, FvpBatch};
use crate::harness::{self, BinnedCurves};
use crate::net::{Mlp, MlpSpec};
use crate::numcore::{ParamVector, Rng};
use crate::optim::{
    adam_step, cg_npg_step, sgd_step, smac_per_sample_steps, smac_step, AdamState, OptimizerKind, Orientation,
    UpdateReport,
};
use crate::policy::{ActorPolicy, CategoricalPolicy, GaussianPolicy, Policy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One update per rollout from the batch-mean score.
    #[default]
    BatchMean,
    /// One update per stored transition, replayed in order.
    PerSample,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

/// Adam steps on the critic per rollout. A single step leaves the value
/// estimates far from their targets for most of a 300k-step run.
pub const DEFAULT_CRITIC_EPOCHS: usize = 20;

fn default_critic_epochs() -> usize {
    DEFAULT_CRITIC_EPOCHS
}

fn default_cg_damping() -> f64 {
    1e-2
}

fn default_cg_iters() -> usize {
    10
}

fn default_cg_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub env_id: EnvKind,
    pub optimizer_id: OptimizerKind,
    /// Actor step size.
    pub eta: f64,
    /// Critic Adam learning rate.
    pub alpha: f64,
    /// Environment steps per update.
    pub steps_per_update: usize,
    pub gamma: f64,
    pub lambda_gae: f64,
    /// Damping of the rank-1 Fisher preconditioner.
    pub lambda: f64,
    pub total_timesteps: usize,
    pub seed: u64,
    #[serde(default)]
    pub batch_mode: BatchMode,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_critic_epochs")]
    pub critic_epochs: usize,
    #[serde(default = "default_cg_damping")]
    pub cg_damping: f64,
    #[serde(default = "default_cg_iters")]
    pub cg_max_iters: usize,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    /// Write a checkpoint every this many iterations (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl AgentConfig {
    /// Per-task tuned step sizes; γ = 0.99,
    /// λ_GAE = 0.9, λ = 0.1, α = 1e-3 and T = 1000 for every task.
    pub fn defaults_for(env_id: EnvKind, optimizer_id: OptimizerKind, seed: u64) -> Self {
        use EnvKind::*;
        use OptimizerKind::*;
        let eta = match (env_id, optimizer_id) {
            (Acrobot, Smac) => 5e-2,
            (Acrobot, Adam) => 6e-4,
            (Acrobot, Sgd) => 2e-1,
            (Acrobot, Cg) => 6e-1,
            (Cartpole, Smac) => 5e-3,
            (Cartpole, Adam) => 7e-5,
            (Cartpole, Sgd) => 7e-3,
            (Cartpole, Cg) => 8e-2,
            (Pendulum, Smac) => 6e-3,
            (Pendulum, Adam) => 7e-4,
            (Pendulum, Sgd) => 5e-2,
            (Pendulum, Cg) => 3e-2,
        };
        AgentConfig {
            env_id,
            optimizer_id,
            eta,
            alpha: 1e-3,
            steps_per_update: 1000,
            gamma: 0.99,
            lambda_gae: 0.9,
            lambda: 0.1,
            total_timesteps: default_budget(env_id),
            seed,
            batch_mode: BatchMode::BatchMean,
            hidden: default_hidden(),
            critic_epochs: DEFAULT_CRITIC_EPOCHS,
            cg_damping: default_cg_damping(),
            cg_max_iters: default_cg_iters(),
            cg_tol: default_cg_tol(),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("eta", self.eta), ("alpha", self.alpha), ("lambda", self.lambda), ("cg_tol", self.cg_tol)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.cg_damping >= 0.0 && self.cg_damping.is_finite()) {
            return Err(Error::Config(format!("cg_damping must be >= 0, got {}", self.cg_damping)));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda_gae", self.lambda_gae)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.steps_per_update == 0 {
            return Err(Error::Config("steps_per_update must be >= 1".into()));
        }
        if self.total_timesteps == 0 || !self.total_timesteps.is_multiple_of(self.steps_per_update) {
            return Err(Error::Config(format!(
                "total_timesteps ({}) must be a positive multiple of steps_per_update ({})",
                self.total_timesteps, self.steps_per_update
            )));
        }
        if self.critic_epochs == 0 {
            return Err(Error::Config("critic_epochs must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be >= 1".into()));
        }
        if self.batch_mode == BatchMode::PerSample && self.optimizer_id != OptimizerKind::Smac {
            return Err(Error::Config("per_sample batch mode is only defined for the smac optimizer".into()));
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.total_timesteps / self.steps_per_update
    }

    /// Short identifier used for output directories.
    pub fn run_name(&self) -> String {
        let mode = match self.batch_mode {
            BatchMode::BatchMean => "",
            BatchMode::PerSample => "_persample",
        };
        format!("{}_{}{}_seed{}", self.env_id, self.optimizer_id, mode, self.seed)
    }
}

/// Timestep budget per task; the Pendulum figure spans roughly two million steps.
pub fn default_budget(env: EnvKind) -> usize {
    match env {
        EnvKind::Acrobot | EnvKind::Cartpole => 300_000,
        EnvKind::Pendulum => 2_000_000,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Total environment steps after this iteration.
    pub timestep: usize,
    /// Mean undiscounted return of the episodes that finished in this window.
    pub mean_episode_return: Option<f64>,
    pub episodes_completed: usize,
    pub mean_action_log_prob: f64,
    pub critic_loss: f64,
    pub direction_norm: f64,
    pub dot_with_grad: f64,
    pub denominator: Option<f64>,
    pub cg_iterations: Option<usize>,
    pub cg_residual: Option<f64>,
    /// `maxᵢ ‖ℓᵢ‖` over the batch.
    pub g_hat: f64,
    /// `(1/T)Σ ‖ℓᵢ‖²` over the batch.
    pub fisher_trace: f64,
    /// Running maximum of `g_hat` over the run.
    pub g_hat_running_max: f64,
    pub actor_update_ms: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodePoint {
    /// Environment step at which the episode ended.
    pub timestep: usize,
    pub episode_return: f64,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed { message: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: AgentConfig,
    pub status: RunStatus,
    pub logs: Vec<IterationLog>,
    pub episodes: Vec<EpisodePoint>,
    /// `None` when no episode finished during the run.
    pub curves: Option<BinnedCurves>,
    pub actor_update_ms: f64,
    pub wall_ms: f64,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// Last smoothed bin of the return curve.
    pub fn final_return(&self) -> Option<f64> {
        self.curves.as_ref().and_then(|c| c.smoothed_returns.last().map(|p| p.1))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub timestep: usize,
    pub actor: ActorPolicy,
    pub critic: Mlp,
    pub critic_adam: AdamState,
    pub actor_adam: Option<AdamState>,
}

/// Builds the actor for a task: categorical for discrete actions, Gaussian otherwise.
pub fn build_actor(env: EnvKind, hidden: &[usize], rng: &mut Rng) -> Result<ActorPolicy> {
    Ok(match env.action_space() {
        ActionSpace::Discrete(n) => ActorPolicy::Categorical(CategoricalPolicy::init(env.obs_dim(), hidden, n, rng)?),
        ActionSpace::Box { dim, .. } => ActorPolicy::Gaussian(GaussianPolicy::init(env.obs_dim(), hidden, dim, rng)?),
    })
}

pub fn build_critic(env: EnvKind, hidden: &[usize], rng: &mut Rng) -> Result<Mlp> {
    Mlp::init(MlpSpec::new(env.obs_dim(), hidden, 1), rng)
}

fn value(critic: &Mlp, state: &[f64]) -> Result<f64> {
    let v = critic.forward_slice(state)?[0];
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("critic value"))
    }
}

/// Steps one environment across rollout windows, resetting it inline when
/// an episode ends and keeping per-episode bookkeeping.
#[derive(Clone, Debug)]
pub struct RolloutWorker {
    env: Env,
    rng: Rng,
    obs: Vec<f64>,
    episode_return: f64,
    episode_len: usize,
    timestep: usize,
    finished: Vec<EpisodePoint>,
}

impl RolloutWorker {
    pub fn new(mut env: Env, mut rng: Rng) -> Self {
        let obs = env.reset(&mut rng);
        RolloutWorker { env, rng, obs, episode_return: 0.0, episode_len: 0, timestep: 0, finished: Vec::new() }
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    /// Episodes completed since the last call.
    pub fn drain_episodes(&mut self) -> Vec<EpisodePoint> {
        std::mem::take(&mut self.finished)
    }

    /// Collects `steps` transitions under `policy`, with values from `critic`
    /// (including the bootstrap value of the state after the last step) and
    /// per-transition scores.
    pub fn collect<P: Policy>(&mut self, policy: &P, critic: &Mlp, steps: usize) -> Result<RolloutBatch> {
        if steps == 0 {
            return Err(Error::Empty("rollout of zero steps"));
        }
        let space = self.env.kind().action_space();
        let mut batch = RolloutBatch {
            states: Vec::with_capacity(steps),
            actions: Vec::with_capacity(steps),
            rewards: Vec::with_capacity(steps),
            dones: Vec::with_capacity(steps),
            values: Vec::with_capacity(steps + 1),
            log_probs: Vec::with_capacity(steps),
            scores: Vec::with_capacity(steps),
        };
        for _ in 0..steps {
            let state = self.obs.clone();
            batch.values.push(value(critic, &state)?);
            let (action, log_prob) = policy.sample(&state, &mut self.rng)?;
            let mut score = vec![0.0; policy.dim()];
            policy.score_into(&state, &action, &mut score)?;
            let score = ParamVector::from_vec(score)?;
            let result = self.env.step(&space.clip(&action))?;

            self.timestep += 1;
            self.episode_return += result.reward;
            self.episode_len += 1;
            let done = result.done();
            if done {
                self.finished.push(EpisodePoint {
                    timestep: self.timestep,
                    episode_return: self.episode_return,
                    length: self.episode_len,
                });
                self.episode_return = 0.0;
                self.episode_len = 0;
                self.obs = self.env.reset(&mut self.rng);
            } else {
                self.obs = result.observation;
            }
            batch.states.push(state);
            batch.actions.push(action);
            batch.rewards.push(result.reward);
            batch.dones.push(done);
            batch.log_probs.push(log_prob);
            batch.scores.push(score);
        }
        batch.values.push(value(critic, &self.obs)?);
        Ok(batch)
    }
}

/// `(1/T)Σ (R_t − V(s_t))²` and its gradient with respect to the critic parameters.
pub fn critic_loss_and_grad(critic: &Mlp, states: &[Vec<f64>], targets: &[f64]) -> Result<(f64, ParamVector)> {
    check_dim(states.len(), targets.len())?;
    if states.is_empty() {
        return Err(Error::Empty("critic batch"));
    }
    let input_dim = critic.spec().input_dim;
    for s in states {
        check_dim(input_dim, s.len())?;
    }
    let n = states.len() as f64;
    let xs = DMatrix::from_fn(input_dim, states.len(), |r, c| states[c][r]);
    let mut loss = 0.0;
    let (_, grad) = critic.batch_forward_backward(&xs, |out| {
        Ok(DMatrix::from_fn(1, out.ncols(), |_, c| {
            let residual = targets[c] - out[(0, c)];
            loss += residual * residual / n;
            -2.0 * residual / n
        }))
    })?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss"));
    }
    Ok((loss, grad))
}

/// One Adam descent step on the critic loss; returns the pre-step loss.
pub fn critic_update(
    critic: &mut Mlp,
    batch: &RolloutBatch,
    gae: &GaeOutput,
    adam: &mut AdamState,
    alpha: f64,
) -> Result<f64> {
    let (loss, grad) = critic_loss_and_grad(critic, &batch.states, &gae.returns)?;
    let (next, _) = adam_step(adam, critic.params(), &grad, alpha, Orientation::Descent)?;
    critic.set_params(next)?;
    Ok(loss)
}

/// `(1/B)Σ ℓᵢAᵢ`
pub fn policy_gradient(scores: &[ParamVector], advantages: &[f64]) -> Result<ParamVector> {
    check_dim(scores.len(), advantages.len())?;
    let first = scores.first().ok_or(Error::Empty("policy_gradient"))?;
    let mut g = vec![0.0; first.dim()];
    let inv_n = 1.0 / scores.len() as f64;
    for (s, a) in scores.iter().zip(advantages) {
        check_dim(g.len(), s.dim())?;
        let w = a * inv_n;
        for (gi, si) in g.iter_mut().zip(s.iter()) {
            *gi += w * si;
        }
    }
    ParamVector::from_vec(g)
}

/// Mutable state of one training run.
pub struct Agent {
    config: AgentConfig,
    actor: ActorPolicy,
    critic: Mlp,
    critic_adam: AdamState,
    actor_adam: Option<AdamState>,
    worker: RolloutWorker,
    iteration: usize,
    g_hat_max: f64,
}

impl Agent {
    pub fn new(config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let mut master = Rng::new(config.seed);
        let mut actor_rng = master.fork(1);
        let mut critic_rng = master.fork(2);
        let env_rng = master.fork(3);
        let actor = build_actor(config.env_id, &config.hidden, &mut actor_rng)?;
        let critic = build_critic(config.env_id, &config.hidden, &mut critic_rng)?;
        let critic_adam = AdamState::new(critic.dim());
        let actor_adam = (config.optimizer_id == OptimizerKind::Adam).then(|| AdamState::new(actor.dim()));
        let worker = RolloutWorker::new(Env::new(config.env_id), env_rng);
        Ok(Agent { config, actor, critic, critic_adam, actor_adam, worker, iteration: 0, g_hat_max: 0.0 })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn actor(&self) -> &ActorPolicy {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            timestep: self.worker.timestep(),
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            critic_adam: self.critic_adam.clone(),
            actor_adam: self.actor_adam.clone(),
        }
    }

    fn actor_update(&mut self, batch: &RolloutBatch, gae: &GaeOutput) -> Result<UpdateReport> {
        let c = &self.config;
        let theta = self.actor.params();
        let scores = &batch.scores;
        let (next, report) = match (c.optimizer_id, c.batch_mode) {
            (OptimizerKind::Smac, BatchMode::PerSample) => {
                smac_per_sample_steps(&theta, scores, &gae.advantages, c.eta, c.lambda)?
            }
            (kind, _) => {
                let g = policy_gradient(scores, &gae.advantages)?;
                match kind {
                    OptimizerKind::Smac => smac_step(&theta, scores, &g, c.eta, c.lambda)?,
                    OptimizerKind::Sgd => sgd_step(&theta, &g, c.eta)?,
                    OptimizerKind::Adam => {
                        let state = self.actor_adam.as_mut().expect("adam state exists for the adam optimizer");
                        adam_step(state, &theta, &g, c.eta, Orientation::Ascent)?
                    }
                    OptimizerKind::Cg => cg_npg_step(&theta, scores, &g, c.eta, c.cg_damping, c.cg_max_iters, c.cg_tol)?,
                }
            }
        };
        self.actor.set_params(next)?;
        Ok(report)
    }

    /// Runs one rollout/update iteration; returns its log and the episodes
    /// that finished during it.
    pub fn step(&mut self) -> Result<(IterationLog, Vec<EpisodePoint>)> {
        let started = Instant::now();
        let c = self.config.clone();
        let batch = self.worker.collect(&self.actor, &self.critic, c.steps_per_update)?;
        let gae = batch.gae(c.gamma, c.lambda_gae)?;
        let diag = assumption_diagnostics(&FvpBatch::new(&batch.scores, 0.0)?)?;
        self.g_hat_max = self.g_hat_max.max(diag.g_hat);

        let actor_started = Instant::now();
        let report = self.actor_update(&batch, &gae)?;
        let actor_elapsed = actor_started.elapsed();

        let mut critic_loss = f64::NAN;
        for epoch in 0..c.critic_epochs {
            let loss = critic_update(&mut self.critic, &batch, &gae, &mut self.critic_adam, c.alpha)?;
            if epoch == 0 {
                critic_loss = loss;
            }
        }

        let episodes = self.worker.drain_episodes();
        let mean_episode_return = (!episodes.is_empty())
            .then(|| episodes.iter().map(|e| e.episode_return).sum::<f64>() / episodes.len() as f64);
        self.iteration += 1;
        let log = IterationLog {
            iteration: self.iteration,
            timestep: self.worker.timestep(),
            mean_episode_return,
            episodes_completed: episodes.len(),
            mean_action_log_prob: batch.log_probs.iter().sum::<f64>() / batch.len() as f64,
            critic_loss,
            direction_norm: report.direction_norm,
            dot_with_grad: report.dot_with_grad,
            denominator: report.extra.denominator,
            cg_iterations: report.extra.cg_iterations,
            cg_residual: report.extra.cg_residual,
            g_hat: diag.g_hat,
            fisher_trace: diag.trace,
            g_hat_running_max: self.g_hat_max,
            actor_update_ms: ms(actor_elapsed),
            wall_ms: ms(started.elapsed()),
        };
        Ok((log, episodes))
    }
}

pub const RUN_CSV_HEADER: &str = "iteration,timestep,mean_return,mean_logprob,critic_loss,dir_norm,denom,wall_ms";

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn run_csv_row(log: &IterationLog) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        log.iteration,
        log.timestep,
        opt_field(log.mean_episode_return),
        log.mean_action_log_prob,
        log.critic_loss,
        log.direction_norm,
        opt_field(log.denominator),
        log.wall_ms
    )
}

/// Runs a full training job in memory.
pub fn train(config: AgentConfig) -> RunRecord {
    train_with_output(config, None)
}

/// Runs a full training job. With an output directory, iteration rows are
/// streamed to `iterations.csv` and checkpoints written every
/// `checkpoint_every` iterations. Errors end the run with a failed status;
/// logs gathered up to that point are kept.
pub fn train_with_output(config: AgentConfig, out_dir: Option<&Path>) -> RunRecord {
    let started = Instant::now();
    let mut logs = Vec::new();
    let mut episodes = Vec::new();
    let status = match run_loop(&config, out_dir, &mut logs, &mut episodes) {
        Ok(()) => RunStatus::Ok,
        Err(e) => RunStatus::Failed { message: e.to_string() },
    };
    let curves = harness::curves_for_run(&config, &logs, &episodes).ok();
    RunRecord {
        actor_update_ms: logs.iter().map(|l| l.actor_update_ms).sum(),
        config,
        status,
        logs,
        episodes,
        curves,
        wall_ms: ms(started.elapsed()),
    }
}

fn run_loop(
    config: &AgentConfig,
    out_dir: Option<&Path>,
    logs: &mut Vec<IterationLog>,
    episodes: &mut Vec<EpisodePoint>,
) -> Result<()> {
    let mut agent = Agent::new(config.clone())?;
    let mut csv = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join("iterations.csv"))?);
            writeln!(w, "{RUN_CSV_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    for _ in 0..config.iterations() {
        let (log, finished) = agent.step()?;
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", run_csv_row(&log))?;
        }
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && log.iteration % config.checkpoint_every == 0 {
                let path = dir.join(format!("checkpoint_{:06}.json", log.iteration));
                serde_json::to_writer(BufWriter::new(File::create(path)?), &agent.checkpoint())?;
            }
        }
        logs.push(log);
        episodes.extend(finished);
    }
    if let Some(mut w) = csv {
        w.flush()?;
    }
    Ok(())
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::finite_diff_grad;

    fn small_config(env: EnvKind, opt: OptimizerKind, steps: usize, total: usize) -> AgentConfig {
        AgentConfig { steps_per_update: steps, total_timesteps: total, ..AgentConfig::defaults_for(env, opt, 3) }
    }

    fn worker_and_nets(seed: u64) -> (RolloutWorker, ActorPolicy, Mlp) {
        let mut rng = Rng::new(seed);
        let actor = build_actor(EnvKind::Cartpole, &[16], &mut rng).unwrap();
        let critic = build_critic(EnvKind::Cartpole, &[16], &mut rng).unwrap();
        (RolloutWorker::new(Env::new(EnvKind::Cartpole), rng.fork(9)), actor, critic)
    }

    #[test]
    fn single_step_rollout_has_bootstrap_value() {
        let (mut worker, actor, critic) = worker_and_nets(1);
        let batch = worker.collect(&actor, &critic, 1).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch.values.len(), 2);
        assert_eq!(batch.scores[0].dim(), actor.dim());
        batch.validate().unwrap();
        assert!(worker.collect(&actor, &critic, 0).is_err());
    }

    #[test]
    fn rollouts_are_deterministic_and_consistent() {
        let (mut w1, actor, critic) = worker_and_nets(5);
        let (mut w2, _, _) = worker_and_nets(5);
        let a = w1.collect(&actor, &critic, 300).unwrap();
        let b = w2.collect(&actor, &critic, 300).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.rewards, b.rewards);
        assert_eq!(a.log_probs, b.log_probs);
        assert!(a.dones.iter().any(|&d| d), "300 random cartpole steps should end an episode");
        for ((s, act), lp) in a.states.iter().zip(&a.actions).zip(&a.log_probs) {
            assert!((actor.log_prob_of(s, act).unwrap() - lp).abs() <= 1e-12);
            assert!(*lp <= 0.0);
        }
        let eps = w1.drain_episodes();
        assert_eq!(eps.len(), a.dones.iter().filter(|&&d| d).count());
        assert!(w1.drain_episodes().is_empty());
    }

    fn zero_critic(hidden: &[usize]) -> Mlp {
        let spec = MlpSpec::new(3, hidden, 1);
        Mlp::from_params(spec.clone(), ParamVector::zeros(spec.param_count())).unwrap()
    }

    #[test]
    fn critic_loss_cases() {
        let states = vec![vec![0.1, 0.2, 0.3], vec![-1.0, 0.0, 2.0]];
        let critic = zero_critic(&[4]);
        let (loss, _) = critic_loss_and_grad(&critic, &states, &[1.0, 1.0]).unwrap();
        assert_eq!(loss, 1.0);

        let mut rng = Rng::new(8);
        let critic = Mlp::init(MlpSpec::new(3, &[4], 1), &mut rng).unwrap();
        let perfect: Vec<f64> = states.iter().map(|s| critic.forward_slice(s).unwrap()[0]).collect();
        let (loss, grad) = critic_loss_and_grad(&critic, &states, &perfect).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.is_zero());
        assert!(critic_loss_and_grad(&critic, &states, &[1.0]).is_err());
        assert!(critic_loss_and_grad(&critic, &[], &[]).is_err());
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let critic = Mlp::init(MlpSpec::new(3, &[5, 4], 1), &mut rng).unwrap();
        let states: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let targets: Vec<f64> = (0..6).map(|_| 2.0 * rng.normal()).collect();
        let (_, analytic) = critic_loss_and_grad(&critic, &states, &targets).unwrap();
        let spec = critic.spec().clone();
        let numeric = finite_diff_grad(
            |p| {
                let net = Mlp::from_params(spec.clone(), p.clone()).unwrap();
                critic_loss_and_grad(&net, &states, &targets).unwrap().0
            },
            critic.params(),
            1e-6,
        )
        .unwrap();
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!((a - n).abs() <= 1e-4 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn critic_update_lowers_loss() {
        let (mut worker, actor, mut critic) = worker_and_nets(2);
        let batch = worker.collect(&actor, &critic, 200).unwrap();
        let gae = batch.gae(0.99, 0.9).unwrap();
        let mut adam = AdamState::new(critic.dim());
        let first = critic_update(&mut critic, &batch, &gae, &mut adam, 1e-2).unwrap();
        let mut last = first;
        for _ in 0..50 {
            last = critic_update(&mut critic, &batch, &gae, &mut adam, 1e-2).unwrap();
        }
        assert!(last < first);
    }

    #[test]
    fn single_iteration_run() {
        let record = train(small_config(EnvKind::Cartpole, OptimizerKind::Smac, 1000, 1000));
        assert!(record.succeeded(), "{:?}", record.status);
        assert_eq!(record.logs.len(), 1);
        let log = &record.logs[0];
        assert_eq!((log.iteration, log.timestep), (1, 1000));
        assert!(log.mean_action_log_prob <= 0.0);
        assert!(log.denominator.unwrap() > 0.0);
        assert!(log.dot_with_grad >= 0.0);
        assert!(log.fisher_trace <= log.g_hat * log.g_hat + 1e-12);
    }

    #[test]
    fn every_optimizer_runs_on_every_task() {
        for env in EnvKind::ALL {
            for opt in OptimizerKind::ALL {
                let record = train(small_config(env, opt, 200, 400));
                assert!(record.succeeded(), "{env}/{opt}: {:?}", record.status);
                assert_eq!(record.logs.iter().map(|l| l.timestep).collect::<Vec<_>>(), vec![200, 400]);
                assert_eq!(record.logs[1].cg_iterations.is_some(), opt == OptimizerKind::Cg);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small_config(EnvKind::Pendulum, OptimizerKind::Smac, 250, 1000);
        let a = train(cfg.clone());
        let b = train(cfg);
        let strip = |r: &RunRecord| {
            r.logs.iter().map(|l| (l.mean_action_log_prob, l.critic_loss, l.direction_norm)).collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.episodes, b.episodes);
    }

    #[test]
    fn heavy_damping_reduces_to_scaled_sgd() {
        let lambda = 1e8;
        let sgd_cfg = AgentConfig { eta: 7e-3, ..small_config(EnvKind::Cartpole, OptimizerKind::Sgd, 200, 1000) };
        let smac_cfg = AgentConfig { optimizer_id: OptimizerKind::Smac, eta: 7e-3 * lambda, lambda, ..sgd_cfg.clone() };
        let mut sgd = Agent::new(sgd_cfg).unwrap();
        let mut smac = Agent::new(smac_cfg).unwrap();
        for _ in 0..5 {
            sgd.step().unwrap();
            smac.step().unwrap();
            let (a, b) = (sgd.actor().params(), smac.actor().params());
            let gap = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-6, "parameter gap {gap}");
        }
    }

    #[test]
    fn config_validation() {
        let ok = AgentConfig::defaults_for(EnvKind::Cartpole, OptimizerKind::Sgd, 0);
        ok.validate().unwrap();
        assert_eq!(ok.iterations(), 300);
        let bad = [
            AgentConfig { batch_mode: BatchMode::PerSample, ..ok.clone() },
            AgentConfig { total_timesteps: 1500, ..ok.clone() },
            AgentConfig { gamma: 1.5, ..ok.clone() },
            AgentConfig { eta: 0.0, ..ok.clone() },
            AgentConfig { steps_per_update: 0, ..ok.clone() },
            AgentConfig { hidden: vec![64, 0], ..ok.clone() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
        let record = train(AgentConfig { eta: -1.0, ..ok });
        assert!(matches!(record.status, RunStatus::Failed { .. }));
        assert!(record.logs.is_empty() && record.curves.is_none());
    }

    #[test]
    fn config_json_uses_defaults() {
        let json = r#"{"env_id":"acrobot","optimizer_id":"smac","eta":0.05,"alpha":0.001,"steps_per_update":1000,
            "gamma":0.99,"lambda_gae":0.9,"lambda":0.1,"total_timesteps":300000,"seed":4}"#;
        let cfg: AgentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg, AgentConfig::defaults_for(EnvKind::Acrobot, OptimizerKind::Smac, 4));
    }

    #[test]
    fn outputs_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = AgentConfig {
            checkpoint_every: 2,
            ..small_config(EnvKind::Cartpole, OptimizerKind::Adam, 100, 400)
        };
        let record = train_with_output(cfg, Some(dir.path()));
        assert!(record.succeeded());
        let csv = fs::read_to_string(dir.path().join("iterations.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], RUN_CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines.iter().all(|l| l.split(',').count() == 8));

        let text = fs::read_to_string(dir.path().join("checkpoint_000004.json")).unwrap();
        let ckpt: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!((ckpt.iteration, ckpt.timestep), (4, 400));
        assert!(ckpt.actor_adam.is_some());
        assert!(dir.path().join("checkpoint_000002.json").exists());
        assert!(!dir.path().join("checkpoint_000001.json").exists());
    }
}
