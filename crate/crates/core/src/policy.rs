//! Stochastic policy heads on top of [`Mlp`].
//!
//! [`CategoricalPolicy`] puts a softmax over the network's logits.
//! [`GaussianPolicy`] uses the network output as the mean of a diagonal
//! Gaussian whose log standard deviations are a separate, state-independent
//! parameter block appended after the network weights.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::net::{Mlp, MlpSpec};
use crate::numcore::{ParamVector, Rng};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    /// Flat numeric form used in trajectory dumps.
    pub fn to_values(&self) -> Vec<f64> {
        match self {
            Action::Discrete(a) => vec![*a as f64],
            Action::Continuous(v) => v.clone(),
        }
    }
}

pub trait Policy {
    /// Length of the flat parameter vector θ.
    fn dim(&self) -> usize;

    fn params(&self) -> ParamVector;

    fn set_params(&mut self, params: ParamVector) -> Result<()>;

    /// Draws `a ~ π(·|s)` and returns it with `log π(a|s)`.
    fn sample(&self, state: &[f64], rng: &mut Rng) -> Result<(Action, f64)>;

    fn log_prob_of(&self, state: &[f64], action: &Action) -> Result<f64>;

    /// Writes `∇θ log π(a|s)` into `out` (overwriting it) and returns `log π(a|s)`.
    fn score_into(&self, state: &[f64], action: &Action, out: &mut [f64]) -> Result<f64>;

    fn grad_log_prob(&self, state: &[f64], action: &Action) -> Result<ParamVector> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(state, action, &mut out)?;
        Ok(ParamVector::from_vec_unchecked(out))
    }
}

fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("policy logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|l| l - lse).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    net: Mlp,
}

impl CategoricalPolicy {
    pub fn new(net: Mlp) -> Result<Self> {
        if net.spec().output_dim < 1 {
            return Err(Error::InvalidArgument("categorical policy needs >= 1 action".into()));
        }
        Ok(CategoricalPolicy { net })
    }

    pub fn init(obs_dim: usize, hidden: &[usize], n_actions: usize, rng: &mut Rng) -> Result<Self> {
        CategoricalPolicy::new(Mlp::init(MlpSpec::new(obs_dim, hidden, n_actions), rng)?)
    }

    pub fn n_actions(&self) -> usize {
        self.net.spec().output_dim
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Action probabilities at `state`.
    pub fn probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.net.forward_slice(state)?)?.into_iter().map(f64::exp).collect())
    }

    fn index(&self, action: &Action) -> Result<usize> {
        match action {
            Action::Discrete(a) if *a < self.n_actions() => Ok(*a),
            Action::Discrete(a) => Err(Error::InvalidAction(format!(
                "index {a} out of range for {} actions",
                self.n_actions()
            ))),
            Action::Continuous(_) => {
                Err(Error::InvalidAction("continuous action for a categorical policy".into()))
            }
        }
    }
}

impl Policy for CategoricalPolicy {
    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn params(&self) -> ParamVector {
        self.net.params().clone()
    }

    fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.net.set_params(params)
    }

    fn sample(&self, state: &[f64], rng: &mut Rng) -> Result<(Action, f64)> {
        let logp = log_softmax(&self.net.forward_slice(state)?)?;
        let u = rng.uniform();
        let mut cum = 0.0;
        let mut chosen = logp.len() - 1;
        for (i, lp) in logp.iter().enumerate() {
            cum += lp.exp();
            if u < cum {
                chosen = i;
                break;
            }
        }
        Ok((Action::Discrete(chosen), logp[chosen]))
    }

    fn log_prob_of(&self, state: &[f64], action: &Action) -> Result<f64> {
        let a = self.index(action)?;
        Ok(log_softmax(&self.net.forward_slice(state)?)?[a])
    }

    fn score_into(&self, state: &[f64], action: &Action, out: &mut [f64]) -> Result<f64> {
        let a = self.index(action)?;
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut logp_a = 0.0;
        self.net.forward_backward(state, out, |logits| {
            let logp = log_softmax(logits)?;
            logp_a = logp[a];
            // d log softmax_a / d logits = onehot(a) - softmax
            Ok(logp
                .iter()
                .enumerate()
                .map(|(i, lp)| if i == a { 1.0 } else { 0.0 } - lp.exp())
                .collect())
        })?;
        Ok(logp_a)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianPolicy {
    net: Mlp,
    log_std: Vec<f64>,
}

impl GaussianPolicy {
    /// `log_std` starts at 0 (unit standard deviation).
    pub fn new(net: Mlp) -> Self {
        let action_dim = net.spec().output_dim;
        GaussianPolicy { net, log_std: vec![0.0; action_dim] }
    }

    pub fn init(obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(GaussianPolicy::new(Mlp::init(MlpSpec::new(obs_dim, hidden, action_dim), rng)?))
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mean = self.net.forward_slice(state)?;
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gaussian policy mean"));
        }
        Ok(mean)
    }

    fn continuous<'a>(&self, action: &'a Action) -> Result<&'a [f64]> {
        match action {
            Action::Continuous(v) => {
                check_dim(self.action_dim(), v.len())?;
                Ok(v)
            }
            Action::Discrete(_) => Err(Error::InvalidAction("discrete action for a Gaussian policy".into())),
        }
    }

    fn density(&self, mean: &[f64], action: &[f64]) -> f64 {
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), ls)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - HALF_LN_TAU
            })
            .sum()
    }
}

impl Policy for GaussianPolicy {
    fn dim(&self) -> usize {
        self.net.dim() + self.log_std.len()
    }

    fn params(&self) -> ParamVector {
        let mut p = self.net.params().as_slice().to_vec();
        p.extend_from_slice(&self.log_std);
        ParamVector::from_vec_unchecked(p)
    }

    /// The trailing `log_std` block is clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    fn set_params(&mut self, params: ParamVector) -> Result<()> {
        check_dim(self.dim(), params.dim())?;
        params.ensure_finite("GaussianPolicy::set_params")?;
        let mut data = params.into_vec();
        let log_std = data.split_off(self.net.dim());
        self.net.set_params(ParamVector::from_vec_unchecked(data))?;
        self.log_std = log_std.into_iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Ok(())
    }

    fn sample(&self, state: &[f64], rng: &mut Rng) -> Result<(Action, f64)> {
        let mean = self.mean(state)?;
        let action: Vec<f64> =
            mean.iter().zip(&self.log_std).map(|(m, ls)| m + ls.exp() * rng.normal()).collect();
        let lp = self.density(&mean, &action);
        Ok((Action::Continuous(action), lp))
    }

    fn log_prob_of(&self, state: &[f64], action: &Action) -> Result<f64> {
        let a = self.continuous(action)?;
        Ok(self.density(&self.mean(state)?, a))
    }

    fn score_into(&self, state: &[f64], action: &Action, out: &mut [f64]) -> Result<f64> {
        let a = self.continuous(action)?;
        check_dim(self.dim(), out.len())?;
        out.iter_mut().for_each(|v| *v = 0.0);
        let (net_part, std_part) = out.split_at_mut(self.net.dim());
        let mut lp = 0.0;
        self.net.forward_backward(state, net_part, |mean| {
            if !mean.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("gaussian policy mean"));
            }
            lp = self.density(mean, a);
            let mut upstream = Vec::with_capacity(mean.len());
            for (i, ((m, av), ls)) in mean.iter().zip(a).zip(&self.log_std).enumerate() {
                let var = (2.0 * ls).exp();
                let diff = av - m;
                upstream.push(diff / var);
                std_part[i] = diff * diff / var - 1.0;
            }
            Ok(upstream)
        })?;
        Ok(lp)
    }
}

/// The actor used by the trainer: discrete or continuous depending on the task.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActorPolicy {
    Categorical(CategoricalPolicy),
    Gaussian(GaussianPolicy),
}

impl Policy for ActorPolicy {
    fn dim(&self) -> usize {
        match self {
            ActorPolicy::Categorical(p) => p.dim(),
            ActorPolicy::Gaussian(p) => p.dim(),
        }
    }

    fn params(&self) -> ParamVector {
        match self {
            ActorPolicy::Categorical(p) => p.params(),
            ActorPolicy::Gaussian(p) => p.params(),
        }
    }

    fn set_params(&mut self, params: ParamVector) -> Result<()> {
        match self {
            ActorPolicy::Categorical(p) => p.set_params(params),
            ActorPolicy::Gaussian(p) => p.set_params(params),
        }
    }

    fn sample(&self, state: &[f64], rng: &mut Rng) -> Result<(Action, f64)> {
        match self {
            ActorPolicy::Categorical(p) => p.sample(state, rng),
            ActorPolicy::Gaussian(p) => p.sample(state, rng),
        }
    }

    fn log_prob_of(&self, state: &[f64], action: &Action) -> Result<f64> {
        match self {
            ActorPolicy::Categorical(p) => p.log_prob_of(state, action),
            ActorPolicy::Gaussian(p) => p.log_prob_of(state, action),
        }
    }

    fn score_into(&self, state: &[f64], action: &Action, out: &mut [f64]) -> Result<f64> {
        match self {
            ActorPolicy::Categorical(p) => p.score_into(state, action, out),
            ActorPolicy::Gaussian(p) => p.score_into(state, action, out),
        }
    }
}
