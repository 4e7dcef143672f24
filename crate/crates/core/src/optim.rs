//! Parameter update rules: SGD, Adam, the rank-1 natural-gradient step and
//! the conjugate-gradient natural-gradient step.
//!
//! Policy updates are ascent steps on the expected return. Adam also serves
//! the critic, where it descends the squared-error loss; [`Orientation`]
//! makes the sign explicit at each call site.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fisher::{cg_solve, empirical_fvp, sm_inverse_apply, smac_precond, FisherPrecond, FvpBatch};
use crate::numcore::{dot_slices, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Smac,
    Sgd,
    Adam,
    Cg,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::Cg, OptimizerKind::Smac];

    pub fn id(&self) -> &'static str {
        match self {
            OptimizerKind::Smac => "smac",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Cg => "cg",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smac" => Ok(OptimizerKind::Smac),
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "cg" => Ok(OptimizerKind::Cg),
            other => Err(Error::Config(format!("unknown optimizer id {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Ascent,
    Descent,
}

impl Orientation {
    fn sign(self) -> f64 {
        match self {
            Orientation::Ascent => 1.0,
            Orientation::Descent => -1.0,
        }
    }
}

/// Optimizer-specific diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateExtra {
    /// `λ² + λ‖ℓ‖²` of the rank-1 step.
    pub denominator: Option<f64>,
    pub cg_iterations: Option<usize>,
    pub cg_residual: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    /// Norm of the step direction before scaling by the step size.
    pub direction_norm: f64,
    pub dot_with_grad: f64,
    #[serde(with = "duration_ms")]
    pub wall_time: Duration,
    pub extra: UpdateExtra,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(ms.max(0.0) / 1e3))
    }
}

fn check_rate(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be > 0, got {value}")))
    }
}

fn apply_direction(
    theta: &ParamVector,
    direction: &ParamVector,
    g: &ParamVector,
    scale: f64,
    started: Instant,
    extra: UpdateExtra,
) -> Result<(ParamVector, UpdateReport)> {
    let next: Vec<f64> = theta.iter().zip(direction.iter()).map(|(t, d)| t + scale * d).collect();
    let next = ParamVector::from_vec(next)?;
    let report = UpdateReport {
        direction_norm: direction.norm(),
        dot_with_grad: dot_slices(direction.as_slice(), g.as_slice()),
        wall_time: started.elapsed(),
        extra,
    };
    Ok((next, report))
}

/// `θ + η·g`
pub fn sgd_step(theta: &ParamVector, g: &ParamVector, eta: f64) -> Result<(ParamVector, UpdateReport)> {
    let started = Instant::now();
    check_rate("eta", eta)?;
    check_dim(theta.dim(), g.dim())?;
    g.ensure_finite("sgd gradient")?;
    apply_direction(theta, g, g, eta, started, UpdateExtra::default())
}

/// First and second moment estimates for Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState::with_hyperparams(dim, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState { m: ParamVector::zeros(dim), v: ParamVector::zeros(dim), t: 0, beta1, beta2, eps }
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }
}

/// One bias-corrected Adam step; updates `state` in place.
pub fn adam_step(
    state: &mut AdamState,
    theta: &ParamVector,
    g: &ParamVector,
    alpha: f64,
    orientation: Orientation,
) -> Result<(ParamVector, UpdateReport)> {
    let started = Instant::now();
    check_rate("alpha", alpha)?;
    check_dim(state.dim(), theta.dim())?;
    check_dim(state.dim(), g.dim())?;
    g.ensure_finite("adam gradient")?;

    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let mut direction = Vec::with_capacity(g.dim());
    for ((m, v), gi) in state.m.as_mut_slice().iter_mut().zip(state.v.as_mut_slice().iter_mut()).zip(g.iter()) {
        *m = b1 * *m + (1.0 - b1) * gi;
        *v = b2 * *v + (1.0 - b2) * gi * gi;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        direction.push(m_hat / (v_hat.sqrt() + state.eps));
    }
    let direction = ParamVector::from_vec(direction)?;
    let sign = orientation.sign();
    let (next, mut report) = apply_direction(theta, &direction, g, sign * alpha, started, UpdateExtra::default())?;
    report.dot_with_grad *= sign;
    Ok((next, report))
}

/// `θ + η·(λI + ℓ̄ℓ̄ᵀ)⁻¹ g` with `ℓ̄` the mean of `scores`.
pub fn smac_step(
    theta: &ParamVector,
    scores: &[ParamVector],
    g: &ParamVector,
    eta: f64,
    lambda: f64,
) -> Result<(ParamVector, UpdateReport)> {
    let started = Instant::now();
    check_rate("eta", eta)?;
    check_dim(theta.dim(), g.dim())?;
    let precond = smac_precond(lambda, scores)?;
    smac_apply(theta, &precond, g, eta, started)
}

fn smac_apply(
    theta: &ParamVector,
    precond: &FisherPrecond,
    g: &ParamVector,
    eta: f64,
    started: Instant,
) -> Result<(ParamVector, UpdateReport)> {
    let direction = sm_inverse_apply(precond, g)?;
    let extra = UpdateExtra { denominator: Some(precond.denominator()), ..Default::default() };
    apply_direction(theta, &direction, g, eta, started, extra)
}

/// Sequential one-sample steps `θ ← θ + η·(λI + ℓᵢℓᵢᵀ)⁻¹(ℓᵢAᵢ)` over a
/// frozen batch. The report carries the net displacement divided by `η` and
/// per-sample means of the denominator and of `directionᵢ·gᵢ`.
pub fn smac_per_sample_steps(
    theta: &ParamVector,
    scores: &[ParamVector],
    advantages: &[f64],
    eta: f64,
    lambda: f64,
) -> Result<(ParamVector, UpdateReport)> {
    let started = Instant::now();
    check_rate("eta", eta)?;
    check_dim(scores.len(), advantages.len())?;
    if scores.is_empty() {
        return Err(Error::Empty("smac_per_sample_steps"));
    }
    let mut current = theta.clone();
    let mut denom_sum = 0.0;
    let mut dot_sum = 0.0;
    for (score, adv) in scores.iter().zip(advantages) {
        let g = score.scaled(*adv)?;
        let precond = FisherPrecond::new(lambda, score.clone())?;
        let (next, step) = smac_apply(&current, &precond, &g, eta, started)?;
        denom_sum += precond.denominator();
        dot_sum += step.dot_with_grad;
        current = next;
    }
    let n = scores.len() as f64;
    let displacement: f64 =
        current.iter().zip(theta.iter()).map(|(a, b)| ((a - b) / eta).powi(2)).sum::<f64>().sqrt();
    let report = UpdateReport {
        direction_norm: displacement,
        dot_with_grad: dot_sum / n,
        wall_time: started.elapsed(),
        extra: UpdateExtra { denominator: Some(denom_sum / n), ..Default::default() },
    };
    Ok((current, report))
}

/// `θ + η·x` where `x` solves `((1/N)Σ ℓᵢℓᵢᵀ + δI)x = g` by conjugate gradient.
pub fn cg_npg_step(
    theta: &ParamVector,
    scores: &[ParamVector],
    g: &ParamVector,
    eta: f64,
    cg_damping: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(ParamVector, UpdateReport)> {
    let started = Instant::now();
    check_rate("eta", eta)?;
    check_dim(theta.dim(), g.dim())?;
    let fvp = FvpBatch::new(scores, cg_damping)?;
    let sol = cg_solve(|v| empirical_fvp(&fvp, v), g, max_iters, tol)?;
    let extra = UpdateExtra { cg_iterations: Some(sol.iterations), cg_residual: Some(sol.residual), ..Default::default() };
    apply_direction(theta, &sol.x, g, eta, started, extra)
}
