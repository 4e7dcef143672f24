//! Classic-control tasks: Acrobot, Cartpole and Pendulum.
//!
//! Dynamics, constants, rewards and initial-state distributions follow the
//! standard Gymnasium implementations. Every task is capped at
//! [`HORIZON`] steps, after which the episode is truncated.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Rng;
use crate::policy::Action;

pub const HORIZON: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Acrobot,
    Cartpole,
    Pendulum,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Acrobot, EnvKind::Cartpole, EnvKind::Pendulum];

    pub fn id(&self) -> &'static str {
        match self {
            EnvKind::Acrobot => "acrobot",
            EnvKind::Cartpole => "cartpole",
            EnvKind::Pendulum => "pendulum",
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvKind::Acrobot => 6,
            EnvKind::Cartpole => 4,
            EnvKind::Pendulum => 3,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            EnvKind::Acrobot => ActionSpace::Discrete(3),
            EnvKind::Cartpole => ActionSpace::Discrete(2),
            EnvKind::Pendulum => ActionSpace::Box { dim: 1, low: -MAX_TORQUE, high: MAX_TORQUE },
        }
    }

    /// Per-step reward range `(min, max)`.
    pub fn reward_range(&self) -> (f64, f64) {
        match self {
            EnvKind::Acrobot => (-1.0, 0.0),
            EnvKind::Cartpole => (1.0, 1.0),
            EnvKind::Pendulum => (-PENDULUM_MAX_COST, 0.0),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "acrobot" => Ok(EnvKind::Acrobot),
            "cartpole" => Ok(EnvKind::Cartpole),
            "pendulum" => Ok(EnvKind::Pendulum),
            other => Err(Error::Config(format!("unknown environment id {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Box { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Clips a continuous action into the box; discrete actions pass through.
    pub fn clip(&self, action: &Action) -> Action {
        match (self, action) {
            (ActionSpace::Box { low, high, .. }, Action::Continuous(v)) => {
                Action::Continuous(v.iter().map(|x| x.clamp(*low, *high)).collect())
            }
            _ => action.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

// Cartpole
const CP_GRAVITY: f64 = 9.8;
const CP_MASSCART: f64 = 1.0;
const CP_MASSPOLE: f64 = 0.1;
const CP_TOTAL_MASS: f64 = CP_MASSCART + CP_MASSPOLE;
const CP_LENGTH: f64 = 0.5;
const CP_POLEMASS_LENGTH: f64 = CP_MASSPOLE * CP_LENGTH;
const CP_FORCE: f64 = 10.0;
const CP_TAU: f64 = 0.02;
const CP_X_LIMIT: f64 = 2.4;
pub const CARTPOLE_THETA_LIMIT: f64 = 12.0 * 2.0 * PI / 360.0;

// Acrobot
const AC_DT: f64 = 0.2;
const AC_L1: f64 = 1.0;
const AC_M1: f64 = 1.0;
const AC_M2: f64 = 1.0;
const AC_LC1: f64 = 0.5;
const AC_LC2: f64 = 0.5;
const AC_MOI: f64 = 1.0;
const AC_G: f64 = 9.8;
const AC_MAX_VEL_1: f64 = 4.0 * PI;
const AC_MAX_VEL_2: f64 = 9.0 * PI;
const AC_TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];

// Pendulum
const PD_G: f64 = 10.0;
const PD_M: f64 = 1.0;
const PD_L: f64 = 1.0;
const PD_DT: f64 = 0.05;
const PD_MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
/// `π² + 0.1·8² + 0.001·2²`
pub const PENDULUM_MAX_COST: f64 = PI * PI + 0.1 * PD_MAX_SPEED * PD_MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE;

fn wrap(mut x: f64, low: f64, high: f64) -> f64 {
    let span = high - low;
    while x > high {
        x -= span;
    }
    while x < low {
        x += span;
    }
    x
}

pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

fn acrobot_derivs(s: &[f64; 4], torque: f64) -> [f64; 4] {
    let [theta1, theta2, dtheta1, dtheta2] = *s;
    let d1 = AC_M1 * AC_LC1 * AC_LC1
        + AC_M2 * (AC_L1 * AC_L1 + AC_LC2 * AC_LC2 + 2.0 * AC_L1 * AC_LC2 * theta2.cos())
        + 2.0 * AC_MOI;
    let d2 = AC_M2 * (AC_LC2 * AC_LC2 + AC_L1 * AC_LC2 * theta2.cos()) + AC_MOI;
    let phi2 = AC_M2 * AC_LC2 * AC_G * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -AC_M2 * AC_L1 * AC_LC2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * AC_M2 * AC_L1 * AC_LC2 * dtheta2 * dtheta1 * theta2.sin()
        + (AC_M1 * AC_LC1 + AC_M2 * AC_L1) * AC_G * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1 - AC_M2 * AC_L1 * AC_LC2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (AC_M2 * AC_LC2 * AC_LC2 + AC_MOI - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

fn rk4_step(s: &[f64; 4], torque: f64, dt: f64) -> [f64; 4] {
    let shifted = |base: &[f64; 4], k: &[f64; 4], h: f64| -> [f64; 4] {
        std::array::from_fn(|i| base[i] + h * k[i])
    };
    let k1 = acrobot_derivs(s, torque);
    let k2 = acrobot_derivs(&shifted(s, &k1, dt / 2.0), torque);
    let k3 = acrobot_derivs(&shifted(s, &k2, dt / 2.0), torque);
    let k4 = acrobot_derivs(&shifted(s, &k3, dt), torque);
    std::array::from_fn(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

#[derive(Clone, Debug, PartialEq)]
enum Physics {
    /// `[x, x_dot, theta, theta_dot]`
    Cartpole([f64; 4]),
    /// `[theta1, theta2, dtheta1, dtheta2]`
    Acrobot([f64; 4]),
    /// `[theta, theta_dot]`, `theta = 0` upright
    Pendulum([f64; 2]),
}

/// One environment instance with its own episode bookkeeping.
#[derive(Clone, Debug)]
pub struct Env {
    kind: EnvKind,
    physics: Physics,
    step_count: usize,
    horizon: usize,
    finished: bool,
}

impl Env {
    /// Environment in its all-zero physics state; call [`Env::reset`] before use.
    pub fn new(kind: EnvKind) -> Self {
        let physics = match kind {
            EnvKind::Cartpole => Physics::Cartpole([0.0; 4]),
            EnvKind::Acrobot => Physics::Acrobot([0.0; 4]),
            EnvKind::Pendulum => Physics::Pendulum([0.0; 2]),
        };
        Env { kind, physics, step_count: 0, horizon: HORIZON, finished: false }
    }

    /// Overrides the truncation horizon (default [`HORIZON`]).
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    /// Sets the raw physics state (Cartpole: 4 values, Acrobot: 4, Pendulum: 2).
    pub fn set_physics_state(&mut self, state: &[f64]) -> Result<()> {
        let bad = || Error::InvalidArgument(format!("wrong physics state length {} for {}", state.len(), self.kind));
        self.physics = match self.kind {
            EnvKind::Cartpole => Physics::Cartpole(state.try_into().map_err(|_| bad())?),
            EnvKind::Acrobot => Physics::Acrobot(state.try_into().map_err(|_| bad())?),
            EnvKind::Pendulum => Physics::Pendulum(state.try_into().map_err(|_| bad())?),
        };
        self.step_count = 0;
        self.finished = false;
        Ok(())
    }

    pub fn physics_state(&self) -> Vec<f64> {
        match &self.physics {
            Physics::Cartpole(s) | Physics::Acrobot(s) => s.to_vec(),
            Physics::Pendulum(s) => s.to_vec(),
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.physics = match self.kind {
            EnvKind::Cartpole => Physics::Cartpole(std::array::from_fn(|_| rng.uniform_range(-0.05, 0.05))),
            EnvKind::Acrobot => Physics::Acrobot(std::array::from_fn(|_| rng.uniform_range(-0.1, 0.1))),
            EnvKind::Pendulum => {
                let theta = rng.uniform_range(-PI, PI);
                let theta_dot = rng.uniform_range(-1.0, 1.0);
                Physics::Pendulum([theta, theta_dot])
            }
        };
        self.step_count = 0;
        self.finished = false;
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        match &self.physics {
            Physics::Cartpole(s) => s.to_vec(),
            Physics::Acrobot(s) => {
                vec![s[0].cos(), s[0].sin(), s[1].cos(), s[1].sin(), s[2], s[3]]
            }
            Physics::Pendulum([th, thdot]) => vec![th.cos(), th.sin(), *thdot],
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.finished {
            return Err(Error::InvalidArgument("step called on a finished episode; reset first".into()));
        }
        let (reward, terminated) = match (&mut self.physics, action) {
            (Physics::Cartpole(s), Action::Discrete(a)) if *a < 2 => {
                let force = if *a == 1 { CP_FORCE } else { -CP_FORCE };
                let [x, x_dot, theta, theta_dot] = *s;
                let (sin, cos) = theta.sin_cos();
                let temp = (force + CP_POLEMASS_LENGTH * theta_dot * theta_dot * sin) / CP_TOTAL_MASS;
                let theta_acc = (CP_GRAVITY * sin - cos * temp)
                    / (CP_LENGTH * (4.0 / 3.0 - CP_MASSPOLE * cos * cos / CP_TOTAL_MASS));
                let x_acc = temp - CP_POLEMASS_LENGTH * theta_acc * cos / CP_TOTAL_MASS;
                *s = [
                    x + CP_TAU * x_dot,
                    x_dot + CP_TAU * x_acc,
                    theta + CP_TAU * theta_dot,
                    theta_dot + CP_TAU * theta_acc,
                ];
                let terminated = s[0].abs() > CP_X_LIMIT || s[2].abs() > CARTPOLE_THETA_LIMIT;
                (1.0, terminated)
            }
            (Physics::Acrobot(s), Action::Discrete(a)) if *a < 3 => {
                let mut ns = rk4_step(s, AC_TORQUES[*a], AC_DT);
                ns[0] = wrap(ns[0], -PI, PI);
                ns[1] = wrap(ns[1], -PI, PI);
                ns[2] = ns[2].clamp(-AC_MAX_VEL_1, AC_MAX_VEL_1);
                ns[3] = ns[3].clamp(-AC_MAX_VEL_2, AC_MAX_VEL_2);
                *s = ns;
                let terminated = -ns[0].cos() - (ns[1] + ns[0]).cos() > 1.0;
                (if terminated { 0.0 } else { -1.0 }, terminated)
            }
            (Physics::Pendulum(s), Action::Continuous(u)) if u.len() == 1 => {
                let u = u[0];
                if !(u.is_finite() && (-MAX_TORQUE..=MAX_TORQUE).contains(&u)) {
                    return Err(Error::InvalidAction(format!("pendulum torque {u} outside [-2, 2]")));
                }
                let [th, thdot] = *s;
                let cost = angle_normalize(th).powi(2) + 0.1 * thdot * thdot + 0.001 * u * u;
                let new_thdot = (thdot + (3.0 * PD_G / (2.0 * PD_L) * th.sin() + 3.0 / (PD_M * PD_L * PD_L) * u) * PD_DT)
                    .clamp(-PD_MAX_SPEED, PD_MAX_SPEED);
                *s = [th + new_thdot * PD_DT, new_thdot];
                (-cost, false)
            }
            (_, action) => {
                return Err(Error::InvalidAction(format!("{action:?} is not valid for {}", self.kind)));
            }
        };
        self.step_count += 1;
        let truncated = !terminated && self.step_count >= self.horizon;
        self.finished = terminated || truncated;
        Ok(StepResult { observation: self.observation(), reward, terminated, truncated })
    }
}

/// One row of a trajectory dump.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Writes `t, obs_0.., action_0.., reward, done` rows with a header.
pub fn write_trajectory_csv<W: Write>(mut w: W, rows: &[TrajectoryRow]) -> Result<()> {
    let Some(first) = rows.first() else {
        writeln!(w, "t,reward,done")?;
        return Ok(());
    };
    let mut header = vec!["t".to_string()];
    header.extend((0..first.observation.len()).map(|i| format!("obs_{i}")));
    header.extend((0..first.action.len()).map(|i| format!("action_{i}")));
    header.push("reward".into());
    header.push("done".into());
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let mut fields = vec![row.t.to_string()];
        fields.extend(row.observation.iter().map(|v| v.to_string()));
        fields.extend(row.action.iter().map(|v| v.to_string()));
        fields.push(row.reward.to_string());
        fields.push((row.done as u8).to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}
