//! Fast self-checks of the numerical kernels against independent oracles.

use crate::advantage::{compute_gae, gae_bruteforce_oracle};
use crate::envs::{Env, EnvKind};
use crate::error::Result;
use crate::fisher::{cg_solve, dense_sm_oracle, empirical_fvp, sm_inverse_apply, FisherPrecond, FvpBatch};
use crate::numcore::{finite_diff_grad, gaussian_sample, Rng};
use crate::policy::{Action, CategoricalPolicy, GaussianPolicy, Policy};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, err: f64, tol: f64) -> Check {
    Check { name, passed: err <= tol, detail: format!("max error {err:.3e} (tol {tol:.0e})") }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sherman_morrison(rng: &mut Rng) -> Result<Check> {
    let mut err = 0.0f64;
    for _ in 0..20 {
        let l = gaussian_sample(rng, 64)?;
        let g = gaussian_sample(rng, 64)?;
        let p = FisherPrecond::new(0.1, l)?;
        let fast = sm_inverse_apply(&p, &g)?;
        let dense = dense_sm_oracle(&p, &g)?;
        let scale = 1.0 + dense.norm();
        err = err.max(max_abs_diff(fast.as_slice(), dense.as_slice()) / scale);
    }
    Ok(check("rank-1 inverse matches dense solve", err, 1e-10))
}

fn cg_rank_one(rng: &mut Rng) -> Result<Check> {
    let l = gaussian_sample(rng, 32)?;
    let g = gaussian_sample(rng, 32)?;
    let scores = [l.clone()];
    let batch = FvpBatch::new(&scores, 0.1)?;
    let sol = cg_solve(|v| empirical_fvp(&batch, v), &g, 10, 1e-12)?;
    let sm = sm_inverse_apply(&FisherPrecond::new(0.1, l)?, &g)?;
    Ok(check("conjugate gradient matches rank-1 inverse", max_abs_diff(sol.x.as_slice(), sm.as_slice()), 1e-8))
}

fn gae(rng: &mut Rng) -> Result<Check> {
    let t = 200;
    let rewards: Vec<f64> = (0..t).map(|_| rng.normal()).collect();
    let values: Vec<f64> = (0..=t).map(|_| rng.normal()).collect();
    let dones: Vec<bool> = (0..t).map(|_| rng.uniform() < 0.05).collect();
    let fast = compute_gae(&rewards, &values, &dones, 0.99, 0.9)?;
    let slow = gae_bruteforce_oracle(&rewards, &values, &dones, 0.99, 0.9)?;
    Ok(check("GAE recursion matches direct sum", max_abs_diff(&fast.advantages, &slow.advantages), 1e-10))
}

fn scores(rng: &mut Rng) -> Result<Vec<Check>> {
    let state = [0.3, -0.2, 0.05, 0.4];
    let mut cat = CategoricalPolicy::init(4, &[8], 2, rng)?;
    let action = Action::Discrete(1);
    let analytic = cat.grad_log_prob(&state, &action)?;
    let theta = cat.params();
    let numeric = finite_diff_grad(
        |p| {
            cat.set_params(p.clone()).expect("same dimension");
            cat.log_prob_of(&state, &action).unwrap_or(f64::NAN)
        },
        &theta,
        1e-6,
    )?;

    let mut gauss = GaussianPolicy::init(3, &[8], 1, rng)?;
    let action = Action::Continuous(vec![0.7]);
    let g_analytic = gauss.grad_log_prob(&state[..3], &action)?;
    let g_theta = gauss.params();
    let g_numeric = finite_diff_grad(
        |p| {
            gauss.set_params(p.clone()).expect("same dimension");
            gauss.log_prob_of(&state[..3], &action).unwrap_or(f64::NAN)
        },
        &g_theta,
        1e-6,
    )?;
    Ok(vec![
        check("categorical score matches finite differences", max_abs_diff(analytic.as_slice(), numeric.as_slice()), 1e-6),
        check("gaussian score matches finite differences", max_abs_diff(g_analytic.as_slice(), g_numeric.as_slice()), 1e-6),
    ])
}

fn cartpole_step() -> Result<Check> {
    let mut env = Env::new(EnvKind::Cartpole);
    let mut rng = Rng::new(0);
    env.reset(&mut rng);
    env.set_physics_state(&[0.0; 4])?;
    let out = env.step(&Action::Discrete(1))?;
    let expected = [0.0, 0.195_121_951_219_512_2, 0.0, -0.292_682_926_829_268_3];
    Ok(check("cartpole Euler step", max_abs_diff(&out.observation, &expected), 1e-9))
}

/// Runs every check with a fixed seed.
pub fn run_all() -> Result<Vec<Check>> {
    let mut rng = Rng::new(2024);
    let mut checks = vec![sherman_morrison(&mut rng)?, cg_rank_one(&mut rng)?, gae(&mut rng)?];
    checks.extend(scores(&mut rng)?);
    checks.push(cartpole_step()?);
    Ok(checks)
}
