//! Damped rank-1 empirical Fisher preconditioning.
//!
//! The preconditioner is the implicit matrix `λI + ℓℓᵀ`, where `ℓ` is either a
//! single score `∇θ log π(a|s)` or the mean score over a batch. Its inverse is
//! applied in closed form:
//!
//! ```text
//! (λI + ℓℓᵀ)⁻¹ g = g/λ − ℓ·(ℓᵀg) / (λ² + λ·ℓᵀℓ)
//! ```
//!
//! which needs two dot products and one vector update, O(d) time and memory.
//! The conjugate-gradient baseline solves against the full empirical Fisher
//! `(1/N)Σ ℓᵢℓᵢᵀ + δI` through Fisher-vector products instead.
//!
//! Dense versions exist only as oracles and are capped at [`DENSE_ORACLE_LIMIT`].

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numcore::{dot, dot_slices, DenseMatrix, ParamVector};

/// Largest dimension accepted by the dense oracles.
pub const DENSE_ORACLE_LIMIT: usize = 128;

/// `λI + ℓℓᵀ`, stored as `λ` and `ℓ` only.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherPrecond {
    lambda: f64,
    direction: ParamVector,
    sq_norm: f64,
}

impl FisherPrecond {
    pub fn new(lambda: f64, direction: ParamVector) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("damping must be > 0, got {lambda}")));
        }
        direction.ensure_finite("FisherPrecond direction")?;
        let sq_norm = dot_slices(direction.as_slice(), direction.as_slice());
        if !sq_norm.is_finite() {
            return Err(Error::NonFinite("FisherPrecond squared norm"));
        }
        Ok(FisherPrecond { lambda, direction, sq_norm })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn direction(&self) -> &ParamVector {
        &self.direction
    }

    pub fn dim(&self) -> usize {
        self.direction.dim()
    }

    /// `ℓᵀℓ`, which is also the trace of the rank-1 term.
    pub fn sq_norm(&self) -> f64 {
        self.sq_norm
    }

    /// `λ² + λ·ℓᵀℓ`
    pub fn denominator(&self) -> f64 {
        self.lambda * self.lambda + self.lambda * self.sq_norm
    }
}

/// `(λI + ℓℓᵀ)⁻¹ g` without forming any matrix.
pub fn sm_inverse_apply(p: &FisherPrecond, g: &ParamVector) -> Result<ParamVector> {
    check_dim(p.dim(), g.dim())?;
    if g.is_zero() {
        return Ok(ParamVector::zeros(g.dim()));
    }
    let denom = p.denominator();
    // 1 + ℓᵀ(λI)⁻¹ℓ > 0 whenever λ > 0
    assert!(denom > 0.0, "Sherman-Morrison denominator must be positive, got {denom}");
    let inv_lambda = 1.0 / p.lambda;
    let coef = dot_slices(p.direction.as_slice(), g.as_slice()) / denom;
    let out: Vec<f64> = g
        .iter()
        .zip(p.direction.iter())
        .map(|(gi, li)| gi * inv_lambda - coef * li)
        .collect();
    let out = ParamVector::from_vec_unchecked(out);
    out.ensure_finite("sm_inverse_apply")?;
    Ok(out)
}

/// Explicit `λI + ℓℓᵀ`. Oracle use only.
pub fn dense_precond_matrix(p: &FisherPrecond) -> Result<DenseMatrix> {
    if p.dim() > DENSE_ORACLE_LIMIT {
        return Err(Error::TooLarge { dim: p.dim(), limit: DENSE_ORACLE_LIMIT });
    }
    let mut m = DenseMatrix::identity(p.dim());
    m.scale(p.lambda);
    m.add_outer(1.0, &p.direction, &p.direction)?;
    Ok(m)
}

/// Solves `(λI + ℓℓᵀ)x = g` by dense Gaussian elimination.
pub fn dense_sm_oracle(p: &FisherPrecond, g: &ParamVector) -> Result<ParamVector> {
    check_dim(p.dim(), g.dim())?;
    dense_precond_matrix(p)?.solve(g)
}

/// Elementwise mean of the scores.
pub fn batch_mean_score(scores: &[ParamVector]) -> Result<ParamVector> {
    let first = scores.first().ok_or(Error::Empty("batch_mean_score"))?;
    let mut acc = vec![0.0; first.dim()];
    for s in scores {
        check_dim(acc.len(), s.dim())?;
        for (a, v) in acc.iter_mut().zip(s.iter()) {
            *a += v;
        }
    }
    let inv_n = 1.0 / scores.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv_n);
    ParamVector::from_vec(acc)
}

/// Preconditioner built from the batch-mean score.
pub fn smac_precond(lambda: f64, scores: &[ParamVector]) -> Result<FisherPrecond> {
    FisherPrecond::new(lambda, batch_mean_score(scores)?)
}

/// The natural-gradient direction `(λI + ℓ̄ℓ̄ᵀ)⁻¹ g` (before the step size).
pub fn smac_direction(lambda: f64, scores: &[ParamVector], g: &ParamVector) -> Result<ParamVector> {
    sm_inverse_apply(&smac_precond(lambda, scores)?, g)
}

/// Implicit `(1/N)Σ ℓᵢℓᵢᵀ + damping·I`.
#[derive(Clone, Copy, Debug)]
pub struct FvpBatch<'a> {
    pub scores: &'a [ParamVector],
    pub damping: f64,
}

impl<'a> FvpBatch<'a> {
    pub fn new(scores: &'a [ParamVector], damping: f64) -> Result<Self> {
        if !(damping >= 0.0 && damping.is_finite()) {
            return Err(Error::InvalidArgument(format!("damping must be >= 0, got {damping}")));
        }
        Ok(FvpBatch { scores, damping })
    }
}

/// Fisher-vector product `(1/N)Σ ℓᵢ(ℓᵢᵀv) + damping·v`.
pub fn empirical_fvp(b: &FvpBatch<'_>, v: &ParamVector) -> Result<ParamVector> {
    let mut out: Vec<f64> = v.iter().map(|x| b.damping * x).collect();
    if !b.scores.is_empty() {
        let inv_n = 1.0 / b.scores.len() as f64;
        for s in b.scores {
            check_dim(v.dim(), s.dim())?;
            let w = inv_n * dot_slices(s.as_slice(), v.as_slice());
            for (o, si) in out.iter_mut().zip(s.iter()) {
                *o += w * si;
            }
        }
    }
    let out = ParamVector::from_vec_unchecked(out);
    out.ensure_finite("empirical_fvp")?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution {
    pub x: ParamVector,
    pub iterations: usize,
    /// `‖A·x − g‖` as tracked by the recurrence.
    pub residual: f64,
}

/// Conjugate gradient for `A·x = g` from `x₀ = 0`, with `A` given as a
/// matrix-vector product. Stops when `‖r‖ ≤ tol·‖g‖` or after `max_iters`.
pub fn cg_solve<F>(mut apply: F, g: &ParamVector, max_iters: usize, tol: f64) -> Result<CgSolution>
where
    F: FnMut(&ParamVector) -> Result<ParamVector>,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("cg tolerance must be > 0, got {tol}")));
    }
    g.ensure_finite("cg right-hand side")?;
    let d = g.dim();
    let mut x = vec![0.0; d];
    let mut r = g.as_slice().to_vec();
    let mut p = r.clone();
    let mut rr = dot_slices(&r, &r);
    let target = tol * rr.sqrt();
    let mut iterations = 0;
    while iterations < max_iters && rr.sqrt() > target {
        let p_vec = ParamVector::from_vec_unchecked(p);
        let ap = apply(&p_vec)?;
        check_dim(d, ap.dim())?;
        p = p_vec.into_vec();
        let curvature = dot_slices(&p, ap.as_slice());
        if !curvature.is_finite() {
            return Err(Error::NonFinite("cg curvature"));
        }
        if curvature <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "operator is not positive definite (pᵀAp = {curvature})"
            )));
        }
        let alpha = rr / curvature;
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(ap.iter())) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let rr_next = dot_slices(&r, &r);
        if !rr_next.is_finite() {
            return Err(Error::NonFinite("cg residual"));
        }
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
        iterations += 1;
    }
    let x = ParamVector::from_vec_unchecked(x);
    x.ensure_finite("cg solution")?;
    Ok(CgSolution { x, iterations, residual: rr.sqrt() })
}

/// Empirical estimates of the score bound `G` and the Fisher spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionDiagnostics {
    /// `maxᵢ ‖ℓᵢ‖`
    pub g_hat: f64,
    /// Smallest eigenvalue of `(1/N)Σ ℓᵢℓᵢᵀ`; `None` above the dense limit.
    pub mu_hat: Option<f64>,
    /// `(1/N)Σ ‖ℓᵢ‖²`, the trace of the empirical Fisher.
    pub trace: f64,
}

/// Spectrum diagnostics of the undamped empirical Fisher of a batch.
pub fn assumption_diagnostics(b: &FvpBatch<'_>) -> Result<AssumptionDiagnostics> {
    let first = b.scores.first().ok_or(Error::Empty("assumption_diagnostics"))?;
    let d = first.dim();
    let mut g_hat: f64 = 0.0;
    let mut trace = 0.0;
    for s in b.scores {
        check_dim(d, s.dim())?;
        let sq = dot_slices(s.as_slice(), s.as_slice());
        g_hat = g_hat.max(sq.sqrt());
        trace += sq;
    }
    trace /= b.scores.len() as f64;
    let mu_hat = if d <= DENSE_ORACLE_LIMIT {
        let mut ef = DenseMatrix::zeros(d, d);
        let inv_n = 1.0 / b.scores.len() as f64;
        for s in b.scores {
            ef.add_outer(inv_n, s, s)?;
        }
        let eig = nalgebra::SymmetricEigen::new(ef.to_nalgebra());
        eig.eigenvalues.iter().copied().reduce(f64::min)
    } else {
        None
    };
    Ok(AssumptionDiagnostics { g_hat, mu_hat, trace })
}

/// `vᵀ(λI + ℓℓᵀ)v = λ‖v‖² + (ℓᵀv)²`
pub fn precond_quadratic_form(p: &FisherPrecond, v: &ParamVector) -> Result<f64> {
    let lv = dot(p.direction(), v)?;
    Ok(p.lambda * dot(v, v)? + lv * lv)
}
