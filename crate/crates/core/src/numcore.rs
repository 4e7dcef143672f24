//! Dense vector arithmetic, a reproducible counter-based RNG, and
//! central finite differences.
//!
//! Everything here works in `f64`. Production code paths only ever touch
//! [`ParamVector`]s; [`DenseMatrix`] exists for oracle checks at small `d`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A flat parameter (or gradient) vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    /// Wraps `data`, rejecting NaN and infinite entries.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.iter().all(|v| v.is_finite()) {
            Ok(ParamVector(data))
        } else {
            Err(Error::NonFinite("ParamVector::from_vec"))
        }
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        ParamVector(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn norm(&self) -> f64 {
        dot_slices(&self.0, &self.0).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        ParamVector::from_vec(self.0.iter().map(|v| v * factor).collect())
    }

    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        ParamVector(data)
    }

    pub(crate) fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.0.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

#[inline]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product `Σ aᵢbᵢ`.
pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(dot_slices(&a.0, &b.0))
}

/// Returns `y + alpha·x`.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    check_dim(y.dim(), x.dim())?;
    let out = ParamVector(y.0.iter().zip(&x.0).map(|(yi, xi)| yi + alpha * xi).collect());
    out.ensure_finite("axpy")?;
    Ok(out)
}

/// In-place `y += alpha·x`.
pub fn axpy_in_place(alpha: f64, x: &ParamVector, y: &mut ParamVector) -> Result<()> {
    check_dim(y.dim(), x.dim())?;
    for (yi, xi) in y.0.iter_mut().zip(&x.0) {
        *yi += alpha * xi;
    }
    y.ensure_finite("axpy_in_place")
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator: output `i` is `mix64(seed_key + (i+1)·γ)`.
///
/// Only integer arithmetic is involved up to the final float conversion,
/// so streams are identical on every platform.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent stream, e.g. one per subsystem of a run.
    pub fn fork(&mut self, tag: u64) -> Rng {
        Rng::new(mix64(self.next_u64() ^ mix64(tag.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(self.seed).wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw (Box–Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// `n` i.i.d. standard-normal draws.
pub fn gaussian_sample(rng: &mut Rng, n: usize) -> Result<ParamVector> {
    if n == 0 {
        return Err(Error::Empty("gaussian_sample requires n >= 1"));
    }
    Ok(ParamVector((0..n).map(|_| rng.normal()).collect()))
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad<F>(mut f: F, x: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.dim());
    for i in 0..x.dim() {
        let orig = probe.0[i];
        probe.0[i] = orig + h;
        let up = f(&probe);
        probe.0[i] = orig - h;
        let down = f(&probe);
        probe.0[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite("finite_diff_grad evaluation"));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(ParamVector(grad))
}

/// Row-major dense matrix. Test and oracle use only.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += alpha·u·vᵀ`
    pub fn add_outer(&mut self, alpha: f64, u: &ParamVector, v: &ParamVector) -> Result<()> {
        check_dim(self.rows, u.dim())?;
        check_dim(self.cols, v.dim())?;
        for r in 0..self.rows {
            let ur = alpha * u.0[r];
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (m, vc) in row.iter_mut().zip(&v.0) {
                *m += ur * vc;
            }
        }
        Ok(())
    }

    pub fn matvec(&self, x: &ParamVector) -> Result<ParamVector> {
        check_dim(self.cols, x.dim())?;
        Ok(ParamVector(
            self.data.chunks_exact(self.cols).map(|row| dot_slices(row, &x.0)).collect(),
        ))
    }

    /// Solves `self·x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &ParamVector) -> Result<ParamVector> {
        if self.rows != self.cols {
            return Err(Error::InvalidArgument("solve needs a square matrix".into()));
        }
        check_dim(self.rows, b.dim())?;
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x = b.0.clone();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .expect("non-empty pivot range");
            if a[pivot * n + col] == 0.0 {
                return Err(Error::InvalidArgument("singular matrix".into()));
            }
            if pivot != col {
                for c in 0..n {
                    a.swap(col * n + c, pivot * n + c);
                }
                x.swap(col, pivot);
            }
            let diag = a[col * n + col];
            for r in col + 1..n {
                let factor = a[r * n + col] / diag;
                if factor == 0.0 {
                    continue;
                }
                for c in col..n {
                    a[r * n + c] -= factor * a[col * n + c];
                }
                x[r] -= factor * x[col];
            }
        }
        for r in (0..n).rev() {
            let tail: f64 = (r + 1..n).map(|c| a[r * n + c] * x[c]).sum();
            x[r] = (x[r] - tail) / a[r * n + r];
        }
        let out = ParamVector(x);
        out.ensure_finite("DenseMatrix::solve")?;
        Ok(out)
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}
