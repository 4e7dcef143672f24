//! Fixed-topology tanh MLP with a hand-written backward pass.
//!
//! Parameters live in one flat [`ParamVector`]. Each layer contributes its
//! weight matrix (row-major, `out × in`) followed by its bias vector, in
//! input-to-output order. Gradients use the same layout.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numcore::{ParamVector, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        MlpSpec { input_dim, output_dim, hidden: hidden.to_vec(), activation: Activation::Tanh }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(Error::InvalidArgument(format!("all layer widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl Layer {
    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.fan_in * self.fan_out]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.fan_in * self.fan_out;
        &params[start..start + self.fan_out]
    }
}

fn layout(spec: &MlpSpec) -> Vec<Layer> {
    let mut offset = 0;
    spec.widths()
        .windows(2)
        .map(|w| {
            let layer = Layer { fan_in: w[0], fan_out: w[1], offset };
            offset += w[0] * w[1] + w[1];
            layer
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MlpCheckpoint {
    spec: MlpSpec,
    params: ParamVector,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MlpCheckpoint", into = "MlpCheckpoint")]
pub struct Mlp {
    spec: MlpSpec,
    params: ParamVector,
    layers: Vec<Layer>,
}

impl TryFrom<MlpCheckpoint> for Mlp {
    type Error = Error;

    fn try_from(ckpt: MlpCheckpoint) -> Result<Self> {
        Mlp::from_params(ckpt.spec, ckpt.params)
    }
}

impl From<Mlp> for MlpCheckpoint {
    fn from(net: Mlp) -> Self {
        MlpCheckpoint { spec: net.spec, params: net.params }
    }
}

impl Mlp {
    /// Weights ~ U(−1/√fan_in, 1/√fan_in), biases zero.
    pub fn init(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let layers = layout(&spec);
        let mut params = vec![0.0; spec.param_count()];
        for layer in &layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let n = layer.fan_in * layer.fan_out;
            for w in &mut params[layer.offset..layer.offset + n] {
                *w = rng.uniform_range(-bound, bound);
            }
        }
        Ok(Mlp { spec, params: ParamVector::from_vec_unchecked(params), layers })
    }

    pub fn from_params(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        check_dim(spec.param_count(), params.dim())?;
        params.ensure_finite("Mlp::from_params")?;
        let layers = layout(&spec);
        Ok(Mlp { spec, params, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        check_dim(self.params.dim(), params.dim())?;
        params.ensure_finite("Mlp::set_params")?;
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, x: &ParamVector) -> Result<ParamVector> {
        Ok(ParamVector::from_vec_unchecked(self.forward_slice(x.as_slice())?))
    }

    pub fn forward_slice(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.spec.input_dim, x.len())?;
        let mut acts = self.activations(x);
        Ok(acts.pop().expect("at least one layer"))
    }

    /// Layer inputs followed by the network output: `acts[0] = x`,
    /// `acts[l]` = output of layer `l-1`.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let p = self.params.as_slice();
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let input = &acts[li];
            let w = layer.weights(p);
            let b = layer.bias(p);
            let out: Vec<f64> = w
                .chunks_exact(layer.fan_in)
                .zip(b)
                .map(|(row, bias)| {
                    let z = bias + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
                    if li == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// Flat gradient of `upstreamᵀ · forward(x)` with respect to the parameters.
    pub fn backward(&self, x: &ParamVector, upstream: &ParamVector) -> Result<ParamVector> {
        let mut grad = vec![0.0; self.dim()];
        self.accumulate_grad(x.as_slice(), upstream.as_slice(), 1.0, &mut grad)?;
        Ok(ParamVector::from_vec_unchecked(grad))
    }

    /// `out += scale · ∂(upstreamᵀ · forward(x))/∂params`.
    pub fn accumulate_grad(
        &self,
        x: &[f64],
        upstream: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        check_dim(self.spec.input_dim, x.len())?;
        check_dim(self.spec.output_dim, upstream.len())?;
        check_dim(self.dim(), out.len())?;
        let acts = self.activations(x);
        self.backprop(&acts, upstream, scale, out);
        Ok(())
    }

    /// Forward pass plus a backward pass whose upstream gradient is chosen
    /// from the output. Returns the output.
    pub(crate) fn forward_backward<F>(&self, x: &[f64], out: &mut [f64], upstream_of: F) -> Result<Vec<f64>>
    where
        F: FnOnce(&[f64]) -> Result<Vec<f64>>,
    {
        check_dim(self.spec.input_dim, x.len())?;
        check_dim(self.dim(), out.len())?;
        let acts = self.activations(x);
        let output = acts.last().expect("output layer").clone();
        let upstream = upstream_of(&output)?;
        check_dim(self.spec.output_dim, upstream.len())?;
        self.backprop(&acts, &upstream, 1.0, out);
        Ok(output)
    }

    fn backprop(&self, acts: &[Vec<f64>], upstream: &[f64], scale: f64, out: &mut [f64]) {
        let p = self.params.as_slice();
        let mut delta: Vec<f64> = upstream.iter().map(|u| u * scale).collect();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[li];
            let w_start = layer.offset;
            let b_start = layer.offset + layer.fan_in * layer.fan_out;
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut out[w_start + o * layer.fan_in..w_start + (o + 1) * layer.fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                out[b_start + o] += d;
            }
            if li == 0 {
                break;
            }
            let w = layer.weights(p);
            let mut prev = vec![0.0; layer.fan_in];
            for (row, d) in w.chunks_exact(layer.fan_in).zip(&delta) {
                for (pv, wv) in prev.iter_mut().zip(row) {
                    *pv += wv * d;
                }
            }
            // tanh'(z) = 1 - tanh(z)^2, and acts[li] holds tanh(z).
            for (pv, a) in prev.iter_mut().zip(input) {
                *pv *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// Batched forward and backward pass over the columns of `xs`
    /// (`input_dim × B`). `upstream_of` maps the outputs (`output_dim × B`)
    /// to their upstream gradients; returns the outputs and the flat gradient
    /// summed over the batch.
    pub fn batch_forward_backward<F>(&self, xs: &DMatrix<f64>, upstream_of: F) -> Result<(DMatrix<f64>, ParamVector)>
    where
        F: FnOnce(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    {
        check_dim(self.spec.input_dim, xs.nrows())?;
        let p = self.params.as_slice();
        let last = self.layers.len() - 1;
        let mut acts: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(xs.clone());
        for (li, layer) in self.layers.iter().enumerate() {
            let w = DMatrix::from_row_slice(layer.fan_out, layer.fan_in, layer.weights(p));
            let mut z = w * &acts[li];
            for (mut row, b) in z.row_iter_mut().zip(layer.bias(p)) {
                row.add_scalar_mut(*b);
            }
            if li != last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        let output = acts.pop().expect("output layer");
        let mut delta = upstream_of(&output)?;
        check_dim(self.spec.output_dim, delta.nrows())?;
        check_dim(xs.ncols(), delta.ncols())?;

        let mut grad = vec![0.0; self.dim()];
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[li];
            // column-major (in × out) is the row-major (out × in) layout
            let dw_t = input * delta.transpose();
            let w_start = layer.offset;
            let b_start = w_start + layer.fan_in * layer.fan_out;
            grad[w_start..b_start].copy_from_slice(dw_t.as_slice());
            for (g, row) in grad[b_start..b_start + layer.fan_out].iter_mut().zip(delta.row_iter()) {
                *g = row.sum();
            }
            if li == 0 {
                break;
            }
            let w = DMatrix::from_row_slice(layer.fan_out, layer.fan_in, layer.weights(p));
            let mut prev = w.transpose() * &delta;
            prev.zip_apply(input, |d, a| *d *= 1.0 - a * a);
            delta = prev;
        }
        let grad = ParamVector::from_vec_unchecked(grad);
        grad.ensure_finite("Mlp::batch_forward_backward")?;
        Ok((output, grad))
    }
}
