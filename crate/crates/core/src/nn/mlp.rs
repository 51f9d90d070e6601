//! Multi-layer perceptrons applied row-wise, with a recorded tape for
//! reverse-mode gradients.
//!
//! Layer `l` of an MLP under prefix `p` owns `p.l.weight` (`[d_in, d_out]`)
//! and `p.l.bias` (`[d_out]`). The broadcast variant feeds every row as
//! `[row, z]` where `z` is shared by all rows, which is how the folding
//! decoder conditions a grid on a latent code.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputNorm {
    None,
    UnitVector,
}

/// Layer widths (input first), one activation per layer, output normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub output_norm: OutputNorm,
}

impl MlpSpec {
    pub fn new(
        widths: Vec<usize>,
        activations: Vec<Activation>,
        output_norm: OutputNorm,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "an MLP needs at least one layer of non-zero widths, got {widths:?}"
            )));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::InvalidConfig(format!(
                "{} layers but {} activations",
                widths.len() - 1,
                activations.len()
            )));
        }
        Ok(Self {
            widths,
            activations,
            output_norm,
        })
    }

    /// ReLU after every layer except the last.
    pub fn relu_hidden(widths: Vec<usize>, output_norm: OutputNorm) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        let acts = (0..n)
            .map(|i| {
                if i + 1 == n {
                    Activation::None
                } else {
                    Activation::Relu
                }
            })
            .collect();
        Self::new(widths, acts, output_norm)
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.{layer}.weight")
    }

    pub fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.{layer}.bias")
    }

    /// Adds Glorot-uniform weights and zero biases under `prefix`.
    pub fn init<R: Rng + ?Sized>(&self, prefix: &str, store: &mut ParamStore, rng: &mut R) {
        for l in 0..self.layers() {
            let (i, o) = (self.widths[l], self.widths[l + 1]);
            store.insert_glorot(Self::weight_name(prefix, l), i, o, rng);
            store.insert(Self::bias_name(prefix, l), Tensor::zeros(&[o]));
        }
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct MlpTape<'a> {
    spec: MlpSpec,
    prefix: String,
    params: &'a ParamStore,
    /// Input of each affine layer (for layer 0 without the broadcast part).
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    broadcast: Option<Vec<f64>>,
    /// Unit-normalized output and the per-row norms before normalization.
    normalized: Option<(Tensor, Vec<f64>)>,
}

/// Gradients of an MLP's inputs.
#[derive(Debug, Clone)]
pub struct InputGrads {
    pub input: Tensor,
    /// Summed over rows; present for broadcast forwards.
    pub broadcast: Option<Vec<f64>>,
}

fn check_params(spec: &MlpSpec, params: &ParamStore, prefix: &str) -> Result<()> {
    for l in 0..spec.layers() {
        let w = params.value(&MlpSpec::weight_name(prefix, l))?;
        let b = params.value(&MlpSpec::bias_name(prefix, l))?;
        if w.shape() != [spec.widths[l], spec.widths[l + 1]] || b.shape() != [spec.widths[l + 1]] {
            return Err(Error::ShapeMismatch(format!(
                "{prefix} layer {l}: weight {:?}, bias {:?}",
                w.shape(),
                b.shape()
            )));
        }
    }
    Ok(())
}

/// Applies the MLP to every row of `x` (`[rows, d_in]`).
pub fn mlp_forward<'a>(
    spec: &MlpSpec,
    params: &'a ParamStore,
    prefix: &str,
    x: &Tensor,
) -> Result<(Tensor, MlpTape<'a>)> {
    if x.shape().len() != 2 || x.cols() != spec.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "{prefix}: input {:?}, expected [_, {}]",
            x.shape(),
            spec.input_dim()
        )));
    }
    forward_impl(spec, params, prefix, x, None)
}

/// Like [`mlp_forward`] but every row is fed as `[x_row, z]`.
pub fn mlp_forward_broadcast<'a>(
    spec: &MlpSpec,
    params: &'a ParamStore,
    prefix: &str,
    x: &Tensor,
    z: &[f64],
) -> Result<(Tensor, MlpTape<'a>)> {
    if x.shape().len() != 2 || x.cols() + z.len() != spec.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "{prefix}: input {:?} + broadcast {}, expected width {}",
            x.shape(),
            z.len(),
            spec.input_dim()
        )));
    }
    forward_impl(spec, params, prefix, x, Some(z))
}

fn forward_impl<'a>(
    spec: &MlpSpec,
    params: &'a ParamStore,
    prefix: &str,
    x: &Tensor,
    z: Option<&[f64]>,
) -> Result<(Tensor, MlpTape<'a>)> {
    check_params(spec, params, prefix)?;
    let rows = x.rows();
    let mut inputs = Vec::with_capacity(spec.layers());
    let mut pre = Vec::with_capacity(spec.layers());
    let mut cur = x.clone();
    for l in 0..spec.layers() {
        let w = params.value(&MlpSpec::weight_name(prefix, l))?.data();
        let b = params.value(&MlpSpec::bias_name(prefix, l))?.data();
        let out = spec.widths[l + 1];
        let mut row_bias = b.to_vec();
        let (din, wx) = match (l, z) {
            (0, Some(z)) => {
                let dx = cur.cols();
                // Shared part: z . W_z, added to every row like a bias.
                let wz = &w[dx * out..];
                gemm(1, z.len(), out, z, (z.len(), 1), wz, (out, 1), 1.0, &mut row_bias);
                (dx, &w[..dx * out])
            }
            _ => (spec.widths[l], w),
        };
        let mut y = Vec::with_capacity(rows * out);
        for _ in 0..rows {
            y.extend_from_slice(&row_bias);
        }
        gemm(rows, din, out, cur.data(), (din, 1), wx, (out, 1), 1.0, &mut y);
        let p = Tensor::matrix(rows, out, y)?;
        let mut act = p.clone();
        if spec.activations[l] == Activation::Relu {
            for v in act.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        inputs.push(cur);
        pre.push(p);
        cur = act;
    }
    let mut normalized = None;
    if spec.output_norm == OutputNorm::UnitVector {
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = cur.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n >= 1e-12) {
                return Err(Error::ZeroQuaternion);
            }
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        normalized = Some((cur.clone(), norms));
    }
    let tape = MlpTape {
        spec: spec.clone(),
        prefix: prefix.to_string(),
        params,
        inputs,
        pre,
        broadcast: z.map(<[f64]>::to_vec),
        normalized,
    };
    Ok((cur, tape))
}

/// Reverse pass: accumulates parameter gradients into `grads` and returns
/// the gradient with respect to the forward inputs.
pub fn backprop(tape: &MlpTape<'_>, upstream: &Tensor, grads: &mut Gradients) -> Result<InputGrads> {
    let spec = &tape.spec;
    let rows = tape.inputs[0].rows();
    if upstream.shape() != [rows, spec.output_dim()] {
        return Err(Error::ShapeMismatch(format!(
            "{}: upstream {:?}, expected [{rows}, {}]",
            tape.prefix,
            upstream.shape(),
            spec.output_dim()
        )));
    }
    let mut delta = upstream.clone();
    if let Some((y, norms)) = &tape.normalized {
        for r in 0..rows {
            let yr = y.row(r);
            let dr = delta.row_mut(r);
            let dot: f64 = yr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
            for (d, yv) in dr.iter_mut().zip(yr) {
                *d = (*d - yv * dot) / norms[r];
            }
        }
    }
    let mut broadcast_grad = None;
    for l in (0..spec.layers()).rev() {
        if spec.activations[l] == Activation::Relu {
            for (d, p) in delta.data_mut().iter_mut().zip(tape.pre[l].data()) {
                if *p <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let out = spec.widths[l + 1];
        let input = &tape.inputs[l];
        let din = input.cols();
        let wname = MlpSpec::weight_name(&tape.prefix, l);
        let bname = MlpSpec::bias_name(&tape.prefix, l);
        let w = tape.params.value(&wname)?.data();

        let mut colsum = vec![0.0; out];
        for r in 0..rows {
            for (c, d) in colsum.iter_mut().zip(delta.row(r)) {
                *c += d;
            }
        }
        {
            let gw = grads.slot(&wname, &[spec.widths[l], out])?.data_mut();
            // dW_x += X^T . delta
            gemm(din, rows, out, input.data(), (1, din), delta.data(), (out, 1), 1.0, &mut gw[..din * out]);
            if let (0, Some(z)) = (l, &tape.broadcast) {
                // dW_z += z^T . colsum
                gemm(z.len(), 1, out, z, (1, 1), &colsum, (out, 1), 1.0, &mut gw[din * out..]);
            }
        }
        let gb = grads.slot(&bname, &[out])?.data_mut();
        for (g, c) in gb.iter_mut().zip(&colsum) {
            *g += c;
        }
        if let (0, Some(z)) = (l, &tape.broadcast) {
            let wz = &w[din * out..];
            let mut gz = vec![0.0; z.len()];
            // dz = W_z . colsum
            gemm(z.len(), out, 1, wz, (out, 1), &colsum, (1, 1), 0.0, &mut gz);
            broadcast_grad = Some(gz);
        }
        let mut dx = vec![0.0; rows * din];
        // dX = delta . W_x^T
        gemm(rows, out, din, delta.data(), (out, 1), &w[..din * out], (1, out), 0.0, &mut dx);
        delta = Tensor::matrix(rows, din, dx)?;
    }
    Ok(InputGrads {
        input: delta,
        broadcast: broadcast_grad,
    })
}
