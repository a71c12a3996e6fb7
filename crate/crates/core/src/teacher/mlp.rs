//! Fully connected epsilon-prediction network with hand-written backprop.
//!
//! Input layout is `[x_t (data_dim) | time features (2 * TIME_FREQUENCIES) |
//! condition embedding]`. Hidden layers use `tanh`, the output layer is
//! linear. Parameters are stored per layer as a row-major `in x out` weight
//! block followed by the bias, and every parameter is kept exactly
//! representable as `f32` so checkpoints round-trip bit-exactly.

use std::f64::consts::PI;

use rand::Rng;

use super::{Condition, Denoiser};
use crate::error::{check_len, Error, Result};

/// Number of sinusoidal frequencies in the time embedding.
pub const TIME_FREQUENCIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    None,
    /// `(sin angle, cos angle)`; the unconditional slot is `(0, 0)`.
    View,
    /// One-hot over `classes`; the unconditional slot is all zeros.
    Class { classes: usize },
}

impl ConditionKind {
    pub fn embed_dim(self) -> usize {
        match self {
            ConditionKind::None => 0,
            ConditionKind::View => 2,
            ConditionKind::Class { classes } => classes,
        }
    }

    pub(crate) fn code(self) -> (u32, u32) {
        match self {
            ConditionKind::None => (0, 0),
            ConditionKind::View => (1, 0),
            ConditionKind::Class { classes } => (2, classes as u32),
        }
    }

    pub(crate) fn from_code(kind: u32, classes: u32) -> Result<Self> {
        match kind {
            0 => Ok(ConditionKind::None),
            1 => Ok(ConditionKind::View),
            2 if classes > 0 => Ok(ConditionKind::Class {
                classes: classes as usize,
            }),
            _ => Err(Error::CorruptCheckpoint(format!(
                "unknown condition kind {kind}/{classes}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    data_dim: usize,
    cond_kind: ConditionKind,
    time_steps: usize,
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

struct LayerView {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

fn layer_views(widths: &[usize]) -> Vec<LayerView> {
    let mut offset = 0;
    widths
        .windows(2)
        .map(|w| {
            let view = LayerView {
                weight: offset,
                bias: offset + w[0] * w[1],
                fan_in: w[0],
                fan_out: w[1],
            };
            offset += w[0] * w[1] + w[1];
            view
        })
        .collect()
}

/// Row-major `c = a * b + beta * c` with explicit strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl DenoiserModel {
    /// Xavier-uniform init with zero biases. Weights reading the condition
    /// embedding start at zero, so a model trained without ever seeing a
    /// condition answers every condition like the unconditional query.
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        hidden: &[usize],
        cond_kind: ConditionKind,
        time_steps: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(data_dim, hidden, cond_kind, time_steps)?;
        let cond_start = data_dim + 2 * TIME_FREQUENCIES;
        for (l, view) in layer_views(&model.widths).into_iter().enumerate() {
            let limit = (6.0 / (view.fan_in + view.fan_out) as f64).sqrt();
            for i in 0..view.fan_in {
                for o in 0..view.fan_out {
                    let w: f64 = rng.random_range(-limit..limit);
                    model.params[view.weight + i * view.fan_out + o] =
                        if l == 0 && i >= cond_start { 0.0 } else { round_f32(w) };
                }
            }
        }
        Ok(model)
    }

    pub fn zeros(data_dim: usize, hidden: &[usize], cond_kind: ConditionKind, time_steps: usize) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::invalid("data_dim must be positive"));
        }
        if hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if time_steps < 2 {
            return Err(Error::invalid("time_steps must be at least 2"));
        }
        let mut widths = vec![data_dim + 2 * TIME_FREQUENCIES + cond_kind.embed_dim()];
        widths.extend_from_slice(hidden);
        widths.push(data_dim);
        let count = Self::param_count(&widths);
        Ok(Self {
            data_dim,
            cond_kind,
            time_steps,
            widths,
            params: vec![0.0; count],
        })
    }

    pub fn from_parts(
        data_dim: usize,
        cond_kind: ConditionKind,
        time_steps: usize,
        widths: Vec<usize>,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected_in = data_dim + 2 * TIME_FREQUENCIES + cond_kind.embed_dim();
        if widths.len() < 2 || widths[0] != expected_in || *widths.last().unwrap() != data_dim {
            return Err(Error::invalid(format!(
                "layer widths {widths:?} do not match data_dim {data_dim} and {cond_kind:?}"
            )));
        }
        check_len(Self::param_count(&widths), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self {
            data_dim,
            cond_kind,
            time_steps,
            widths,
            params,
        })
    }

    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn cond_kind(&self) -> ConditionKind {
        self.cond_kind
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Raw parameter access. Values written here should stay representable
    /// as `f32` if the model is going to be checkpointed.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn quantize(&mut self) {
        for p in &mut self.params {
            *p = round_f32(*p);
        }
    }

    /// Per-layer `(weight, bias)` slices; weights are row-major `in x out`.
    pub fn layers(&self) -> Vec<(&[f64], &[f64])> {
        layer_views(&self.widths)
            .into_iter()
            .map(|v| {
                (
                    &self.params[v.weight..v.bias],
                    &self.params[v.bias..v.bias + v.fan_out],
                )
            })
            .collect()
    }

    /// Writes the network input for one sample into `out`.
    pub fn encode_input(&self, x_t: &[f64], t: usize, cond: &Condition, out: &mut [f64]) -> Result<()> {
        check_len(self.data_dim, x_t.len())?;
        check_len(self.input_dim(), out.len())?;
        if t > self.time_steps {
            return Err(Error::invalid(format!(
                "time step {t} outside [0, {}]",
                self.time_steps
            )));
        }
        out[..self.data_dim].copy_from_slice(x_t);
        let tau = t as f64 / self.time_steps as f64;
        let time = &mut out[self.data_dim..self.data_dim + 2 * TIME_FREQUENCIES];
        for k in 0..TIME_FREQUENCIES {
            let w = 0.5 * PI * (1u32 << k) as f64;
            time[2 * k] = (w * tau).sin();
            time[2 * k + 1] = (w * tau).cos();
        }
        let embed = &mut out[self.data_dim + 2 * TIME_FREQUENCIES..];
        embed.fill(0.0);
        match (self.cond_kind, cond) {
            (_, Condition::None) => {}
            (ConditionKind::View, Condition::View { angle }) => {
                embed[0] = angle.sin();
                embed[1] = angle.cos();
            }
            (ConditionKind::Class { classes }, Condition::Class { id }) if *id < classes => {
                embed[*id] = 1.0;
            }
            (kind, cond) => {
                return Err(Error::invalid(format!(
                    "condition {cond:?} does not fit a model conditioned on {kind:?}"
                )))
            }
        }
        Ok(())
    }

    /// Forward pass over `batch` pre-encoded rows.
    pub fn forward_batch(&self, inputs: Vec<f64>, batch: usize) -> Result<ForwardCache> {
        check_len(batch * self.input_dim(), inputs.len())?;
        let views = layer_views(&self.widths);
        let last = views.len() - 1;
        let mut activations = Vec::with_capacity(views.len() + 1);
        activations.push(inputs);
        for (l, v) in views.iter().enumerate() {
            let mut out = Vec::with_capacity(batch * v.fan_out);
            let bias = &self.params[v.bias..v.bias + v.fan_out];
            for _ in 0..batch {
                out.extend_from_slice(bias);
            }
            gemm(
                batch,
                v.fan_in,
                v.fan_out,
                &activations[l],
                (v.fan_in, 1),
                &self.params[v.weight..v.bias],
                (v.fan_out, 1),
                1.0,
                &mut out,
            );
            if l < last {
                out.iter_mut().for_each(|h| *h = h.tanh());
            }
            activations.push(out);
        }
        Ok(ForwardCache { batch, activations })
    }

    /// Backward pass for upstream gradient `d_out` (batch x data_dim).
    /// Returns parameter gradients in storage order and, on request, the
    /// gradient with respect to the encoded inputs.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        d_out: &[f64],
        want_input_grad: bool,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let batch = cache.batch;
        check_len(batch * self.data_dim, d_out.len())?;
        let views = layer_views(&self.widths);
        let last = views.len() - 1;
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = d_out.to_vec();

        for l in (0..views.len()).rev() {
            let v = &views[l];
            if l < last {
                for (d, h) in delta.iter_mut().zip(&cache.activations[l + 1]) {
                    *d *= 1.0 - h * h;
                }
            }
            let input = &cache.activations[l];
            gemm(
                v.fan_in,
                batch,
                v.fan_out,
                input,
                (1, v.fan_in),
                &delta,
                (v.fan_out, 1),
                0.0,
                &mut grads[v.weight..v.bias],
            );
            let gb = &mut grads[v.bias..v.bias + v.fan_out];
            for row in delta.chunks_exact(v.fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 || want_input_grad {
                let mut d_in = vec![0.0; batch * v.fan_in];
                gemm(
                    batch,
                    v.fan_out,
                    v.fan_in,
                    &delta,
                    (v.fan_out, 1),
                    &self.params[v.weight..v.bias],
                    (1, v.fan_out),
                    0.0,
                    &mut d_in,
                );
                delta = d_in;
            }
        }
        Ok((grads, want_input_grad.then_some(delta)))
    }

    /// Single-sample epsilon prediction.
    pub fn forward(&self, x_t: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>> {
        let mut input = vec![0.0; self.input_dim()];
        self.encode_input(x_t, t, cond, &mut input)?;
        let cache = self.forward_batch(input, 1)?;
        Ok(cache.output().to_vec())
    }

    /// Gradient of `<upstream, forward(x_t)>` with respect to `x_t`.
    pub fn input_gradient(&self, x_t: &[f64], t: usize, cond: &Condition, upstream: &[f64]) -> Result<Vec<f64>> {
        let mut input = vec![0.0; self.input_dim()];
        self.encode_input(x_t, t, cond, &mut input)?;
        let cache = self.forward_batch(input, 1)?;
        let (_, d_in) = self.backward_batch(&cache, upstream, true)?;
        let mut d_in = d_in.expect("input gradient requested");
        d_in.truncate(self.data_dim);
        Ok(d_in)
    }
}

impl Denoiser for DenoiserModel {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn predict_eps(&self, x_t: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>> {
        self.forward(x_t, t, cond)
    }
}
