//! Layer primitives shared by inference and training.

use super::params::{LinearSlots, ModelParams, NormSlots};
use crate::tensor;
use crate::vocab::TokenId;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Adds the sinusoidal encoding of `pos` to `row`.
pub(crate) fn add_position(pos: usize, row: &mut [f64]) {
    let d = row.len();
    for (i, v) in row.iter_mut().enumerate() {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        *v += if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

/// Token embedding plus position encoding, one row per token.
pub(crate) fn embed(params: &ModelParams, tokens: &[TokenId], first_pos: usize) -> Vec<f64> {
    let d = params.config().d_model;
    let table = params.slice(params.layout().embed);
    let scale = embed_scale(d);
    let mut out = vec![0.0; tokens.len() * d];
    for (i, &tok) in tokens.iter().enumerate() {
        let row = &mut out[i * d..(i + 1) * d];
        for (o, &e) in row.iter_mut().zip(&table[tok as usize * d..(tok as usize + 1) * d]) {
            *o = scale * e;
        }
        add_position(first_pos + i, row);
    }
    out
}

/// Input embeddings are multiplied by `√d_model`; the table itself is
/// initialized at scale `1/√d_model` so tied output logits start near unit
/// variance.
pub(crate) fn embed_scale(d_model: usize) -> f64 {
    (d_model as f64).sqrt()
}

/// `y Eᵀ + b` with `E` the shared embedding table.
pub(crate) fn output_logits(params: &ModelParams, y: &[f64]) -> Vec<f64> {
    let d = params.config().d_model;
    let layout = params.layout();
    let table = params.slice(layout.embed);
    let bias = params.slice(layout.output_bias);
    let vocab = bias.len();
    let mut out = Vec::with_capacity(y.len() / d * vocab);
    for row in y.chunks_exact(d) {
        out.extend(table.chunks_exact(d).zip(bias).map(|(e, &b)| tensor::dot(e, row) + b));
    }
    out
}

/// Per-row normalization statistics kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm(params: &ModelParams, slots: &NormSlots, x: &[f64], d: usize) -> (Vec<f64>, NormCache) {
    let gain = params.slice(slots.gain);
    let bias = params.slice(slots.bias);
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut cache = NormCache {
        xhat: vec![0.0; x.len()],
        rstd: vec![0.0; n],
    };
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        cache.rstd[i] = rstd;
        for j in 0..d {
            let xh = (row[j] - mean) * rstd;
            cache.xhat[i * d + j] = xh;
            y[i * d + j] = xh * gain[j] + bias[j];
        }
    }
    (y, cache)
}

pub(crate) fn linear(params: &ModelParams, slots: &LinearSlots, x: &[f64]) -> Vec<f64> {
    let (fan_in, fan_out) = (slots.w.rows, slots.w.cols);
    let n = x.len() / fan_in;
    let w = params.slice(slots.w);
    let b = params.slice(slots.b);
    let mut y = vec![0.0; n * fan_out];
    for i in 0..n {
        let row = &mut y[i * fan_out..(i + 1) * fan_out];
        row.copy_from_slice(b);
        for (p, &xp) in x[i * fan_in..(i + 1) * fan_in].iter().enumerate() {
            tensor::axpy(xp, &w[p * fan_out..(p + 1) * fan_out], row);
        }
    }
    y
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn add_in_place(acc: &mut [f64], delta: &[f64]) {
    for (a, d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}
