//! Token-level saliency tagger: an encoder followed by a two-layer MLP with a
//! tanh between the layers and a sigmoid on the single output unit.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{model_from_tensors, model_tensors, Container, NamedTensor};
use crate::error::{Error, Result};
use crate::model::{encoder_forward, ModelConfig, ModelParams, Slot};
use crate::tensor::{self, Vector};
use crate::train::backprop::{encoder_backward, Transposed};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy)]
pub struct MlpSlots {
    pub hidden_w: Slot,
    pub hidden_b: Slot,
    pub out_w: Slot,
    pub out_b: Slot,
}

impl MlpSlots {
    fn new(d_model: usize, hidden: usize) -> Self {
        let hidden_w = Slot {
            offset: 0,
            rows: d_model,
            cols: hidden,
        };
        let hidden_b = Slot {
            offset: hidden_w.range().end,
            rows: 1,
            cols: hidden,
        };
        let out_w = Slot {
            offset: hidden_b.range().end,
            rows: hidden,
            cols: 1,
        };
        let out_b = Slot {
            offset: out_w.range().end,
            rows: 1,
            cols: 1,
        };
        MlpSlots {
            hidden_w,
            hidden_b,
            out_w,
            out_b,
        }
    }

    pub fn len(&self) -> usize {
        self.out_b.range().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn named(&self) -> [(&'static str, Slot); 4] {
        [
            ("tagger.hidden.weight", self.hidden_w),
            ("tagger.hidden.bias", self.hidden_b),
            ("tagger.out.weight", self.out_w),
            ("tagger.out.bias", self.out_b),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct TaggerMeta {
    model: ModelConfig,
    hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerParams {
    /// Only the encoder part is used.
    pub encoder: ModelParams,
    hidden: usize,
    slots_len: usize,
    pub mlp: Vec<f64>,
}

impl TaggerParams {
    /// New MLP head on top of `encoder`, initialized from `seed`.
    pub fn init(encoder: ModelParams, hidden: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("tagger hidden width must be at least 1".into()));
        }
        let slots = MlpSlots::new(encoder.config().d_model, hidden);
        let mut mlp = vec![0.0; slots.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in [slots.hidden_w, slots.out_w] {
            let normal = Normal::new(0.0, 1.0 / (s.rows as f64).sqrt()).expect("positive std");
            for v in &mut mlp[s.range()] {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(TaggerParams {
            encoder,
            hidden,
            slots_len: slots.len(),
            mlp,
        })
    }

    pub fn with_mlp(encoder: ModelParams, hidden: usize, mlp: Vec<f64>) -> Result<Self> {
        let slots = MlpSlots::new(encoder.config().d_model, hidden);
        if mlp.len() != slots.len() {
            return Err(Error::Shape(format!(
                "{} MLP values, {} expected",
                mlp.len(),
                slots.len()
            )));
        }
        Ok(TaggerParams {
            encoder,
            hidden,
            slots_len: slots.len(),
            mlp,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn slots(&self) -> MlpSlots {
        let s = MlpSlots::new(self.encoder.config().d_model, self.hidden);
        debug_assert_eq!(s.len(), self.slots_len);
        s
    }

    pub fn mlp_slice(&self, slot: Slot) -> &[f64] {
        &self.mlp[slot.range()]
    }

    pub fn mlp_slice_mut(&mut self, slot: Slot) -> &mut [f64] {
        &mut self.mlp[slot.range()]
    }

    pub fn to_container(&self) -> Container {
        let meta = TaggerMeta {
            model: *self.encoder.config(),
            hidden: self.hidden,
        };
        let mut tensors = model_tensors(&self.encoder);
        for (name, slot) in self.slots().named() {
            tensors.push(NamedTensor {
                name: name.into(),
                rows: slot.rows,
                cols: slot.cols,
                data: self.mlp_slice(slot).to_vec(),
            });
        }
        Container {
            kind: "tagger".into(),
            meta: serde_json::to_string(&meta).expect("meta serializes"),
            header: String::new(),
            tensors,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "tagger" {
            return Err(Error::Checkpoint(format!(
                "expected a tagger checkpoint, found {}",
                c.kind
            )));
        }
        let meta: TaggerMeta = serde_json::from_str(&c.meta)?;
        let n_model = crate::model::Layout::new(&meta.model).named().len();
        if c.tensors.len() != n_model + 4 {
            return Err(Error::Checkpoint("tensor count does not match config".into()));
        }
        let encoder = model_from_tensors(meta.model, &c.tensors[..n_model])?;
        let slots = MlpSlots::new(meta.model.d_model, meta.hidden);
        let mut mlp = Vec::with_capacity(slots.len());
        for ((name, slot), t) in slots.named().iter().zip(&c.tensors[n_model..]) {
            if t.name != *name || t.rows != slot.rows || t.cols != slot.cols {
                return Err(Error::Checkpoint(format!("unexpected tensor {}", t.name)));
            }
            mlp.extend(&t.data);
        }
        TaggerParams::with_mlp(encoder, meta.hidden, mlp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct MlpForward {
    hidden_act: Vec<f64>,
    logits: Vec<f64>,
}

fn mlp_forward(tp: &TaggerParams, states: &[f64]) -> MlpForward {
    let s = tp.slots();
    let d = s.hidden_w.rows;
    let h = s.hidden_w.cols;
    let n = states.len() / d;
    let mut hidden_act = vec![0.0; n * h];
    let mut logits = vec![0.0; n];
    for i in 0..n {
        let row = &mut hidden_act[i * h..(i + 1) * h];
        row.copy_from_slice(tp.mlp_slice(s.hidden_b));
        let w1 = tp.mlp_slice(s.hidden_w);
        for (p, &x) in states[i * d..(i + 1) * d].iter().enumerate() {
            tensor::axpy(x, &w1[p * h..(p + 1) * h], row);
        }
        for v in row.iter_mut() {
            *v = v.tanh();
        }
        logits[i] = tensor::dot(row, tp.mlp_slice(s.out_w)) + tp.mlp_slice(s.out_b)[0];
    }
    MlpForward { hidden_act, logits }
}

/// Per-token salience probabilities `sigmoid(W₂ tanh(W₁ hᵢ + b₁) + b₂)`.
pub fn predict_saliency(tp: &TaggerParams, source: &[TokenId]) -> Result<Vector> {
    let (states, _) = encoder_forward(&tp.encoder, source)?;
    let fwd = mlp_forward(tp, &states);
    Ok(Vector::from(fwd.logits.iter().map(|&z| sigmoid(z)).collect::<Vec<_>>()))
}

/// Summed token BCE for one example and, when gradient buffers are given,
/// the gradient of `loss_scale · bce` accumulated into them. `enc_grad`
/// additionally backpropagates into the encoder.
pub(crate) fn bce_loss(
    tp: &TaggerParams,
    enc_t: Option<&Transposed>,
    source: &[TokenId],
    labels: &[bool],
    loss_scale: f64,
    mlp_grad: Option<&mut [f64]>,
    enc_grad: Option<&mut [f64]>,
) -> Result<f64> {
    let (states, cache) = encoder_forward(&tp.encoder, source)?;
    let mut d_states = enc_grad.as_ref().map(|_| vec![0.0; states.len()]);
    let loss = bce_on_states(tp, &states, labels, loss_scale, mlp_grad, d_states.as_deref_mut())?;
    if let (Some(eg), Some(ds)) = (enc_grad, d_states) {
        let wt = enc_t.expect("transposed encoder weights required");
        encoder_backward(&tp.encoder, wt, &cache, &ds, eg);
    }
    Ok(loss)
}

/// BCE of the MLP head over precomputed encoder states. With `mlp_grad`, the
/// head gradient is accumulated; with `d_states` too, the gradient with
/// respect to the states is written there.
pub(crate) fn bce_on_states(
    tp: &TaggerParams,
    states: &[f64],
    labels: &[bool],
    loss_scale: f64,
    mlp_grad: Option<&mut [f64]>,
    mut d_states: Option<&mut [f64]>,
) -> Result<f64> {
    let s = tp.slots();
    let d = s.hidden_w.rows;
    let h = s.hidden_w.cols;
    if labels.len() * d != states.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} source tokens",
            labels.len(),
            states.len() / d
        )));
    }
    let fwd = mlp_forward(tp, states);
    let mut loss = 0.0;
    let mut dlogit = vec![0.0; labels.len()];
    for (i, (&z, &y)) in fwd.logits.iter().zip(labels).enumerate() {
        // Stable BCE on logits: max(z,0) - z·y + ln(1 + e^{-|z|}).
        let y = if y { 1.0 } else { 0.0 };
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        dlogit[i] = (sigmoid(z) - y) * loss_scale;
    }
    let Some(mg) = mlp_grad else {
        return Ok(loss);
    };
    let w2 = tp.mlp_slice(s.out_w);
    let w1 = tp.mlp_slice(s.hidden_w);
    let mut dpre = vec![0.0; h];
    for (i, &g) in dlogit.iter().enumerate() {
        let act = &fwd.hidden_act[i * h..(i + 1) * h];
        tensor::axpy(g, act, &mut mg[s.out_w.range()]);
        mg[s.out_b.offset] += g;
        for k in 0..h {
            dpre[k] = g * w2[k] * (1.0 - act[k] * act[k]);
        }
        crate::model::ops::add_in_place(&mut mg[s.hidden_b.range()], &dpre);
        let x = &states[i * d..(i + 1) * d];
        for (p, &xp) in x.iter().enumerate() {
            tensor::axpy(
                xp,
                &dpre,
                &mut mg[s.hidden_w.offset + p * h..s.hidden_w.offset + (p + 1) * h],
            );
        }
        if let Some(ds) = d_states.as_deref_mut() {
            for p in 0..d {
                ds[i * d + p] = tensor::dot(&w1[p * h..(p + 1) * h], &dpre);
            }
        }
    }
    Ok(loss)
}

/// Per-token probabilities from precomputed encoder states.
pub(crate) fn probabilities_on_states(tp: &TaggerParams, states: &[f64]) -> Vec<f64> {
    mlp_forward(tp, states).logits.iter().map(|&z| sigmoid(z)).collect()
}
