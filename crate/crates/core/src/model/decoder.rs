//! Incremental decoder with cached self-attention keys/values.
//!
//! Head masking enters only through encoder-decoder attention: every head
//! marked active in the [`HeadMaskConfig`] adds `m̃` to its scores before the
//! softmax, at every decode step.

use std::sync::Arc;

use super::encoder::{check_tokens, EncoderStates};
use super::mask::{attention_row, weighted_sum, HeadMaskConfig, HeadMaskVector, HeadView};
use super::ops;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::Vector;
use crate::vocab::{TokenId, BOS};

/// Encoder-decoder attention weights recorded per decode step, indexed
/// `[step][layer][head]`, each row spanning the source positions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    steps: Vec<Vec<Vec<Vector>>>,
}

impl AttentionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn row(&self, step: usize, layer: usize, head: usize) -> &Vector {
        &self.steps[step][layer][head]
    }

    pub fn steps(&self) -> &[Vec<Vec<Vector>>] {
        &self.steps
    }

    pub(crate) fn push(&mut self, step: Vec<Vec<Vector>>) {
        self.steps.push(step);
    }

    /// Keeps only the first `n` steps.
    pub fn truncate(&mut self, n: usize) {
        self.steps.truncate(n);
    }
}

/// How encoder-decoder attention is computed during a step.
#[derive(Debug, Clone, Copy)]
pub enum CrossAttention<'a> {
    /// Learned attention; heads active in `mask_cfg` receive `m_tilde`.
    Masked {
        mask_cfg: &'a HeadMaskConfig,
        m_tilde: Option<&'a HeadMaskVector>,
    },
    /// Every weight row replaced by `1 / source_len`.
    Uniform,
}

impl<'a> CrossAttention<'a> {
    pub fn unmasked() -> CrossAttention<'static> {
        CrossAttention::Masked {
            mask_cfg: &NO_MASK,
            m_tilde: None,
        }
    }

    pub fn masked(mask_cfg: &'a HeadMaskConfig, m_tilde: Option<&'a HeadMaskVector>) -> Self {
        CrossAttention::Masked { mask_cfg, m_tilde }
    }

    fn validate(&self, params: &ModelParams, source_len: usize) -> Result<()> {
        let CrossAttention::Masked { mask_cfg, m_tilde } = self else {
            return Ok(());
        };
        let cfg = params.config();
        // The shared empty config stands for "no heads active" at any shape.
        if mask_cfg.n_layers() == 0 {
            return match m_tilde {
                None => Ok(()),
                Some(_) => Err(Error::Input("m_tilde supplied but no head is active".into())),
            };
        }
        if mask_cfg.n_layers() != cfg.n_dec_layers || mask_cfg.n_heads() != cfg.n_heads {
            return Err(Error::Shape(format!(
                "head mask config is {}x{}, model has {}x{} decoder heads",
                mask_cfg.n_layers(),
                mask_cfg.n_heads(),
                cfg.n_dec_layers,
                cfg.n_heads
            )));
        }
        match (mask_cfg.any_active(), m_tilde) {
            (true, None) => Err(Error::Input("active heads require m_tilde".into())),
            (false, Some(_)) => Err(Error::Input("m_tilde supplied but no head is active".into())),
            (true, Some(mt)) if mt.len() != source_len => Err(Error::Shape(format!(
                "m_tilde length {} for source length {source_len}",
                mt.len()
            ))),
            _ => Ok(()),
        }
    }

    fn head_mask(&self, layer: usize, head: usize) -> Option<&'a [f64]> {
        match self {
            CrossAttention::Masked {
                mask_cfg,
                m_tilde: Some(mt),
            } if mask_cfg.n_layers() > 0 && mask_cfg.is_active(layer, head) => Some(mt.values().as_slice()),
            _ => None,
        }
    }
}

static NO_MASK: HeadMaskConfig = HeadMaskConfig::empty();

#[derive(Debug)]
struct CrossMemory {
    source_len: usize,
    /// Per decoder layer, `source_len × d_model`.
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

/// Decoding state for one hypothesis. Cloning is cheap relative to a step:
/// the cross-attention memory is shared.
#[derive(Debug, Clone)]
pub struct DecoderState {
    cross: Arc<CrossMemory>,
    self_keys: Vec<Vec<f64>>,
    self_values: Vec<Vec<f64>>,
    len: usize,
}

impl DecoderState {
    pub fn new(params: &ModelParams, enc: &EncoderStates) -> Self {
        let layout = params.layout();
        let states = enc.states().data();
        let keys = layout
            .decoder
            .iter()
            .map(|l| ops::linear(params, &l.cross_attn.k, states))
            .collect();
        let values = layout
            .decoder
            .iter()
            .map(|l| ops::linear(params, &l.cross_attn.v, states))
            .collect();
        let n = layout.decoder.len();
        DecoderState {
            cross: Arc::new(CrossMemory {
                source_len: enc.source_len(),
                keys,
                values,
            }),
            self_keys: vec![Vec::new(); n],
            self_values: vec![Vec::new(); n],
            len: 0,
        }
    }

    /// Tokens consumed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn source_len(&self) -> usize {
        self.cross.source_len
    }

    /// Feeds `token` at the next position and returns next-token logits.
    pub fn step(
        &mut self,
        params: &ModelParams,
        token: TokenId,
        mode: CrossAttention<'_>,
        trace: Option<&mut AttentionTrace>,
    ) -> Result<Vector> {
        let cfg = params.config();
        if self.len >= cfg.max_positions {
            return Err(Error::Input(format!(
                "decoder position {} exceeds max_positions {}",
                self.len, cfg.max_positions
            )));
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::Input(format!("token id {token} outside vocabulary")));
        }
        mode.validate(params, self.cross.source_len)?;

        let d = cfg.d_model;
        let dk = cfg.d_head();
        let heads = cfg.n_heads;
        let n_src = self.cross.source_len;
        let layout = params.layout();
        let mut x = ops::embed(params, &[token], self.len);
        let mut weights = vec![0.0; n_src.max(self.len + 1)];
        let mut ctx = vec![0.0; d];
        let mut step_rows = trace.as_ref().map(|_| Vec::with_capacity(layout.decoder.len()));

        for (l, slots) in layout.decoder.iter().enumerate() {
            // Causal self-attention over the cached prefix.
            let (a, _) = ops::layer_norm(params, &slots.self_norm, &x, d);
            let q = ops::linear(params, &slots.self_attn.q, &a);
            self.self_keys[l].extend(ops::linear(params, &slots.self_attn.k, &a));
            self.self_values[l].extend(ops::linear(params, &slots.self_attn.v, &a));
            let t = self.len + 1;
            for h in 0..heads {
                attention_row(
                    &q[h * dk..(h + 1) * dk],
                    HeadView::new(&self.self_keys[l], d, h * dk, dk),
                    HeadView::new(&self.self_values[l], d, h * dk, dk),
                    t,
                    &[],
                    &mut weights,
                    &mut ctx[h * dk..(h + 1) * dk],
                )?;
            }
            ops::add_in_place(&mut x, &ops::linear(params, &slots.self_attn.o, &ctx));

            // Encoder-decoder attention, where masking applies.
            let (b, _) = ops::layer_norm(params, &slots.cross_norm, &x, d);
            let q = ops::linear(params, &slots.cross_attn.q, &b);
            let mut layer_rows = step_rows.as_ref().map(|_| Vec::with_capacity(heads));
            for h in 0..heads {
                let keys = HeadView::new(&self.cross.keys[l], d, h * dk, dk);
                let values = HeadView::new(&self.cross.values[l], d, h * dk, dk);
                let out = &mut ctx[h * dk..(h + 1) * dk];
                match mode {
                    CrossAttention::Uniform => {
                        weights[..n_src].fill(1.0 / n_src as f64);
                        weighted_sum(&weights[..n_src], values, out);
                    }
                    CrossAttention::Masked { .. } => {
                        let masks: &[&[f64]] = match mode.head_mask(l, h) {
                            Some(m) => &[m],
                            None => &[],
                        };
                        attention_row(&q[h * dk..(h + 1) * dk], keys, values, n_src, masks, &mut weights, out)?;
                    }
                }
                if let Some(rows) = layer_rows.as_mut() {
                    rows.push(Vector::from(weights[..n_src].to_vec()));
                }
            }
            if let (Some(all), Some(rows)) = (step_rows.as_mut(), layer_rows) {
                all.push(rows);
            }
            ops::add_in_place(&mut x, &ops::linear(params, &slots.cross_attn.o, &ctx));

            let (c, norm) = ops::layer_norm(params, &slots.ff_norm, &x, d);
            let (ff, _) = super::encoder::feed_forward(params, &slots.ff, c, norm);
            ops::add_in_place(&mut x, &ff);
        }
        self.len += 1;
        if let (Some(trace), Some(rows)) = (trace, step_rows) {
            trace.push(rows);
        }
        let (y, _) = ops::layer_norm(params, &layout.decoder_norm, &x, d);
        Ok(Vector::from(ops::output_logits(params, &y)))
    }
}

fn run_prefix(
    params: &ModelParams,
    enc: &EncoderStates,
    prefix: &[TokenId],
    mode: CrossAttention<'_>,
    trace: Option<&mut AttentionTrace>,
) -> Result<Vector> {
    check_tokens(params, prefix, "prefix")?;
    if prefix[0] != BOS {
        return Err(Error::Input("prefix must start with bos".into()));
    }
    mode.validate(params, enc.source_len())?;
    let mut state = DecoderState::new(params, enc);
    let (last, head) = prefix.split_last().expect("nonempty prefix");
    for &tok in head {
        state.step(params, tok, mode, None)?;
    }
    state.step(params, *last, mode, trace)
}

/// Next-token logits after `prefix`, with `m_tilde` added on every head
/// active in `mask_cfg`. A supplied trace receives this step's
/// encoder-decoder attention rows.
pub fn decode_step(
    params: &ModelParams,
    enc: &EncoderStates,
    prefix: &[TokenId],
    mask_cfg: &HeadMaskConfig,
    m_tilde: Option<&HeadMaskVector>,
    trace: Option<&mut AttentionTrace>,
) -> Result<Vector> {
    run_prefix(params, enc, prefix, CrossAttention::masked(mask_cfg, m_tilde), trace)
}

/// Next-token logits with every encoder-decoder attention row replaced by the
/// uniform distribution over source positions.
pub fn uniform_attention_decode_step(
    params: &ModelParams,
    enc: &EncoderStates,
    prefix: &[TokenId],
    trace: Option<&mut AttentionTrace>,
) -> Result<Vector> {
    run_prefix(params, enc, prefix, CrossAttention::Uniform, trace)
}
