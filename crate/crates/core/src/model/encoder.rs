use super::mask::{attention_row, HeadView};
use super::ops::{self, NormCache};
use super::params::{AttnSlots, FfSlots, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::vocab::TokenId;

/// Final (normalized) encoder hidden states, one row per source position.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    states: Matrix,
}

impl EncoderStates {
    pub fn source_len(&self) -> usize {
        self.states.rows()
    }

    pub fn states(&self) -> &Matrix {
        &self.states
    }
}

/// Saved activations of one multi-head attention block.
#[derive(Debug, Clone, Default)]
pub(crate) struct AttnCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `heads × nq × nk`; entries beyond a causal horizon are zero.
    pub probs: Vec<f64>,
    pub ctx: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct FfCache {
    pub norm: NormCache,
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct EncoderLayerCache {
    pub attn_norm: NormCache,
    pub attn_in: Vec<f64>,
    pub attn: AttnCache,
    pub ff: FfCache,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct EncoderCache {
    pub tokens: Vec<TokenId>,
    pub layers: Vec<EncoderLayerCache>,
    pub final_norm: NormCache,
}

pub(crate) fn check_tokens(params: &ModelParams, tokens: &[TokenId], what: &str) -> Result<()> {
    let cfg = params.config();
    if tokens.is_empty() {
        return Err(Error::Input(format!("empty {what}")));
    }
    if tokens.len() > cfg.max_positions {
        return Err(Error::Input(format!(
            "{what} length {} exceeds max_positions {}",
            tokens.len(),
            cfg.max_positions
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Input(format!(
            "{what} token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Full-sequence multi-head attention. With `causal`, query `i` sees keys
/// `0..=i` only.
pub(crate) fn multi_head(
    params: &ModelParams,
    slots: &AttnSlots,
    query_in: &[f64],
    memory: &[f64],
    causal: bool,
) -> Result<AttnCache> {
    let cfg = params.config();
    let d = cfg.d_model;
    let dk = cfg.d_head();
    let heads = cfg.n_heads;
    let q = ops::linear(params, &slots.q, query_in);
    let k = ops::linear(params, &slots.k, memory);
    let v = ops::linear(params, &slots.v, memory);
    let nq = q.len() / d;
    let nk = k.len() / d;
    let mut probs = vec![0.0; heads * nq * nk];
    let mut ctx = vec![0.0; nq * d];
    for h in 0..heads {
        let kv = HeadView::new(&k, d, h * dk, dk);
        let vv = HeadView::new(&v, d, h * dk, dk);
        for i in 0..nq {
            let n = if causal { i + 1 } else { nk };
            let w = &mut probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
            let out = &mut ctx[i * d + h * dk..i * d + (h + 1) * dk];
            attention_row(&q[i * d + h * dk..i * d + (h + 1) * dk], kv, vv, n, &[], w, out)?;
        }
    }
    Ok(AttnCache { q, k, v, probs, ctx })
}

pub(crate) fn feed_forward(
    params: &ModelParams,
    slots: &FfSlots,
    normed: Vec<f64>,
    norm: NormCache,
) -> (Vec<f64>, FfCache) {
    let pre = ops::linear(params, &slots.up, &normed);
    let act: Vec<f64> = pre.iter().map(|&x| ops::gelu(x)).collect();
    let out = ops::linear(params, &slots.down, &act);
    (
        out,
        FfCache {
            norm,
            input: normed,
            pre,
            act,
        },
    )
}

/// Encoder stack over `tokens`, returning the normalized output rows and the
/// activations needed for backpropagation.
pub(crate) fn encoder_forward(params: &ModelParams, tokens: &[TokenId]) -> Result<(Vec<f64>, EncoderCache)> {
    check_tokens(params, tokens, "source")?;
    let d = params.config().d_model;
    let layout = params.layout();
    let mut x = ops::embed(params, tokens, 0);
    let mut layers = Vec::with_capacity(layout.encoder.len());
    for slots in &layout.encoder {
        let (attn_in, attn_norm) = ops::layer_norm(params, &slots.attn_norm, &x, d);
        let attn = multi_head(params, &slots.attn, &attn_in, &attn_in, false)?;
        let proj = ops::linear(params, &slots.attn.o, &attn.ctx);
        ops::add_in_place(&mut x, &proj);

        let (ff_in, ff_norm) = ops::layer_norm(params, &slots.ff_norm, &x, d);
        let (ff_out, ff) = feed_forward(params, &slots.ff, ff_in, ff_norm);
        ops::add_in_place(&mut x, &ff_out);

        layers.push(EncoderLayerCache {
            attn_norm,
            attn_in,
            attn,
            ff,
        });
    }
    let (out, final_norm) = ops::layer_norm(params, &layout.encoder_norm, &x, d);
    Ok((
        out,
        EncoderCache {
            tokens: tokens.to_vec(),
            layers,
            final_norm,
        },
    ))
}

pub fn encode(params: &ModelParams, source: &[TokenId]) -> Result<EncoderStates> {
    let (out, _) = encoder_forward(params, source)?;
    let d = params.config().d_model;
    Ok(EncoderStates {
        states: Matrix::from_vec(source.len(), d, out)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelParams {
        let cfg = ModelConfig {
            vocab_size: 12,
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 16,
            max_positions: 10,
        };
        ModelParams::init(cfg, 3).unwrap()
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let p = tiny();
        let a = encode(&p, &[4, 5, 6]).unwrap();
        assert_eq!(a.source_len(), 3);
        assert_eq!(a.states().cols(), 8);
        assert_eq!(a, encode(&p, &[4, 5, 6]).unwrap());
    }

    #[test]
    fn encode_rejects_bad_input() {
        let p = tiny();
        assert!(matches!(encode(&p, &[]), Err(Error::Input(_))));
        assert!(matches!(encode(&p, &[4; 11]), Err(Error::Input(_))));
        assert!(matches!(encode(&p, &[4, 12]), Err(Error::Input(_))));
    }
}
