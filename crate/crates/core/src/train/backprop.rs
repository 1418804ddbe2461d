//! Teacher-forced forward pass and hand-written backward pass.
//!
//! Gradients accumulate into a flat buffer laid out like the parameters.
//! Linear-layer input gradients use a transposed copy of every weight so the
//! inner loops stay in vectorizable axpy form.

use crate::error::Result;
use crate::model::ops::{self, NormCache};
use crate::model::{
    check_tokens, encoder_forward, feed_forward, multi_head, AttnCache, AttnSlots, EncoderCache, FfCache, FfSlots,
    HeadView, LinearSlots, ModelParams, NormSlots,
};
use crate::tensor::{self, axpy, dot};
use crate::vocab::{TokenId, BOS, EOS};

/// Weight matrices transposed in place within a layout-shaped buffer.
pub(crate) struct Transposed {
    data: Vec<f64>,
}

impl Transposed {
    pub(crate) fn new(params: &ModelParams) -> Self {
        let mut data = vec![0.0; params.data().len()];
        for (_, slot) in params.layout().named() {
            if slot.rows > 1 {
                data[slot.range()].copy_from_slice(&tensor::transpose(params.slice(*slot), slot.rows, slot.cols));
            }
        }
        Transposed { data }
    }
}

pub(crate) fn linear_backward(
    wt: &Transposed,
    slots: &LinearSlots,
    x: &[f64],
    dy: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let (fan_in, fan_out) = (slots.w.rows, slots.w.cols);
    let n = dy.len() / fan_out;
    tensor::matmul_at_b_acc(x, dy, n, fan_in, fan_out, &mut grad[slots.w.range()]);
    let gb = &mut grad[slots.b.range()];
    for i in 0..n {
        ops::add_in_place(gb, &dy[i * fan_out..(i + 1) * fan_out]);
    }
    let mut dx = vec![0.0; n * fan_in];
    tensor::matmul_into(dy, &wt.data[slots.w.range()], n, fan_out, fan_in, &mut dx);
    dx
}

pub(crate) fn layer_norm_backward(
    params: &ModelParams,
    slots: &NormSlots,
    cache: &NormCache,
    dy: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let gain = params.slice(slots.gain);
    let d = gain.len();
    let n = cache.rstd.len();
    let mut dx = vec![0.0; n * d];
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let xhat = &cache.xhat[i * d..(i + 1) * d];
        let dyi = &dy[i * d..(i + 1) * d];
        {
            let gg = &mut grad[slots.gain.range()];
            for j in 0..d {
                gg[j] += dyi[j] * xhat[j];
            }
        }
        ops::add_in_place(&mut grad[slots.bias.range()], dyi);
        for j in 0..d {
            dxhat[j] = dyi[j] * gain[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dot(&dxhat, xhat) / d as f64;
        let rstd = cache.rstd[i];
        for j in 0..d {
            dx[i * d + j] = rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    }
    dx
}

/// Gradients of a multi-head attention block with respect to its query and
/// memory inputs (before the q/k/v projections).
#[allow(clippy::too_many_arguments)]
fn multi_head_backward(
    params: &ModelParams,
    wt: &Transposed,
    slots: &AttnSlots,
    cache: &AttnCache,
    query_in: &[f64],
    memory: &[f64],
    causal: bool,
    dctx: &[f64],
    grad: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let cfg = params.config();
    let d = cfg.d_model;
    let dk = cfg.d_head();
    let heads = cfg.n_heads;
    let nq = cache.q.len() / d;
    let nk = cache.k.len() / d;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = vec![0.0; nq * d];
    let mut dkm = vec![0.0; nk * d];
    let mut dv = vec![0.0; nk * d];
    let mut dp = vec![0.0; nk];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        let kv = HeadView::new(&cache.k, d, h * dk, dk);
        let vv = HeadView::new(&cache.v, d, h * dk, dk);
        for i in 0..nq {
            let n = if causal { i + 1 } else { nk };
            let p = &cache.probs[(h * nq + i) * nk..(h * nq + i) * nk + n];
            let g = &dctx[i * d + cols.start..i * d + cols.end];
            let mut weighted = 0.0;
            for j in 0..n {
                dp[j] = dot(g, vv.row(j));
                weighted += p[j] * dp[j];
                axpy(p[j], g, &mut dv[j * d + cols.start..j * d + cols.end]);
            }
            let qi = &cache.q[i * d + cols.start..i * d + cols.end];
            for j in 0..n {
                let ds = p[j] * (dp[j] - weighted) * scale;
                axpy(ds, kv.row(j), &mut dq[i * d + cols.start..i * d + cols.end]);
                axpy(ds, qi, &mut dkm[j * d + cols.start..j * d + cols.end]);
            }
        }
    }
    let d_query = linear_backward(wt, &slots.q, query_in, &dq, grad);
    let mut d_memory = linear_backward(wt, &slots.k, memory, &dkm, grad);
    ops::add_in_place(&mut d_memory, &linear_backward(wt, &slots.v, memory, &dv, grad));
    (d_query, d_memory)
}

fn feed_forward_backward(wt: &Transposed, slots: &FfSlots, cache: &FfCache, dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let mut dact = linear_backward(wt, &slots.down, &cache.act, dy, grad);
    for (g, &x) in dact.iter_mut().zip(&cache.pre) {
        *g *= ops::gelu_grad(x);
    }
    linear_backward(wt, &slots.up, &cache.input, &dact, grad)
}

fn embed_backward(params: &ModelParams, tokens: &[TokenId], dx: &[f64], grad: &mut [f64]) {
    let d = params.config().d_model;
    let emb = params.layout().embed;
    let scale = ops::embed_scale(d);
    for (i, &tok) in tokens.iter().enumerate() {
        let start = emb.offset + tok as usize * d;
        axpy(scale, &dx[i * d..(i + 1) * d], &mut grad[start..start + d]);
    }
}

/// Gradient through the tied output projection; returns `dy`.
fn output_backward(params: &ModelParams, y: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let d = params.config().d_model;
    let vocab = params.config().vocab_size;
    let layout = params.layout();
    let table = params.slice(layout.embed);
    let mut dy = vec![0.0; y.len()];
    for (t, (row, dyt)) in y.chunks_exact(d).zip(dy.chunks_exact_mut(d)).enumerate() {
        let dl = &dlogits[t * vocab..(t + 1) * vocab];
        ops::add_in_place(&mut grad[layout.output_bias.range()], dl);
        for (v, &g) in dl.iter().enumerate() {
            let start = layout.embed.offset + v * d;
            axpy(g, row, &mut grad[start..start + d]);
            axpy(g, &table[v * d..(v + 1) * d], dyt);
        }
    }
    dy
}

/// Backpropagates `d_out` (gradient of the final encoder output) through the
/// encoder stack.
pub(crate) fn encoder_backward(
    params: &ModelParams,
    wt: &Transposed,
    cache: &EncoderCache,
    d_out: &[f64],
    grad: &mut [f64],
) {
    let layout = params.layout();
    let mut dx = layer_norm_backward(params, &layout.encoder_norm, &cache.final_norm, d_out, grad);
    for (slots, lc) in layout.encoder.iter().zip(&cache.layers).rev() {
        let dff = feed_forward_backward(wt, &slots.ff, &lc.ff, &dx, grad);
        ops::add_in_place(
            &mut dx,
            &layer_norm_backward(params, &slots.ff_norm, &lc.ff.norm, &dff, grad),
        );

        let dctx = linear_backward(wt, &slots.attn.o, &lc.attn.ctx, &dx, grad);
        let (dq_in, dmem) = multi_head_backward(
            params,
            wt,
            &slots.attn,
            &lc.attn,
            &lc.attn_in,
            &lc.attn_in,
            false,
            &dctx,
            grad,
        );
        let mut da = dq_in;
        ops::add_in_place(&mut da, &dmem);
        ops::add_in_place(
            &mut dx,
            &layer_norm_backward(params, &slots.attn_norm, &lc.attn_norm, &da, grad),
        );
    }
    embed_backward(params, &cache.tokens, &dx, grad);
}

struct DecoderLayerCache {
    self_norm: NormCache,
    self_in: Vec<f64>,
    self_attn: AttnCache,
    cross_norm: NormCache,
    cross_in: Vec<f64>,
    cross_attn: AttnCache,
    ff: FfCache,
}

/// Token-level outcome of one teacher-forced pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SeqStats {
    /// Summed negative log-likelihood over target positions.
    pub nll: f64,
    pub tokens: usize,
    /// Positions where the argmax prediction equals the target.
    pub correct: usize,
}

/// Decoder inputs and targets for a reference: `bos ref…` → `ref… eos`.
pub(crate) fn frame_target(reference: &[TokenId]) -> (Vec<TokenId>, Vec<TokenId>) {
    let mut input = Vec::with_capacity(reference.len() + 1);
    input.push(BOS);
    input.extend(reference);
    let mut output = reference.to_vec();
    output.push(EOS);
    (input, output)
}

/// Cross-entropy of `reference` given `source`. When `grad` is supplied the
/// gradient of `loss_scale · nll` is accumulated into it.
pub(crate) fn seq2seq_loss(
    params: &ModelParams,
    wt: Option<&Transposed>,
    source: &[TokenId],
    reference: &[TokenId],
    loss_scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<SeqStats> {
    let cfg = params.config();
    let d = cfg.d_model;
    let vocab = cfg.vocab_size;
    let layout = params.layout();
    let (enc_out, enc_cache) = encoder_forward(params, source)?;
    let (dec_in, dec_out) = frame_target(reference);
    check_tokens(params, &dec_in, "target")?;

    let mut x = ops::embed(params, &dec_in, 0);
    let mut caches = Vec::with_capacity(layout.decoder.len());
    for slots in &layout.decoder {
        let (self_in, self_norm) = ops::layer_norm(params, &slots.self_norm, &x, d);
        let self_attn = multi_head(params, &slots.self_attn, &self_in, &self_in, true)?;
        ops::add_in_place(&mut x, &ops::linear(params, &slots.self_attn.o, &self_attn.ctx));

        let (cross_in, cross_norm) = ops::layer_norm(params, &slots.cross_norm, &x, d);
        let cross_attn = multi_head(params, &slots.cross_attn, &cross_in, &enc_out, false)?;
        ops::add_in_place(&mut x, &ops::linear(params, &slots.cross_attn.o, &cross_attn.ctx));

        let (ff_in, ff_norm) = ops::layer_norm(params, &slots.ff_norm, &x, d);
        let (ff_out, ff) = feed_forward(params, &slots.ff, ff_in, ff_norm);
        ops::add_in_place(&mut x, &ff_out);
        caches.push(DecoderLayerCache {
            self_norm,
            self_in,
            self_attn,
            cross_norm,
            cross_in,
            cross_attn,
            ff,
        });
    }
    let (y, final_norm) = ops::layer_norm(params, &layout.decoder_norm, &x, d);
    let mut logits = ops::output_logits(params, &y);

    let mut stats = SeqStats {
        tokens: dec_out.len(),
        ..SeqStats::default()
    };
    for (t, &target) in dec_out.iter().enumerate() {
        let row = &mut logits[t * vocab..(t + 1) * vocab];
        if tensor::argmax(row) == Some(target as usize) {
            stats.correct += 1;
        }
        // Row becomes softmax probabilities, then the CE gradient in place.
        tensor::softmax_in_place(row)?;
        stats.nll -= row[target as usize].ln();
        row[target as usize] -= 1.0;
        for v in row.iter_mut() {
            *v *= loss_scale;
        }
    }

    let Some(grad) = grad else {
        return Ok(stats);
    };
    let wt = wt.expect("transposed weights required for gradients");
    let dlogits = logits;
    let dy = output_backward(params, &y, &dlogits, grad);
    let mut dx = layer_norm_backward(params, &layout.decoder_norm, &final_norm, &dy, grad);
    let mut d_enc = vec![0.0; enc_out.len()];
    for (slots, lc) in layout.decoder.iter().zip(&caches).rev() {
        let dff = feed_forward_backward(wt, &slots.ff, &lc.ff, &dx, grad);
        ops::add_in_place(
            &mut dx,
            &layer_norm_backward(params, &slots.ff_norm, &lc.ff.norm, &dff, grad),
        );

        let dctx = linear_backward(wt, &slots.cross_attn.o, &lc.cross_attn.ctx, &dx, grad);
        let (dq_in, dmem) = multi_head_backward(
            params,
            wt,
            &slots.cross_attn,
            &lc.cross_attn,
            &lc.cross_in,
            &enc_out,
            false,
            &dctx,
            grad,
        );
        ops::add_in_place(&mut d_enc, &dmem);
        ops::add_in_place(
            &mut dx,
            &layer_norm_backward(params, &slots.cross_norm, &lc.cross_norm, &dq_in, grad),
        );

        let dctx = linear_backward(wt, &slots.self_attn.o, &lc.self_attn.ctx, &dx, grad);
        let (dq_in, dmem) = multi_head_backward(
            params,
            wt,
            &slots.self_attn,
            &lc.self_attn,
            &lc.self_in,
            &lc.self_in,
            true,
            &dctx,
            grad,
        );
        let mut da = dq_in;
        ops::add_in_place(&mut da, &dmem);
        ops::add_in_place(
            &mut dx,
            &layer_norm_backward(params, &slots.self_norm, &lc.self_norm, &da, grad),
        );
    }
    embed_backward(params, &dec_in, &dx, grad);
    encoder_backward(params, wt, &enc_cache, &d_enc, grad);
    Ok(stats)
}
