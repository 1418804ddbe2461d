//! Beam and greedy decoding with length control and head masking.
//!
//! Length convention: a hypothesis's *length* counts generated tokens
//! excluding the closing eos. eos is forbidden while length < `min_len`; once
//! length reaches `max_len`, eos is appended without another model step and
//! without changing the log-probability. The length penalty divides by the
//! token count *including* eos, which is always ≥ 1:
//! `score = log_prob / (length + 1)^length_penalty`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{encode, AttentionTrace, CrossAttention, DecoderState, ModelParams};
use crate::tensor;
use crate::vocab::{TokenId, BOS, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeParams {
    pub beam_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub length_penalty: f64,
}

impl DecodeParams {
    /// Beam 5, penalty 2.0, lengths 8..=64.
    pub const EVALUATION: DecodeParams = DecodeParams {
        beam_size: 5,
        min_len: 8,
        max_len: 64,
        length_penalty: 2.0,
    };

    /// Beam 1 with the evaluation length limits.
    pub const ANALYSIS: DecodeParams = DecodeParams {
        beam_size: 1,
        ..Self::EVALUATION
    };

    pub fn greedy(self) -> Self {
        DecodeParams { beam_size: 1, ..self }
    }

    pub fn validate(&self, max_positions: usize) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "min_len {} exceeds max_len {}",
                self.min_len, self.max_len
            )));
        }
        if self.max_len > max_positions {
            return Err(Error::Config(format!(
                "max_len {} exceeds max_positions {max_positions}",
                self.max_len
            )));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::Config("length_penalty must be a nonnegative number".into()));
        }
        Ok(())
    }
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self::EVALUATION
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated tokens, without bos; ends with eos once finished.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub finished: bool,
    pub score: f64,
}

impl Hypothesis {
    /// Generated tokens excluding the closing eos.
    pub fn len(&self) -> usize {
        self.body().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tokens without the closing eos.
    pub fn body(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) if self.finished => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

fn length_normalized(log_prob: f64, n_tokens: usize, penalty: f64) -> f64 {
    if penalty == 0.0 {
        log_prob
    } else {
        log_prob / (n_tokens as f64).powf(penalty)
    }
}

/// Higher score first, then the lexicographically smaller sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

struct Live {
    tokens: Vec<TokenId>,
    log_prob: f64,
    state: DecoderState,
}

struct Candidate {
    parent: usize,
    token: TokenId,
    log_prob: f64,
}

/// Log-probabilities for the next token of `live`, with eos handling.
fn next_log_probs(
    params: &ModelParams,
    live: &mut Live,
    dp: &DecodeParams,
    mode: CrossAttention<'_>,
) -> Result<Vec<f64>> {
    let last = live.tokens.last().copied().unwrap_or(BOS);
    let mut logits = live.state.step(params, last, mode, None)?.into_vec();
    if live.tokens.len() < dp.min_len {
        logits[EOS as usize] = f64::NEG_INFINITY;
    }
    tensor::log_softmax_in_place(&mut logits)?;
    Ok(logits)
}

fn finish(tokens: Vec<TokenId>, log_prob: f64, dp: &DecodeParams) -> Hypothesis {
    let score = length_normalized(log_prob, tokens.len(), dp.length_penalty);
    Hypothesis {
        tokens,
        log_prob,
        finished: true,
        score,
    }
}

fn search(params: &ModelParams, source: &[TokenId], dp: &DecodeParams, mode: CrossAttention<'_>) -> Result<Hypothesis> {
    let enc = encode(params, source)?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: DecoderState::new(params, &enc),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() && finished.len() < dp.beam_size {
        let mut candidates = Vec::new();
        for (i, beam) in live.iter_mut().enumerate() {
            if beam.tokens.len() >= dp.max_len {
                candidates.push(Candidate {
                    parent: i,
                    token: EOS,
                    log_prob: beam.log_prob,
                });
                continue;
            }
            let lp = next_log_probs(params, beam, dp, mode)?;
            for (tok, &l) in lp.iter().enumerate() {
                if l != f64::NEG_INFINITY {
                    candidates.push(Candidate {
                        parent: i,
                        token: tok as TokenId,
                        log_prob: beam.log_prob + l,
                    });
                }
            }
        }
        // Live prefixes all share one length, so ordering candidates by
        // (parent prefix, token) is their lexicographic order.
        candidates.sort_by(|a, b| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then_with(|| live[a.parent].tokens.cmp(&live[b.parent].tokens))
                .then_with(|| a.token.cmp(&b.token))
        });
        let mut next = Vec::with_capacity(dp.beam_size);
        for (rank, c) in candidates.iter().enumerate() {
            if next.len() >= dp.beam_size {
                break;
            }
            let parent = &live[c.parent];
            let mut tokens = parent.tokens.clone();
            tokens.push(c.token);
            if c.token == EOS {
                if rank < dp.beam_size {
                    finished.push(finish(tokens, c.log_prob, dp));
                }
            } else {
                next.push(Live {
                    tokens,
                    log_prob: c.log_prob,
                    state: parent.state.clone(),
                });
            }
        }
        live = next;
    }
    finished.sort_by(rank);
    Ok(finished.swap_remove(0))
}

/// Re-runs `tokens` through the decoder, recording one trace step per
/// generated non-eos token.
fn replay_trace(
    params: &ModelParams,
    source: &[TokenId],
    hyp: &Hypothesis,
    mode: CrossAttention<'_>,
    trace: &mut AttentionTrace,
) -> Result<()> {
    let enc = encode(params, source)?;
    let mut state = DecoderState::new(params, &enc);
    let body = hyp.body();
    let mut input = BOS;
    for &tok in body {
        state.step(params, input, mode, Some(trace))?;
        input = tok;
    }
    Ok(())
}

/// Highest-scoring finished hypothesis.
///
/// For beam sizes above one the greedy hypothesis also competes, so the
/// result never scores below greedy decoding. A supplied trace receives the
/// encoder-decoder attention of the returned hypothesis, one step per
/// generated token excluding eos.
pub fn beam_decode(
    params: &ModelParams,
    source: &[TokenId],
    dp: &DecodeParams,
    mode: CrossAttention<'_>,
    trace: Option<&mut AttentionTrace>,
) -> Result<Hypothesis> {
    dp.validate(params.config().max_positions)?;
    let mut best = search(params, source, dp, mode)?;
    if dp.beam_size > 1 {
        let greedy = search(params, source, &dp.greedy(), mode)?;
        if rank(&greedy, &best) == Ordering::Less {
            best = greedy;
        }
    }
    if let Some(t) = trace {
        replay_trace(params, source, &best, mode, t)?;
    }
    Ok(best)
}

/// `beam_decode` with a beam of one.
pub fn greedy_decode(
    params: &ModelParams,
    source: &[TokenId],
    dp: &DecodeParams,
    mode: CrossAttention<'_>,
    trace: Option<&mut AttentionTrace>,
) -> Result<Hypothesis> {
    beam_decode(params, source, &dp.greedy(), mode, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{decode_step, HeadMaskConfig, HeadMaskVector, ModelConfig};

    fn model() -> ModelParams {
        let cfg = ModelConfig {
            vocab_size: 14,
            d_model: 16,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 24,
            max_positions: 32,
        };
        ModelParams::init(cfg, 7).unwrap()
    }

    fn dp(beam: usize, min: usize, max: usize, pen: f64) -> DecodeParams {
        DecodeParams {
            beam_size: beam,
            min_len: min,
            max_len: max,
            length_penalty: pen,
        }
    }

    const SRC: [TokenId; 6] = [4, 9, 5, 11, 6, 13];

    /// Step-by-step argmax via the prefix-replaying `decode_step`.
    fn reference_greedy(p: &ModelParams, src: &[TokenId], d: &DecodeParams) -> Vec<TokenId> {
        let enc = encode(p, src).unwrap();
        let mut prefix = vec![BOS];
        loop {
            let gen = prefix.len() - 1;
            if gen >= d.max_len {
                prefix.push(EOS);
                break;
            }
            let mut logits = decode_step(p, &enc, &prefix, &HeadMaskConfig::none(2, 4), None, None)
                .unwrap()
                .into_vec();
            if gen < d.min_len {
                logits[EOS as usize] = f64::NEG_INFINITY;
            }
            let tok = tensor::argmax(&logits).unwrap() as TokenId;
            prefix.push(tok);
            if tok == EOS {
                break;
            }
        }
        prefix[1..].to_vec()
    }

    #[test]
    fn greedy_matches_stepwise_argmax() {
        let p = model();
        for (min, max) in [(0, 10), (3, 6), (5, 5)] {
            let d = dp(1, min, max, 1.0);
            let h = greedy_decode(&p, &SRC, &d, CrossAttention::unmasked(), None).unwrap();
            assert_eq!(h.tokens, reference_greedy(&p, &SRC, &d));
        }
    }

    #[test]
    fn lengths_respect_limits_and_end_in_eos() {
        let p = model();
        for beam in [1, 3] {
            for (min, max) in [(0, 4), (4, 9), (7, 7)] {
                let h = beam_decode(&p, &SRC, &dp(beam, min, max, 1.5), CrossAttention::unmasked(), None).unwrap();
                assert_eq!(h.tokens.last(), Some(&EOS));
                assert!(h.finished);
                assert!(min <= h.len() && h.len() <= max, "{min} {max} {h:?}");
                assert!(!h.body().contains(&EOS));
                assert!(h.log_prob <= 0.0);
            }
        }
    }

    #[test]
    fn zero_penalty_scores_raw_log_prob() {
        let h = beam_decode(&model(), &SRC, &dp(3, 2, 8, 0.0), CrossAttention::unmasked(), None).unwrap();
        assert_eq!(h.score, h.log_prob);
    }

    #[test]
    fn beam_never_scores_below_greedy() {
        let p = model();
        let sources: [&[TokenId]; 5] = [&SRC, &[4, 5], &[7, 7, 8, 9], &[13, 12, 11, 10, 9, 8, 7], &[6]];
        let mut sums = (0.0, 0.0);
        for src in sources {
            let g = greedy_decode(&p, src, &dp(1, 2, 10, 2.0), CrossAttention::unmasked(), None).unwrap();
            let b = beam_decode(&p, src, &dp(5, 2, 10, 2.0), CrossAttention::unmasked(), None).unwrap();
            assert!(b.score >= g.score);
            sums.0 += g.score;
            sums.1 += b.score;
        }
        assert!(sums.1 >= sums.0);
    }

    #[test]
    fn all_salient_mask_is_neutral() {
        let p = model();
        let m = HeadMaskVector::all_salient(SRC.len());
        let cfg = HeadMaskConfig::all(2, 4);
        for beam in [1, 4] {
            let d = dp(beam, 1, 9, 2.0);
            let plain = beam_decode(&p, &SRC, &d, CrossAttention::unmasked(), None).unwrap();
            let masked = beam_decode(&p, &SRC, &d, CrossAttention::masked(&cfg, Some(&m)), None).unwrap();
            assert_eq!(plain, masked);
        }
    }

    #[test]
    fn trace_covers_each_generated_token() {
        let p = model();
        let mut trace = AttentionTrace::new();
        let h = greedy_decode(
            &p,
            &SRC,
            &dp(1, 3, 9, 1.0),
            CrossAttention::unmasked(),
            Some(&mut trace),
        )
        .unwrap();
        assert_eq!(trace.len(), h.len());
        assert_eq!(trace.row(0, 1, 3).len(), SRC.len());
    }

    #[test]
    fn masked_positions_get_zero_weight_during_decoding() {
        let p = model();
        let labels = [true, false, true, false, false, true];
        let m = HeadMaskVector::from_labels(&labels).unwrap();
        let cfg = HeadMaskConfig::single(2, 4, 1, 2);
        let mut trace = AttentionTrace::new();
        greedy_decode(
            &p,
            &SRC,
            &dp(1, 4, 8, 1.0),
            CrossAttention::masked(&cfg, Some(&m)),
            Some(&mut trace),
        )
        .unwrap();
        for step in trace.steps() {
            for (j, &w) in step[1][2].as_slice().iter().enumerate() {
                if !labels[j] {
                    assert_eq!(w, 0.0);
                }
            }
            assert!(step[0][2].as_slice().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn invalid_params_are_config_errors() {
        let p = model();
        for d in [dp(0, 1, 4, 1.0), dp(1, 5, 4, 1.0), dp(1, 1, 40, 1.0), dp(1, 1, 4, -1.0)] {
            assert!(matches!(
                beam_decode(&p, &SRC, &d, CrossAttention::unmasked(), None),
                Err(Error::Config(_))
            ));
        }
    }
}
