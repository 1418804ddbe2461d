//! Head-level analyses over an analysis set: per-head content-selection
//! effect, multi-head synergy curves, and attention-focus tallies.
//!
//! All analyses decode with the parameters they are given (greedy by
//! default). An example whose salience labels mark nothing cannot be masked;
//! it is decoded unmasked instead and counted in `fallbacks`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::decode::{beam_decode, DecodeParams, Hypothesis};
use crate::error::{Error, Result};
use crate::model::{AttentionTrace, CrossAttention, HeadMaskConfig, HeadMaskVector, ModelParams};
use crate::par;
use crate::rouge::{mean_scores, rouge, RougeScores};
use crate::text;
use crate::vocab::{TokenId, Vocab};

/// Decoding outcome over a set of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSet {
    pub hypotheses: Vec<Hypothesis>,
    pub per_example: Vec<RougeScores>,
    pub mean: RougeScores,
    /// Examples decoded unmasked because their labels selected nothing.
    pub fallbacks: usize,
}

/// Per-example masks from salience labels; `None` where nothing is salient.
pub fn masks_from_labels<'a>(labels: impl IntoIterator<Item = &'a [bool]>) -> Vec<Option<HeadMaskVector>> {
    labels
        .into_iter()
        .map(|l| HeadMaskVector::from_labels(l).ok())
        .collect()
}

/// Oracle masks from the labels carried by each example.
pub fn oracle_masks(examples: &[Example]) -> Vec<Option<HeadMaskVector>> {
    masks_from_labels(examples.iter().map(|e| e.labels.as_slice()))
}

/// How a set is decoded.
#[derive(Debug, Clone, Copy)]
pub enum Attention<'a> {
    Unmasked,
    Uniform,
    /// `mask_cfg` heads receive each example's mask.
    Masked {
        mask_cfg: &'a HeadMaskConfig,
        masks: &'a [Option<HeadMaskVector>],
    },
}

/// Decodes every example and scores it against its reference.
pub fn decode_set(
    params: &ModelParams,
    examples: &[Example],
    attention: Attention<'_>,
    dp: &DecodeParams,
    threads: usize,
) -> Result<DecodedSet> {
    if examples.is_empty() {
        return Err(Error::Input("analysis set is empty".into()));
    }
    if let Attention::Masked { masks, .. } = attention {
        if masks.len() != examples.len() {
            return Err(Error::Shape(format!(
                "{} masks for {} examples",
                masks.len(),
                examples.len()
            )));
        }
    }
    let indices: Vec<usize> = (0..examples.len()).collect();
    let results = par::try_map(&indices, threads, |&i| {
        let ex = &examples[i];
        let (mode, fallback) = match attention {
            Attention::Unmasked => (CrossAttention::unmasked(), false),
            Attention::Uniform => (CrossAttention::Uniform, false),
            Attention::Masked { mask_cfg, .. } if !mask_cfg.any_active() => (CrossAttention::unmasked(), false),
            Attention::Masked { mask_cfg, masks } => match &masks[i] {
                Some(m) => (CrossAttention::masked(mask_cfg, Some(m)), false),
                None => (CrossAttention::unmasked(), true),
            },
        };
        let hyp = beam_decode(params, &ex.source, dp, mode, None)?;
        let scores = rouge(hyp.body(), &ex.reference);
        Ok((hyp, scores, fallback))
    })?;
    let mut out = DecodedSet {
        hypotheses: Vec::with_capacity(results.len()),
        per_example: Vec::with_capacity(results.len()),
        mean: RougeScores::default(),
        fallbacks: 0,
    };
    for (h, s, f) in results {
        out.hypotheses.push(h);
        out.per_example.push(s);
        out.fallbacks += f as usize;
    }
    out.mean = mean_scores(&out.per_example);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentSelectionEffect {
    /// Uniform-attention baseline.
    pub r_uni: RougeScores,
    /// `[layer][head]`: oracle mask on that head alone.
    pub per_head: Vec<Vec<RougeScores>>,
    /// `per_head − r_uni`.
    pub effect: Vec<Vec<RougeScores>>,
    /// Examples decoded unmasked in each per-head run for lack of salient
    /// tokens.
    pub fallbacks: usize,
    pub n_examples: usize,
}

impl ContentSelectionEffect {
    pub fn n_layers(&self) -> usize {
        self.per_head.len()
    }

    pub fn n_heads(&self) -> usize {
        self.per_head.first().map_or(0, Vec::len)
    }

    /// Largest ROUGE-1 F1 effect over the grid, with its (layer, head).
    pub fn max_r1_effect(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (l, row) in self.effect.iter().enumerate() {
            for (h, e) in row.iter().enumerate() {
                if e.r1.f1 > best.2 {
                    best = (l, h, e.r1.f1);
                }
            }
        }
        best
    }

    /// Heads of `layer` by decreasing ROUGE-1 F1 effect, ties to the lower
    /// index.
    pub fn head_order(&self, layer: usize) -> Vec<usize> {
        let row = &self.effect[layer];
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].r1.f1.total_cmp(&row[a].r1.f1).then(a.cmp(&b)));
        order
    }

    /// The effect grid flattened for plotting.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("layer,head,r1_f1,r2_f1,rl_f1,r1_recall,r2_recall,rl_recall,r1_f1_masked,r1_f1_uniform\n");
        for (l, row) in self.effect.iter().enumerate() {
            for (h, e) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{l},{h},{},{},{},{},{},{},{},{}",
                    e.r1.f1,
                    e.r2.f1,
                    e.rl.f1,
                    e.r1.recall,
                    e.r2.recall,
                    e.rl.recall,
                    self.per_head[l][h].r1.f1,
                    self.r_uni.r1.f1
                )
                .expect("writing to a String");
            }
        }
        out
    }
}

/// Oracle masking of each head in turn, against the uniform-attention
/// baseline.
pub fn content_selection_effect(
    params: &ModelParams,
    examples: &[Example],
    dp: &DecodeParams,
    threads: usize,
) -> Result<ContentSelectionEffect> {
    let cfg = params.config();
    let masks = oracle_masks(examples);
    let uniform = decode_set(params, examples, Attention::Uniform, dp, threads)?;
    let mut per_head = Vec::with_capacity(cfg.n_dec_layers);
    let mut fallbacks = 0;
    for layer in 0..cfg.n_dec_layers {
        let mut row = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let mask_cfg = HeadMaskConfig::single(cfg.n_dec_layers, cfg.n_heads, layer, head);
            let run = decode_set(
                params,
                examples,
                Attention::Masked {
                    mask_cfg: &mask_cfg,
                    masks: &masks,
                },
                dp,
                threads,
            )?;
            fallbacks += run.fallbacks;
            row.push(run.mean);
        }
        per_head.push(row);
    }
    let effect = per_head
        .iter()
        .map(|row| row.iter().map(|s| s.minus(&uniform.mean)).collect())
        .collect();
    Ok(ContentSelectionEffect {
        r_uni: uniform.mean,
        per_head,
        effect,
        fallbacks,
        n_examples: examples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Number of masked heads.
    pub k: usize,
    /// Head added at this point.
    pub head: usize,
    /// Whether the added head improved ROUGE-1 F1 on its own.
    pub head_has_individual_gain: bool,
    pub scores: RougeScores,
    /// `scores − r_uni`.
    pub improvement: RougeScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSynergy {
    pub layer: usize,
    pub order: Vec<usize>,
    pub incremental_curve: Vec<CurvePoint>,
    pub joint_all: RougeScores,
    /// `joint_all − r_uni`.
    pub joint_improvement: RougeScores,
    /// Sum over heads of their individual improvements.
    pub sum_of_individuals: RougeScores,
}

impl LayerSynergy {
    /// Best ROUGE-1 F1 over curve points with at least two heads.
    pub fn best_multi_head_r1(&self) -> Option<f64> {
        self.incremental_curve
            .iter()
            .filter(|p| p.k >= 2)
            .map(|p| p.scores.r1.f1)
            .max_by(f64::total_cmp)
    }

    pub fn best_single_head_r1(&self) -> f64 {
        self.incremental_curve[0].scores.r1.f1
    }
}

impl SynergyReport {
    /// One row per curve point plus a `joint`/`sum` pair per layer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,series,k,head,individual_gain,r1_f1,r2_f1,rl_f1\n");
        for ls in &self.layers {
            for p in &ls.incremental_curve {
                let i = p.improvement;
                writeln!(
                    out,
                    "{},curve,{},{},{},{},{},{}",
                    ls.layer, p.k, p.head, p.head_has_individual_gain, i.r1.f1, i.r2.f1, i.rl.f1
                )
                .expect("writing to a String");
            }
            let k = ls.order.len();
            for (series, s) in [("joint", ls.joint_improvement), ("sum", ls.sum_of_individuals)] {
                writeln!(out, "{},{series},{k},,,{},{},{}", ls.layer, s.r1.f1, s.r2.f1, s.rl.f1)
                    .expect("writing to a String");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyReport {
    pub r_uni: RougeScores,
    pub layers: Vec<LayerSynergy>,
    pub fallbacks: usize,
}

/// Per layer, masks the top-k heads by individual ROUGE-1 effect for every k.
/// The k = 1 point reuses the single-head run stored in `effect`.
pub fn synergy_analysis(
    params: &ModelParams,
    examples: &[Example],
    effect: &ContentSelectionEffect,
    dp: &DecodeParams,
    threads: usize,
) -> Result<SynergyReport> {
    let cfg = params.config();
    if effect.n_layers() != cfg.n_dec_layers || effect.n_heads() != cfg.n_heads {
        return Err(Error::Shape("effect grid does not match the model".into()));
    }
    let masks = oracle_masks(examples);
    let mut layers = Vec::with_capacity(cfg.n_dec_layers);
    let mut fallbacks = 0;
    for layer in 0..cfg.n_dec_layers {
        let order = effect.head_order(layer);
        let mut curve = Vec::with_capacity(order.len());
        for k in 1..=order.len() {
            let head = order[k - 1];
            let scores = if k == 1 {
                effect.per_head[layer][head]
            } else {
                let mask_cfg = HeadMaskConfig::heads_in_layer(cfg.n_dec_layers, cfg.n_heads, layer, &order[..k]);
                let run = decode_set(
                    params,
                    examples,
                    Attention::Masked {
                        mask_cfg: &mask_cfg,
                        masks: &masks,
                    },
                    dp,
                    threads,
                )?;
                fallbacks += run.fallbacks;
                run.mean
            };
            curve.push(CurvePoint {
                k,
                head,
                head_has_individual_gain: effect.effect[layer][head].r1.f1 > 0.0,
                scores,
                improvement: scores.minus(&effect.r_uni),
            });
        }
        let joint_all = curve.last().expect("at least one head").scores;
        let sum_of_individuals = effect.effect[layer]
            .iter()
            .fold(RougeScores::default(), |acc, e| acc.plus(e));
        layers.push(LayerSynergy {
            layer,
            order,
            incremental_curve: curve,
            joint_all,
            joint_improvement: joint_all.minus(&effect.r_uni),
            sum_of_individuals,
        });
    }
    Ok(SynergyReport {
        r_uni: effect.r_uni,
        layers,
        fallbacks,
    })
}

/// Attendee categories. They overlap: a FIRST attendee may also be SALIENT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FocusCategory {
    CopySalient,
    NoncopySalient,
    CopyContent,
    NoncopyContent,
    First,
    Last,
}

impl FocusCategory {
    pub const ALL: [FocusCategory; 6] = [
        FocusCategory::CopySalient,
        FocusCategory::NoncopySalient,
        FocusCategory::CopyContent,
        FocusCategory::NoncopyContent,
        FocusCategory::First,
        FocusCategory::Last,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FocusCategory::CopySalient => "COPY_SALIENT",
            FocusCategory::NoncopySalient => "NONCOPY_SALIENT",
            FocusCategory::CopyContent => "COPY_CONTENT",
            FocusCategory::NoncopyContent => "NONCOPY_CONTENT",
            FocusCategory::First => "FIRST",
            FocusCategory::Last => "LAST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusTally {
    pub categories: Vec<FocusCategory>,
    /// `[layer][head][category]`, categories in `FocusCategory::ALL` order.
    pub counts: Vec<Vec<[usize; 6]>>,
    /// Generated tokens seen by each head.
    pub totals: Vec<Vec<usize>>,
}

impl FocusTally {
    pub fn new(n_layers: usize, n_heads: usize) -> Self {
        FocusTally {
            categories: FocusCategory::ALL.to_vec(),
            counts: vec![vec![[0; 6]; n_heads]; n_layers],
            totals: vec![vec![0; n_heads]; n_layers],
        }
    }

    pub fn count(&self, layer: usize, head: usize, category: FocusCategory) -> usize {
        self.counts[layer][head][category as usize]
    }

    /// Per-head counts and the fraction of generated tokens for each category.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,head,category,count,total,fraction\n");
        for (l, row) in self.counts.iter().enumerate() {
            for (h, cells) in row.iter().enumerate() {
                let total = self.totals[l][h];
                for (c, n) in self.categories.iter().zip(cells) {
                    let frac = if total == 0 { 0.0 } else { *n as f64 / total as f64 };
                    writeln!(out, "{l},{h},{},{n},{total},{frac}", c.as_str()).expect("writing to a String");
                }
            }
        }
        out
    }

    /// Adds one decoded example: `trace` step `i` is the attention that
    /// produced `generated[i]`.
    pub fn add(
        &mut self,
        source: &[TokenId],
        reference: &[TokenId],
        generated: &[TokenId],
        trace: &AttentionTrace,
        vocab: &Vocab,
    ) {
        for (step, &y) in trace.steps().iter().zip(generated) {
            for (l, heads) in step.iter().enumerate() {
                for (h, row) in heads.iter().enumerate() {
                    let Some(j) = row.argmax() else { continue };
                    let x = source[j];
                    let copy = x == y;
                    let c = &mut self.counts[l][h];
                    if reference.contains(&x) {
                        c[if copy {
                            FocusCategory::CopySalient
                        } else {
                            FocusCategory::NoncopySalient
                        } as usize] += 1;
                    }
                    if text::is_content_word(vocab.word(x)) {
                        c[if copy {
                            FocusCategory::CopyContent
                        } else {
                            FocusCategory::NoncopyContent
                        } as usize] += 1;
                    }
                    if j == 0 {
                        c[FocusCategory::First as usize] += 1;
                    }
                    if j + 1 == source.len() {
                        c[FocusCategory::Last as usize] += 1;
                    }
                    self.totals[l][h] += 1;
                }
            }
        }
    }
}

/// Unmasked decoding with traces, tallying each head's attendee per
/// generated token.
pub fn attention_focus(
    params: &ModelParams,
    examples: &[Example],
    vocab: &Vocab,
    dp: &DecodeParams,
    threads: usize,
) -> Result<FocusTally> {
    if examples.is_empty() {
        return Err(Error::Input("analysis set is empty".into()));
    }
    let traced = par::try_map(examples, threads, |ex| {
        let mut trace = AttentionTrace::new();
        let hyp = beam_decode(params, &ex.source, dp, CrossAttention::unmasked(), Some(&mut trace))?;
        Ok((hyp, trace))
    })?;
    let cfg = params.config();
    let mut tally = FocusTally::new(cfg.n_dec_layers, cfg.n_heads);
    for (ex, (hyp, trace)) in examples.iter().zip(&traced) {
        tally.add(&ex.source, &ex.reference, hyp.body(), trace, vocab);
    }
    Ok(tally)
}
