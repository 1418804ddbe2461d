//! Greedy choice of the heads to mask at inference, scored with tagger
//! (system) masks.
//!
//! Within each layer heads are ranked by their individual oracle-mask
//! ROUGE-1 effect; prefixes of that ranking growing by `block` heads are
//! evaluated with system masks, and the best (layer, prefix) by
//! `R1 F1 + R2 F1` wins. Ties go to the lower layer, then the smaller prefix.

use serde::{Deserialize, Serialize};

use crate::analysis::{decode_set, masks_from_labels, Attention, ContentSelectionEffect};
use crate::corpus::Example;
use crate::decode::DecodeParams;
use crate::error::{Error, Result};
use crate::model::{HeadMaskConfig, HeadMaskVector, ModelParams};
use crate::par;
use crate::rouge::RougeScores;
use crate::saliency::{predict_saliency, threshold_labels, DecisionBoundary, TaggerParams};

/// Heads to mask within one decoder layer; the on-disk mask format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerMask {
    pub layer: usize,
    pub heads: Vec<usize>,
}

impl LayerMask {
    pub fn to_config(&self, n_layers: usize, n_heads: usize) -> Result<HeadMaskConfig> {
        if self.layer >= n_layers {
            return Err(Error::Config(format!(
                "mask layer {} but the decoder has {n_layers}",
                self.layer
            )));
        }
        if self.heads.is_empty() {
            return Err(Error::Config("mask selects no heads".into()));
        }
        if let Some(h) = self.heads.iter().find(|&&h| h >= n_heads) {
            return Err(Error::Config(format!("mask head {h} but layers have {n_heads}")));
        }
        Ok(HeadMaskConfig::heads_in_layer(
            n_layers,
            n_heads,
            self.layer,
            &self.heads,
        ))
    }
}

/// Tagger-predicted labels at `boundary` for each example.
pub fn system_labels(
    tp: &TaggerParams,
    boundary: DecisionBoundary,
    examples: &[Example],
    threads: usize,
) -> Result<Vec<Vec<bool>>> {
    par::try_map(examples, threads, |ex| {
        Ok(threshold_labels(&predict_saliency(tp, &ex.source)?, boundary))
    })
}

/// System masks; `None` where the tagger selects nothing.
pub fn system_masks(
    tp: &TaggerParams,
    boundary: DecisionBoundary,
    examples: &[Example],
    threads: usize,
) -> Result<Vec<Option<HeadMaskVector>>> {
    let labels = system_labels(tp, boundary, examples, threads)?;
    Ok(masks_from_labels(labels.iter().map(Vec::as_slice)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub layer: usize,
    pub k: usize,
    pub heads: Vec<usize>,
    pub scores: RougeScores,
    /// `R1 F1 + R2 F1`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSelectionResult {
    pub layer: usize,
    /// Sorted head indices.
    pub heads: Vec<usize>,
    pub score: f64,
    pub scores: RougeScores,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Examples per evaluation decoded unmasked because the tagger selected
    /// nothing.
    pub fallbacks: usize,
}

impl HeadSelectionResult {
    pub fn mask(&self) -> LayerMask {
        LayerMask {
            layer: self.layer,
            heads: self.heads.clone(),
        }
    }
}

/// Prefix sizes `block, 2·block, …`, ending at `n_heads`.
pub fn block_sizes(n_heads: usize, block: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (1..).map(|i| i * block).take_while(|&k| k < n_heads).collect();
    ks.push(n_heads);
    ks
}

/// Evaluates `heads` of `layer` under the given per-example masks.
pub fn evaluate_subset(
    params: &ModelParams,
    examples: &[Example],
    masks: &[Option<HeadMaskVector>],
    layer: usize,
    heads: &[usize],
    dp: &DecodeParams,
    threads: usize,
) -> Result<(RougeScores, usize)> {
    let cfg = params.config();
    let mask_cfg = LayerMask {
        layer,
        heads: heads.to_vec(),
    }
    .to_config(cfg.n_dec_layers, cfg.n_heads)?;
    let run = decode_set(
        params,
        examples,
        Attention::Masked {
            mask_cfg: &mask_cfg,
            masks,
        },
        dp,
        threads,
    )?;
    Ok((run.mean, run.fallbacks))
}

#[allow(clippy::too_many_arguments)]
pub fn greedy_select_heads(
    params: &ModelParams,
    tagger: &TaggerParams,
    boundary: DecisionBoundary,
    examples: &[Example],
    effect: &ContentSelectionEffect,
    block: usize,
    dp: &DecodeParams,
    threads: usize,
) -> Result<HeadSelectionResult> {
    if examples.is_empty() {
        return Err(Error::Input("analysis set is empty".into()));
    }
    if block == 0 {
        return Err(Error::Config("selection block must be at least 1".into()));
    }
    let cfg = params.config();
    if effect.n_layers() != cfg.n_dec_layers || effect.n_heads() != cfg.n_heads {
        return Err(Error::Shape("effect grid does not match the model".into()));
    }
    let masks = system_masks(tagger, boundary, examples, threads)?;
    let mut trajectory = Vec::new();
    let mut fallbacks = 0;
    for layer in 0..cfg.n_dec_layers {
        let order = effect.head_order(layer);
        for k in block_sizes(cfg.n_heads, block) {
            let mut heads = order[..k].to_vec();
            heads.sort_unstable();
            let (scores, fb) = evaluate_subset(params, examples, &masks, layer, &heads, dp, threads)?;
            fallbacks = fb;
            trajectory.push(TrajectoryPoint {
                layer,
                k,
                heads,
                score: scores.r1_plus_r2(),
                scores,
            });
        }
    }
    // Trajectory order is (layer, k) ascending, so the first maximum wins ties.
    let best = trajectory
        .iter()
        .fold(None::<&TrajectoryPoint>, |best, p| match best {
            Some(b) if b.score >= p.score => Some(b),
            _ => Some(p),
        })
        .expect("at least one evaluation");
    Ok(HeadSelectionResult {
        layer: best.layer,
        heads: best.heads.clone(),
        score: best.score,
        scores: best.scores,
        trajectory: trajectory.clone(),
        fallbacks,
    })
}
