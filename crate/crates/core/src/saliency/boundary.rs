//! Decision boundaries for turning tagger probabilities into labels.

use serde::{Deserialize, Serialize};

use super::tagger::{predict_saliency, TaggerParams};
use crate::error::{Error, Result};
use crate::tensor::Vector;
use crate::vocab::TokenId;

/// Searched boundaries are `0.10, 0.11, …, 0.40`, stored in hundredths so the
/// grid is exact.
pub const MIN_HUNDREDTHS: u32 = 10;
pub const MAX_HUNDREDTHS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DecisionBoundary(f64);

impl DecisionBoundary {
    pub fn new(value: f64) -> Result<Self> {
        let (lo, hi) = (MIN_HUNDREDTHS as f64 / 100.0, MAX_HUNDREDTHS as f64 / 100.0);
        if !(lo..=hi).contains(&value) {
            return Err(Error::Config(format!("decision boundary {value} outside [{lo}, {hi}]")));
        }
        Ok(DecisionBoundary(value))
    }

    pub fn from_hundredths(h: u32) -> Result<Self> {
        Self::new(h as f64 / 100.0)
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    /// All 31 candidate boundaries in increasing order.
    pub fn grid() -> impl Iterator<Item = DecisionBoundary> {
        (MIN_HUNDREDTHS..=MAX_HUNDREDTHS).map(|h| DecisionBoundary(h as f64 / 100.0))
    }
}

impl TryFrom<f64> for DecisionBoundary {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        DecisionBoundary::new(v)
    }
}

impl From<DecisionBoundary> for f64 {
    fn from(b: DecisionBoundary) -> f64 {
        b.0
    }
}

/// Label `i` is salient iff `probabilities[i] ≥ boundary`.
pub fn threshold_labels(probabilities: &Vector, boundary: DecisionBoundary) -> Vec<bool> {
    probabilities.as_slice().iter().map(|&p| p >= boundary.0).collect()
}

/// Confusion counts over tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl TokenCounts {
    pub fn add(&mut self, predicted: &[bool], gold: &[bool]) {
        for (&p, &g) in predicted.iter().zip(gold) {
            match (p, g) {
                (true, true) => self.true_pos += 1,
                (true, false) => self.false_pos += 1,
                (false, true) => self.false_neg += 1,
                (false, false) => {}
            }
        }
    }

    /// Micro F1; 0 when there are no positives on either side.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.true_pos as f64 / denom as f64
        }
    }
}

/// Boundary maximizing micro-averaged token F1 over `(probabilities, gold)`
/// pairs; ties go to the smaller boundary.
pub fn tune_boundary_from_probabilities(examples: &[(Vector, Vec<bool>)]) -> Result<(DecisionBoundary, f64)> {
    if examples.is_empty() {
        return Err(Error::Input("boundary tuning needs at least one example".into()));
    }
    let mut best: Option<(DecisionBoundary, f64)> = None;
    for b in DecisionBoundary::grid() {
        let mut counts = TokenCounts::default();
        for (probs, gold) in examples {
            counts.add(&threshold_labels(probs, b), gold);
        }
        let f1 = counts.f1();
        if best.is_none_or(|(_, f)| f1 > f) {
            best = Some((b, f1));
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Runs the tagger over `validation` (source, gold labels) and tunes the
/// boundary on its predictions.
pub fn tune_boundary(tp: &TaggerParams, validation: &[(&[TokenId], &[bool])]) -> Result<(DecisionBoundary, f64)> {
    let examples = validation
        .iter()
        .map(|(src, gold)| Ok((predict_saliency(tp, src)?, gold.to_vec())))
        .collect::<Result<Vec<_>>>()?;
    tune_boundary_from_probabilities(&examples)
}
