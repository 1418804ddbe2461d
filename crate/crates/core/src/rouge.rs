//! ROUGE-1/2 (clipped n-gram overlap) and ROUGE-L (longest common
//! subsequence), without stemming or stopword removal. Corpus scores are the
//! mean of per-pair scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }

    fn from_counts(overlap: usize, n_candidate: usize, n_reference: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Prf::new(ratio(overlap, n_candidate), ratio(overlap, n_reference))
    }

    fn sub(&self, other: &Prf) -> Prf {
        Prf {
            precision: self.precision - other.precision,
            recall: self.recall - other.recall,
            f1: self.f1 - other.f1,
        }
    }

    fn add(&self, other: &Prf) -> Prf {
        Prf {
            precision: self.precision + other.precision,
            recall: self.recall + other.recall,
            f1: self.f1 + other.f1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub r1: Prf,
    pub r2: Prf,
    pub rl: Prf,
}

impl RougeScores {
    /// `R1 F1 + R2 F1`, the head-selection objective.
    pub fn r1_plus_r2(&self) -> f64 {
        self.r1.f1 + self.r2.f1
    }

    /// Componentwise difference; entries may be negative.
    pub fn minus(&self, other: &RougeScores) -> RougeScores {
        RougeScores {
            r1: self.r1.sub(&other.r1),
            r2: self.r2.sub(&other.r2),
            rl: self.rl.sub(&other.rl),
        }
    }

    pub fn plus(&self, other: &RougeScores) -> RougeScores {
        RougeScores {
            r1: self.r1.add(&other.r1),
            r2: self.r2.add(&other.r2),
            rl: self.rl.add(&other.rl),
        }
    }
}

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped counts.
///
/// # Panics
/// If `n == 0`.
pub fn rouge_n<T: Ord>(candidate: &[T], reference: &[T], n: usize) -> Prf {
    assert!(n >= 1, "n-gram order must be at least 1");
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    let total = |m: &BTreeMap<&[T], usize>| m.values().sum::<usize>();
    Prf::from_counts(overlap, total(&cand), total(&refc))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn rouge<T: Ord>(candidate: &[T], reference: &[T]) -> RougeScores {
    RougeScores {
        r1: rouge_n(candidate, reference, 1),
        r2: rouge_n(candidate, reference, 2),
        rl: rouge_l(candidate, reference),
    }
}

/// Mean of per-pair scores over `(candidate, reference)` pairs.
pub fn corpus_rouge<T: Ord, C: AsRef<[T]>, R: AsRef<[T]>>(pairs: &[(C, R)]) -> Result<RougeScores> {
    if pairs.is_empty() {
        return Err(Error::Input("corpus ROUGE needs at least one pair".into()));
    }
    let scores: Vec<RougeScores> = pairs.iter().map(|(c, r)| rouge(c.as_ref(), r.as_ref())).collect();
    Ok(mean_scores(&scores))
}

/// Componentwise mean, summed in order.
pub fn mean_scores(scores: &[RougeScores]) -> RougeScores {
    let n = scores.len().max(1) as f64;
    let total = scores.iter().fold(RougeScores::default(), |acc, s| acc.plus(s));
    let scale = |p: Prf| Prf {
        precision: p.precision / n,
        recall: p.recall / n,
        f1: p.f1 / n,
    };
    RougeScores {
        r1: scale(total.r1),
        r2: scale(total.r2),
        rl: scale(total.rl),
    }
}
