//! Oracle saliency labels by iterative longest-common-run alignment.
//!
//! Repeatedly take the longest contiguous token run shared by the source and
//! any remaining reference fragment, mark its source positions salient, and
//! split that fragment around the matched span. Stops when no fragment shares
//! a token with the source. Ties prefer the earliest source start, then the
//! earliest reference start. Source positions are never consumed; only the
//! reference is.

use std::ops::Range;

use crate::vocab::TokenId;

/// One matched run: `len` tokens starting at `source_start` in the source and
/// `reference_start` in the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedRun {
    pub source_start: usize,
    pub reference_start: usize,
    pub len: usize,
}

impl AlignedRun {
    /// Longer first, then earlier source start, then earlier reference start.
    fn better_than(&self, other: &AlignedRun) -> bool {
        let key = |r: &AlignedRun| (std::cmp::Reverse(r.len), r.source_start, r.reference_start);
        key(self) < key(other)
    }
}

/// Longest common run between `source` and `reference[fragment]`.
fn longest_run(source: &[TokenId], reference: &[TokenId], fragment: Range<usize>) -> Option<AlignedRun> {
    let frag = &reference[fragment.clone()];
    let m = frag.len();
    let mut prev = vec![0usize; m + 1];
    let mut cur = vec![0usize; m + 1];
    let mut best: Option<AlignedRun> = None;
    for (i, &s) in source.iter().enumerate() {
        for j in 0..m {
            cur[j + 1] = if s == frag[j] { prev[j] + 1 } else { 0 };
            let len = cur[j + 1];
            if len == 0 {
                continue;
            }
            let run = AlignedRun {
                source_start: i + 1 - len,
                reference_start: fragment.start + j + 1 - len,
                len,
            };
            if best.is_none_or(|b| run.better_than(&b)) {
                best = Some(run);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// The sequence of runs extracted by iterative alignment, in extraction order.
pub fn align_runs(source: &[TokenId], reference: &[TokenId]) -> Vec<AlignedRun> {
    let mut fragments: Vec<Range<usize>> = Vec::new();
    fragments.push(0..reference.len());
    let mut runs = Vec::new();
    loop {
        let mut best: Option<(usize, AlignedRun)> = None;
        for (fi, frag) in fragments.iter().enumerate() {
            if let Some(run) = longest_run(source, reference, frag.clone()) {
                if best.is_none_or(|(_, b)| run.better_than(&b)) {
                    best = Some((fi, run));
                }
            }
        }
        let Some((fi, run)) = best else {
            return runs;
        };
        let frag = fragments.remove(fi);
        let matched = run.reference_start..run.reference_start + run.len;
        let right = matched.end..frag.end;
        let left = frag.start..matched.start;
        for piece in [right, left] {
            if !piece.is_empty() {
                fragments.insert(fi, piece);
            }
        }
        runs.push(run);
    }
}

/// Binary salience labels over the source positions.
pub fn oracle_labels(source: &[TokenId], reference: &[TokenId]) -> Vec<bool> {
    let mut labels = vec![false; source.len()];
    for run in align_runs(source, reference) {
        labels[run.source_start..run.source_start + run.len].fill(true);
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn as_bits(labels: &[bool]) -> Vec<u8> {
        labels.iter().map(|&b| b as u8).collect()
    }

    #[test]
    fn unique_exact_match() {
        // a b c d / b c
        assert_eq!(as_bits(&oracle_labels(&[1, 2, 3, 4], &[2, 3])), vec![0, 1, 1, 0]);
    }

    #[test]
    fn disjoint_vocabulary() {
        assert_eq!(as_bits(&oracle_labels(&[1, 2, 3], &[7, 8, 9])), vec![0, 0, 0]);
    }

    #[test]
    fn prefers_the_longest_run() {
        // a b x a b c / a b c
        assert_eq!(
            as_bits(&oracle_labels(&[1, 2, 9, 1, 2, 3], &[1, 2, 3])),
            vec![0, 0, 0, 1, 1, 1]
        );
    }

    #[test]
    fn splits_fragments_and_keeps_going() {
        // source: p q r s t, reference: s t x p q -> runs "s t" (src 3) and "p q" (src 0)
        let runs = align_runs(&[1, 2, 3, 4, 5], &[4, 5, 9, 1, 2]);
        assert_eq!(runs.len(), 2);
        assert_eq!(
            runs[0],
            AlignedRun {
                source_start: 0,
                reference_start: 3,
                len: 2
            }
        );
        assert_eq!(
            runs[1],
            AlignedRun {
                source_start: 3,
                reference_start: 0,
                len: 2
            }
        );
        assert_eq!(
            as_bits(&oracle_labels(&[1, 2, 3, 4, 5], &[4, 5, 9, 1, 2])),
            vec![1, 1, 0, 1, 1]
        );
    }

    #[test]
    fn ties_break_on_source_then_reference_start() {
        // two length-1 candidates: token 5 at source 0 and token 6 at source 1
        let runs = align_runs(&[5, 6], &[6, 5]);
        assert_eq!(
            runs[0],
            AlignedRun {
                source_start: 0,
                reference_start: 1,
                len: 1
            }
        );
        // same source start, two reference starts
        let runs = align_runs(&[5], &[5, 5]);
        assert_eq!(runs[0].reference_start, 0);
        assert_eq!(runs.len(), 2);
    }

    #[test]
    fn empty_inputs_yield_no_labels() {
        assert!(oracle_labels(&[], &[1]).is_empty());
        assert_eq!(as_bits(&oracle_labels(&[1, 2], &[])), vec![0, 0]);
    }
}
