//! Head masking: the additive `{0, −∞}` vector applied inside the softmax of
//! selected encoder-decoder attention heads, and the attention primitive that
//! consumes it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Matrix, Vector};

/// Additive mask over source positions: 0 where the token is salient, −∞
/// elsewhere. At least one position is always attendable.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaskVector {
    values: Vector,
}

impl HeadMaskVector {
    pub fn from_labels(labels: &[bool]) -> Result<Self> {
        if !labels.iter().any(|&l| l) {
            return Err(Error::AllMasked);
        }
        let values = labels
            .iter()
            .map(|&salient| if salient { 0.0 } else { f64::NEG_INFINITY })
            .collect::<Vec<_>>();
        Ok(HeadMaskVector {
            values: Vector::from(values),
        })
    }

    /// Every position salient.
    pub fn all_salient(len: usize) -> Self {
        HeadMaskVector {
            values: Vector::zeros(len),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Vector {
        &self.values
    }

    pub fn is_salient(&self, i: usize) -> bool {
        self.values[i] == 0.0
    }
}

/// Which encoder-decoder attention heads receive the mask, indexed
/// `[decoder layer][head]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadMaskConfig {
    active: Vec<Vec<bool>>,
}

impl HeadMaskConfig {
    /// Zero-layer config; means "no active heads" for any model shape.
    pub(crate) const fn empty() -> Self {
        HeadMaskConfig { active: Vec::new() }
    }

    pub fn none(n_layers: usize, n_heads: usize) -> Self {
        HeadMaskConfig {
            active: vec![vec![false; n_heads]; n_layers],
        }
    }

    pub fn all(n_layers: usize, n_heads: usize) -> Self {
        HeadMaskConfig {
            active: vec![vec![true; n_heads]; n_layers],
        }
    }

    pub fn single(n_layers: usize, n_heads: usize, layer: usize, head: usize) -> Self {
        Self::heads_in_layer(n_layers, n_heads, layer, &[head])
    }

    pub fn heads_in_layer(n_layers: usize, n_heads: usize, layer: usize, heads: &[usize]) -> Self {
        let mut cfg = Self::none(n_layers, n_heads);
        for &h in heads {
            cfg.active[layer][h] = true;
        }
        cfg
    }

    pub fn from_matrix(active: Vec<Vec<bool>>) -> Result<Self> {
        let width = active.first().map_or(0, Vec::len);
        if active.is_empty() || width == 0 || active.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("head mask config must be a nonempty rectangle".into()));
        }
        Ok(HeadMaskConfig { active })
    }

    pub fn n_layers(&self) -> usize {
        self.active.len()
    }

    pub fn n_heads(&self) -> usize {
        self.active.first().map_or(0, Vec::len)
    }

    pub fn is_active(&self, layer: usize, head: usize) -> bool {
        self.active[layer][head]
    }

    pub fn set(&mut self, layer: usize, head: usize, on: bool) {
        self.active[layer][head] = on;
    }

    pub fn any_active(&self) -> bool {
        self.active.iter().flatten().any(|&a| a)
    }

    pub fn active(&self) -> &[Vec<bool>] {
        &self.active
    }
}

/// Scaled dot-product attention for one query and one head:
/// `softmax(q Kᵀ / √d_k + m + m̃) V`. Returns `(output, weights)`.
pub fn attention(
    q: &Vector,
    keys: &Matrix,
    values: &Matrix,
    m: &Vector,
    m_tilde: Option<&HeadMaskVector>,
) -> Result<(Vector, Vector)> {
    let n = keys.rows();
    let dk = keys.cols();
    if values.rows() != n || m.len() != n || q.len() != dk {
        return Err(Error::Shape(format!(
            "query {}, keys {}x{}, values {}x{}, mask {}",
            q.len(),
            n,
            dk,
            values.rows(),
            values.cols(),
            m.len()
        )));
    }
    if let Some(mt) = m_tilde {
        if mt.len() != n {
            return Err(Error::Shape(format!(
                "head mask of length {} for {} positions",
                mt.len(),
                n
            )));
        }
    }
    let mut weights = vec![0.0; n];
    let mut out = vec![0.0; values.cols()];
    let masks: Vec<&[f64]> = std::iter::once(m.as_slice())
        .chain(m_tilde.map(|mt| mt.values().as_slice()))
        .collect();
    attention_row(
        q.as_slice(),
        HeadView::new(keys.data(), dk, 0, dk),
        HeadView::new(values.data(), values.cols(), 0, values.cols()),
        n,
        &masks,
        &mut weights,
        &mut out,
    )?;
    Ok((Vector::from(out), Vector::from(weights)))
}

/// One head's column block inside a row-major `rows × stride` buffer.
#[derive(Clone, Copy)]
pub(crate) struct HeadView<'a> {
    data: &'a [f64],
    stride: usize,
    offset: usize,
    width: usize,
}

impl<'a> HeadView<'a> {
    pub(crate) fn new(data: &'a [f64], stride: usize, offset: usize, width: usize) -> Self {
        HeadView {
            data,
            stride,
            offset,
            width,
        }
    }

    #[inline]
    pub(crate) fn row(&self, j: usize) -> &'a [f64] {
        let start = j * self.stride + self.offset;
        &self.data[start..start + self.width]
    }
}

/// Attention weights of `q` against the first `n` rows of `keys`, with the
/// additive masks summed in order, then the weighted sum of `values` into
/// `out` (overwritten).
pub(crate) fn attention_row(
    q: &[f64],
    keys: HeadView<'_>,
    values: HeadView<'_>,
    n: usize,
    masks: &[&[f64]],
    weights: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    attention_weights(q, keys, n, masks, weights)?;
    weighted_sum(&weights[..n], values, out);
    Ok(())
}

pub(crate) fn attention_weights(
    q: &[f64],
    keys: HeadView<'_>,
    n: usize,
    masks: &[&[f64]],
    weights: &mut [f64],
) -> Result<()> {
    let scale = 1.0 / (q.len() as f64).sqrt();
    for (j, w) in weights[..n].iter_mut().enumerate() {
        let mut s = tensor::dot(q, keys.row(j)) * scale;
        for m in masks {
            s += m[j];
        }
        *w = s;
    }
    tensor::softmax_in_place(&mut weights[..n])
}

pub(crate) fn weighted_sum(weights: &[f64], values: HeadView<'_>, out: &mut [f64]) {
    out.fill(0.0);
    for (j, &w) in weights.iter().enumerate() {
        tensor::axpy(w, values.row(j), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vector, Matrix, Matrix) {
        let q = Vector::from(vec![0.3, -1.2]);
        let k = Matrix::from_rows(&[vec![1.0, 0.5], vec![-0.2, 0.9], vec![0.7, -0.4]]).unwrap();
        let v = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]).unwrap();
        (q, k, v)
    }

    #[test]
    fn labels_build_zero_and_neg_inf() {
        let m = HeadMaskVector::from_labels(&[true, false, true]).unwrap();
        assert_eq!(m.values().as_slice(), &[0.0, f64::NEG_INFINITY, 0.0]);
        assert!(matches!(
            HeadMaskVector::from_labels(&[false, false]),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn masked_position_gets_exact_zero_weight() {
        let (q, k, v) = sample();
        let mt = HeadMaskVector::from_labels(&[true, false, true]).unwrap();
        let (_, w) = attention(&q, &k, &v, &Vector::zeros(3), Some(&mt)).unwrap();
        assert_eq!(w[1], 0.0);
        assert!((w.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_mask_is_bit_identical_to_none() {
        let (q, k, v) = sample();
        let m = Vector::zeros(3);
        let plain = attention(&q, &k, &v, &m, None).unwrap();
        let masked = attention(&q, &k, &v, &m, Some(&HeadMaskVector::all_salient(3))).unwrap();
        assert_eq!(plain, masked);
    }

    #[test]
    fn singleton_returns_the_row() {
        let q = Vector::from(vec![0.4, 0.1]);
        let k = Matrix::from_rows(&[vec![2.0, -1.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![3.5, -0.5, 9.0]]).unwrap();
        let (out, w) = attention(&q, &k, &v, &Vector::zeros(1), None).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
        assert_eq!(out.as_slice(), v.row(0));
    }

    #[test]
    fn combined_masks_can_block_everything() {
        let (q, k, v) = sample();
        let m = Vector::from(vec![0.0, 0.0, f64::NEG_INFINITY]);
        let mt = HeadMaskVector::from_labels(&[false, false, true]).unwrap();
        assert!(matches!(attention(&q, &k, &v, &m, Some(&mt)), Err(Error::AllMasked)));
    }

    #[test]
    fn shape_errors() {
        let (q, k, v) = sample();
        assert!(matches!(
            attention(&q, &k, &v, &Vector::zeros(2), None),
            Err(Error::Shape(_))
        ));
        let mt = HeadMaskVector::all_salient(2);
        assert!(matches!(
            attention(&q, &k, &v, &Vector::zeros(3), Some(&mt)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mask_config_helpers() {
        let c = HeadMaskConfig::heads_in_layer(4, 4, 2, &[0, 3]);
        assert!(c.is_active(2, 0) && c.is_active(2, 3) && !c.is_active(1, 0));
        assert!(c.any_active());
        assert!(!HeadMaskConfig::none(4, 4).any_active());
        assert!(HeadMaskConfig::from_matrix(vec![vec![true], vec![]]).is_err());
    }
}
