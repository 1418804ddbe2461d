//! Central finite-difference check of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backprop::{seq2seq_loss, Transposed};
use crate::model::{Layout, ModelConfig, ModelParams};
use crate::saliency::{bce_loss, TaggerParams};
use crate::vocab::TokenId;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// A scalar loss over a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &[f64]) -> f64;
    fn gradient(&self, params: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeResult>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.probes.iter().map(|p| p.relative_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ProbeResult> {
        self.probes
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks the gradient at the given coordinates.
pub fn gradient_check_at(obj: &dyn Objective, params: &[f64], coords: &[usize]) -> GradCheckReport {
    let analytic = obj.gradient(params);
    let mut work = params.to_vec();
    let probes = coords
        .iter()
        .map(|&i| {
            let orig = work[i];
            work[i] = orig + FD_STEP;
            let up = obj.loss(&work);
            work[i] = orig - FD_STEP;
            let down = obj.loss(&work);
            work[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            ProbeResult {
                index: i,
                analytic: analytic[i],
                numeric,
                relative_error: relative_error(analytic[i], numeric),
            }
        })
        .collect();
    GradCheckReport { probes }
}

/// Max relative error over `n_probes` uniformly random coordinates.
pub fn gradient_check(obj: &dyn Objective, params: &[f64], n_probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<usize> = (0..n_probes).map(|_| rng.random_range(0..params.len())).collect();
    gradient_check_at(obj, params, &coords).max_relative_error()
}

/// `n` coordinates spread round-robin over the named tensors of `layout`,
/// a random entry within each, so every kind of weight is exercised.
pub fn stratified_coordinates(layout: &Layout, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let named = layout.named();
    (0..n)
        .map(|k| {
            let slot = named[k % named.len()].1;
            slot.offset + rng.random_range(0..slot.len())
        })
        .collect()
}

/// Mean token cross-entropy of one (source, reference) pair; parameters are
/// the full flat model vector.
pub struct SummarizerObjective {
    pub config: ModelConfig,
    pub source: Vec<TokenId>,
    pub reference: Vec<TokenId>,
}

impl Objective for SummarizerObjective {
    fn loss(&self, params: &[f64]) -> f64 {
        let p = ModelParams::from_parts(self.config, params.to_vec()).expect("valid parameters");
        let n = (self.reference.len() + 1) as f64;
        seq2seq_loss(&p, None, &self.source, &self.reference, 1.0 / n, None)
            .expect("loss evaluates")
            .nll
            / n
    }

    fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let p = ModelParams::from_parts(self.config, params.to_vec()).expect("valid parameters");
        let wt = Transposed::new(&p);
        let mut g = vec![0.0; params.len()];
        let n = (self.reference.len() + 1) as f64;
        seq2seq_loss(&p, Some(&wt), &self.source, &self.reference, 1.0 / n, Some(&mut g)).expect("loss evaluates");
        g
    }
}

/// Mean token BCE of the tagger. Parameters are the MLP values followed by
/// the full encoder-model vector when `train_encoder` is set, the MLP alone
/// otherwise.
pub struct TaggerObjective {
    pub base: TaggerParams,
    pub train_encoder: bool,
    pub source: Vec<TokenId>,
    pub labels: Vec<bool>,
}

impl TaggerObjective {
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.base.mlp.clone();
        if self.train_encoder {
            v.extend(self.base.encoder.data());
        }
        v
    }

    fn unpack(&self, params: &[f64]) -> TaggerParams {
        let n_mlp = self.base.mlp.len();
        let encoder = if self.train_encoder {
            ModelParams::from_parts(*self.base.encoder.config(), params[n_mlp..].to_vec()).expect("valid parameters")
        } else {
            self.base.encoder.clone()
        };
        TaggerParams::with_mlp(encoder, self.base.hidden(), params[..n_mlp].to_vec()).expect("valid MLP")
    }
}

impl Objective for TaggerObjective {
    fn loss(&self, params: &[f64]) -> f64 {
        let tp = self.unpack(params);
        let n = self.source.len() as f64;
        bce_loss(&tp, None, &self.source, &self.labels, 1.0, None, None).expect("loss evaluates") / n
    }

    fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let tp = self.unpack(params);
        let n = self.source.len() as f64;
        let mut mlp_grad = vec![0.0; tp.mlp.len()];
        let mut enc_grad = vec![0.0; tp.encoder.data().len()];
        let wt = self.train_encoder.then(|| Transposed::new(&tp.encoder));
        bce_loss(
            &tp,
            wt.as_ref(),
            &self.source,
            &self.labels,
            1.0 / n,
            Some(&mut mlp_grad),
            self.train_encoder.then_some(enc_grad.as_mut_slice()),
        )
        .expect("loss evaluates");
        if self.train_encoder {
            mlp_grad.extend(enc_grad);
        }
        mlp_grad
    }
}
