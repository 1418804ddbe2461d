//! Trainers for the summarizer and the saliency tagger.
//!
//! Both loops shuffle the training split each epoch with a seeded RNG, take
//! Adam steps on the mean per-token loss of each batch, and keep the
//! parameters from the epoch with the lowest validation loss. Training stops
//! once `patience` consecutive epochs fail to improve on it.

mod adam;
pub(crate) mod backprop;
mod gradcheck;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use backprop::SeqStats;
pub use gradcheck::{
    gradient_check, gradient_check_at, relative_error, stratified_coordinates, GradCheckReport, Objective, ProbeResult,
    SummarizerObjective, TaggerObjective, FD_STEP, REL_ERROR_FLOOR,
};

use crate::corpus::{Corpus, Example, Split};
use crate::error::{Error, Result};
use crate::model::{encoder_forward, ModelConfig, ModelParams};
use crate::saliency::{bce_loss, bce_on_states, probabilities_on_states, TaggerParams, TokenCounts};
use backprop::{seq2seq_loss, Transposed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Not serialized; the pipeline derives it from the run seed.
    #[serde(skip)]
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Tagger only: keep the encoder fixed and train the MLP head alone.
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 16,
            max_epochs: 20,
            patience: 2,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            freeze_encoder: true,
        }
    }
}

impl TrainConfig {
    pub fn summarizer() -> Self {
        Self::default()
    }

    pub fn tagger() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config(
                "adam betas must lie in [0, 1) and eps be positive".into(),
            ));
        }
        Ok(())
    }

    fn optimizer(&self, n_params: usize) -> Adam {
        Adam::new(n_params, self.learning_rate, self.beta1, self.beta2, self.eps)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub split: String,
    pub loss: f64,
    /// Token accuracy for the summarizer, token F1 at 0.5 for the tagger.
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained<P> {
    pub params: P,
    pub log: Vec<LogRecord>,
    /// Epoch (1-based) of the returned parameters; 0 means the initialization.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub epochs_run: usize,
    pub steps: usize,
}

pub fn write_log(log: &[LogRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Tracks the best validation loss and decides when to stop.
struct EarlyStopping<P> {
    best: P,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
    patience: usize,
}

impl<P: Clone> EarlyStopping<P> {
    fn new(init: P, init_loss: f64, patience: usize) -> Self {
        EarlyStopping {
            best: init,
            best_loss: init_loss,
            best_epoch: 0,
            stale: 0,
            patience,
        }
    }

    /// Records an epoch; returns true when training should stop.
    fn observe(&mut self, epoch: usize, loss: f64, params: &P) -> bool {
        if loss < self.best_loss {
            self.best = params.clone();
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn diverged(epoch: usize, step: usize, what: &str) -> Error {
    Error::Training {
        epoch,
        step,
        reason: format!("non-finite {what}"),
    }
}

fn require_split(examples: &[Example], split: Split) -> Result<&[Example]> {
    if examples.is_empty() {
        return Err(Error::Input(format!("{split} split is empty")));
    }
    Ok(examples)
}

/// Mean per-token NLL and token accuracy of `params` on `examples`.
pub fn evaluate_summarizer(params: &ModelParams, examples: &[Example]) -> Result<(f64, f64)> {
    let mut total = SeqStats::default();
    for ex in examples {
        let s = seq2seq_loss(params, None, &ex.source, &ex.reference, 1.0, None)?;
        total.nll += s.nll;
        total.tokens += s.tokens;
        total.correct += s.correct;
    }
    let n = total.tokens.max(1) as f64;
    Ok((total.nll / n, total.correct as f64 / n))
}

/// Trains a fresh summarizer (initialized from `tc.seed`) on the corpus's
/// train split, selecting on its validation split.
pub fn train_summarizer(corpus: &Corpus, cfg: ModelConfig, tc: &TrainConfig) -> Result<Trained<ModelParams>> {
    tc.validate()?;
    cfg.validate()?;
    if corpus.vocab.len() > cfg.vocab_size {
        return Err(Error::Config(format!(
            "corpus vocabulary has {} entries but the model only {}",
            corpus.vocab.len(),
            cfg.vocab_size
        )));
    }
    let train = corpus.split(Split::Train);
    let val = corpus.split(Split::Validation);
    let init = ModelParams::init(cfg, tc.seed)?;
    train_summarizer_from(
        init,
        require_split(&train, Split::Train)?,
        require_split(&val, Split::Validation)?,
        tc,
    )
}

/// Continues training `init` on explicit train and validation examples.
pub fn train_summarizer_from(
    init: ModelParams,
    train: &[Example],
    val: &[Example],
    tc: &TrainConfig,
) -> Result<Trained<ModelParams>> {
    tc.validate()?;
    let mut log = Vec::new();
    let (init_loss, init_acc) = evaluate_summarizer(&init, val)?;
    log.push(LogRecord {
        step: 0,
        split: "validation".into(),
        loss: init_loss,
        metric: init_acc,
    });
    let mut params = init.clone();
    let mut stopper = EarlyStopping::new(init, init_loss, tc.patience);
    let mut opt = tc.optimizer(params.data().len());
    let mut grad = vec![0.0; params.data().len()];
    let mut step = 0;
    let mut epochs_run = 0;
    for epoch in 1..=tc.max_epochs {
        epochs_run = epoch;
        let order = epoch_order(train.len(), tc.seed, epoch);
        let mut epoch_stats = SeqStats::default();
        for batch in order.chunks(tc.batch_size) {
            step += 1;
            let tokens: usize = batch.iter().map(|&i| train[i].reference.len() + 1).sum();
            let scale = 1.0 / tokens as f64;
            grad.fill(0.0);
            let wt = Transposed::new(&params);
            let mut batch_nll = 0.0;
            for &i in batch {
                let ex = &train[i];
                let s = seq2seq_loss(&params, Some(&wt), &ex.source, &ex.reference, scale, Some(&mut grad))?;
                batch_nll += s.nll;
                epoch_stats.tokens += s.tokens;
                epoch_stats.correct += s.correct;
            }
            if !batch_nll.is_finite() {
                return Err(diverged(epoch, step, "loss"));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged(epoch, step, "gradient"));
            }
            epoch_stats.nll += batch_nll;
            opt.step(params.data_mut(), &grad);
        }
        let n = epoch_stats.tokens.max(1) as f64;
        log.push(LogRecord {
            step,
            split: "train".into(),
            loss: epoch_stats.nll / n,
            metric: epoch_stats.correct as f64 / n,
        });
        let (val_loss, val_acc) = evaluate_summarizer(&params, val)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, step, "validation loss"));
        }
        log.push(LogRecord {
            step,
            split: "validation".into(),
            loss: val_loss,
            metric: val_acc,
        });
        if stopper.observe(epoch, val_loss, &params) {
            break;
        }
    }
    Ok(Trained {
        params: stopper.best,
        log,
        best_epoch: stopper.best_epoch,
        best_validation_loss: stopper.best_loss,
        epochs_run,
        steps: step,
    })
}

/// A source with its gold labels and, for a frozen encoder, cached states.
struct TaggerItem<'a> {
    source: &'a [crate::vocab::TokenId],
    labels: &'a [bool],
    states: Option<Vec<f64>>,
}

fn tagger_items<'a>(tp: &TaggerParams, examples: &'a [Example], cache_states: bool) -> Result<Vec<TaggerItem<'a>>> {
    examples
        .iter()
        .map(|ex| {
            if ex.labels.len() != ex.source.len() {
                return Err(Error::Input(format!("example {} has no saliency labels", ex.id)));
            }
            let states = if cache_states {
                Some(encoder_forward(&tp.encoder, &ex.source)?.0)
            } else {
                None
            };
            Ok(TaggerItem {
                source: &ex.source,
                labels: &ex.labels,
                states,
            })
        })
        .collect()
}

fn item_states(tp: &TaggerParams, item: &TaggerItem) -> Result<Vec<f64>> {
    match &item.states {
        Some(s) => Ok(s.clone()),
        None => Ok(encoder_forward(&tp.encoder, item.source)?.0),
    }
}

/// Mean per-token BCE and token F1 at probability 0.5.
fn evaluate_tagger_items(tp: &TaggerParams, items: &[TaggerItem]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut tokens = 0;
    let mut counts = TokenCounts::default();
    for item in items {
        let states = item_states(tp, item)?;
        loss += bce_on_states(tp, &states, item.labels, 1.0, None, None)?;
        tokens += item.labels.len();
        let predicted: Vec<bool> = probabilities_on_states(tp, &states).iter().map(|&p| p >= 0.5).collect();
        counts.add(&predicted, item.labels);
    }
    Ok((loss / tokens.max(1) as f64, counts.f1()))
}

/// Mean per-token BCE and token F1 at probability 0.5 over labelled examples.
pub fn evaluate_tagger(tp: &TaggerParams, examples: &[Example]) -> Result<(f64, f64)> {
    evaluate_tagger_items(tp, &tagger_items(tp, examples, false)?)
}

/// Trains a tagger head (hidden width `hidden`) on top of `encoder`, using the
/// labels carried by each example. With `tc.freeze_encoder` unset the encoder
/// is fine-tuned as well.
pub fn train_tagger(
    encoder: &ModelParams,
    train: &[Example],
    val: &[Example],
    hidden: usize,
    tc: &TrainConfig,
) -> Result<Trained<TaggerParams>> {
    tc.validate()?;
    require_split(train, Split::Train)?;
    require_split(val, Split::Validation)?;
    let init = TaggerParams::init(encoder.clone(), hidden, tc.seed)?;
    let frozen = tc.freeze_encoder;
    let train_items = tagger_items(&init, train, frozen)?;
    let val_items = tagger_items(&init, val, frozen)?;

    let mut log = Vec::new();
    let (init_loss, init_f1) = evaluate_tagger_items(&init, &val_items)?;
    log.push(LogRecord {
        step: 0,
        split: "validation".into(),
        loss: init_loss,
        metric: init_f1,
    });
    let mut tp = init.clone();
    let mut stopper = EarlyStopping::new(init, init_loss, tc.patience);
    let mut mlp_opt = tc.optimizer(tp.mlp.len());
    let mut enc_opt = (!frozen).then(|| tc.optimizer(tp.encoder.data().len()));
    let mut mlp_grad = vec![0.0; tp.mlp.len()];
    let mut enc_grad = vec![0.0; if frozen { 0 } else { tp.encoder.data().len() }];
    let mut step = 0;
    let mut epochs_run = 0;
    for epoch in 1..=tc.max_epochs {
        epochs_run = epoch;
        let order = epoch_order(train_items.len(), tc.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0;
        let mut counts = TokenCounts::default();
        for batch in order.chunks(tc.batch_size) {
            step += 1;
            let tokens: usize = batch.iter().map(|&i| train_items[i].labels.len()).sum();
            let scale = 1.0 / tokens as f64;
            mlp_grad.fill(0.0);
            enc_grad.fill(0.0);
            let wt = (!frozen).then(|| Transposed::new(&tp.encoder));
            let mut batch_loss = 0.0;
            for &i in batch {
                let item = &train_items[i];
                batch_loss += match &item.states {
                    Some(states) => {
                        let p: Vec<bool> = probabilities_on_states(&tp, states).iter().map(|&p| p >= 0.5).collect();
                        counts.add(&p, item.labels);
                        bce_on_states(&tp, states, item.labels, scale, Some(&mut mlp_grad), None)?
                    }
                    None => bce_loss(
                        &tp,
                        wt.as_ref(),
                        item.source,
                        item.labels,
                        scale,
                        Some(&mut mlp_grad),
                        Some(&mut enc_grad),
                    )?,
                };
            }
            if !batch_loss.is_finite() {
                return Err(diverged(epoch, step, "loss"));
            }
            if mlp_grad.iter().chain(&enc_grad).any(|g| !g.is_finite()) {
                return Err(diverged(epoch, step, "gradient"));
            }
            epoch_loss += batch_loss;
            epoch_tokens += tokens;
            mlp_opt.step(&mut tp.mlp, &mlp_grad);
            if let Some(opt) = enc_opt.as_mut() {
                opt.step(tp.encoder.data_mut(), &enc_grad);
            }
        }
        log.push(LogRecord {
            step,
            split: "train".into(),
            loss: epoch_loss / epoch_tokens.max(1) as f64,
            metric: counts.f1(),
        });
        let (val_loss, val_f1) = evaluate_tagger_items(&tp, &val_items)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, step, "validation loss"));
        }
        log.push(LogRecord {
            step,
            split: "validation".into(),
            loss: val_loss,
            metric: val_f1,
        });
        if stopper.observe(epoch, val_loss, &tp) {
            break;
        }
    }
    Ok(Trained {
        params: stopper.best,
        log,
        best_epoch: stopper.best_epoch,
        best_validation_loss: stopper.best_loss,
        epochs_run,
        steps: step,
    })
}
