//! Trains a small summarizer on a synthetic corpus, prints the training log
//! and saves the best checkpoint.
//!
//! Usage: `cargo run --release --example train_summarizer [checkpoint-path]`

use headmask::corpus::{generate_corpus, GeneratorSpec, Span};
use headmask::model::{ModelConfig, ModelParams};
use headmask::train::{train_summarizer, TrainConfig};

fn main() -> anyhow::Result<()> {
    let spec = GeneratorSpec {
        n_train: 600,
        n_validation: 60,
        n_analysis: 0,
        n_test: 0,
        source_len: Span::new(12, 24),
        n_salient_spans: Span::new(1, 2),
        span_len: Span::new(2, 4),
        vocab_size: 100,
        ..GeneratorSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    let cfg = ModelConfig {
        vocab_size: corpus.vocab.len(),
        d_model: 32,
        d_ff: 64,
        n_enc_layers: 2,
        n_dec_layers: 2,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 8,
        seed: 1,
        ..TrainConfig::summarizer()
    };
    let trained = train_summarizer(&corpus, cfg, &tc)?;

    println!("{:>6} {:>11} {:>9} {:>9}", "step", "split", "loss", "accuracy");
    for r in &trained.log {
        println!("{:>6} {:>11} {:>9.4} {:>9.4}", r.step, r.split, r.loss, r.metric);
    }
    println!(
        "\nbest epoch {} of {} (validation loss {:.4})",
        trained.best_epoch, trained.epochs_run, trained.best_validation_loss
    );

    let path = std::env::args().nth(1).unwrap_or_else(|| "summarizer.ckpt".into());
    trained.params.save(path.as_ref())?;
    let back = ModelParams::load(path.as_ref())?;
    println!("saved {path} (fingerprint {})", &back.fingerprint()[..16]);
    Ok(())
}
