//! Trains the saliency tagger on top of a summarizer's encoder, tunes its
//! decision boundary and tags a held-out source.

use headmask::corpus::{generate_corpus, GeneratorSpec, Span, Split};
use headmask::model::ModelConfig;
use headmask::saliency::{predict_saliency, threshold_labels, tune_boundary};
use headmask::train::{train_summarizer, train_tagger, TrainConfig};

fn main() -> anyhow::Result<()> {
    let spec = GeneratorSpec {
        n_train: 600,
        n_validation: 60,
        n_analysis: 0,
        n_test: 2,
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
    let summarizer = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 6,
        seed: 3,
        ..TrainConfig::summarizer()
    };
    let model = train_summarizer(&corpus, cfg, &summarizer)?.params;

    let (train, val) = (corpus.split(Split::Train), corpus.split(Split::Validation));
    let tagger_tc = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 10,
        seed: 4,
        ..TrainConfig::tagger()
    };
    let tagger = train_tagger(&model, &train, &val, 32, &tagger_tc)?;
    println!(
        "tagger: best epoch {}, validation BCE {:.4}",
        tagger.best_epoch, tagger.best_validation_loss
    );

    let pairs: Vec<(&[u32], &[bool])> = val.iter().map(|e| (e.source.as_slice(), e.labels.as_slice())).collect();
    let (boundary, f1) = tune_boundary(&tagger.params, &pairs)?;
    println!(
        "decision boundary {:.2}, validation token F1 {f1:.4}\n",
        boundary.value()
    );

    for ex in corpus.split(Split::Test) {
        let probs = predict_saliency(&tagger.params, &ex.source)?;
        let predicted = threshold_labels(&probs, boundary);
        for ((w, &gold), (&pred, p)) in corpus
            .words(&ex.source)
            .iter()
            .zip(&ex.labels)
            .zip(predicted.iter().zip(probs.as_slice()))
        {
            let mark = match (pred, gold) {
                (true, true) => "hit",
                (true, false) => "false alarm",
                (false, true) => "missed",
                (false, false) => "",
            };
            println!("{w:>12} {p:>6.3} {mark}");
        }
        println!();
    }
    Ok(())
}
