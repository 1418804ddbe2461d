//! Greedy and beam-search summaries from a quickly trained model, with the
//! effect of the length penalty on hypothesis scores.

use headmask::corpus::{generate_corpus, GeneratorSpec, Span, Split};
use headmask::decode::{beam_decode, DecodeParams};
use headmask::model::{CrossAttention, ModelConfig};
use headmask::rouge::rouge;
use headmask::train::{train_summarizer, TrainConfig};

fn main() -> anyhow::Result<()> {
    let spec = GeneratorSpec {
        n_train: 600,
        n_validation: 40,
        n_analysis: 0,
        n_test: 3,
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
        seed: 2,
        ..TrainConfig::summarizer()
    };
    let model = train_summarizer(&corpus, cfg, &tc)?.params;

    let settings = [
        (
            "greedy",
            DecodeParams {
                min_len: 1,
                ..DecodeParams::ANALYSIS
            },
        ),
        (
            "beam 5, penalty 0",
            DecodeParams {
                length_penalty: 0.0,
                min_len: 1,
                ..DecodeParams::EVALUATION
            },
        ),
        (
            "beam 5, penalty 2",
            DecodeParams {
                min_len: 1,
                ..DecodeParams::EVALUATION
            },
        ),
    ];
    for ex in corpus.split(Split::Test) {
        println!("source:    {}", corpus.words(&ex.source).join(" "));
        println!("reference: {}", corpus.words(&ex.reference).join(" "));
        for (name, dp) in &settings {
            let h = beam_decode(&model, &ex.source, dp, CrossAttention::unmasked(), None)?;
            let r1 = rouge(h.body(), &ex.reference).r1.f1;
            println!(
                "  {name:<18} score {:>8.4} log p {:>8.4} R1 {r1:.3}  {}",
                h.score,
                h.log_prob,
                corpus.words(h.body()).join(" ")
            );
        }
        println!();
    }
    Ok(())
}
