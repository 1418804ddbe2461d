#![allow(dead_code)]

use headmask::corpus::{generate_corpus, Corpus, Example, GeneratorSpec, Span, Split};
use headmask::model::{ModelConfig, ModelParams};
use headmask::train::{train_summarizer, TrainConfig};
use headmask::vocab::TokenId;

pub fn tiny_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        d_model: 16,
        n_heads: 4,
        n_enc_layers: 1,
        n_dec_layers: 2,
        d_ff: 32,
        max_positions: 64,
    }
}

pub fn tiny_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        seed,
        n_train: 200,
        n_validation: 20,
        n_analysis: 12,
        n_test: 12,
        source_len: Span::new(10, 16),
        n_salient_spans: Span::new(1, 2),
        span_len: Span::new(2, 3),
        distractor_rate: 0.7,
        decoy_rate: 0.1,
        vocab_size: 80,
    }
}

pub fn tiny_corpus(seed: u64) -> Corpus {
    generate_corpus(&tiny_spec(seed)).expect("valid spec")
}

/// A briefly trained tiny summarizer; good enough to produce varied outputs.
pub fn tiny_trained(seed: u64) -> (Corpus, ModelParams) {
    let corpus = tiny_corpus(seed);
    let tc = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 3,
        seed,
        ..TrainConfig::summarizer()
    };
    let trained = train_summarizer(&corpus, tiny_model_config(corpus.vocab.len()), &tc).expect("training runs");
    (corpus, trained.params)
}

pub fn example(id: &str, split: Split, source: &[TokenId], reference: &[TokenId], labels: &[bool]) -> Example {
    Example {
        id: id.into(),
        split,
        source: source.to_vec(),
        reference: reference.to_vec(),
        labels: labels.to_vec(),
    }
}
