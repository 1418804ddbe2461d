//! Chooses which heads to mask from tagger predictions, then compares
//! unmasked decoding with masking driven by oracle and tagger labels.

use headmask::analysis::{content_selection_effect, decode_set, masks_from_labels, Attention};
use headmask::corpus::{generate_corpus, GeneratorSpec, Span, Split};
use headmask::decode::DecodeParams;
use headmask::model::ModelConfig;
use headmask::saliency::tune_boundary;
use headmask::selection::{greedy_select_heads, system_labels};
use headmask::train::{train_summarizer, train_tagger, TrainConfig};

fn main() -> anyhow::Result<()> {
    let spec = GeneratorSpec {
        n_train: 800,
        n_validation: 60,
        n_analysis: 60,
        n_test: 60,
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
    let summarizer_tc = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 10,
        seed: 6,
        ..TrainConfig::summarizer()
    };
    let model = train_summarizer(&corpus, cfg, &summarizer_tc)?.params;
    let (train, val) = (corpus.split(Split::Train), corpus.split(Split::Validation));
    let tagger_tc = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 10,
        seed: 7,
        ..TrainConfig::tagger()
    };
    let tagger = train_tagger(&model, &train, &val, 32, &tagger_tc)?.params;
    let pairs: Vec<(&[u32], &[bool])> = val.iter().map(|e| (e.source.as_slice(), e.labels.as_slice())).collect();
    let (boundary, _) = tune_boundary(&tagger, &pairs)?;

    let analysis = corpus.split(Split::Analysis);
    let dp = DecodeParams {
        min_len: 1,
        ..DecodeParams::ANALYSIS
    };
    let effect = content_selection_effect(&model, &analysis, &dp, 1)?;
    let selected = greedy_select_heads(&model, &tagger, boundary, &analysis, &effect, 2, &dp, 1)?;
    for p in &selected.trajectory {
        println!("layer {} heads {:?}: R1+R2 {:.4}", p.layer, p.heads, p.score);
    }
    let mask = selected.mask();
    println!("selected layer {} heads {:?}\n", mask.layer, mask.heads);

    let test = corpus.split(Split::Test);
    let mask_cfg = mask.to_config(cfg.n_dec_layers, cfg.n_heads)?;
    let eval_dp = DecodeParams {
        min_len: 2,
        ..DecodeParams::EVALUATION
    };
    let oracle = masks_from_labels(test.iter().map(|e| e.labels.as_slice()));
    let predicted = system_labels(&tagger, boundary, &test, 1)?;
    let system = masks_from_labels(predicted.iter().map(Vec::as_slice));
    let runs = [
        ("unmasked", Attention::Unmasked),
        (
            "oracle",
            Attention::Masked {
                mask_cfg: &mask_cfg,
                masks: &oracle,
            },
        ),
        (
            "tagger",
            Attention::Masked {
                mask_cfg: &mask_cfg,
                masks: &system,
            },
        ),
    ];
    println!("{:<9} {:>7} {:>7} {:>7}", "test", "R1", "R2", "RL");
    for (name, attention) in runs {
        let r = decode_set(&model, &test, attention, &eval_dp, 1)?;
        println!(
            "{name:<9} {:>7.4} {:>7.4} {:>7.4}",
            r.mean.r1.f1, r.mean.r2.f1, r.mean.rl.f1
        );
    }
    Ok(())
}
