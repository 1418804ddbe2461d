//! Masks one encoder-decoder attention head and prints its attention row
//! next to an unmasked head at the same decoding step.
//!
//! Positions tagged non-salient get exactly zero weight on the masked head;
//! the other heads are untouched.

use headmask::model::{decode_step, encode, AttentionTrace, HeadMaskConfig, HeadMaskVector, ModelConfig, ModelParams};
use headmask::vocab::{Vocab, BOS};

fn main() -> anyhow::Result<()> {
    let words = "officials said the storm hit the northern coast on monday";
    let source_words: Vec<&str> = words.split(' ').collect();
    let vocab = Vocab::from_words(source_words.iter().copied());
    let source = vocab.encode(&source_words);

    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        n_enc_layers: 2,
        n_dec_layers: 2,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(cfg, 7)?;
    let enc = encode(&params, &source)?;

    let salient: Vec<bool> = source_words
        .iter()
        .map(|w| matches!(*w, "storm" | "hit" | "northern" | "coast"))
        .collect();
    let m_tilde = HeadMaskVector::from_labels(&salient)?;
    let (layer, head) = (1, 2);
    let heads = HeadMaskConfig::single(cfg.n_dec_layers, cfg.n_heads, layer, head);

    let mut trace = AttentionTrace::new();
    decode_step(&params, &enc, &[BOS], &heads, Some(&m_tilde), Some(&mut trace))?;

    println!("{:>10} {:>8} {:>12} {:>12}", "token", "salient", "masked h2", "open h1");
    let masked = trace.row(0, layer, head);
    let open = trace.row(0, layer, 1);
    for (i, w) in source_words.iter().enumerate() {
        println!("{w:>10} {:>8} {:>12.6} {:>12.6}", salient[i], masked[i], open[i]);
    }
    let leaked: f64 = (0..source.len()).filter(|&i| !salient[i]).map(|i| masked[i]).sum();
    println!("\nweight on non-salient tokens, masked head: {leaked}");
    Ok(())
}
