//! Generates a small synthetic corpus, shows a few examples with their
//! planted salient spans, and prints the JSONL form of the first one.
//!
//! Pass a path to also write the whole corpus as JSONL.

use headmask::corpus::{generate_corpus, GeneratorSpec, Split};

fn main() -> anyhow::Result<()> {
    let spec = GeneratorSpec {
        n_train: 40,
        n_validation: 10,
        n_analysis: 10,
        n_test: 10,
        ..GeneratorSpec::default()
    };
    let corpus = generate_corpus(&spec)?;
    for split in Split::ALL {
        println!("{split:<10} {} examples", corpus.count(split));
    }
    println!("vocabulary: {} entries\n", corpus.vocab.len());

    for ex in corpus.examples.iter().take(3) {
        let words = corpus.words(&ex.source);
        let marked: Vec<String> = words
            .iter()
            .zip(&ex.labels)
            .map(|(w, &l)| if l { w.to_uppercase() } else { w.clone() })
            .collect();
        println!("{} source:    {}", ex.id, marked.join(" "));
        println!("{} reference: {}\n", ex.id, corpus.words(&ex.reference).join(" "));
    }

    let jsonl = corpus.to_jsonl();
    println!("{}", jsonl.lines().next().unwrap_or_default());
    if let Some(path) = std::env::args().nth(1) {
        corpus.write_jsonl(path.as_ref())?;
        println!("\nwrote {path}");
    }
    Ok(())
}
