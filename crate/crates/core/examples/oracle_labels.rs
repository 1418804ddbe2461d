//! Aligns a reference summary against its source and prints the matched runs
//! and the resulting salience labels.

use headmask::saliency::{align_runs, oracle_labels};
use headmask::vocab::Vocab;

fn main() {
    let source: Vec<&str> = "on monday the mayor said the new bridge will open in june after two years of work"
        .split(' ')
        .collect();
    let reference: Vec<&str> = "new bridge will open in june mayor said".split(' ').collect();
    let vocab = Vocab::from_words(source.iter().chain(&reference).copied());
    let (src, refr) = (vocab.encode(&source), vocab.encode(&reference));

    for run in align_runs(&src, &refr) {
        let words = &source[run.source_start..run.source_start + run.len];
        println!(
            "run of {}: source@{} reference@{}  \"{}\"",
            run.len,
            run.source_start,
            run.reference_start,
            words.join(" ")
        );
    }

    let labels = oracle_labels(&src, &refr);
    let tagged: Vec<String> = source
        .iter()
        .zip(&labels)
        .map(|(w, &l)| if l { format!("[{w}]") } else { w.to_string() })
        .collect();
    println!("\n{}", tagged.join(" "));
}
