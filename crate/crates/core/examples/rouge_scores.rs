//! ROUGE-1, ROUGE-2 and ROUGE-L for a few candidate summaries, plus the
//! macro-averaged corpus score.

use headmask::rouge::{corpus_rouge, rouge};

fn main() -> anyhow::Result<()> {
    let reference: Vec<&str> = "police killed the gunman near the station".split(' ').collect();
    let candidates = [
        "police killed the gunman near the station",
        "the gunman was killed by police",
        "police shot a man at the station",
        "heavy rain expected tomorrow",
    ];

    println!("{:<45} {:>6} {:>6} {:>6}", "candidate", "R1", "R2", "RL");
    let mut pairs = Vec::new();
    for c in candidates {
        let cand: Vec<&str> = c.split(' ').collect();
        let s = rouge(&cand, &reference);
        println!("{c:<45} {:>6.3} {:>6.3} {:>6.3}", s.r1.f1, s.r2.f1, s.rl.f1);
        pairs.push((cand, reference.clone()));
    }
    let mean = corpus_rouge(&pairs)?;
    println!(
        "\nmacro mean F1: R1 {:.3}  R2 {:.3}  RL {:.3}",
        mean.r1.f1, mean.r2.f1, mean.rl.f1
    );
    Ok(())
}
