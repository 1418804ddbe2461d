//! End-to-end acceptance run over the demo configuration.
//!
//! Prints one `PASS`/`FAIL` line per criterion and exits nonzero if any fail.
//! The demo pipeline is run twice into temporary directories; the first run
//! supplies the model, tagger and reports checked by criteria 1, 2 and 6–9.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use headmask::corpus::{Example, Split};
use headmask::decode::{beam_decode, DecodeParams};
use headmask::model::{
    decode_step, encode, AttentionTrace, CrossAttention, HeadMaskConfig, HeadMaskVector, ModelConfig, ModelParams,
};
use headmask::pipeline::{self, load_corpus, Overrides, PipelineConfig};
use headmask::rouge::{lcs_len, rouge, rouge_l, rouge_n};
use headmask::saliency::{oracle_labels, predict_saliency, tune_boundary, TaggerParams};
use headmask::train::{gradient_check_at, stratified_coordinates, SummarizerObjective, TaggerObjective};
use headmask::vocab::{TokenId, BOS};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

const DEMO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/demo.toml");
const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/rouge_golden.json");

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

struct Gate {
    failures: usize,
}

impl Gate {
    fn check(&mut self, id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Result<Outcome>) {
        let start = Instant::now();
        let result = f();
        self.record(id, name, budget, start.elapsed(), result);
    }

    fn record(&mut self, id: u32, name: &str, budget: Duration, elapsed: Duration, result: Result<Outcome>) {
        let (passed, detail) = match result {
            Ok(o) if elapsed > budget => (false, format!("{}; over the {}s budget", o.detail, budget.as_secs())),
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !passed {
            self.failures += 1;
        }
        let verdict = if passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict} {name} ({:.1}s): {detail}",
            elapsed.as_secs_f64()
        );
    }
}

fn demo_config(out_dir: &Path) -> Result<PipelineConfig> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let ov = Overrides {
        seed: None,
        threads: Some(threads),
        out_dir: Some(out_dir.to_path_buf()),
    };
    Ok(PipelineConfig::load(Some(Path::new(DEMO)), &ov)?)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(serde_json::from_str(&text)?)
}

fn f(v: &Value, path: &[&str]) -> Result<f64> {
    let mut cur = v;
    for k in path {
        cur = cur.get(*k).with_context(|| format!("missing {k}"))?;
    }
    cur.as_f64().context("not a number")
}

/// Shared state from the first pipeline run.
struct Run {
    cfg: PipelineConfig,
    model: ModelParams,
    tagger: TaggerParams,
    analysis: Vec<Example>,
    validation: Vec<Example>,
}

impl Run {
    fn load(cfg: PipelineConfig) -> Result<Self> {
        let corpus = load_corpus(&cfg)?;
        Ok(Run {
            model: pipeline::load_summarizer(&cfg)?,
            tagger: pipeline::load_tagger(&cfg)?,
            analysis: corpus.split(Split::Analysis),
            validation: corpus.split(Split::Validation),
            cfg,
        })
    }
}

fn random_heads(rng: &mut StdRng, n_layers: usize, n_heads: usize) -> HeadMaskConfig {
    loop {
        let active: Vec<Vec<bool>> = (0..n_layers)
            .map(|_| (0..n_heads).map(|_| rng.random_bool(0.4)).collect())
            .collect();
        if active.iter().flatten().any(|&a| a) {
            return HeadMaskConfig::from_matrix(active).expect("rectangular");
        }
    }
}

fn mask_exactness(run: &Run) -> Result<Outcome> {
    let mut rng = StdRng::seed_from_u64(1);
    let mc = *run.model.config();
    let (mut checked, mut violations) = (0usize, 0usize);
    for _ in 0..1000 {
        let ex = &run.analysis[rng.random_range(0..run.analysis.len())];
        let labels: Vec<bool> = loop {
            let l: Vec<bool> = (0..ex.source.len()).map(|_| rng.random_bool(0.3)).collect();
            if l.iter().any(|&x| x) {
                break l;
            }
        };
        let m = HeadMaskVector::from_labels(&labels)?;
        let heads = random_heads(&mut rng, mc.n_dec_layers, mc.n_heads);
        let plen = rng.random_range(0..=ex.reference.len());
        let mut prefix = vec![BOS];
        prefix.extend(&ex.reference[..plen]);
        let enc = encode(&run.model, &ex.source)?;
        let mut trace = AttentionTrace::new();
        decode_step(&run.model, &enc, &prefix, &heads, Some(&m), Some(&mut trace))?;
        for l in 0..mc.n_dec_layers {
            for h in 0..mc.n_heads {
                if !heads.is_active(l, h) {
                    continue;
                }
                for (j, &w) in trace.row(0, l, h).as_slice().iter().enumerate() {
                    if !labels[j] {
                        checked += 1;
                        violations += usize::from(w.to_bits() != 0.0f64.to_bits());
                    }
                }
            }
        }
    }
    Ok(outcome(
        violations == 0 && checked > 0,
        format!("{checked} masked weights over 1000 steps, {violations} nonzero"),
    ))
}

fn neutrality(run: &Run) -> Result<Outcome> {
    let mut rng = StdRng::seed_from_u64(2);
    let mc = *run.model.config();
    let dp = run.cfg.analysis.decode;
    let mut diffs = 0;
    for ex in &run.analysis {
        let heads = random_heads(&mut rng, mc.n_dec_layers, mc.n_heads);
        let m = HeadMaskVector::all_salient(ex.source.len());
        let plain = beam_decode(&run.model, &ex.source, &dp, CrossAttention::unmasked(), None)?;
        let masked = beam_decode(
            &run.model,
            &ex.source,
            &dp,
            CrossAttention::masked(&heads, Some(&m)),
            None,
        )?;
        diffs += usize::from(plain.tokens != masked.tokens);
    }
    Ok(outcome(
        diffs == 0,
        format!("{} examples, {diffs} differing generations", run.analysis.len()),
    ))
}

fn parse_fraction(s: &str) -> Result<f64> {
    Ok(match s.split_once('/') {
        Some((n, d)) => n.parse::<f64>()? / d.parse::<f64>()?,
        None => s.parse()?,
    })
}

/// Every sequence over `{0, 1, 2}` of length ≤ 8, shortest first; a
/// sequence's index is its length offset plus its base-3 value.
struct Universe {
    seqs: Vec<Vec<u8>>,
    offsets: Vec<usize>,
}

impl Universe {
    fn new(max_len: usize) -> Self {
        let mut seqs = Vec::new();
        let mut offsets = Vec::new();
        for len in 0..=max_len {
            offsets.push(seqs.len());
            for v in 0..3usize.pow(len as u32) {
                seqs.push((0..len).rev().map(|i| ((v / 3usize.pow(i as u32)) % 3) as u8).collect());
            }
        }
        Universe { seqs, offsets }
    }

    fn index(&self, s: &[u8]) -> usize {
        self.offsets[s.len()] + s.iter().fold(0, |acc, &x| acc * 3 + x as usize)
    }

    fn len_of(&self, idx: usize) -> usize {
        self.offsets.partition_point(|&o| o <= idx) - 1
    }

    /// Bitset of every subsequence of `s`, by explicit enumeration.
    fn subsequences(&self, s: &[u8]) -> Vec<u64> {
        let mut bits = vec![0u64; self.seqs.len().div_ceil(64)];
        for pick in 0u32..(1 << s.len()) {
            let sub: Vec<u8> = (0..s.len()).filter(|&i| pick >> i & 1 == 1).map(|i| s[i]).collect();
            let i = self.index(&sub);
            bits[i / 64] |= 1 << (i % 64);
        }
        bits
    }
}

fn rouge_oracle() -> Result<Outcome> {
    let golden = read_json(Path::new(GOLDEN))?;
    let cases = golden.as_array().context("golden file is a list")?;
    let mut worst = 0.0f64;
    for case in cases {
        let words = |k: &str| -> Vec<String> {
            case[k]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(|w| w.as_str().map(String::from))
                .collect()
        };
        let (c, r) = (words("candidate"), words("reference"));
        for (key, got) in [
            ("rouge1", rouge_n(&c, &r, 1)),
            ("rouge2", rouge_n(&c, &r, 2)),
            ("rougeL", rouge_l(&c, &r)),
        ] {
            for (field, value) in [("precision", got.precision), ("recall", got.recall), ("f1", got.f1)] {
                let want = parse_fraction(case[key][field].as_str().context("fraction string")?)?;
                worst = worst.max((want - value).abs());
            }
        }
    }
    let golden_ok = cases.len() == 20 && worst <= 1e-9;

    let u = Universe::new(8);
    let subs: Vec<Vec<u64>> = u.seqs.iter().map(|s| u.subsequences(s)).collect();
    let (mut pairs, mut mismatches) = (0u64, 0u64);
    for (i, a) in u.seqs.iter().enumerate() {
        for (j, b) in u.seqs.iter().enumerate().skip(i) {
            let top = subs[i]
                .iter()
                .zip(&subs[j])
                .enumerate()
                .rev()
                .find_map(|(w, (x, y))| {
                    let both = x & y;
                    (both != 0).then(|| w * 64 + 63 - both.leading_zeros() as usize)
                })
                .expect("the empty sequence is common");
            let brute = u.len_of(top);
            pairs += 1;
            mismatches += u64::from(lcs_len(a, b) != brute || lcs_len(b, a) != brute);
        }
    }
    Ok(outcome(
        golden_ok && mismatches == 0,
        format!(
            "{} golden cases, max deviation {worst:.1e}; {pairs} LCS pairs, {mismatches} mismatches",
            cases.len()
        ),
    ))
}

/// Iterative longest-run alignment written directly from its definition:
/// among runs whose reference positions are all unconsumed, take the longest,
/// then earliest source start, then earliest reference start.
fn brute_oracle(source: &[u8], reference: &[u8]) -> Vec<bool> {
    let mut consumed = vec![false; reference.len()];
    let mut labels = vec![false; source.len()];
    loop {
        let mut found = None;
        'search: for len in (1..=reference.len().min(source.len())).rev() {
            for s in 0..=source.len() - len {
                for r in 0..=reference.len() - len {
                    if (0..len).all(|k| !consumed[r + k] && source[s + k] == reference[r + k]) {
                        found = Some((s, r, len));
                        break 'search;
                    }
                }
            }
        }
        let Some((s, r, len)) = found else {
            return labels;
        };
        consumed[r..r + len].fill(true);
        labels[s..s + len].fill(true);
    }
}

/// Calls `visit` with every string of length `len` over at most `k` symbols
/// in which symbols first appear in increasing order, continuing from
/// `prefix` whose largest symbol is `used − 1`.
fn restricted_growth(prefix: &mut Vec<u8>, len: usize, used: u8, k: u8, visit: &mut dyn FnMut(&[u8])) {
    if prefix.len() == len {
        visit(prefix);
        return;
    }
    for x in 0..(used + 1).min(k) {
        prefix.push(x);
        restricted_growth(prefix, len, used.max(x + 1), k, visit);
        prefix.pop();
    }
}

fn alignment_oracle() -> Result<Outcome> {
    // Both oracles only compare tokens for equality, so checking one
    // representative per relabeling of the four symbols covers every pair.
    let (mut cases, mut disagreements) = (0u64, 0u64);
    for s_len in 0..=8 {
        for r_len in 0..=6 {
            restricted_growth(&mut Vec::new(), s_len + r_len, 0, 4, &mut |joint| {
                let (src, refr) = joint.split_at(s_len);
                let want = brute_oracle(src, refr);
                let src_ids: Vec<TokenId> = src.iter().map(|&x| x as TokenId).collect();
                let ref_ids: Vec<TokenId> = refr.iter().map(|&x| x as TokenId).collect();
                cases += 1;
                disagreements += u64::from(oracle_labels(&src_ids, &ref_ids) != want);
            });
        }
    }
    Ok(outcome(
        disagreements == 0,
        format!("{cases} canonical cases, {disagreements} disagreements"),
    ))
}

fn gradient_check(run: &Run) -> Result<Outcome> {
    let mc = ModelConfig {
        vocab_size: run.model.config().vocab_size,
        ..*run.model.config()
    };
    let params = ModelParams::init(mc, 99)?;
    let ex = &run.analysis[0];
    let coords = stratified_coordinates(params.layout(), 64, 5);
    let summ = SummarizerObjective {
        config: mc,
        source: ex.source.clone(),
        reference: ex.reference.clone(),
    };
    let s_err = gradient_check_at(&summ, params.data(), &coords).max_relative_error();

    let tagger = TaggerObjective {
        base: TaggerParams::init(params.clone(), run.cfg.tagger.hidden, 7)?,
        train_encoder: true,
        source: ex.source.clone(),
        labels: ex.labels.clone(),
    };
    let flat = tagger.flat_params();
    let mut rng = StdRng::seed_from_u64(6);
    let t_coords: Vec<usize> = (0..64).map(|_| rng.random_range(0..flat.len())).collect();
    let t_err = gradient_check_at(&tagger, &flat, &t_coords).max_relative_error();
    Ok(outcome(
        s_err <= 1e-4 && t_err <= 1e-4,
        format!("64 coordinates each; summarizer max rel err {s_err:.2e}, tagger {t_err:.2e}"),
    ))
}

fn content_selection(dir: &Path) -> Result<Outcome> {
    let effect = read_json(&dir.join("effect.json"))?;
    let selection = read_json(&dir.join("selection.json"))?;
    let mut max_cell = f64::NEG_INFINITY;
    for row in effect["effect"].as_array().context("effect grid")? {
        for cell in row.as_array().context("effect row")? {
            max_cell = max_cell.max(f(cell, &["r1", "f1"])?);
        }
    }
    let uniform = f(&effect, &["r_uni", "r1", "f1"])?;
    let unmasked = f(&selection, &["unmasked", "r1", "f1"])?;
    Ok(outcome(
        max_cell > 0.0 && unmasked - uniform >= 0.05,
        format!("max R1 effect {max_cell:.4}; uniform R1 {uniform:.4} vs unmasked {unmasked:.4}"),
    ))
}

fn synergy(dir: &Path) -> Result<Outcome> {
    let report = read_json(&dir.join("synergy.json"))?;
    let mut collaborative = Vec::new();
    let mut non_additive = Vec::new();
    for ls in report["layers"].as_array().context("layers")? {
        let layer = ls["layer"].as_u64().context("layer")?;
        let curve = ls["incremental_curve"].as_array().context("curve")?;
        let single = f(&curve[0], &["scores", "r1", "f1"])?;
        let multi = curve[1..]
            .iter()
            .map(|p| f(p, &["scores", "r1", "f1"]))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if multi >= single {
            collaborative.push(layer);
        }
        let gap = f(ls, &["joint_improvement", "r1", "f1"])? - f(ls, &["sum_of_individuals", "r1", "f1"])?;
        if gap.abs() > 1e-6 {
            non_additive.push(layer);
        }
    }
    Ok(outcome(
        !collaborative.is_empty() && !non_additive.is_empty(),
        format!("multi-head ≥ single-head on layers {collaborative:?}; joint ≠ sum on layers {non_additive:?}"),
    ))
}

fn boundary_search(run: &Run) -> Result<Outcome> {
    let probs = run
        .validation
        .iter()
        .map(|e| Ok(predict_saliency(&run.tagger, &e.source)?.as_slice().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<(u32, f64)> = None;
    for h in 10..=40u32 {
        let b = h as f64 / 100.0;
        let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
        for (p, e) in probs.iter().zip(&run.validation) {
            for (&pi, &gold) in p.iter().zip(&e.labels) {
                match (pi >= b, gold) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
            }
        }
        let denom = 2 * tp + fp + fneg;
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        if best.is_none_or(|(_, bf)| f1 > bf) {
            best = Some((h, f1));
        }
    }
    let (h, f1) = best.expect("31 boundaries");
    let want_b = h as f64 / 100.0;
    let pairs: Vec<(&[TokenId], &[bool])> = run
        .validation
        .iter()
        .map(|e| (e.source.as_slice(), e.labels.as_slice()))
        .collect();
    let (got_b, got_f1) = tune_boundary(&run.tagger, &pairs)?;
    let report = read_json(&run.cfg.artifacts().boundary())?;
    let (rep_b, rep_f1) = (f(&report, &["boundary"])?, f(&report, &["f1"])?);
    Ok(outcome(
        got_b.value() == want_b && got_f1 == f1 && rep_b == want_b && rep_f1 == f1,
        format!(
            "exhaustive {want_b:.2} / F1 {f1:.6}; tuned {:.2} / {got_f1:.6}; report {rep_b:.2} / {rep_f1:.6}",
            got_b.value()
        ),
    ))
}

/// Mean `R1 F1 + R2 F1` from decoding each example with `masks[i]` on `heads`
/// (unmasked where `None`).
fn redecode(run: &Run, heads: &HeadMaskConfig, masks: &[Option<HeadMaskVector>], dp: &DecodeParams) -> Result<f64> {
    let (mut r1, mut r2) = (0.0, 0.0);
    for (ex, m) in run.analysis.iter().zip(masks) {
        let mode = match m {
            Some(m) => CrossAttention::masked(heads, Some(m)),
            None => CrossAttention::unmasked(),
        };
        let h = beam_decode(&run.model, &ex.source, dp, mode, None)?;
        let s = rouge(h.body(), &ex.reference);
        r1 += s.r1.f1;
        r2 += s.r2.f1;
    }
    let n = run.analysis.len() as f64;
    Ok(r1 / n + r2 / n)
}

fn selection_consistency(run: &Run) -> Result<Outcome> {
    let report = read_json(&run.cfg.artifacts().selection())?;
    let layer = report["layer"].as_u64().context("layer")? as usize;
    let heads: Vec<usize> = serde_json::from_value(report["heads"].clone())?;
    let boundary = f(&report, &["boundary"])?;
    let reported = f(&report, &["score"])?;
    let mc = *run.model.config();
    let heads_cfg = HeadMaskConfig::heads_in_layer(mc.n_dec_layers, mc.n_heads, layer, &heads);
    let masks = run
        .analysis
        .iter()
        .map(|e| {
            let p = predict_saliency(&run.tagger, &e.source)?;
            let labels: Vec<bool> = p.as_slice().iter().map(|&x| x >= boundary).collect();
            Ok(HeadMaskVector::from_labels(&labels).ok())
        })
        .collect::<Result<Vec<_>>>()?;
    let dp = run.cfg.analysis.decode;
    let selected = redecode(run, &heads_cfg, &masks, &dp)?;
    let none = vec![None; run.analysis.len()];
    let unmasked = redecode(run, &heads_cfg, &none, &dp)?;
    let gap = (selected - reported).abs();
    Ok(outcome(
        gap <= 1e-12 && selected >= unmasked,
        format!(
            "layer {layer} heads {heads:?}: reported {reported:.6}, re-decoded {selected:.6} (|Δ| {gap:.1e}); unmasked {unmasked:.6}"
        ),
    ))
}

/// Relative path → bytes for every file under `dir`.
fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        out.insert(path.strip_prefix(dir)?.to_path_buf(), fs::read(&path)?);
    }
    Ok(out)
}

fn determinism(first: &Path, second: &Path) -> Result<Outcome> {
    let (a, b) = (snapshot(first)?, snapshot(second)?);
    ensure!(!a.is_empty(), "first run wrote nothing");
    let names: BTreeSet<&PathBuf> = a.keys().chain(b.keys()).collect();
    let differing: Vec<String> = names
        .into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Ok(outcome(
        differing.is_empty(),
        format!("{} files compared, differing: {differing:?}", a.len()),
    ))
}

fn main() -> ExitCode {
    let mut gate = Gate { failures: 0 };
    let work = tempfile::tempdir().expect("temporary directory");
    let (dir1, dir2) = (work.path().join("run1"), work.path().join("run2"));

    let start = Instant::now();
    let run = demo_config(&dir1).and_then(|cfg| {
        pipeline::run_pipeline(&cfg)?;
        Run::load(cfg)
    });
    let first_run = start.elapsed();
    println!("demo pipeline run 1 finished in {:.1}s", first_run.as_secs_f64());

    let mins = |m: u64| Duration::from_secs(60 * m);
    match &run {
        Ok(run) => {
            gate.check(1, "mask exactness", mins(1), || mask_exactness(run));
            gate.check(2, "all-salient neutrality", mins(2), || neutrality(run));
        }
        Err(e) => {
            gate.record(
                1,
                "mask exactness",
                mins(1),
                Duration::ZERO,
                Err(anyhow::anyhow!("pipeline: {e:#}")),
            );
            gate.record(
                2,
                "all-salient neutrality",
                mins(2),
                Duration::ZERO,
                Err(anyhow::anyhow!("pipeline: {e:#}")),
            );
        }
    }
    gate.check(3, "ROUGE oracle", mins(1), rouge_oracle);
    gate.check(4, "alignment oracle", mins(2), alignment_oracle);
    match &run {
        Ok(run) => {
            gate.check(5, "gradient check", mins(2), || gradient_check(run));
            gate.record(
                6,
                "content-selection effect",
                mins(10),
                first_run,
                content_selection(&dir1),
            );
            gate.record(7, "head synergy", mins(10), first_run, synergy(&dir1));
            gate.check(8, "boundary search", mins(1), || boundary_search(run));
            gate.check(9, "selection self-consistency", mins(10), || selection_consistency(run));
        }
        Err(e) => {
            for (id, name) in [
                (5, "gradient check"),
                (6, "content-selection effect"),
                (7, "head synergy"),
                (8, "boundary search"),
                (9, "selection self-consistency"),
            ] {
                gate.record(
                    id,
                    name,
                    mins(10),
                    Duration::ZERO,
                    Err(anyhow::anyhow!("pipeline: {e:#}")),
                );
            }
        }
    }
    let start = Instant::now();
    let second = demo_config(&dir2).and_then(|cfg| Ok(pipeline::run_pipeline(&cfg)?));
    let total = first_run + start.elapsed();
    gate.record(
        10,
        "determinism",
        mins(30),
        total,
        second.and_then(|_| determinism(&dir1, &dir2)),
    );

    println!("{} of 10 criteria failed", gate.failures);
    if gate.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
