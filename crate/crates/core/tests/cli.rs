use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_headmask");

const TINY: &str = r#"
seed = 3

[data.generator]
n_train = 120
n_validation = 16
n_analysis = 10
n_test = 10
source_len = { min = 10, max = 16 }
n_salient_spans = { min = 1, max = 2 }
span_len = { min = 2, max = 3 }
vocab_size = 80

[model]
d_model = 16
n_heads = 4
n_enc_layers = 1
n_dec_layers = 2
d_ff = 32
max_positions = 64

[summarizer]
learning_rate = 3e-3
max_epochs = 2

[tagger.train]
max_epochs = 2

[analysis]
decode = { beam_size = 1, min_len = 1, max_len = 20, length_penalty = 1.0 }

[evaluation]
decode = { beam_size = 3, min_len = 2, max_len = 20, length_penalty = 2.0 }
"#;

fn headmask(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const STAGES: [&str; 9] = [
    "gen-data",
    "train",
    "train-tagger",
    "tune-boundary",
    "analyze-effect",
    "analyze-synergy",
    "analyze-focus",
    "select-heads",
    "evaluate",
];

#[test]
fn stages_run_one_by_one_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));

    for stage in STAGES {
        ok(headmask(&config, &a, &[stage]));
    }
    ok(headmask(&config, &b, &["run"]));

    let eval = json(&a.join("evaluation.json"));
    let modes: Vec<&str> = eval["modes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["mode"].as_str().unwrap())
        .collect();
    assert_eq!(modes, ["unmasked", "oracle", "tagger"]);
    let header = &eval["header"];
    assert_eq!(header["tool"], "headmask");
    assert_eq!(header["seed"], 3);
    assert_eq!(header["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(header["inputs"].as_object().unwrap().len(), 3);
    assert!(eval["config"]["data"].is_object());

    for name in [
        "boundary.json",
        "effect.json",
        "synergy.json",
        "focus.json",
        "selection.json",
        "mask.json",
        "evaluation.json",
        "summarizer.ckpt",
        "tagger.ckpt",
        "corpus.jsonl",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }

    ok(headmask(&config, &a, &["analyze-effect", "--csv"]));
    let csv = fs::read_to_string(a.join("effect.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}

#[test]
fn all_salient_oracle_summaries_equal_unmasked() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let out = dir.path().join("o");
    for stage in ["gen-data", "train"] {
        ok(headmask(&config, &out, &[stage]));
    }
    let mask = dir.path().join("mask.json");
    fs::write(&mask, r#"{"layer": 1, "heads": [0, 1, 2, 3]}"#).unwrap();
    let mask_arg = mask.to_str().unwrap();
    ok(headmask(&config, &out, &["summarize", "--mode", "unmasked"]));
    ok(headmask(
        &config,
        &out,
        &[
            "summarize",
            "--mode",
            "oracle",
            "--all-salient",
            "--mask-from",
            mask_arg,
        ],
    ));
    let plain = json(&out.join("summaries.unmasked.test.json"));
    let masked = json(&out.join("summaries.oracle.test.json"));
    assert_eq!(plain["summaries"], masked["summaries"]);
    assert_eq!(plain["rouge"], masked["rouge"]);
    assert_eq!(masked["all_salient"], true);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");

    let usage = Command::new(BIN).arg("no-such-command").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "sead = 1\n").unwrap();
    assert_eq!(headmask(&bad, &out, &["gen-data"]).status.code(), Some(1));

    let infeasible = dir.path().join("infeasible.toml");
    fs::write(
        &infeasible,
        "[data.generator]\nsource_len = { min = 2, max = 2 }\nspan_len = { min = 5, max = 6 }\n",
    )
    .unwrap();
    assert_eq!(headmask(&infeasible, &out, &["gen-data"]).status.code(), Some(1));

    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let corpus = dir.path().join("in.jsonl");
    fs::write(&corpus, "{\"id\": \"a\", \"source\": [\"x\"]}\n").unwrap();
    let o = headmask(&config, &out, &["gen-data", "--input", corpus.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    let o = headmask(&config, &dir.path().join("empty"), &["select-heads"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("select-heads"));
}

#[test]
fn ingested_corpus_gets_oracle_labels() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let corpus = dir.path().join("in.jsonl");
    fs::write(
        &corpus,
        concat!(
            "{\"id\": \"a\", \"source\": [\"the\", \"storm\", \"hit\", \"the\", \"coast\"], \"reference\": [\"storm\", \"hit\", \"coast\"]}\n",
            "{\"id\": \"b\", \"source\": [\"a\", \"b\"], \"reference\": [\"b\"], \"split\": \"validation\"}\n",
        ),
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(headmask(
        &config,
        &out,
        &["gen-data", "--input", corpus.to_str().unwrap()],
    ));
    let text = fs::read_to_string(out.join("corpus.jsonl")).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["labels"], serde_json::json!([0, 1, 1, 0, 1]));
    let header = json(&out.join("corpus.jsonl.header.json"));
    assert!(header["inputs"]["input"].is_string());
}
