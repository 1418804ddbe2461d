//! Runs every stage from a TOML config and prints the evaluation table.
//!
//! Usage: `cargo run --release --example pipeline [config.toml] [out-dir]`
//!
//! Defaults to the shipped demo config, which takes a few minutes on one core.

use std::path::PathBuf;

use headmask::pipeline::{run_pipeline, Overrides, PipelineConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/demo.toml")));
    let overrides = Overrides {
        out_dir: args.next().map(PathBuf::from),
        ..Overrides::default()
    };
    let cfg = PipelineConfig::load(Some(&config), &overrides)?;
    println!("config hash {}", cfg.config_hash());

    let report = run_pipeline(&cfg)?;
    println!("mask: layer {} heads {:?}", report.mask.layer, report.mask.heads);
    for m in &report.modes {
        println!(
            "{:<9} R1 {:.4}  R2 {:.4}  RL {:.4}  (fallbacks {})",
            m.mode.as_str(),
            m.rouge.r1.f1,
            m.rouge.r2.f1,
            m.rouge.rl.f1,
            m.fallbacks
        );
    }
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}
