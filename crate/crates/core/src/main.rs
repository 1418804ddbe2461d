use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use headmask::corpus::Split;
use headmask::pipeline::{self, Overrides, PipelineConfig, SummarizeMode, SummarizeOptions};
use headmask::Error;

/// Attention head masking pipeline.
///
/// Settings come from built-in defaults, then the `--config` TOML file, then
/// the global flags below; later sources win.
#[derive(Debug, Parser)]
#[command(name = "headmask", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus, or ingest `--input` JSONL.
    GenData {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train the summarizer.
    Train,
    /// Train the saliency tagger on the summarizer's encoder.
    TrainTagger,
    /// Pick the tagger's decision boundary on the validation split.
    TuneBoundary,
    /// Oracle-mask every head and report the gain over uniform attention.
    AnalyzeEffect {
        /// Also write a flattened CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Incremental and joint masking per layer.
    AnalyzeSynergy {
        #[arg(long)]
        csv: bool,
    },
    /// Count what each head attends to most while decoding.
    AnalyzeFocus {
        #[arg(long)]
        csv: bool,
    },
    /// Greedily choose the heads to mask with tagger labels.
    SelectHeads,
    /// Decode a split with or without masking.
    Summarize {
        #[arg(long, value_enum, default_value_t = Mode::Unmasked)]
        mode: Mode,
        /// Mask file, either `{"layer", "heads"}` or a selection report.
        #[arg(long)]
        mask_from: Option<PathBuf>,
        /// Mark every source token salient.
        #[arg(long)]
        all_salient: bool,
        /// Defaults to the evaluation split.
        #[arg(long)]
        split: Option<Split>,
    },
    /// Summarize in all three modes and write the evaluation report.
    Evaluate,
    /// Run every stage in order.
    Run,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Unmasked,
    Oracle,
    Tagger,
}

impl From<Mode> for SummarizeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Unmasked => SummarizeMode::Unmasked,
            Mode::Oracle => SummarizeMode::Oracle,
            Mode::Tagger => SummarizeMode::Tagger,
        }
    }
}

fn warn_fallbacks(fallbacks: usize) {
    if fallbacks > 0 {
        eprintln!("warning: {fallbacks} example(s) had no salient tokens and were decoded unmasked");
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        threads: cli.threads,
        out_dir: cli.out_dir,
    };
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::GenData { input } => {
            if input.is_some() {
                cfg.data.input = input;
            }
            let corpus = pipeline::gen_data(&cfg).map_err(|e| e.in_stage("gen-data"))?;
            for split in Split::ALL {
                println!("{split}: {} examples", corpus.count(split));
            }
        }
        Command::Train => {
            pipeline::train(&cfg).map_err(|e| e.in_stage("train"))?;
            println!("wrote {}", cfg.artifacts().summarizer().display());
        }
        Command::TrainTagger => {
            pipeline::train_tagger_stage(&cfg).map_err(|e| e.in_stage("train-tagger"))?;
            println!("wrote {}", cfg.artifacts().tagger().display());
        }
        Command::TuneBoundary => {
            let r = pipeline::tune_boundary_stage(&cfg).map_err(|e| e.in_stage("tune-boundary"))?;
            println!("boundary {:?}, validation F1 {:.4}", r.boundary, r.f1);
        }
        Command::AnalyzeEffect { csv } => {
            cfg.analysis.csv |= csv;
            let e = pipeline::analyze_effect(&cfg).map_err(|e| e.in_stage("analyze-effect"))?;
            let (l, h, v) = e.max_r1_effect();
            println!(
                "uniform R1 F1 {:.4}; largest R1 gain {v:.4} at layer {l} head {h}",
                e.r_uni.r1.f1
            );
            warn_fallbacks(e.fallbacks);
        }
        Command::AnalyzeSynergy { csv } => {
            cfg.analysis.csv |= csv;
            let r = pipeline::analyze_synergy(&cfg).map_err(|e| e.in_stage("analyze-synergy"))?;
            for ls in &r.layers {
                println!(
                    "layer {}: joint R1 gain {:.4}, sum of single gains {:.4}",
                    ls.layer, ls.joint_improvement.r1.f1, ls.sum_of_individuals.r1.f1
                );
            }
            warn_fallbacks(r.fallbacks);
        }
        Command::AnalyzeFocus { csv } => {
            cfg.analysis.csv |= csv;
            pipeline::analyze_focus(&cfg).map_err(|e| e.in_stage("analyze-focus"))?;
            println!("wrote {}", cfg.artifacts().focus().display());
        }
        Command::SelectHeads => {
            let r = pipeline::select_heads(&cfg).map_err(|e| e.in_stage("select-heads"))?;
            println!(
                "layer {} heads {:?}: R1+R2 {:.4} (unmasked {:.4})",
                r.result.layer, r.result.heads, r.result.score, r.unmasked_score
            );
            warn_fallbacks(r.result.fallbacks);
        }
        Command::Summarize {
            mode,
            mask_from,
            all_salient,
            split,
        } => {
            let opts = SummarizeOptions {
                split,
                mask_from,
                all_salient,
            };
            let r = pipeline::summarize(&cfg, mode.into(), &opts).map_err(|e| e.in_stage("summarize"))?;
            println!(
                "{} on {}: R1 {:.4} R2 {:.4} RL {:.4}",
                r.mode.as_str(),
                r.split,
                r.rouge.r1.f1,
                r.rouge.r2.f1,
                r.rouge.rl.f1
            );
            warn_fallbacks(r.fallbacks);
        }
        Command::Evaluate => print_evaluation(&pipeline::evaluate(&cfg).map_err(|e| e.in_stage("evaluate"))?),
        Command::Run => print_evaluation(&pipeline::run_pipeline(&cfg)?),
    }
    Ok(())
}

fn print_evaluation(r: &pipeline::EvaluationReport) {
    for m in &r.modes {
        println!(
            "{:<9} R1 {:.4} R2 {:.4} RL {:.4}",
            m.mode.as_str(),
            m.rouge.r1.f1,
            m.rouge.r2.f1,
            m.rouge.rl.f1
        );
        warn_fallbacks(m.fallbacks);
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli).context("headmask failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
