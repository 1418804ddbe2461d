use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Every position of a softmax row was −∞.
    #[error("all attention positions are masked")]
    AllMasked,

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ingestion failed for {path}: {}", format_line_errors(.lines))]
    Ingest { path: PathBuf, lines: Vec<(usize, String)> },

    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Training { epoch: usize, step: usize, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_line_errors(lines: &[(usize, String)]) -> String {
    lines
        .iter()
        .map(|(line, msg)| format!("line {line}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 training,
    /// 4 inference/analysis.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Ingest { .. } | Error::Json(_) => 2,
            Error::Training { .. } => 3,
            Error::Shape(_) | Error::AllMasked | Error::Input(_) | Error::Checkpoint(_) => 4,
            Error::Io(_) => 2,
            Error::Stage { stage, source } => match source.as_ref() {
                Error::Config(_) => 1,
                Error::Ingest { .. } | Error::Json(_) | Error::Io(_) => 2,
                Error::Training { .. } => 3,
                Error::Input(_) if matches!(*stage, "gen-data" | "train" | "train-tagger") => 2,
                _ => match *stage {
                    "gen-data" => 2,
                    "train" | "train-tagger" => 3,
                    _ => 4,
                },
            },
        }
    }
}
