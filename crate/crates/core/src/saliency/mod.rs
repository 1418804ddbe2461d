//! Saliency labels: oracle alignment against the reference, the tagger that
//! predicts them from the source alone, and decision-boundary tuning.

mod boundary;
mod oracle;
mod tagger;

pub use boundary::{threshold_labels, tune_boundary, tune_boundary_from_probabilities, DecisionBoundary, TokenCounts};
pub use oracle::{align_runs, oracle_labels, AlignedRun};
pub use tagger::{predict_saliency, MlpSlots, TaggerParams};

pub(crate) use tagger::{bce_loss, bce_on_states, probabilities_on_states};
