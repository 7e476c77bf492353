//! Uncertainty diagnostics for a fitted model.

mod ablation;
mod connectivity;
mod entropy;
mod ppc;

use std::io;

use thiserror::Error;

use crate::inference::InferenceError;
use crate::observation::CountError;

pub use ablation::{collector_ablation, collector_orderings, AblationCurve, AblationOptions, AblationPoint};
pub use connectivity::{
    connectivity_stats, positive_union_edges, ConnectivityStats, CENTRALITY_MAX_ITERS, CENTRALITY_TOL,
};
pub use entropy::{
    edge_entropy, group_entropy, node_entropy, normalized_entropy, normalized_entropy_from, q_histogram, EntropyReport,
    GroupEntropy, GroupMap, QHistogram,
};
pub use ppc::{posterior_predictive_check, PpcHistogram, PPC_BINS, PPC_BIN_WIDTH};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("{0} is not a probability")]
    InvalidProbability(f64),
    #[error("prior rho = {0} has zero entropy; normalization is undefined")]
    DegeneratePrior(f64),
    #[error("a collector prefix must contain at least one collector")]
    EmptyPrefix,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Count(#[from] CountError),
    #[error(transparent)]
    Io(#[from] io::Error),
}
