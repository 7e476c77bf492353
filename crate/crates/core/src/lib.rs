//! Bayesian inference of AS-level topology from route collector paths.
//!
//! The pipeline runs in stages:
//!
//! 1. [`ingest`] parses canonical path files into [`PathRecord`]s.
//! 2. [`snapshot`] builds the union graph of every (collector, period) and
//!    its BFS levels from the collector root.
//! 3. [`observation`] counts positive and negative observations per AS pair
//!    and groups pairs into observation classes.
//! 4. [`inference`] fits per-collector true/false positive rates and the edge
//!    prior by EM, and gives every pair an edge posterior `Q`.
//! 5. [`analytics`] and [`evaluation`] summarize uncertainty and score
//!    candidate edge sets.
//!
//! [`simulator`] generates planted topologies with noisy observations for
//! end-to-end checks.

pub mod analytics;
pub mod evaluation;
pub mod inference;
pub mod ingest;
pub mod math;
pub mod observation;
pub mod pipeline;
pub mod simulator;
pub mod snapshot;

pub use evaluation::{EdgePosteriors, Reconstruction, Score};
pub use inference::{FittedModel, ModelParams};
pub use ingest::{AsRegistry, Asn, NodeId, PathRecord, PathSet};
pub use observation::{ClassTable, ObservationClass, ObservationVector, PairStore};
pub use simulator::{SimConfig, Simulation};
pub use snapshot::{LevelArray, SnapshotGraph};
