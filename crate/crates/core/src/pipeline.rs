//! Paths to per-pair observation counts in one call.

use thiserror::Error;

use crate::ingest::PathSet;
use crate::observation::{count_observations, CountError, PairStore};
use crate::snapshot::{bfs_levels, build_all, SnapshotError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Count(#[from] CountError),
}

/// Builds every snapshot in `set`, levels it, and counts observations.
pub fn observe(set: &PathSet) -> Result<PairStore, PipelineError> {
    let snaps: Vec<_> = build_all(set)?
        .into_iter()
        .map(|s| {
            let lv = bfs_levels(&s);
            (s, lv)
        })
        .collect();
    Ok(count_observations(&snaps, set.registry.len(), set.num_collectors(), set.num_periods())?)
}
