//! Per-(collector, period) union graphs and their BFS level arrays.

use std::collections::{HashMap, VecDeque};
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{NodeId, PathRecord, PathSet};

/// Distance value for nodes that are absent from a snapshot.
pub const ABSENT: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("no path records for collector {collector}, period {period}")]
    NoRecords { collector: usize, period: usize },
    #[error("records mix collectors/periods: expected ({0}, {1}), found ({2}, {3})")]
    MixedRecords(usize, usize, usize, usize),
    #[error("node {node} is outside the registry of {num_nodes} nodes")]
    NodeOutOfRange { node: NodeId, num_nodes: usize },
    #[error("root {0} does not appear on any path")]
    RootNotOnPath(NodeId),
}

/// Undirected union graph `G_{k,t}` of the paths one collector reported in
/// one period, restricted to the component reachable from the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotGraph {
    pub collector: usize,
    pub period: usize,
    pub root: NodeId,
    num_nodes: usize,
    /// Present nodes, ascending.
    nodes: Vec<NodeId>,
    /// CSR offsets into `neighbors`, indexed like `nodes`.
    offsets: Vec<usize>,
    /// Global ids of neighbors, ascending within each row.
    neighbors: Vec<NodeId>,
    /// Nodes that appeared on some path but were unreachable from the root.
    pub pruned: usize,
}

impl SnapshotGraph {
    /// Size of the registry this snapshot was built against.
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    fn local(&self, node: NodeId) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.local(node).is_some()
    }

    /// Neighbors of `node`; empty if the node is absent.
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        match self.local(node) {
            Some(l) => &self.neighbors[self.offsets[l]..self.offsets[l + 1]],
            None => &[],
        }
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Edges as `(i, j)` with `i < j`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes.iter().enumerate().flat_map(move |(l, &i)| {
            self.neighbors[self.offsets[l]..self.offsets[l + 1]].iter().filter(move |&&j| j > i).map(move |&j| (i, j))
        })
    }

    /// Writes the sorted `i j` edge list (debug dump).
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, j) in self.edges() {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }
}

/// Most frequent first node over `records`; ties go to the earliest seen.
fn majority_first_node(records: &[&PathRecord]) -> NodeId {
    let mut counts: HashMap<NodeId, (usize, usize)> = HashMap::new();
    for (order, rec) in records.iter().enumerate() {
        let e = counts.entry(rec.nodes[0]).or_insert((0, order));
        e.0 += 1;
    }
    let (&root, _) =
        counts.iter().max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1))).expect("records are non-empty");
    root
}

/// Builds `G_{k,t}` from the records of one (collector, period), rooted at the
/// most frequent first AS.
pub fn build_snapshot(records: &[&PathRecord], num_nodes: usize) -> Result<SnapshotGraph, SnapshotError> {
    let first = records.first().ok_or(SnapshotError::NoRecords { collector: 0, period: 0 })?;
    if first.nodes.is_empty() {
        return Err(SnapshotError::NoRecords { collector: first.collector, period: first.period });
    }
    let root = majority_first_node(records);
    build_snapshot_with_root(records, num_nodes, root)
}

/// Builds `G_{k,t}` with an explicitly chosen root.
pub fn build_snapshot_with_root(
    records: &[&PathRecord],
    num_nodes: usize,
    root: NodeId,
) -> Result<SnapshotGraph, SnapshotError> {
    let first = records.first().ok_or(SnapshotError::NoRecords { collector: 0, period: 0 })?;
    let (collector, period) = (first.collector, first.period);

    let mut arcs: Vec<(NodeId, NodeId)> = Vec::new();
    let mut seen: Vec<NodeId> = Vec::new();
    for rec in records {
        if rec.collector != collector || rec.period != period {
            return Err(SnapshotError::MixedRecords(collector, period, rec.collector, rec.period));
        }
        for &n in &rec.nodes {
            if n as usize >= num_nodes {
                return Err(SnapshotError::NodeOutOfRange { node: n, num_nodes });
            }
        }
        seen.extend_from_slice(&rec.nodes);
        for w in rec.nodes.windows(2) {
            if w[0] != w[1] {
                arcs.push((w[0], w[1]));
                arcs.push((w[1], w[0]));
            }
        }
    }
    seen.sort_unstable();
    seen.dedup();
    if seen.binary_search(&root).is_err() {
        return Err(SnapshotError::RootNotOnPath(root));
    }
    arcs.sort_unstable();
    arcs.dedup();

    // Reachability over the unpruned arc list.
    let row = |n: NodeId| {
        let lo = arcs.partition_point(|a| a.0 < n);
        let hi = arcs.partition_point(|a| a.0 <= n);
        &arcs[lo..hi]
    };
    let mut reached = vec![false; seen.len()];
    let pos = |n: NodeId| seen.binary_search(&n).expect("node seen");
    let mut queue = VecDeque::from([root]);
    reached[pos(root)] = true;
    while let Some(u) = queue.pop_front() {
        for &(_, v) in row(u) {
            let p = pos(v);
            if !reached[p] {
                reached[p] = true;
                queue.push_back(v);
            }
        }
    }
    let nodes: Vec<NodeId> = seen.iter().zip(&reached).filter(|(_, &r)| r).map(|(&n, _)| n).collect();
    let pruned = seen.len() - nodes.len();

    // Arcs are sorted by source, so rows for kept nodes are contiguous.
    let mut offsets = Vec::with_capacity(nodes.len() + 1);
    let mut neighbors = Vec::new();
    offsets.push(0);
    for &n in &nodes {
        neighbors.extend(row(n).iter().map(|a| a.1));
        offsets.push(neighbors.len());
    }
    Ok(SnapshotGraph { collector, period, root, num_nodes, nodes, offsets, neighbors, pruned })
}

/// Builds every snapshot present in `set`, ordered by (collector, period).
pub fn build_all(set: &PathSet) -> Result<Vec<SnapshotGraph>, SnapshotError> {
    let mut groups: HashMap<(usize, usize), Vec<&PathRecord>> = HashMap::new();
    for rec in &set.records {
        groups.entry((rec.collector, rec.period)).or_default().push(rec);
    }
    let mut keys: Vec<(usize, usize)> = groups.keys().copied().collect();
    keys.sort_unstable();
    let n = set.registry.len();
    keys.par_iter().map(|key| build_snapshot(&groups[key], n)).collect()
}

/// Hop distances from a snapshot's root, indexed by node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelArray {
    dist: Vec<u32>,
}

impl LevelArray {
    /// Distance of `node`, or `None` if it is absent from the snapshot.
    pub fn get(&self, node: NodeId) -> Option<u32> {
        match self.dist[node as usize] {
            ABSENT => None,
            d => Some(d),
        }
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.dist
    }

    /// Present nodes grouped by level: `buckets[d]` holds the nodes at distance `d`.
    pub fn buckets(&self) -> Vec<Vec<NodeId>> {
        let mut buckets: Vec<Vec<NodeId>> = Vec::new();
        for (node, &d) in self.dist.iter().enumerate() {
            if d == ABSENT {
                continue;
            }
            let d = d as usize;
            if buckets.len() <= d {
                buckets.resize_with(d + 1, Vec::new);
            }
            buckets[d].push(node as NodeId);
        }
        buckets
    }
}

/// Unweighted shortest-path hop counts from `g.root`.
pub fn bfs_levels(g: &SnapshotGraph) -> LevelArray {
    let mut dist = vec![ABSENT; g.num_nodes];
    let mut queue = VecDeque::with_capacity(g.node_count());
    dist[g.root as usize] = 0;
    queue.push_back(g.root);
    while let Some(u) = queue.pop_front() {
        let du = dist[u as usize];
        for &v in g.neighbors(u) {
            if dist[v as usize] == ABSENT {
                dist[v as usize] = du + 1;
                queue.push_back(v);
            }
        }
    }
    LevelArray { dist }
}
