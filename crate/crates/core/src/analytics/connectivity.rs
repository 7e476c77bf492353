//! Degree and eigenvector centrality in the union of positive observations.

use std::collections::VecDeque;

use crate::ingest::NodeId;
use crate::observation::{any_positive, PairStore};

pub const CENTRALITY_TOL: f64 = 1e-9;
pub const CENTRALITY_MAX_ITERS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityStats {
    pub degree: Vec<usize>,
    /// L2-normalized over the largest component; zero elsewhere.
    pub centrality: Vec<f64>,
    pub component_size: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Pairs positively observed at least once.
pub fn positive_union_edges(store: &PairStore) -> Vec<(NodeId, NodeId)> {
    store.iter().filter(|(_, v)| any_positive(v)).map(|(p, _)| p).collect()
}

fn adjacency(n: usize, edges: &[(NodeId, NodeId)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i != j {
            adj[i as usize].push(j as usize);
            adj[j as usize].push(i as usize);
        }
    }
    for row in &mut adj {
        row.sort_unstable();
        row.dedup();
    }
    adj
}

/// Members of the largest connected component (lowest-id component on ties).
fn largest_component(adj: &[Vec<usize>]) -> Vec<usize> {
    let mut comp = vec![usize::MAX; adj.len()];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..adj.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut members = vec![start];
        comp[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = start;
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    best.sort_unstable();
    best
}

/// Degrees plus eigenvector centrality by power iteration.
///
/// Iterating on `A + I` keeps bipartite components (stars, trees) from
/// oscillating; the leading eigenvector is unchanged.
pub fn connectivity_stats(n: usize, edges: &[(NodeId, NodeId)]) -> ConnectivityStats {
    let adj = adjacency(n, edges);
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let comp = largest_component(&adj);
    let mut centrality = vec![0.0; n];
    if comp.is_empty() {
        return ConnectivityStats { degree, centrality, component_size: 0, iterations: 0, converged: true };
    }
    let mut x = vec![0.0; n];
    let init = 1.0 / (comp.len() as f64).sqrt();
    for &u in &comp {
        x[u] = init;
    }
    let mut y = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < CENTRALITY_MAX_ITERS {
        iterations += 1;
        for &u in &comp {
            y[u] = x[u] + adj[u].iter().map(|&v| x[v]).sum::<f64>();
        }
        let norm = comp.iter().map(|&u| y[u] * y[u]).sum::<f64>().sqrt();
        let mut delta: f64 = 0.0;
        for &u in &comp {
            let v = y[u] / norm;
            delta = delta.max((v - x[u]).abs());
            x[u] = v;
        }
        if delta < CENTRALITY_TOL {
            converged = true;
            break;
        }
    }
    for &u in &comp {
        centrality[u] = x[u].max(0.0);
    }
    ConnectivityStats { degree, centrality, component_size: comp.len(), iterations, converged }
}
