//! Scoring proposed edge sets against fitted edge posteriors.

use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::analytics::positive_union_edges;
use crate::inference::{class_log_likelihoods, ModelParams};
use crate::ingest::{AsRegistry, Asn, NodeId};
use crate::math::{chunked_reduce, sigmoid};
use crate::observation::{CountError, PairStore};

/// Clamp applied to `Q` before taking logs.
pub const Q_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reconstruction '{0}' has no scorable edges; precision is undefined")]
    EmptyReconstruction(String),
    #[error("threshold {0} is outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("ranking needs at least one edge and one non-edge")]
    NoContrast,
    #[error("node {node} is outside the {nodes}-node registry")]
    NodeOutOfRange { node: NodeId, nodes: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Count(#[from] CountError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A proposed edge set over registry node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconstruction {
    pub label: String,
    /// Sorted, deduplicated, `i < j`.
    pub edges: Vec<(NodeId, NodeId)>,
    /// Input edges with an endpoint unknown to the registry.
    pub unmatched: usize,
}

impl Reconstruction {
    /// Normalizes orientation, drops self-loops and duplicates.
    pub fn from_edges(label: impl Into<String>, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Self {
        let mut edges: Vec<(NodeId, NodeId)> =
            edges.into_iter().filter(|(a, b)| a != b).map(|(a, b)| (a.min(b), a.max(b))).collect();
        edges.sort_unstable();
        edges.dedup();
        Self { label: label.into(), edges, unmatched: 0 }
    }

    /// Reads `as1 as2` lines, or `as1|as2|...` lines as in AS relationship
    /// dumps. Extra columns are ignored.
    pub fn read<R: BufRead>(reader: R, registry: &AsRegistry, label: impl Into<String>) -> Result<Self, EvalError> {
        let mut edges = Vec::new();
        let mut unmatched = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = if t.contains('|') {
                t.split('|').map(str::trim).collect()
            } else {
                t.split_ascii_whitespace().collect()
            };
            if fields.len() < 2 {
                return Err(EvalError::Parse { line: i + 1, reason: "expected two AS numbers".into() });
            }
            let parse = |s: &str| {
                s.parse::<Asn>()
                    .map_err(|_| EvalError::Parse { line: i + 1, reason: format!("invalid AS number '{s}'") })
            };
            let (a, b) = (parse(fields[0])?, parse(fields[1])?);
            match (registry.get(a), registry.get(b)) {
                (Some(x), Some(y)) => edges.push((x, y)),
                _ => unmatched += 1,
            }
        }
        let mut rec = Self::from_edges(label, edges);
        rec.unmatched = unmatched;
        Ok(rec)
    }

    /// `as1 as2` per edge, in node-id order.
    pub fn write<W: Write>(&self, registry: &AsRegistry, mut out: W) -> io::Result<()> {
        for &(a, b) in &self.edges {
            writeln!(out, "{} {}", registry.asn(a), registry.asn(b))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }
}

/// Per-pair posteriors for a store plus the prior for unobserved pairs.
#[derive(Debug, Clone)]
pub struct EdgePosteriors<'a> {
    store: &'a PairStore,
    q: Vec<f64>,
    /// `1 - Q`, computed without cancellation.
    not_q: Vec<f64>,
    rho: f64,
    total_pairs: u64,
}

impl<'a> EdgePosteriors<'a> {
    pub fn new(store: &'a PairStore, params: &ModelParams) -> Result<Self, EvalError> {
        let total_pairs = store.total_pairs()?;
        let (q, not_q) = (0..store.len())
            .map(|i| {
                let v = store.vector(i);
                if v.iter().all(|&x| x == 0) {
                    (params.rho, 1.0 - params.rho)
                } else {
                    let (la, lb) = class_log_likelihoods(v, params);
                    (sigmoid(la - lb), sigmoid(lb - la))
                }
            })
            .unzip();
        Ok(Self { store, q, not_q, rho: params.rho, total_pairs })
    }

    pub fn store(&self) -> &PairStore {
        self.store
    }

    pub fn pair_q(&self) -> &[f64] {
        &self.q
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn total_pairs(&self) -> u64 {
        self.total_pairs
    }

    /// Pairs absent from the store; they all share the prior.
    pub fn unobserved_pairs(&self) -> u64 {
        self.total_pairs - self.store.len() as u64
    }

    pub fn q(&self, a: NodeId, b: NodeId) -> f64 {
        match self.store.position(a.min(b), a.max(b)) {
            Some(i) => self.q[i],
            None => self.rho,
        }
    }

    fn check(&self, rec: &Reconstruction) -> Result<(), EvalError> {
        let n = self.store.num_nodes();
        match rec.edges.iter().flat_map(|&(a, b)| [a, b]).find(|&x| x as usize >= n) {
            Some(node) => Err(EvalError::NodeOutOfRange { node, nodes: n }),
            None => Ok(()),
        }
    }
}

fn clamped_ln(x: f64, clamps: &mut u64) -> f64 {
    if !(Q_EPS..=1.0 - Q_EPS).contains(&x) {
        *clamps += 1;
    }
    x.clamp(Q_EPS, 1.0 - Q_EPS).ln()
}

/// Scores for one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub label: String,
    pub log_q: f64,
    pub precision: f64,
    pub recall: f64,
    pub edges_scored: usize,
    pub edges_unmatched: usize,
    /// Log terms whose probability was clamped.
    pub clamped: u64,
}

impl Score {
    pub const HEADER: &'static str = "label\tlog_q\tprecision\trecall\tedges_scored\tedges_unmatched\tclamped";

    pub fn write_row<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "{}\t{:.10e}\t{:.10}\t{:.10}\t{}\t{}\t{}",
            self.label, self.log_q, self.precision, self.recall, self.edges_scored, self.edges_unmatched, self.clamped
        )
    }
}

/// Log-probability of the adjacency matrix given by `rec`, plus the number
/// of clamped terms. Works for empty reconstructions.
pub fn log_q(rec: &Reconstruction, post: &EdgePosteriors) -> Result<(f64, u64), EvalError> {
    post.check(rec)?;
    let store = post.store;
    let mut member = vec![false; store.len()];
    let mut unobserved_members = 0u64;
    for &(a, b) in &rec.edges {
        match store.position(a, b) {
            Some(i) => member[i] = true,
            None => unobserved_members += 1,
        }
    }
    let acc = chunked_reduce(store.len(), 2, |range, acc| {
        let mut clamps = 0;
        for i in range {
            acc[0] +=
                if member[i] { clamped_ln(post.q[i], &mut clamps) } else { clamped_ln(post.not_q[i], &mut clamps) };
        }
        acc[1] += clamps as f64;
    });
    let mut clamps = acc[1] as u64;
    let off = post.unobserved_pairs() - unobserved_members;
    let mut total = acc[0];
    if off > 0 {
        let before = clamps;
        total += off as f64 * clamped_ln(1.0 - post.rho, &mut clamps);
        clamps = before + (clamps - before) * off;
    }
    if unobserved_members > 0 {
        let before = clamps;
        total += unobserved_members as f64 * clamped_ln(post.rho, &mut clamps);
        clamps = before + (clamps - before) * unobserved_members;
    }
    Ok((total, clamps))
}

/// Log-probability, precision and recall of `rec`.
pub fn score_reconstruction(rec: &Reconstruction, post: &EdgePosteriors) -> Result<Score, EvalError> {
    if rec.is_empty() {
        return Err(EvalError::EmptyReconstruction(rec.label.clone()));
    }
    let (lq, clamped) = log_q(rec, post)?;
    let included: f64 = rec.edges.iter().map(|&(a, b)| post.q(a, b)).sum();
    let stored_sum = chunked_reduce(post.q.len(), 1, |r, acc| acc[0] += post.q[r].iter().sum::<f64>())[0];
    let expected_edges = stored_sum + post.unobserved_pairs() as f64 * post.rho;
    Ok(Score {
        label: rec.label.clone(),
        log_q: lq,
        precision: included / rec.len() as f64,
        recall: included / expected_edges,
        edges_scored: rec.len(),
        edges_unmatched: rec.unmatched,
        clamped,
    })
}

/// Every pair with `Q > tau`. Unobserved pairs are included only when the
/// prior itself exceeds `tau`.
pub fn threshold_reconstruction(post: &EdgePosteriors, tau: f64) -> Result<Reconstruction, EvalError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(EvalError::InvalidThreshold(tau));
    }
    let store = post.store;
    let mut edges: Vec<(NodeId, NodeId)> =
        (0..store.len()).filter(|&i| post.q[i] > tau).map(|i| store.pair(i)).collect();
    if post.rho > tau {
        let n = store.num_nodes() as NodeId;
        for a in 0..n {
            for b in a + 1..n {
                if store.position(a, b).is_none() {
                    edges.push((a, b));
                }
            }
        }
    }
    Ok(Reconstruction::from_edges(format!("tau={tau}"), edges))
}

/// Union of all positively observed pairs.
pub fn naive_reconstruction(store: &PairStore) -> Reconstruction {
    Reconstruction::from_edges("naive", positive_union_edges(store))
}

/// Area under the ROC curve of `Q` as a score for membership in `truth`,
/// over all pairs. Ties count one half.
pub fn ranking_auc(post: &EdgePosteriors, truth: &Reconstruction) -> Result<f64, EvalError> {
    post.check(truth)?;
    let store = post.store;
    let truth_set: HashSet<(NodeId, NodeId)> = truth.edges.iter().copied().collect();
    // (score, positives, negatives)
    let mut groups: Vec<(f64, u64, u64)> = (0..store.len())
        .map(|i| if truth_set.contains(&store.pair(i)) { (post.q[i], 1, 0) } else { (post.q[i], 0, 1) })
        .collect();
    let stored_truth = (0..store.len()).filter(|&i| truth_set.contains(&store.pair(i))).count() as u64;
    let hidden_pos = truth.len() as u64 - stored_truth;
    let hidden = post.unobserved_pairs();
    groups.push((post.rho, hidden_pos, hidden - hidden_pos));
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));

    let positives: u64 = groups.iter().map(|g| g.1).sum();
    let negatives: u64 = groups.iter().map(|g| g.2).sum();
    if positives == 0 || negatives == 0 {
        return Err(EvalError::NoContrast);
    }
    let mut wins = 0.0;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < groups.len() {
        let (mut pos, mut neg) = (0u64, 0u64);
        let mut j = i;
        while j < groups.len() && groups[j].0 == groups[i].0 {
            pos += groups[j].1;
            neg += groups[j].2;
            j += 1;
        }
        wins += pos as f64 * (neg_below as f64 + 0.5 * neg as f64);
        neg_below += neg;
        i = j;
    }
    Ok(wins / (positives as f64 * negatives as f64))
}
