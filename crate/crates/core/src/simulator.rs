//! Synthetic topologies and noisy collector paths with known ground truth.
//!
//! Node `i` is written as AS `i + 1`. Collector `k` is labelled `rc{k}` and
//! period `t` is labelled `{t}`.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ingest::{parse_paths, Asn, IngestError, NodeId};
use crate::observation::{negatives, positives};
use crate::pipeline::{observe, PipelineError};

/// Graph draws attempted before giving up on a connected topology.
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no connected graph after {0} attempts")]
    Disconnected(usize),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphModel {
    /// Each pair is an edge independently with probability `density`.
    Uniform { density: f64 },
    /// Each new node attaches to `m` existing nodes chosen by degree.
    PreferentialAttachment { m: usize },
}

impl fmt::Display for GraphModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphModel::Uniform { density } => write!(f, "uniform {density}"),
            GraphModel::PreferentialAttachment { m } => write!(f, "preferential {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nodes: usize,
    pub graph: GraphModel,
    pub collectors: usize,
    pub periods: usize,
    /// Probability that an emitted path is dropped.
    pub p_miss: f64,
    /// Per (collector, period) probability that one emitted path carries a
    /// fake adjacency.
    pub p_false_edge: f64,
    /// Per-period probability that a node re-picks its next hop.
    pub p_reroute: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            graph: GraphModel::PreferentialAttachment { m: 2 },
            collectors: 5,
            periods: 5,
            p_miss: 0.05,
            p_false_edge: 0.001,
            p_reroute: 0.1,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::InvalidConfig(s));
        for (name, p) in [("p_miss", self.p_miss), ("p_false_edge", self.p_false_edge), ("p_reroute", self.p_reroute)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.collectors == 0 || self.collectors > self.nodes {
            return bad(format!("need 1 <= collectors <= nodes, got {} and {}", self.collectors, self.nodes));
        }
        if self.periods == 0 {
            return bad("need at least one period".into());
        }
        match self.graph {
            GraphModel::Uniform { density } if !(density > 0.0 && density <= 1.0) => {
                bad(format!("density {density} outside (0, 1]"))
            }
            GraphModel::PreferentialAttachment { m } if m == 0 || m >= self.nodes => {
                bad(format!("attachment count {m} must be in 1..{}", self.nodes))
            }
            _ => Ok(()),
        }
    }

    fn write<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "nodes {}", self.nodes)?;
        writeln!(out, "graph {}", self.graph)?;
        writeln!(out, "collectors {}", self.collectors)?;
        writeln!(out, "periods {}", self.periods)?;
        writeln!(out, "p_miss {}", self.p_miss)?;
        writeln!(out, "p_false_edge {}", self.p_false_edge)?;
        writeln!(out, "p_reroute {}", self.p_reroute)?;
        writeln!(out, "seed {}", self.seed)
    }
}

/// One emitted path, root first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimPath {
    pub collector: usize,
    pub period: usize,
    pub nodes: Vec<NodeId>,
}

/// A fake adjacency placed on one emitted path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    pub collector: usize,
    pub period: usize,
    /// Destination of the corrupted path.
    pub target: NodeId,
    /// The non-existent edge, `(min, max)`.
    pub edge: (NodeId, NodeId),
    /// Appended after the destination rather than spliced mid-path.
    pub last_hop: bool,
}

/// Observed frequencies of positive observations on true edges and on
/// non-edges, `sum E / sum (E + F)`. `None` when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalRates {
    pub true_positive: Option<f64>,
    pub false_positive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub config: SimConfig,
    /// Sorted, `i < j`.
    pub edges: Vec<(NodeId, NodeId)>,
    pub roots: Vec<NodeId>,
    pub paths: Vec<SimPath>,
    pub corruptions: Vec<Corruption>,
    /// Indexed by collector.
    pub rates: Vec<EmpiricalRates>,
}

pub fn node_asn(node: NodeId) -> Asn {
    Asn(node + 1)
}

pub fn collector_label(k: usize) -> String {
    format!("rc{k}")
}

impl Simulation {
    /// Canonical paths file.
    pub fn write_paths<W: Write>(&self, mut out: W) -> io::Result<()> {
        for p in &self.paths {
            write!(out, "{}\t{}\t", collector_label(p.collector), p.period)?;
            for (i, &n) in p.nodes.iter().enumerate() {
                if i > 0 {
                    out.write_all(b" ")?;
                }
                write!(out, "{}", node_asn(n))?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// `as1 as2` per true edge.
    pub fn write_truth<W: Write>(&self, mut out: W) -> io::Result<()> {
        for &(a, b) in &self.edges {
            writeln!(out, "{} {}", node_asn(a), node_asn(b))?;
        }
        Ok(())
    }

    pub fn write_manifest<W: Write>(&self, mut out: W) -> io::Result<()> {
        let fmt_rate = |r: Option<f64>| r.map_or("nan".to_string(), |v| format!("{v:.16e}"));
        writeln!(out, "# config")?;
        self.config.write(&mut out)?;
        writeln!(out, "# roots: collector asn")?;
        for (k, &r) in self.roots.iter().enumerate() {
            writeln!(out, "root {} {}", collector_label(k), node_asn(r))?;
        }
        writeln!(out, "# empirical rates: collector true_positive false_positive")?;
        for (k, r) in self.rates.iter().enumerate() {
            writeln!(out, "rate {} {} {}", collector_label(k), fmt_rate(r.true_positive), fmt_rate(r.false_positive))?;
        }
        writeln!(out, "# true edges: {}", self.edges.len())?;
        for &(a, b) in &self.edges {
            writeln!(out, "edge {} {}", node_asn(a), node_asn(b))?;
        }
        writeln!(out, "# corruptions: collector period target asn1 asn2 kind")?;
        for c in &self.corruptions {
            writeln!(
                out,
                "fake {} {} {} {} {} {}",
                collector_label(c.collector),
                c.period,
                node_asn(c.target),
                node_asn(c.edge.0),
                node_asn(c.edge.1),
                if c.last_hop { "last_hop" } else { "splice" }
            )?;
        }
        Ok(())
    }

    /// The paths file as a string.
    pub fn paths_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_paths(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

struct Graph {
    adj: Vec<Vec<usize>>,
}

impl Graph {
    fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a as usize].push(b as usize);
            adj[b as usize].push(a as usize);
        }
        for row in &mut adj {
            row.sort_unstable();
        }
        Self { adj }
    }

    fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    fn distances(&self, root: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.adj.len()];
        dist[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

fn uniform_graph(n: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<(NodeId, NodeId)> {
    let mut edges = Vec::new();
    for a in 0..n as NodeId {
        for b in a + 1..n as NodeId {
            if rng.random::<f64>() < density {
                edges.push((a, b));
            }
        }
    }
    edges
}

/// Starts from a clique on `m + 1` nodes; each later node links to `m`
/// distinct earlier nodes sampled proportionally to degree.
fn preferential_graph(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<(NodeId, NodeId)> {
    let mut edges = Vec::new();
    let mut endpoints: Vec<NodeId> = Vec::new();
    let seed = (m + 1).min(n) as NodeId;
    for a in 0..seed {
        for b in a + 1..seed {
            edges.push((a, b));
            endpoints.extend([a, b]);
        }
    }
    for v in seed..n as NodeId {
        let mut targets: Vec<NodeId> = Vec::with_capacity(m);
        while targets.len() < m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            edges.push((t, v));
            endpoints.extend([t, v]);
        }
    }
    edges.sort_unstable();
    edges
}

fn pick(rng: &mut ChaCha8Rng, items: &[usize]) -> usize {
    items[rng.random_range(0..items.len())]
}

/// Inserts one fake adjacency into `path`, returning the fake edge and
/// whether it was appended at the end.
fn corrupt(path: &mut Vec<usize>, g: &Graph, rng: &mut ChaCha8Rng) -> Option<((usize, usize), bool)> {
    let on_path = |y: usize, p: &[usize]| p.contains(&y);
    let mut splices = Vec::new();
    for i in 0..path.len() - 1 {
        for &y in &g.adj[path[i + 1]] {
            if !on_path(y, path) && !g.has_edge(path[i], y) {
                splices.push((i, y));
            }
        }
    }
    if !splices.is_empty() {
        let (i, y) = splices[rng.random_range(0..splices.len())];
        let a = path[i];
        path.insert(i + 1, y);
        return Some(((a.min(y), a.max(y)), false));
    }
    let last = *path.last().expect("non-empty path");
    let tails: Vec<usize> = (0..g.adj.len()).filter(|&y| !on_path(y, path) && !g.has_edge(last, y)).collect();
    if tails.is_empty() {
        return None;
    }
    let y = pick(rng, &tails);
    path.push(y);
    Some(((last.min(y), last.max(y)), true))
}

/// Builds a topology, emits noisy paths for every collector and period, and
/// records what was planted.
pub fn generate_ground_truth(cfg: &SimConfig) -> Result<Simulation, SimError> {
    cfg.validate()?;
    let n = cfg.nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut found = None;
    for _ in 0..MAX_ATTEMPTS {
        let edges = match cfg.graph {
            GraphModel::Uniform { density } => uniform_graph(n, density, &mut rng),
            GraphModel::PreferentialAttachment { m } => preferential_graph(n, m, &mut rng),
        };
        let g = Graph::from_edges(n, &edges);
        if g.distances(0).iter().all(|&d| d != usize::MAX) {
            found = Some((edges, g));
            break;
        }
    }
    let (edges, g) = found.ok_or(SimError::Disconnected(MAX_ATTEMPTS))?;

    let roots: Vec<usize> = rand::seq::index::sample(&mut rng, n, cfg.collectors).into_vec();

    let mut paths = Vec::new();
    let mut corruptions = Vec::new();
    for (k, &root) in roots.iter().enumerate() {
        let dist = g.distances(root);
        let uphill: Vec<Vec<usize>> =
            (0..n).map(|v| g.adj[v].iter().copied().filter(|&u| dist[u] + 1 == dist[v]).collect()).collect();
        let mut parent: Vec<usize> =
            (0..n).map(|v| if v == root { root } else { pick(&mut rng, &uphill[v]) }).collect();
        for t in 0..cfg.periods {
            if t > 0 {
                for v in (0..n).filter(|&v| v != root) {
                    if rng.random::<f64>() < cfg.p_reroute {
                        parent[v] = pick(&mut rng, &uphill[v]);
                    }
                }
            }
            let mut emitted: Vec<Vec<usize>> = Vec::new();
            for target in (0..n).filter(|&v| v != root) {
                if rng.random::<f64>() < cfg.p_miss {
                    continue;
                }
                let mut path = vec![target];
                while *path.last().expect("non-empty") != root {
                    path.push(parent[*path.last().expect("non-empty")]);
                }
                path.reverse();
                emitted.push(path);
            }
            if rng.random::<f64>() < cfg.p_false_edge && !emitted.is_empty() {
                let idx = rng.random_range(0..emitted.len());
                let target = *emitted[idx].last().expect("non-empty") as NodeId;
                if let Some(((a, b), last_hop)) = corrupt(&mut emitted[idx], &g, &mut rng) {
                    corruptions.push(Corruption {
                        collector: k,
                        period: t,
                        target,
                        edge: (a as NodeId, b as NodeId),
                        last_hop,
                    });
                }
            }
            paths.extend(emitted.into_iter().map(|path| SimPath {
                collector: k,
                period: t,
                nodes: path.into_iter().map(|v| v as NodeId).collect(),
            }));
        }
    }

    let mut sim = Simulation {
        config: cfg.clone(),
        edges,
        roots: roots.into_iter().map(|r| r as NodeId).collect(),
        paths,
        corruptions,
        rates: Vec::new(),
    };
    sim.rates = empirical_rates(&sim, &g)?;
    Ok(sim)
}

/// Runs the emitted paths through the regular counting pipeline and splits
/// the counts by ground truth.
fn empirical_rates(sim: &Simulation, g: &Graph) -> Result<Vec<EmpiricalRates>, SimError> {
    let set = parse_paths(sim.paths_text().as_bytes())?;
    let store = observe(&set)?;
    let label_to_k: HashMap<String, usize> = (0..sim.config.collectors).map(|k| (collector_label(k), k)).collect();
    let mut sums = vec![[0u64; 4]; sim.config.collectors];
    for ((a, b), v) in store.iter() {
        let (x, y) = (set.registry.asn(a).0 as usize - 1, set.registry.asn(b).0 as usize - 1);
        let offset = if g.has_edge(x, y) { 0 } else { 2 };
        for (idx, label) in set.collectors.iter().enumerate() {
            let k = label_to_k[label];
            let e = positives(v, idx) as u64;
            sums[k][offset] += e;
            sums[k][offset + 1] += e + negatives(v, idx) as u64;
        }
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    Ok(sums
        .iter()
        .map(|s| EmpiricalRates { true_positive: ratio(s[0], s[1]), false_positive: ratio(s[2], s[3]) })
        .collect())
}
