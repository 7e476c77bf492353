use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use super::AnalyticsError;
use crate::inference::FittedModel;
use crate::ingest::{AsRegistry, Asn, NodeId};
use crate::math::{bernoulli_entropy, pairwise_sum};
use crate::observation::{ClassTable, PairStore};

/// Entropy (nats) of an edge that exists with probability `q`.
pub fn edge_entropy(q: f64) -> Result<f64, AnalyticsError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(AnalyticsError::InvalidProbability(q));
    }
    Ok(bernoulli_entropy(q))
}

/// Total edge entropy divided by the entropy of an all-prior network, over the
/// `N(N-1)/2` unordered pairs.
pub fn normalized_entropy_from(table: &ClassTable, class_q: &[f64], rho: f64) -> Result<f64, AnalyticsError> {
    let prior = edge_entropy(rho)?;
    if prior == 0.0 {
        return Err(AnalyticsError::DegeneratePrior(rho));
    }
    let terms = table
        .classes()
        .iter()
        .zip(class_q)
        .map(|(c, &q)| Ok(c.multiplicity as f64 * edge_entropy(q)?))
        .collect::<Result<Vec<f64>, AnalyticsError>>()?;
    Ok(pairwise_sum(&terms) / (table.total_pairs() as f64 * prior))
}

pub fn normalized_entropy(model: &FittedModel, table: &ClassTable) -> Result<f64, AnalyticsError> {
    normalized_entropy_from(table, &model.class_posteriors, model.params.rho)
}

/// Summed edge entropy over every pair incident to each node.
///
/// `pair_q[p]` is the posterior of `store.pair(p)`; pairs absent from the
/// store contribute the prior entropy.
pub fn node_entropy(store: &PairStore, pair_q: &[f64], rho: f64) -> Result<Vec<f64>, AnalyticsError> {
    let n = store.num_nodes();
    let mut sum = vec![0.0; n];
    let mut degree = vec![0usize; n];
    for (p, &(i, j)) in store.pairs().iter().enumerate() {
        let h = edge_entropy(pair_q[p])?;
        sum[i as usize] += h;
        sum[j as usize] += h;
        degree[i as usize] += 1;
        degree[j as usize] += 1;
    }
    let prior = edge_entropy(rho)?;
    Ok(sum.into_iter().zip(degree).map(|(s, d)| s + (n - 1 - d) as f64 * prior).collect())
}

/// Node to group label (e.g. registration country).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMap {
    labels: Vec<Option<String>>,
}

impl GroupMap {
    /// Label shown for nodes without a group.
    pub const UNMAPPED: &'static str = "??";

    pub fn new(labels: Vec<Option<String>>) -> Self {
        Self { labels }
    }

    /// Reads `as_number <TAB> label` lines. ASes unknown to `registry` are skipped.
    pub fn read<R: BufRead>(reader: R, registry: &AsRegistry) -> Result<Self, AnalyticsError> {
        let mut labels: Vec<Option<String>> = vec![None; registry.len()];
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let bad = |reason: String| AnalyticsError::Parse { line: idx + 1, reason };
            let (asn, label) = text.split_once('\t').ok_or_else(|| bad("expected `as_number<TAB>label`".into()))?;
            let asn: Asn = asn.trim().parse().map_err(|_| bad(format!("invalid AS number {asn:?}")))?;
            let label = label.trim();
            if label.is_empty() {
                return Err(bad("empty label".into()));
            }
            if let Some(id) = registry.get(asn) {
                match &labels[id as usize] {
                    Some(prev) if prev != label => {
                        return Err(bad(format!("AS {asn} mapped to both {prev} and {label}")));
                    }
                    _ => labels[id as usize] = Some(label.to_string()),
                }
            }
        }
        Ok(Self { labels })
    }

    pub fn label(&self, node: NodeId) -> &str {
        self.labels[node as usize].as_deref().unwrap_or(Self::UNMAPPED)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn mapped(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn unmapped(&self) -> usize {
        self.len() - self.mapped()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupEntropy {
    pub label: String,
    pub mean: f64,
    pub members: usize,
}

/// Mean node entropy per group with at least `min_group_size` members,
/// highest first. Unmapped nodes form no group.
pub fn group_entropy(node_h: &[f64], groups: &GroupMap, min_group_size: usize) -> Vec<GroupEntropy> {
    let mut acc: HashMap<&str, (f64, usize)> = HashMap::new();
    for (node, &h) in node_h.iter().enumerate() {
        if let Some(label) = groups.labels[node].as_deref() {
            let e = acc.entry(label).or_insert((0.0, 0));
            e.0 += h;
            e.1 += 1;
        }
    }
    let mut out: Vec<GroupEntropy> = acc
        .into_iter()
        .filter(|(_, (_, n))| *n >= min_group_size.max(1))
        .map(|(label, (s, n))| GroupEntropy { label: label.to_string(), mean: s / n as f64, members: n })
        .collect();
    out.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.label.cmp(&b.label)));
    out
}

/// Histogram of posterior edge probabilities over all pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QHistogram {
    pub counts: Vec<u64>,
    pub total: u64,
    /// Pairs with `Q < 0.1`.
    pub below_low: u64,
    /// Pairs with `0.1 <= Q <= 0.9`.
    pub intermediate: u64,
}

impl QHistogram {
    pub fn bin_width(&self) -> f64 {
        1.0 / self.counts.len() as f64
    }

    /// `bin_lower bin_upper count` per bin.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let w = self.bin_width();
        for (b, c) in self.counts.iter().enumerate() {
            writeln!(out, "{:.6} {:.6} {c}", b as f64 * w, (b + 1) as f64 * w)?;
        }
        Ok(())
    }
}

/// Uniform-bin histogram of class posteriors weighted by multiplicity.
pub fn q_histogram(table: &ClassTable, class_q: &[f64], bins: usize) -> QHistogram {
    let bins = bins.max(1);
    let mut counts = vec![0u64; bins];
    let (mut below_low, mut intermediate) = (0, 0);
    for (c, &q) in table.classes().iter().zip(class_q) {
        let b = ((q * bins as f64) as usize).min(bins - 1);
        counts[b] += c.multiplicity;
        if q < 0.1 {
            below_low += c.multiplicity;
        } else if q <= 0.9 {
            intermediate += c.multiplicity;
        }
    }
    QHistogram { counts, total: table.total_pairs(), below_low, intermediate }
}

/// Everything the `entropy` stage reports.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub h_norm: f64,
    pub per_node_entropy: Vec<f64>,
    pub group_means: Vec<GroupEntropy>,
    pub q_histogram: QHistogram,
}

impl EntropyReport {
    pub fn build(
        model: &FittedModel,
        table: &ClassTable,
        store: &PairStore,
        pair_q: &[f64],
        groups: Option<(&GroupMap, usize)>,
    ) -> Result<Self, AnalyticsError> {
        let per_node_entropy = node_entropy(store, pair_q, model.params.rho)?;
        let group_means = match groups {
            Some((g, min)) => group_entropy(&per_node_entropy, g, min),
            None => Vec::new(),
        };
        Ok(Self {
            h_norm: normalized_entropy(model, table)?,
            per_node_entropy,
            group_means,
            q_histogram: q_histogram(table, &model.class_posteriors, 100),
        })
    }
}
