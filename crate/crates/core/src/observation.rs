//! Positive/negative observation counting and observation classes.
//!
//! A pair `(i, j)` is positively observed by collector `k` in period `t` when
//! it is an edge of `G_{k,t}`, and negatively observed when both endpoints are
//! present, it is not an edge, and their BFS levels differ by at least two.
//! Pairs with a missing endpoint get nothing from that snapshot.
//!
//! Rather than visiting every pair, positives are enumerated from each
//! snapshot's edge list and negatives from cross products of level buckets
//! whose levels differ by two or more. BFS levels never differ by more than
//! one across an edge, so those cross pairs are all non-edges.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, BufRead, Write};
use std::ops::Deref;

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::NodeId;
use crate::snapshot::{LevelArray, SnapshotGraph};

const SHARDS: usize = 32;

#[derive(Debug, Error)]
pub enum CountError {
    #[error("snapshot built for {found} nodes, expected {expected}")]
    NodeCountMismatch { expected: usize, found: usize },
    #[error("collector index {0} out of range")]
    CollectorOutOfRange(usize),
    #[error("period index {0} out of range")]
    PeriodOutOfRange(usize),
    #[error("duplicate snapshot for collector {0}, period {1}")]
    DuplicateSnapshot(usize, usize),
    #[error("{0} periods exceed the 16-bit count range")]
    TooManyPeriods(usize),
    #[error("pair ({i}, {j}) has E+F > T for collector {collector}")]
    CountExceedsPeriods { i: NodeId, j: NodeId, collector: usize },
    #[error("pair count overflow")]
    Overflow,
    #[error("invalid class table: {0}")]
    InvalidTable(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Counts `[E^(1), F^(1), ..., E^(M), F^(M)]` for one pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObservationVector(Vec<u16>);

impl ObservationVector {
    pub fn zeros(collectors: usize) -> Self {
        Self(vec![0; 2 * collectors])
    }

    /// Builds a vector from interleaved `E, F` counts.
    ///
    /// # Panics
    ///
    /// Panics if `counts` has odd length.
    pub fn from_counts(counts: Vec<u16>) -> Self {
        assert!(counts.len() % 2 == 0, "observation vectors hold E/F pairs");
        Self(counts)
    }

    pub fn collectors(&self) -> usize {
        self.0.len() / 2
    }
}

impl Deref for ObservationVector {
    type Target = [u16];

    fn deref(&self) -> &[u16] {
        &self.0
    }
}

#[inline]
pub(crate) fn positives(v: &[u16], k: usize) -> u16 {
    v[2 * k]
}

#[inline]
pub(crate) fn negatives(v: &[u16], k: usize) -> u16 {
    v[2 * k + 1]
}

#[inline]
pub(crate) fn any_positive(v: &[u16]) -> bool {
    v.iter().step_by(2).any(|&e| e > 0)
}

#[inline]
fn pair_key(a: NodeId, b: NodeId) -> u64 {
    let (i, j) = if a < b { (a, b) } else { (b, a) };
    ((i as u64) << 32) | j as u64
}

#[inline]
fn shard_of(key: u64) -> usize {
    (key.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 59) as usize % SHARDS
}

/// Number of unordered pairs among `n` nodes.
pub fn pair_count(n: usize) -> Result<u64, CountError> {
    let n = n as u64;
    n.checked_mul(n.saturating_sub(1)).map(|x| x / 2).ok_or(CountError::Overflow)
}

/// Observation vectors of every pair with at least one nonzero count,
/// sorted by `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairStore {
    collectors: usize,
    periods: usize,
    nodes: usize,
    pairs: Vec<(NodeId, NodeId)>,
    counts: Vec<u16>,
}

impl PairStore {
    /// Assembles a store from `(i, j, vector)` rows, validating shape and order.
    pub fn from_rows(
        collectors: usize,
        periods: usize,
        nodes: usize,
        rows: impl IntoIterator<Item = ((NodeId, NodeId), Vec<u16>)>,
    ) -> Result<Self, CountError> {
        let mut store = Self { collectors, periods, nodes, pairs: Vec::new(), counts: Vec::new() };
        for ((i, j), v) in rows {
            if i >= j || j as usize >= nodes {
                return Err(CountError::InvalidTable(format!("bad pair ({i}, {j})")));
            }
            if store.pairs.last().is_some_and(|&last| last >= (i, j)) {
                return Err(CountError::InvalidTable("pairs not strictly ascending".into()));
            }
            if v.len() != 2 * collectors {
                return Err(CountError::InvalidTable(format!("pair ({i}, {j}) has {} counts", v.len())));
            }
            for k in 0..collectors {
                if positives(&v, k) as usize + negatives(&v, k) as usize > periods {
                    return Err(CountError::CountExceedsPeriods { i, j, collector: k });
                }
            }
            store.pairs.push((i, j));
            store.counts.extend_from_slice(&v);
        }
        Ok(store)
    }

    pub fn num_collectors(&self) -> usize {
        self.collectors
    }

    pub fn num_periods(&self) -> usize {
        self.periods
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_pairs(&self) -> Result<u64, CountError> {
        pair_count(self.nodes)
    }

    pub fn pair(&self, idx: usize) -> (NodeId, NodeId) {
        self.pairs[idx]
    }

    pub fn pairs(&self) -> &[(NodeId, NodeId)] {
        &self.pairs
    }

    pub fn vector(&self, idx: usize) -> &[u16] {
        let w = 2 * self.collectors;
        &self.counts[idx * w..(idx + 1) * w]
    }

    /// Index of pair `(a, b)` (either order), if it has any observation.
    pub fn position(&self, a: NodeId, b: NodeId) -> Option<usize> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.pairs.binary_search(&key).ok()
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> Option<&[u16]> {
        self.position(a, b).map(|p| self.vector(p))
    }

    pub fn iter(&self) -> impl Iterator<Item = ((NodeId, NodeId), &[u16])> + '_ {
        (0..self.len()).map(move |p| (self.pairs[p], self.vector(p)))
    }

    /// Writes `M T N pairs` followed by one `i j E1 F1 ... EM FM` line per pair.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{} {} {} {}", self.collectors, self.periods, self.nodes, self.len())?;
        for ((i, j), v) in self.iter() {
            write!(out, "{i} {j}")?;
            for c in v {
                write!(out, " {c}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, CountError> {
        let mut lines = data_lines(reader);
        let (line, header) = lines.next().ok_or(CountError::Parse { line: 0, reason: "missing header".into() })??;
        let h = parse_numbers::<usize>(&header, line, 4)?;
        let (m, t, n, count) = (h[0], h[1], h[2], h[3]);
        let mut rows = Vec::with_capacity(count);
        for item in lines {
            let (line, text) = item?;
            let v = parse_numbers::<u32>(&text, line, 2 + 2 * m)?;
            let counts = v[2..]
                .iter()
                .map(|&c| u16::try_from(c).map_err(|_| parse_err(line, "count out of range")))
                .collect::<Result<Vec<u16>, _>>()?;
            rows.push(((v[0], v[1]), counts));
        }
        if rows.len() != count {
            return Err(CountError::InvalidTable(format!("header declares {count} pairs, found {}", rows.len())));
        }
        Self::from_rows(m, t, n, rows)
    }
}

/// Counts positive and negative observations for every pair.
///
/// `snapshots` pairs each `G_{k,t}` with its BFS levels. A collector may be
/// missing some periods.
pub fn count_observations(
    snapshots: &[(SnapshotGraph, LevelArray)],
    nodes: usize,
    collectors: usize,
    periods: usize,
) -> Result<PairStore, CountError> {
    if periods > u16::MAX as usize {
        return Err(CountError::TooManyPeriods(periods));
    }
    let mut seen = HashSet::new();
    for (g, lv) in snapshots {
        if g.num_nodes() != nodes || lv.as_slice().len() != nodes {
            return Err(CountError::NodeCountMismatch { expected: nodes, found: g.num_nodes() });
        }
        if g.collector >= collectors {
            return Err(CountError::CollectorOutOfRange(g.collector));
        }
        if g.period >= periods {
            return Err(CountError::PeriodOutOfRange(g.period));
        }
        if !seen.insert((g.collector, g.period)) {
            return Err(CountError::DuplicateSnapshot(g.collector, g.period));
        }
    }

    // Each snapshot emits (pair key, slot) events bucketed by shard.
    let emitted: Vec<Vec<Vec<(u64, u16)>>> = snapshots
        .par_iter()
        .map(|(g, lv)| {
            let mut shards: Vec<Vec<(u64, u16)>> = vec![Vec::new(); SHARDS];
            let pos_slot = (2 * g.collector) as u16;
            let neg_slot = pos_slot + 1;
            for (i, j) in g.edges() {
                let key = pair_key(i, j);
                shards[shard_of(key)].push((key, pos_slot));
            }
            let buckets = lv.buckets();
            for (lo, near) in buckets.iter().enumerate() {
                for far in buckets.iter().skip(lo + 2) {
                    for &a in near {
                        for &b in far {
                            let key = pair_key(a, b);
                            shards[shard_of(key)].push((key, neg_slot));
                        }
                    }
                }
            }
            shards
        })
        .collect();

    let width = 2 * collectors;
    let merged: Vec<Vec<(u64, Vec<u16>)>> = (0..SHARDS)
        .into_par_iter()
        .map(|s| {
            let mut acc: HashMap<u64, Vec<u16>> = HashMap::new();
            for snap in &emitted {
                for &(key, slot) in &snap[s] {
                    acc.entry(key).or_insert_with(|| vec![0; width])[slot as usize] += 1;
                }
            }
            let mut rows: Vec<(u64, Vec<u16>)> = acc.into_iter().collect();
            rows.sort_unstable_by_key(|r| r.0);
            rows
        })
        .collect();
    drop(emitted);

    let mut rows: Vec<(u64, Vec<u16>)> = merged.into_iter().flatten().collect();
    rows.sort_unstable_by_key(|r| r.0);
    PairStore::from_rows(
        collectors,
        periods,
        nodes,
        rows.into_iter().map(|(key, v)| (((key >> 32) as NodeId, key as NodeId), v)),
    )
}

/// One observation class: a distinct vector and how many pairs share it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationClass {
    pub vector: ObservationVector,
    pub multiplicity: u64,
}

/// Distinct observation vectors with multiplicities, including the implicit
/// all-zero class. Classes are sorted by vector, so the zero class comes first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    collectors: usize,
    periods: usize,
    nodes: usize,
    total_pairs: u64,
    classes: Vec<ObservationClass>,
    zero_class: usize,
}

impl ClassTable {
    /// Validates and sorts `classes`. A missing zero class is added with the
    /// residual multiplicity.
    pub fn new(
        collectors: usize,
        periods: usize,
        nodes: usize,
        mut classes: Vec<ObservationClass>,
    ) -> Result<Self, CountError> {
        let total_pairs = pair_count(nodes)?;
        for c in &classes {
            if c.vector.len() != 2 * collectors {
                return Err(CountError::InvalidTable("vector length does not match collector count".into()));
            }
            for k in 0..collectors {
                if positives(&c.vector, k) as usize + negatives(&c.vector, k) as usize > periods {
                    return Err(CountError::InvalidTable(format!("class {:?} has E+F > T", &*c.vector)));
                }
            }
        }
        classes.sort_by(|a, b| a.vector.cmp(&b.vector));
        if classes.windows(2).any(|w| w[0].vector == w[1].vector) {
            return Err(CountError::InvalidTable("duplicate class vectors".into()));
        }
        let sum = classes.iter().try_fold(0u64, |s, c| s.checked_add(c.multiplicity)).ok_or(CountError::Overflow)?;
        let has_zero = classes.first().is_some_and(|c| c.vector.iter().all(|&x| x == 0));
        if !has_zero {
            let residual = total_pairs
                .checked_sub(sum)
                .ok_or_else(|| CountError::InvalidTable(format!("{sum} pairs exceed total {total_pairs}")))?;
            classes
                .insert(0, ObservationClass { vector: ObservationVector::zeros(collectors), multiplicity: residual });
        } else if sum != total_pairs {
            return Err(CountError::InvalidTable(format!("multiplicities sum to {sum}, expected {total_pairs}")));
        }
        Ok(Self { collectors, periods, nodes, total_pairs, classes, zero_class: 0 })
    }

    pub fn num_collectors(&self) -> usize {
        self.collectors
    }

    pub fn num_periods(&self) -> usize {
        self.periods
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    pub fn total_pairs(&self) -> u64 {
        self.total_pairs
    }

    pub fn classes(&self) -> &[ObservationClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn zero_class(&self) -> usize {
        self.zero_class
    }

    /// Index of the class holding `vector`.
    pub fn find(&self, vector: &[u16]) -> Option<usize> {
        self.classes.binary_search_by(|c| (*c.vector).cmp(vector)).ok()
    }

    /// Pairs with at least one observation.
    pub fn observed_pairs(&self) -> u64 {
        self.total_pairs - self.classes[self.zero_class].multiplicity
    }

    /// Fraction of pairs positively observed at least once.
    pub fn naive_density(&self) -> f64 {
        let seen: u64 = self.classes.iter().filter(|c| any_positive(&c.vector)).map(|c| c.multiplicity).sum();
        if self.total_pairs == 0 {
            0.0
        } else {
            seen as f64 / self.total_pairs as f64
        }
    }

    /// Restricts every vector to `subset` (in that order) and re-compacts.
    pub fn project(&self, subset: &[usize]) -> Result<ClassTable, CountError> {
        if let Some(&k) = subset.iter().find(|&&k| k >= self.collectors) {
            return Err(CountError::CollectorOutOfRange(k));
        }
        let mut merged: BTreeMap<Vec<u16>, u64> = BTreeMap::new();
        for c in &self.classes {
            let v: Vec<u16> = subset.iter().flat_map(|&k| [positives(&c.vector, k), negatives(&c.vector, k)]).collect();
            *merged.entry(v).or_insert(0) += c.multiplicity;
        }
        let classes = merged
            .into_iter()
            .map(|(v, multiplicity)| ObservationClass { vector: ObservationVector(v), multiplicity })
            .collect();
        ClassTable::new(subset.len(), self.periods, self.nodes, classes)
    }

    /// Writes `M T N total_pairs`, then `E1 F1 ... EM FM multiplicity` per class.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{} {} {} {}", self.collectors, self.periods, self.nodes, self.total_pairs)?;
        for c in &self.classes {
            for x in c.vector.iter() {
                write!(out, "{x} ")?;
            }
            writeln!(out, "{}", c.multiplicity)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, CountError> {
        let mut lines = data_lines(reader);
        let (line, header) = lines.next().ok_or(CountError::Parse { line: 0, reason: "missing header".into() })??;
        let h = parse_numbers::<u64>(&header, line, 4)?;
        let (m, t, n, total) = (h[0] as usize, h[1] as usize, h[2] as usize, h[3]);
        let mut classes = Vec::new();
        for item in lines {
            let (line, text) = item?;
            let v = parse_numbers::<u64>(&text, line, 2 * m + 1)?;
            let counts = v[..2 * m]
                .iter()
                .map(|&c| u16::try_from(c).map_err(|_| parse_err(line, "count out of range")))
                .collect::<Result<Vec<u16>, _>>()?;
            classes.push(ObservationClass { vector: ObservationVector(counts), multiplicity: v[2 * m] });
        }
        let table = ClassTable::new(m, t, n, classes)?;
        if table.total_pairs != total {
            return Err(CountError::InvalidTable(format!("header total {total} != N(N-1)/2 = {}", table.total_pairs)));
        }
        Ok(table)
    }
}

/// A class table plus the class index of every stored pair.
#[derive(Debug, Clone)]
pub struct Compaction {
    pub table: ClassTable,
    pub pair_class: Vec<u32>,
}

/// Groups the pairs in `store` by observation vector and adds the zero class.
pub fn compact_classes(store: &PairStore) -> Result<Compaction, CountError> {
    let total = store.total_pairs()?;
    if store.len() as u64 > total {
        return Err(CountError::InvalidTable(format!("{} stored pairs exceed total {total}", store.len())));
    }
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.par_sort_unstable_by(|&a, &b| store.vector(a).cmp(store.vector(b)).then(a.cmp(&b)));

    let mut classes: Vec<ObservationClass> = Vec::new();
    let mut pair_class = vec![0u32; store.len()];
    let mut observed = 0u64;
    let mut prev: Option<&[u16]> = None;
    for &p in &order {
        let v = store.vector(p);
        if v.iter().all(|&x| x == 0) {
            // Zero rows carry no observation; they join the implicit class.
            continue;
        }
        if prev != Some(v) {
            classes.push(ObservationClass { vector: ObservationVector(v.to_vec()), multiplicity: 0 });
            prev = Some(v);
        }
        let last = classes.last_mut().expect("pushed above");
        last.multiplicity += 1;
        observed += 1;
        pair_class[p] = classes.len() as u32; // offset by the zero class below
    }
    classes.insert(
        0,
        ObservationClass { vector: ObservationVector::zeros(store.num_collectors()), multiplicity: total - observed },
    );
    let table = ClassTable::new(store.num_collectors(), store.num_periods(), store.num_nodes(), classes)?;
    Ok(Compaction { table, pair_class })
}

fn parse_err(line: usize, reason: &str) -> CountError {
    CountError::Parse { line, reason: reason.to_string() }
}

pub(crate) fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), CountError>> {
    reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(text) => {
            let t = text.trim();
            if t.is_empty() || t.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, t.to_string())))
            }
        }
        Err(e) => Some(Err(CountError::Io(e))),
    })
}

fn parse_numbers<T: std::str::FromStr>(text: &str, line: usize, expected: usize) -> Result<Vec<T>, CountError> {
    let values = text
        .split_ascii_whitespace()
        .map(|tok| tok.parse::<T>().map_err(|_| parse_err(line, &format!("invalid number {tok:?}"))))
        .collect::<Result<Vec<T>, _>>()?;
    if values.len() != expected {
        return Err(parse_err(line, &format!("expected {expected} fields, found {}", values.len())));
    }
    Ok(values)
}
