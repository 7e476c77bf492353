//! Canonical path-snapshot files.
//!
//! Each non-comment line carries one AS-PATH seen by one collector in one
//! time period:
//!
//! ```text
//! # collector <TAB> period <TAB> AS path (tabs shown as spaces)
//! rrc00    0    7018 3356 1299
//! ```
//!
//! The first AS on a path is the end adjacent to the collector. Consecutive
//! repeats (path prepending) are collapsed, and paths that still visit an AS
//! twice are dropped and tallied. AS sets are not part of the format.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

/// Dense node index assigned by an [`AsRegistry`].
pub type NodeId = u32;

/// A 32-bit autonomous system number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Asn(pub u32);

impl fmt::Display for Asn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for Asn {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(Asn)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("input contains no path records")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Bijection between AS numbers and dense node ids `0..len()`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AsRegistry {
    index: HashMap<Asn, NodeId>,
    asns: Vec<Asn>,
}

impl AsRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a registry whose ids follow the order of `asns`.
    ///
    /// Returns `None` if an AS number repeats.
    pub fn from_asns(asns: impl IntoIterator<Item = Asn>) -> Option<Self> {
        let mut reg = Self::new();
        for asn in asns {
            if reg.index.contains_key(&asn) {
                return None;
            }
            reg.intern(asn);
        }
        Some(reg)
    }

    /// Returns the id of `asn`, registering it if unseen.
    pub fn intern(&mut self, asn: Asn) -> NodeId {
        if let Some(&id) = self.index.get(&asn) {
            return id;
        }
        let id = self.asns.len() as NodeId;
        self.asns.push(asn);
        self.index.insert(asn, id);
        id
    }

    pub fn get(&self, asn: Asn) -> Option<NodeId> {
        self.index.get(&asn).copied()
    }

    pub fn asn(&self, id: NodeId) -> Asn {
        self.asns[id as usize]
    }

    pub fn asns(&self) -> &[Asn] {
        &self.asns
    }

    pub fn len(&self) -> usize {
        self.asns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asns.is_empty()
    }
}

/// One AS-PATH observed by collector `collector` during period `period`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathRecord {
    pub collector: usize,
    pub period: usize,
    pub nodes: Vec<NodeId>,
}

/// Parsed contents of one or more path files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    pub registry: AsRegistry,
    /// Collector labels indexed by collector id (first-seen order).
    pub collectors: Vec<String>,
    /// Period labels indexed by period id (first-seen order).
    pub periods: Vec<String>,
    pub records: Vec<PathRecord>,
    /// Paths rejected because they revisit an AS.
    pub dropped_loops: usize,
}

impl PathSet {
    pub fn num_collectors(&self) -> usize {
        self.collectors.len()
    }

    pub fn num_periods(&self) -> usize {
        self.periods.len()
    }

    /// Serializes the records back into the canonical text format.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for rec in &self.records {
            write!(out, "{}\t{}\t", self.collectors[rec.collector], self.periods[rec.period])?;
            for (pos, &node) in rec.nodes.iter().enumerate() {
                if pos > 0 {
                    out.write_all(b" ")?;
                }
                write!(out, "{}", self.registry.asn(node))?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct RawLine {
    collector: String,
    period: String,
    asns: Vec<Asn>,
}

struct RawFile {
    lines: Vec<RawLine>,
    loops: usize,
}

enum LineOutcome {
    Skip,
    Loop,
    Path(RawLine),
}

fn parse_line(text: &str, line: usize) -> Result<LineOutcome, IngestError> {
    let text = text.trim_end_matches(['\r', '\n']);
    if text.trim().is_empty() || text.starts_with('#') {
        return Ok(LineOutcome::Skip);
    }
    let malformed = |reason: String| IngestError::Malformed { line, reason };
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() != 3 {
        return Err(malformed(format!("expected 3 tab-separated fields, found {}", fields.len())));
    }
    let collector = fields[0].trim();
    let period = fields[1].trim();
    if collector.is_empty() || period.is_empty() {
        return Err(malformed("empty collector or period label".into()));
    }
    let mut asns: Vec<Asn> = Vec::new();
    for tok in fields[2].split_ascii_whitespace() {
        let asn: Asn = tok.parse().map_err(|_| malformed(format!("invalid AS number {tok:?}")))?;
        if asns.last() != Some(&asn) {
            asns.push(asn);
        }
    }
    if asns.is_empty() {
        return Err(malformed("empty AS path".into()));
    }
    let mut sorted = asns.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Ok(LineOutcome::Loop);
    }
    Ok(LineOutcome::Path(RawLine { collector: collector.to_string(), period: period.to_string(), asns }))
}

fn parse_raw<R: BufRead>(reader: R) -> Result<RawFile, IngestError> {
    let mut out = RawFile { lines: Vec::new(), loops: 0 };
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        match parse_line(&line, idx + 1)? {
            LineOutcome::Skip => {}
            LineOutcome::Loop => out.loops += 1,
            LineOutcome::Path(raw) => out.lines.push(raw),
        }
    }
    Ok(out)
}

fn merge(files: Vec<RawFile>) -> Result<PathSet, IngestError> {
    let mut registry = AsRegistry::new();
    let mut collectors = Labels::default();
    let mut periods = Labels::default();
    let mut records = Vec::new();
    let mut dropped_loops = 0;
    for file in files {
        dropped_loops += file.loops;
        for raw in file.lines {
            records.push(PathRecord {
                collector: collectors.intern(raw.collector),
                period: periods.intern(raw.period),
                nodes: raw.asns.into_iter().map(|a| registry.intern(a)).collect(),
            });
        }
    }
    if records.is_empty() && dropped_loops == 0 {
        return Err(IngestError::Empty);
    }
    Ok(PathSet { registry, collectors: collectors.names, periods: periods.names, records, dropped_loops })
}

#[derive(Default)]
struct Labels {
    index: HashMap<String, usize>,
    names: Vec<String>,
}

impl Labels {
    fn intern(&mut self, label: String) -> usize {
        if let Some(&i) = self.index.get(&label) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(label.clone(), i);
        self.names.push(label);
        i
    }
}

/// Parses one path file.
pub fn parse_paths<R: BufRead>(reader: R) -> Result<PathSet, IngestError> {
    merge(vec![parse_raw(reader)?])
}

/// Parses several path files concurrently, then interns ASes, collectors and
/// periods in source order. The result is independent of scheduling.
///
/// On failure the error is paired with the index of the offending source.
pub fn parse_path_sources<R>(sources: Vec<R>) -> Result<PathSet, (usize, IngestError)>
where
    R: BufRead + Send,
{
    let raws: Vec<RawFile> =
        sources.into_par_iter().enumerate().map(|(i, r)| parse_raw(r).map_err(|e| (i, e))).collect::<Result<_, _>>()?;
    merge(raws).map_err(|e| (0, e))
}
