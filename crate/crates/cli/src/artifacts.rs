//! Work-directory file names, headers, and loaders shared by the stages.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use astopo_core::inference::ModelFile;
use astopo_core::ingest::{AsRegistry, Asn};
use astopo_core::observation::{ClassTable, PairStore};
use sha2::{Digest, Sha256};

use crate::settings::Resolved;

pub const NODES: &str = "nodes.txt";
pub const COLLECTORS: &str = "collectors.txt";
pub const PERIODS: &str = "periods.txt";
pub const PAIRS: &str = "pairs.txt";
pub const CLASSES: &str = "classes.txt";
pub const COUNT_SUMMARY: &str = "count_summary.txt";
pub const MODEL: &str = "model.txt";
pub const CLASS_Q: &str = "class_q.txt";
pub const TRAJECTORY: &str = "trajectory.txt";
pub const ENTROPY_SUMMARY: &str = "entropy_summary.txt";
pub const NODE_ENTROPY: &str = "node_entropy.txt";
pub const GROUP_ENTROPY: &str = "group_entropy.txt";
pub const PPC: &str = "ppc.txt";
pub const EVAL: &str = "eval.txt";
pub const ABLATION_POINTS: &str = "ablation_points.txt";
pub const ABLATION_SUMMARY: &str = "ablation_summary.txt";
pub const Q_HISTOGRAM: &str = "q_histogram.txt";
pub const REPORT: &str = "report.txt";
pub const SIM_PATHS: &str = "paths.txt";
pub const SIM_TRUTH: &str = "truth.txt";
pub const SIM_MANIFEST: &str = "manifest.txt";

pub fn threshold_file(tau: f64) -> String {
    format!("threshold_{tau}.txt")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

/// Provenance written at the top of every artifact.
pub struct Header {
    lines: Vec<String>,
}

impl Header {
    pub fn new(stage: &str, settings: &Resolved, inputs: &[PathBuf]) -> Result<Self> {
        let mut lines = vec![
            format!("# astopo {}", env!("CARGO_PKG_VERSION")),
            format!("# stage {stage}"),
            format!("# config-sha256 {}", sha256_hex(settings.canonical().as_bytes())),
        ];
        for p in inputs {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            lines.push(format!("# input {name} sha256 {}", sha256_hex(&bytes)));
        }
        Ok(Self { lines })
    }

    /// Creates `path` and writes the header followed by `body`.
    pub fn write_file<F>(&self, path: &Path, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        for l in &self.lines {
            writeln!(out, "{l}")?;
        }
        body(&mut out).with_context(|| format!("writing {}", path.display()))?;
        out.flush().with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Path of a stage input that must already exist.
pub fn require(dir: &Path, name: &str, producer: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if !p.is_file() {
        bail!("{} not found; run `astopo {producer}` first", p.display());
    }
    Ok(p)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

pub fn load_classes(dir: &Path) -> Result<(PathBuf, ClassTable)> {
    let p = require(dir, CLASSES, "count")?;
    let t = ClassTable::read(open(&p)?).with_context(|| format!("parsing {}", p.display()))?;
    Ok((p, t))
}

pub fn load_pairs(dir: &Path) -> Result<(PathBuf, PairStore)> {
    let p = require(dir, PAIRS, "count")?;
    let s = PairStore::read(open(&p)?).with_context(|| format!("parsing {}", p.display()))?;
    Ok((p, s))
}

pub fn load_model(dir: &Path) -> Result<(PathBuf, ModelFile)> {
    let p = require(dir, MODEL, "fit")?;
    let m = ModelFile::read(open(&p)?).with_context(|| format!("parsing {}", p.display()))?;
    Ok((p, m))
}

/// Reads `node_id asn` lines written by `count`.
pub fn load_registry(dir: &Path) -> Result<(PathBuf, AsRegistry)> {
    let p = require(dir, NODES, "count")?;
    let mut asns = Vec::new();
    for (i, line) in open(&p)?.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split_ascii_whitespace().collect();
        let (Some(id), Some(asn), 2) = (fields.first(), fields.get(1), fields.len()) else {
            bail!("{}:{}: expected `node_id asn`", p.display(), i + 1);
        };
        if id.parse::<usize>().ok() != Some(asns.len()) {
            bail!("{}:{}: node ids must be 0, 1, 2, ... in order", p.display(), i + 1);
        }
        asns.push(asn.parse::<Asn>().with_context(|| format!("{}:{}: invalid AS number", p.display(), i + 1))?);
    }
    let reg = AsRegistry::from_asns(asns).with_context(|| format!("{}: duplicate AS number", p.display()))?;
    Ok((p, reg))
}

/// Opens a file that the user named directly.
pub fn open_input(path: &Path) -> Result<BufReader<File>> {
    open(path)
}
