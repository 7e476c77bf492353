//! Parameter fitting and edge posteriors.
//!
//! For a pair with observation vector `D`, the two log joint terms are
//!
//! ```text
//! L_alpha = log(rho)     + sum_k E_k log(alpha_k) + F_k log(1 - alpha_k)
//! L_beta  = log(1 - rho) + sum_k E_k log(beta_k)  + F_k log(1 - beta_k)
//! ```
//!
//! and the edge posterior is `Q = 1 / (1 + exp(L_beta - L_alpha))`. The fit
//! maximizes `sum_C |C| * logsumexp(L_alpha_C, L_beta_C)` over observation
//! classes with EM.

use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::math::{chunked_reduce, logsumexp, sigmoid};
use crate::observation::{data_lines, negatives, positives, ClassTable, PairStore};

/// Lower/upper clamp for every rate.
pub const RATE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("parameter vectors have {alpha} alphas and {beta} betas for {collectors} collectors")]
    ShapeMismatch { alpha: usize, beta: usize, collectors: usize },
    #[error("{name} = {value} is not a probability")]
    InvalidRate { name: String, value: f64 },
    #[error("log-density became non-finite at iteration {iteration}: {value}")]
    NonFinite { iteration: usize, value: f64 },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-collector true/false positive rates and the edge prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub rho: f64,
}

fn clamp_rate(x: f64) -> f64 {
    x.clamp(RATE_EPS, 1.0 - RATE_EPS)
}

impl ModelParams {
    /// Validates shapes and ranges, then clamps into `[eps, 1 - eps]`.
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, rho: f64) -> Result<Self, InferenceError> {
        if alpha.len() != beta.len() {
            return Err(InferenceError::ShapeMismatch {
                alpha: alpha.len(),
                beta: beta.len(),
                collectors: alpha.len(),
            });
        }
        let check = |name: String, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(InferenceError::InvalidRate { name, value: v })
            }
        };
        for (k, (&a, &b)) in alpha.iter().zip(&beta).enumerate() {
            check(format!("alpha[{k}]"), a)?;
            check(format!("beta[{k}]"), b)?;
        }
        check("rho".into(), rho)?;
        let mut p = Self { alpha, beta, rho };
        p.clamp();
        Ok(p)
    }

    /// Default starting point: honest collectors and a naive-density prior.
    pub fn initial(table: &ClassTable) -> Self {
        let m = table.num_collectors();
        let mut p = Self { alpha: vec![0.9; m], beta: vec![0.01; m], rho: table.naive_density().max(1e-6) };
        p.clamp();
        p
    }

    pub fn collectors(&self) -> usize {
        self.alpha.len()
    }

    fn clamp(&mut self) {
        self.alpha.iter_mut().for_each(|a| *a = clamp_rate(*a));
        self.beta.iter_mut().for_each(|b| *b = clamp_rate(*b));
        self.rho = clamp_rate(self.rho);
    }

    /// The relabelled parameters `alpha <-> beta`, `rho <-> 1 - rho`.
    pub fn swapped(&self) -> Self {
        Self { alpha: self.beta.clone(), beta: self.alpha.clone(), rho: 1.0 - self.rho }
    }

    fn logs(&self) -> LogParams {
        LogParams {
            log_alpha: self.alpha.iter().map(|a| a.ln()).collect(),
            log_not_alpha: self.alpha.iter().map(|a| (-a).ln_1p()).collect(),
            log_beta: self.beta.iter().map(|b| b.ln()).collect(),
            log_not_beta: self.beta.iter().map(|b| (-b).ln_1p()).collect(),
            log_rho: self.rho.ln(),
            log_not_rho: (-self.rho).ln_1p(),
        }
    }
}

struct LogParams {
    log_alpha: Vec<f64>,
    log_not_alpha: Vec<f64>,
    log_beta: Vec<f64>,
    log_not_beta: Vec<f64>,
    log_rho: f64,
    log_not_rho: f64,
}

impl LogParams {
    fn likelihoods(&self, v: &[u16]) -> (f64, f64) {
        let mut la = self.log_rho;
        let mut lb = self.log_not_rho;
        for k in 0..self.log_alpha.len() {
            let e = positives(v, k);
            let f = negatives(v, k);
            if e > 0 {
                la += e as f64 * self.log_alpha[k];
                lb += e as f64 * self.log_beta[k];
            }
            if f > 0 {
                la += f as f64 * self.log_not_alpha[k];
                lb += f as f64 * self.log_not_beta[k];
            }
        }
        (la, lb)
    }
}

fn is_zero(v: &[u16]) -> bool {
    v.iter().all(|&x| x == 0)
}

/// `(L_alpha, L_beta)` for one observation vector.
///
/// # Panics
///
/// Panics if `v` is shorter than `2 * p.collectors()`.
pub fn class_log_likelihoods(v: &[u16], p: &ModelParams) -> (f64, f64) {
    assert_eq!(v.len(), 2 * p.collectors(), "vector length must be 2M");
    p.logs().likelihoods(v)
}

fn posterior_from(v: &[u16], rho: f64, la: f64, lb: f64) -> f64 {
    // With no observations the posterior is the prior; return it exactly.
    if is_zero(v) {
        rho
    } else {
        sigmoid(la - lb)
    }
}

/// Posterior probability that the pair with vector `v` is an edge.
pub fn posterior_edge_prob(v: &[u16], p: &ModelParams) -> f64 {
    let (la, lb) = class_log_likelihoods(v, p);
    posterior_from(v, p.rho, la, lb)
}

/// Posterior edge probability of every class in `table`.
pub fn class_posteriors(table: &ClassTable, p: &ModelParams) -> Vec<f64> {
    let logs = p.logs();
    table
        .classes()
        .par_iter()
        .map(|c| {
            let (la, lb) = logs.likelihoods(&c.vector);
            posterior_from(&c.vector, p.rho, la, lb)
        })
        .collect()
}

/// Posterior edge probability of every pair held in `store`.
pub fn pair_posteriors(store: &PairStore, p: &ModelParams) -> Vec<f64> {
    let logs = p.logs();
    (0..store.len())
        .into_par_iter()
        .map(|i| {
            let v = store.vector(i);
            let (la, lb) = logs.likelihoods(v);
            posterior_from(v, p.rho, la, lb)
        })
        .collect()
}

/// Class-summed log-density of the parameter posterior (up to a constant).
pub fn log_density(table: &ClassTable, p: &ModelParams) -> f64 {
    let logs = p.logs();
    let classes = table.classes();
    chunked_reduce(classes.len(), 1, |range, acc| {
        for c in &classes[range] {
            let (la, lb) = logs.likelihoods(&c.vector);
            acc[0] += c.multiplicity as f64 * logsumexp(la, lb);
        }
    })[0]
}

/// EM stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    /// Relative change in log-density below which the fit stops.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 500 }
    }
}

/// Result of an EM fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub params: ModelParams,
    pub class_posteriors: Vec<f64>,
    pub log_density: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-density before the first M-step and after each one.
    pub trajectory: Vec<f64>,
    /// Collectors whose alpha update had a zero denominator at some iteration.
    pub held_alpha: Vec<bool>,
    /// Collectors whose beta update had a zero denominator at some iteration.
    pub held_beta: Vec<bool>,
    /// Whether the mirrored solution was relabelled after convergence.
    pub relabelled: bool,
    pub periods: usize,
    pub total_pairs: u64,
}

struct EStep {
    log_density: f64,
    posteriors: Vec<f64>,
}

fn e_step(table: &ClassTable, p: &ModelParams) -> EStep {
    let logs = p.logs();
    let (lds, posteriors): (Vec<f64>, Vec<f64>) = table
        .classes()
        .par_iter()
        .map(|c| {
            let (la, lb) = logs.likelihoods(&c.vector);
            (c.multiplicity as f64 * logsumexp(la, lb), posterior_from(&c.vector, p.rho, la, lb))
        })
        .unzip();
    let log_density = chunked_reduce(lds.len(), 1, |r, acc| acc[0] += lds[r].iter().sum::<f64>())[0];
    EStep { log_density, posteriors }
}

/// Returns the new parameters and which alpha/beta updates were held.
fn m_step(table: &ClassTable, q: &[f64], prev: &ModelParams) -> (ModelParams, Vec<bool>, Vec<bool>) {
    let m = table.num_collectors();
    let classes = table.classes();
    // Layout: [sum |C|Q, then per k: alpha num, alpha den, beta num, beta den]
    let acc = chunked_reduce(classes.len(), 1 + 4 * m, |range, acc| {
        for idx in range {
            let c = &classes[idx];
            let w = c.multiplicity as f64;
            let on = w * q[idx];
            let off = w * (1.0 - q[idx]);
            acc[0] += on;
            for k in 0..m {
                let e = positives(&c.vector, k) as f64;
                let o = e + negatives(&c.vector, k) as f64;
                if o == 0.0 {
                    continue;
                }
                let slot = 1 + 4 * k;
                acc[slot] += on * e;
                acc[slot + 1] += on * o;
                acc[slot + 2] += off * e;
                acc[slot + 3] += off * o;
            }
        }
    });
    let mut held_alpha = vec![false; m];
    let mut held_beta = vec![false; m];
    let mut next = prev.clone();
    next.rho = acc[0] / table.total_pairs() as f64;
    for k in 0..m {
        let slot = 1 + 4 * k;
        if acc[slot + 1] > 0.0 {
            next.alpha[k] = acc[slot] / acc[slot + 1];
        } else {
            held_alpha[k] = true;
        }
        if acc[slot + 3] > 0.0 {
            next.beta[k] = acc[slot + 2] / acc[slot + 3];
        } else {
            held_beta[k] = true;
        }
    }
    next.clamp();
    (next, held_alpha, held_beta)
}

/// Fits `(alpha, beta, rho)` by EM starting from `init`.
pub fn em_fit(table: &ClassTable, init: &ModelParams, opts: EmOptions) -> Result<FittedModel, InferenceError> {
    let m = table.num_collectors();
    if init.alpha.len() != m || init.beta.len() != m {
        return Err(InferenceError::ShapeMismatch { alpha: init.alpha.len(), beta: init.beta.len(), collectors: m });
    }
    let mut params = init.clone();
    params.clamp();
    let mut current = e_step(table, &params);
    if !current.log_density.is_finite() {
        return Err(InferenceError::NonFinite { iteration: 0, value: current.log_density });
    }
    let mut trajectory = vec![current.log_density];
    let mut held_alpha = vec![false; m];
    let mut held_beta = vec![false; m];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let (next, ha, hb) = m_step(table, &current.posteriors, &params);
        for k in 0..m {
            held_alpha[k] |= ha[k];
            held_beta[k] |= hb[k];
        }
        let step = e_step(table, &next);
        iterations += 1;
        if !step.log_density.is_finite() {
            return Err(InferenceError::NonFinite { iteration: iterations, value: step.log_density });
        }
        let change = (step.log_density - current.log_density).abs();
        // Relative test, falling back to absolute when the density is near zero.
        let scale = step.log_density.abs().max(1.0);
        trajectory.push(step.log_density);
        params = next;
        current = step;
        if change <= opts.tol * scale {
            converged = true;
            break;
        }
    }

    let mut relabelled = false;
    if params.rho > 0.5 {
        params = params.swapped();
        current = e_step(table, &params);
        std::mem::swap(&mut held_alpha, &mut held_beta);
        relabelled = true;
    }

    Ok(FittedModel {
        params,
        class_posteriors: current.posteriors,
        log_density: current.log_density,
        iterations,
        converged,
        trajectory,
        held_alpha,
        held_beta,
        relabelled,
        periods: table.num_periods(),
        total_pairs: table.total_pairs(),
    })
}

/// Fits with [`ModelParams::initial`] and default options.
pub fn fit(table: &ClassTable) -> Result<FittedModel, InferenceError> {
    em_fit(table, &ModelParams::initial(table), EmOptions::default())
}

/// Model file contents other than the per-class posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: ModelParams,
    pub periods: usize,
    pub total_pairs: u64,
    pub iterations: usize,
    pub log_density: f64,
    pub converged: bool,
}

impl From<&FittedModel> for ModelFile {
    fn from(m: &FittedModel) -> Self {
        Self {
            params: m.params.clone(),
            periods: m.periods,
            total_pairs: m.total_pairs,
            iterations: m.iterations,
            log_density: m.log_density,
            converged: m.converged,
        }
    }
}

impl ModelFile {
    /// Header `M T total_pairs iterations log_density converged`, then
    /// `alpha_k beta_k` per collector, then `rho`. Rates carry 17 significant digits.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "{} {} {} {} {:.16e} {}",
            self.params.collectors(),
            self.periods,
            self.total_pairs,
            self.iterations,
            self.log_density,
            self.converged as u8
        )?;
        for (a, b) in self.params.alpha.iter().zip(&self.params.beta) {
            writeln!(out, "{a:.16e} {b:.16e}")?;
        }
        writeln!(out, "{:.16e}", self.params.rho)
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, InferenceError> {
        let lines: Vec<(usize, String)> = data_lines(reader)
            .collect::<Result<_, _>>()
            .map_err(|e| InferenceError::Parse { line: 0, reason: e.to_string() })?;
        let bad = |line: usize, reason: &str| InferenceError::Parse { line, reason: reason.to_string() };
        let (hl, header) = lines.first().ok_or_else(|| bad(0, "missing header"))?;
        let h: Vec<&str> = header.split_ascii_whitespace().collect();
        if h.len() != 6 {
            return Err(bad(*hl, "expected 6 header fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(*hl, "invalid number"));
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad(*hl, "invalid integer"));
        let m = int(h[0])? as usize;
        if lines.len() != m + 2 {
            return Err(bad(*hl, &format!("expected {} lines after header, found {}", m + 1, lines.len() - 1)));
        }
        let mut alpha = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        for (line, text) in &lines[1..=m] {
            let v: Vec<f64> = text
                .split_ascii_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| bad(*line, "invalid rate")))
                .collect::<Result<_, _>>()?;
            if v.len() != 2 {
                return Err(bad(*line, "expected alpha and beta"));
            }
            alpha.push(v[0]);
            beta.push(v[1]);
        }
        let (rl, rho) = &lines[m + 1];
        let rho = rho.parse::<f64>().map_err(|_| bad(*rl, "invalid rho"))?;
        Ok(Self {
            params: ModelParams::new(alpha, beta, rho)?,
            periods: int(h[1])? as usize,
            total_pairs: int(h[2])?,
            iterations: int(h[3])? as usize,
            log_density: num(h[4])?,
            converged: int(h[5])? != 0,
        })
    }
}

/// Writes `class_index Q` per class.
pub fn write_class_posteriors<W: Write>(q: &[f64], mut out: W) -> io::Result<()> {
    for (i, v) in q.iter().enumerate() {
        writeln!(out, "{i} {v:.16e}")?;
    }
    Ok(())
}
