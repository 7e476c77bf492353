//! Posterior predictive check on positive-observation counts.
//!
//! For each observed pair the fitted model draws an edge indicator from its
//! posterior, then redraws the positive counts of every collector from the
//! pair's observation opportunities `O_k = E_k + F_k`. The check histograms
//! `sum_k E_k - sum_k E'_k`.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::inference::ModelParams;
use crate::observation::{negatives, positives, PairStore};

pub const PPC_BINS: usize = 64;
pub const PPC_BIN_WIDTH: f64 = 5.0;

/// Difference histogram. Bins are centred on multiples of the width; values
/// outside the range land in the end bins.
#[derive(Debug, Clone, PartialEq)]
pub struct PpcHistogram {
    pub lower: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    /// Number of (pair, replicate) differences binned.
    pub samples: u64,
    /// Differences that were exactly zero.
    pub exact_zero: u64,
}

impl PpcHistogram {
    fn new() -> Self {
        let half_span = PPC_BINS as f64 / 2.0 * PPC_BIN_WIDTH;
        Self {
            lower: -half_span + PPC_BIN_WIDTH / 2.0,
            width: PPC_BIN_WIDTH,
            counts: vec![0; PPC_BINS],
            samples: 0,
            exact_zero: 0,
        }
    }

    pub fn bin_of(&self, diff: i64) -> usize {
        let b = ((diff as f64 - self.lower) / self.width).floor();
        b.clamp(0.0, (self.counts.len() - 1) as f64) as usize
    }

    fn add(&mut self, diff: i64) {
        let b = self.bin_of(diff);
        self.counts[b] += 1;
        self.samples += 1;
        if diff == 0 {
            self.exact_zero += 1;
        }
    }

    pub fn zero_bin(&self) -> usize {
        self.bin_of(0)
    }

    /// Index of the fullest bin (lowest index on ties).
    pub fn modal_bin(&self) -> usize {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }

    pub fn bin_bounds(&self, b: usize) -> (f64, f64) {
        let lo = self.lower + b as f64 * self.width;
        (lo, lo + self.width)
    }

    /// `bin_lower bin_upper count` per bin.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (b, c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.bin_bounds(b);
            writeln!(out, "{lo} {hi} {c}")?;
        }
        Ok(())
    }
}

/// Runs `replicates` synthetic draws for every pair in `store`.
///
/// Each pair owns an RNG stream derived from `seed` and its index, so the
/// result does not depend on scheduling.
pub fn posterior_predictive_check(
    store: &PairStore,
    pair_q: &[f64],
    params: &ModelParams,
    seed: u64,
    replicates: usize,
) -> PpcHistogram {
    let m = store.num_collectors();
    let diffs: Vec<Vec<i64>> = (0..store.len())
        .into_par_iter()
        .map(|p| {
            let v = store.vector(p);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let observed: i64 = (0..m).map(|k| positives(v, k) as i64).sum();
            (0..replicates)
                .map(|_| {
                    let edge = rng.random::<f64>() < pair_q[p];
                    let mut synthetic = 0i64;
                    for k in 0..m {
                        let trials = positives(v, k) as u64 + negatives(v, k) as u64;
                        if trials == 0 {
                            continue;
                        }
                        let rate = if edge { params.alpha[k] } else { params.beta[k] };
                        let draw = Binomial::new(trials, rate).expect("rates are clamped probabilities");
                        synthetic += draw.sample(&mut rng) as i64;
                    }
                    observed - synthetic
                })
                .collect()
        })
        .collect();
    let mut hist = PpcHistogram::new();
    for d in diffs.iter().flatten() {
        hist.add(*d);
    }
    hist
}
