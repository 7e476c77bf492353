//! Small numerically-stable helpers shared by the inference and analytics code.

use std::ops::Range;

use rayon::prelude::*;

/// Number of items folded sequentially before partial results are combined.
///
/// Reductions split their input into chunks of this fixed size regardless of
/// the rayon pool size, so results are bit-identical for any worker count.
pub const REDUCE_CHUNK: usize = 2048;

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn logsumexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Stable `log(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-x))`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Natural-log entropy of a Bernoulli(q) variable, with `0 log 0 = 0`.
#[inline]
pub(crate) fn bernoulli_entropy(q: f64) -> f64 {
    let mut h = 0.0;
    if q > 0.0 {
        h -= q * q.ln();
    }
    if q < 1.0 {
        let r = 1.0 - q;
        h -= r * r.ln();
    }
    h
}

/// Pairwise (tree) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

/// Deterministic parallel reduction of `width` accumulators over `0..len`.
///
/// `fold` adds the contribution of one index range into an accumulator
/// slice. Partial vectors are combined with a fixed pairwise tree.
pub fn chunked_reduce<F>(len: usize, width: usize, fold: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64]) + Sync,
{
    let chunks = len.div_ceil(REDUCE_CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * REDUCE_CHUNK;
            let end = (start + REDUCE_CHUNK).min(len);
            let mut acc = vec![0.0; width];
            fold(start..end, &mut acc);
            acc
        })
        .collect();
    tree_combine(&partials, width)
}

fn tree_combine(parts: &[Vec<f64>], width: usize) -> Vec<f64> {
    match parts.len() {
        0 => vec![0.0; width],
        1 => parts[0].clone(),
        n => {
            let (lo, hi) = parts.split_at(n / 2);
            let mut left = tree_combine(lo, width);
            let right = tree_combine(hi, width);
            for (l, r) in left.iter_mut().zip(right) {
                *l += r;
            }
            left
        }
    }
}
