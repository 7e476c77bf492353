//! Normalized entropy as collectors are added one at a time.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{normalized_entropy, AnalyticsError};
use crate::inference::{em_fit, EmOptions, ModelParams};
use crate::observation::ClassTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationOptions {
    pub orderings: usize,
    pub seed: u64,
    pub em: EmOptions,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self { orderings: 10, seed: 0, em: EmOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPoint {
    pub ordering: usize,
    /// Number of leading collectors in the ordering.
    pub prefix: usize,
    pub h_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCurve {
    pub orderings: Vec<Vec<usize>>,
    pub points: Vec<AblationPoint>,
    /// Mean `h_norm` over orderings, indexed by `prefix - 1`.
    pub mean: Vec<f64>,
    /// Population standard deviation over orderings, indexed like `mean`.
    pub std_dev: Vec<f64>,
}

impl AblationCurve {
    /// `ordering prefix h_norm converged` per point.
    pub fn write_points<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "ordering\tprefix\th_norm\tconverged")?;
        for p in &self.points {
            writeln!(out, "{}\t{}\t{:.16e}\t{}", p.ordering, p.prefix, p.h_norm, p.converged as u8)?;
        }
        Ok(())
    }

    /// `prefix mean std_dev` per prefix size.
    pub fn write_summary<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "prefix\tmean\tstd_dev")?;
        for (i, (m, s)) in self.mean.iter().zip(&self.std_dev).enumerate() {
            writeln!(out, "{}\t{m:.16e}\t{s:.16e}", i + 1)?;
        }
        Ok(())
    }
}

/// `count` seeded random permutations of `0..collectors`.
pub fn collector_orderings(collectors: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut order: Vec<usize> = (0..collectors).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

fn fit_prefix(table: &ClassTable, subset: &[usize], em: EmOptions) -> Result<(f64, bool), AnalyticsError> {
    if subset.is_empty() {
        return Err(AnalyticsError::EmptyPrefix);
    }
    let projected = table.project(subset)?;
    let fit = em_fit(&projected, &ModelParams::initial(&projected), em)?;
    Ok((normalized_entropy(&fit, &projected)?, fit.converged))
}

/// Refits the model on every prefix of every ordering and reports `h_norm`.
///
/// `prefixes` selects prefix sizes; `None` means `1..=M`.
pub fn collector_ablation(
    table: &ClassTable,
    orderings: &[Vec<usize>],
    prefixes: Option<&[usize]>,
    em: EmOptions,
) -> Result<AblationCurve, AnalyticsError> {
    let m = table.num_collectors();
    let all: Vec<usize> = (1..=m).collect();
    let prefixes = prefixes.unwrap_or(&all);
    if prefixes.contains(&0) {
        return Err(AnalyticsError::EmptyPrefix);
    }
    let jobs: Vec<(usize, usize)> = (0..orderings.len()).flat_map(|o| prefixes.iter().map(move |&k| (o, k))).collect();
    let points = jobs
        .par_iter()
        .map(|&(o, k)| {
            let subset = &orderings[o][..k.min(orderings[o].len())];
            let (h_norm, converged) = fit_prefix(table, subset, em)?;
            Ok(AblationPoint { ordering: o, prefix: k, h_norm, converged })
        })
        .collect::<Result<Vec<_>, AnalyticsError>>()?;

    let max_prefix = prefixes.iter().copied().max().unwrap_or(0);
    let mut mean = vec![f64::NAN; max_prefix];
    let mut std_dev = vec![f64::NAN; max_prefix];
    for &k in prefixes {
        let vals: Vec<f64> = points.iter().filter(|p| p.prefix == k).map(|p| p.h_norm).collect();
        if vals.is_empty() {
            continue;
        }
        let mu = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / vals.len() as f64;
        mean[k - 1] = mu;
        std_dev[k - 1] = var.sqrt();
    }
    Ok(AblationCurve { orderings: orderings.to_vec(), points, mean, std_dev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::fit;
    use crate::observation::{ObservationClass, ObservationVector};

    fn table() -> ClassTable {
        let classes = [
            (vec![3, 0, 3, 0, 2, 0], 30),
            (vec![0, 3, 0, 3, 0, 2], 120),
            (vec![3, 0, 0, 0, 0, 0], 10),
            (vec![0, 0, 2, 1, 0, 0], 15),
            (vec![1, 2, 0, 3, 0, 0], 5),
        ];
        let classes = classes
            .into_iter()
            .map(|(v, c)| ObservationClass { vector: ObservationVector::from_counts(v), multiplicity: c })
            .collect();
        ClassTable::new(3, 3, 40, classes).unwrap()
    }

    #[test]
    fn orderings_are_seeded_permutations() {
        let a = collector_orderings(5, 3, 9);
        assert_eq!(a, collector_orderings(5, 3, 9));
        for o in &a {
            let mut s = o.clone();
            s.sort();
            assert_eq!(s, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn full_prefix_matches_full_fit() {
        let t = table();
        let orderings = vec![vec![0, 1, 2]];
        let curve = collector_ablation(&t, &orderings, Some(&[3]), EmOptions::default()).unwrap();
        let full = fit(&t).unwrap();
        let h = normalized_entropy(&full, &t).unwrap();
        assert_eq!(curve.points[0].h_norm, h);
        assert_eq!(curve.mean[2], h);
        assert_eq!(curve.std_dev[2], 0.0);
    }

    #[test]
    fn empty_prefix_rejected() {
        let t = table();
        let r = collector_ablation(&t, &[vec![0, 1, 2]], Some(&[0]), EmOptions::default());
        assert!(matches!(r, Err(AnalyticsError::EmptyPrefix)));
    }

    #[test]
    fn duplicated_collector_does_not_raise_entropy() {
        // Collector 0 alone versus collector 0 twice.
        let t = table();
        let single = t.project(&[0]).unwrap();
        let doubled = t.project(&[0, 0]).unwrap();
        let h1 = normalized_entropy(&fit(&single).unwrap(), &single).unwrap();
        let h2 = normalized_entropy(&fit(&doubled).unwrap(), &doubled).unwrap();
        assert!(h2 <= h1 + 1e-12, "{h2} > {h1}");
    }
}
