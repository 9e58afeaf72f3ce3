//! Permutation test of equal distributions on a selected subspace.
//!
//! Both samples are projected onto the selected coordinates, bandwidths are
//! recomputed on the pooled projection, and the unbiased MMD² with unit ARD
//! weights is compared against its distribution under random relabelling of
//! the pooled rows. The pooled Gram matrix does not depend on the labelling,
//! so it is computed once.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{bandwidth_heuristic, gram_sym, ArdKernelParams, BandwidthMode, Packed};
use crate::mmd::{mmd_from_sums, require_rows};
use crate::sum::ExactSum;

pub const DEFAULT_PERMUTATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub n_permutations: usize,
    pub seed: u64,
    pub bandwidth_mode: BandwidthMode,
    /// Keep every null statistic in the result.
    pub retain_null: bool,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            n_permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            bandwidth_mode: BandwidthMode::Median,
            retain_null: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    /// `(1 + #{null >= observed}) / (1 + n_permutations)`.
    pub p_value: f64,
    pub observed_stat: f64,
    pub n_permutations: usize,
    pub n_at_least_observed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_stats: Option<Vec<f64>>,
    pub selected_vars: Vec<usize>,
    pub bandwidths: Vec<f64>,
}

/// Add-one p-value.
pub fn add_one_p_value(n_at_least: usize, n_permutations: usize) -> f64 {
    (1 + n_at_least) as f64 / (1 + n_permutations) as f64
}

/// Pooled rows in a canonical order that does not depend on which sample is
/// called `x`: lexicographic on coordinates.
fn canonical_pool(x: ArrayView2<f64>, y: ArrayView2<f64>) -> (Array2<f64>, Vec<bool>) {
    let mut rows: Vec<(Vec<f64>, bool)> = x
        .axis_iter(Axis(0))
        .map(|r| (r.to_vec(), true))
        .chain(y.axis_iter(Axis(0)).map(|r| (r.to_vec(), false)))
        .collect();
    rows.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let dim = x.ncols();
    let mut pooled = Array2::zeros((rows.len(), dim));
    let mut is_x = Vec::with_capacity(rows.len());
    for (i, (r, lab)) in rows.into_iter().enumerate() {
        pooled.row_mut(i).assign(&ndarray::ArrayView1::from(&r));
        is_x.push(lab);
    }
    (pooled, is_x)
}

/// Unbiased MMD² between the rows flagged `true` and the rest.
fn split_statistic(k: &Array2<f64>, in_a: &[bool]) -> f64 {
    let n = in_a.len();
    let (mut saa, mut sbb, mut sab) = (ExactSum::new(), ExactSum::new(), ExactSum::new());
    for i in 0..n {
        let row = k.row(i);
        for j in (i + 1)..n {
            let v = ExactSum::fixed_unit(row[j]);
            match (in_a[i], in_a[j]) {
                (true, true) => saa.add_fixed(v),
                (false, false) => sbb.add_fixed(v),
                _ => sab.add_fixed(v),
            }
        }
    }
    let na = in_a.iter().filter(|a| **a).count();
    // Within-group sums run over ordered pairs.
    mmd_from_sums(2.0 * saa.value(), 2.0 * sbb.value(), sab.value(), na, n - na)
}

pub fn permutation_test(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    selected: &[usize],
    config: &PermutationConfig,
) -> Result<PermutationTestResult> {
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch { expected: x.ncols(), found: y.ncols() });
    }
    if let Some(&bad) = selected.iter().find(|&&d| d >= x.ncols()) {
        return Err(Error::Validation(format!("selected variable {bad} is out of range for dimension {}", x.ncols())));
    }
    require_rows(x.nrows(), y.nrows(), 2)?;

    let xp = x.select(Axis(1), selected);
    let yp = y.select(Axis(1), selected);
    let bw = bandwidth_heuristic(xp.view(), yp.view(), config.bandwidth_mode)?;
    let params = ArdKernelParams::unit_weights(bw.values.clone())?;
    let (active, scales) = params.active_scales();

    let (pooled, is_x) = canonical_pool(xp.view(), yp.view());
    let k = gram_sym(&Packed::new(pooled.view(), &active, &scales));
    let observed = split_statistic(&k, &is_x);

    // The smaller group takes the first slots of each shuffled order so that
    // swapping `x` and `y` replays exactly the same partitions.
    let total = pooled.nrows();
    let first = x.nrows().min(y.nrows());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..total).collect();
    let masks: Vec<Vec<bool>> = (0..config.n_permutations)
        .map(|_| {
            order.shuffle(&mut rng);
            let mut mask = vec![false; total];
            for &i in &order[..first] {
                mask[i] = true;
            }
            mask
        })
        .collect();
    let null: Vec<f64> = masks.par_iter().map(|m| split_statistic(&k, m)).collect();
    let n_at_least = null.iter().filter(|s| **s >= observed).count();

    Ok(PermutationTestResult {
        p_value: add_one_p_value(n_at_least, config.n_permutations),
        observed_stat: observed,
        n_permutations: config.n_permutations,
        n_at_least_observed: n_at_least,
        null_stats: config.retain_null.then_some(null),
        selected_vars: selected.to_vec(),
        bandwidths: bw.values.to_vec(),
    })
}
