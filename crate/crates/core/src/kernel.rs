//! ARD Gaussian kernel
//!
//! `k(x, y) = exp(-(1/D) * sum_d a_d^2 (x_d - y_d)^2 / gamma_d^2)`
//!
//! `a_d >= 0` are the relevance weights and `gamma_d > 0` per-dimension
//! bandwidths that unit-normalise each coordinate.

use std::str::FromStr;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArdKernelParams {
    weights: Array1<f64>,
    bandwidths: Array1<f64>,
}

impl ArdKernelParams {
    pub fn new(weights: Array1<f64>, bandwidths: Array1<f64>) -> Result<Self> {
        if weights.len() != bandwidths.len() {
            return Err(Error::DimensionMismatch { expected: bandwidths.len(), found: weights.len() });
        }
        if weights.is_empty() {
            return Err(Error::Validation("kernel dimension must be positive".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Validation(format!("ARD weight {w} is not a finite nonnegative number")));
        }
        if let Some(g) = bandwidths.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::Validation(format!("bandwidth {g} is not finite and positive")));
        }
        Ok(ArdKernelParams { weights, bandwidths })
    }

    /// Unit weights over the given bandwidths.
    pub fn unit_weights(bandwidths: Array1<f64>) -> Result<Self> {
        Self::new(Array1::ones(bandwidths.len()), bandwidths)
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn bandwidths(&self) -> ArrayView1<'_, f64> {
        self.bandwidths.view()
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Dimensions with a nonzero weight and their coordinate scales
    /// `a_d / (gamma_d * sqrt(D))`.
    pub(crate) fn active_scales(&self) -> (Vec<usize>, Vec<f64>) {
        let norm = (self.dim() as f64).sqrt();
        self.weights
            .iter()
            .zip(&self.bandwidths)
            .enumerate()
            .filter(|(_, (a, _))| **a != 0.0)
            .map(|(d, (a, g))| (d, a / (g * norm)))
            .unzip()
    }
}

/// Rows restricted to the active dimensions and multiplied by their scales,
/// stored contiguously. The kernel exponent is the squared Euclidean distance
/// between packed rows.
#[derive(Debug, Clone)]
pub(crate) struct Packed {
    pub data: Vec<f64>,
    pub rows: usize,
    pub width: usize,
}

impl Packed {
    pub fn new(x: ArrayView2<f64>, active: &[usize], scales: &[f64]) -> Self {
        let width = active.len();
        let mut data = Vec::with_capacity(x.nrows() * width);
        for row in x.axis_iter(Axis(0)) {
            data.extend(active.iter().zip(scales).map(|(&d, s)| s * row[d]));
        }
        Packed { data, rows: x.nrows(), width }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// Squared distance between packed rows; every kernel evaluation goes
/// through here so matrix entries and single evaluations agree bit for bit.
#[inline]
pub(crate) fn packed_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    // Four independent lanes, combined in a fixed order.
    let mut lanes = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (u, v) in ca.zip(cb) {
        for k in 0..4 {
            let diff = u[k] - v[k];
            lanes[k] += diff * diff;
        }
    }
    for (k, (u, v)) in ra.iter().zip(rb).enumerate() {
        let diff = u - v;
        lanes[k] += diff * diff;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3])
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub fn kernel_value(x: ArrayView1<f64>, y: ArrayView1<f64>, params: &ArdKernelParams) -> Result<f64> {
    check_dim(params.dim(), x.len())?;
    check_dim(params.dim(), y.len())?;
    let (active, scales) = params.active_scales();
    let px = Packed::new(x.insert_axis(Axis(0)), &active, &scales);
    let py = Packed::new(y.insert_axis(Axis(0)), &active, &scales);
    Ok((-packed_sq_dist(px.row(0), py.row(0))).exp())
}

/// Gram matrix between the rows of `x` and the rows of `y`.
pub fn kernel_matrix(x: ArrayView2<f64>, y: ArrayView2<f64>, params: &ArdKernelParams) -> Result<Array2<f64>> {
    check_dim(params.dim(), x.ncols())?;
    check_dim(params.dim(), y.ncols())?;
    let (active, scales) = params.active_scales();
    Ok(gram(&Packed::new(x, &active, &scales), &Packed::new(y, &active, &scales)))
}

pub(crate) fn gram(x: &Packed, y: &Packed) -> Array2<f64> {
    let mut k = Array2::zeros((x.rows, y.rows));
    for (i, mut out) in k.axis_iter_mut(Axis(0)).enumerate() {
        let xi = x.row(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = (-packed_sq_dist(xi, y.row(j))).exp();
        }
    }
    k
}

/// Symmetric Gram matrix of one sample; only the upper triangle is evaluated.
pub(crate) fn gram_sym(x: &Packed) -> Array2<f64> {
    let n = x.rows;
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        let xi = x.row(i);
        for j in (i + 1)..n {
            let v = (-packed_sq_dist(xi, x.row(j))).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Statistic used to summarise pairwise distances per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    #[default]
    Median,
    Mean,
}

impl FromStr for BandwidthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "median" => Ok(BandwidthMode::Median),
            "mean" => Ok(BandwidthMode::Mean),
            other => Err(Error::InvalidConfig(format!("unknown bandwidth mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for BandwidthMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BandwidthMode::Median => "median",
            BandwidthMode::Mean => "mean",
        })
    }
}

/// Per-dimension bandwidths together with the dimensions that needed the
/// constant-dimension fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandwidths {
    pub values: Array1<f64>,
    pub degenerate: Vec<usize>,
}

/// Bandwidth used for a dimension whose pooled values are all identical.
pub const DEGENERATE_BANDWIDTH: f64 = 1.0;

/// Dimension-wise median (or mean) heuristic over the pooled sample.
///
/// For each dimension the statistic is taken over every nonzero pairwise
/// distance `|z_d - z'_d|` between rows of `x` and `y` stacked together.
pub fn bandwidth_heuristic(x: ArrayView2<f64>, y: ArrayView2<f64>, mode: BandwidthMode) -> Result<Bandwidths> {
    check_dim(x.ncols(), y.ncols())?;
    let n = x.nrows() + y.nrows();
    if n < 2 {
        return Err(Error::SampleTooSmall { required: 2, n_x: x.nrows(), n_y: y.nrows() });
    }
    let dim = x.ncols();
    let mut values = Array1::zeros(dim);
    let mut degenerate = Vec::new();
    let mut column = Vec::with_capacity(n);
    for d in 0..dim {
        column.clear();
        column.extend(x.column(d).iter().chain(y.column(d).iter()).copied());
        column.sort_by(f64::total_cmp);
        let gamma = match mode {
            BandwidthMode::Median => pairwise_median(&column),
            BandwidthMode::Mean => pairwise_mean(&column),
        };
        values[d] = match gamma {
            Some(g) if g > 0.0 && g.is_finite() => g,
            _ => {
                warn!("dimension {d} is constant in the pooled sample; using bandwidth {DEGENERATE_BANDWIDTH}");
                degenerate.push(d);
                DEGENERATE_BANDWIDTH
            }
        };
    }
    Ok(Bandwidths { values, degenerate })
}

/// Number of pairs `(i, j), i < j` with `sorted[i] == sorted[j]`.
fn zero_pairs(sorted: &[f64]) -> usize {
    let mut total = 0;
    let mut run = 1usize;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

fn pairwise_mean(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    let nonzero = n * (n - 1) / 2 - zero_pairs(sorted);
    if nonzero == 0 {
        return None;
    }
    // sum_{i<j} (s_j - s_i) = sum_j s_j (2j - n + 1)
    let total: f64 = sorted
        .iter()
        .enumerate()
        .map(|(j, s)| s * (2.0 * j as f64 - n as f64 + 1.0))
        .sum();
    Some(total / nonzero as f64)
}

fn pairwise_median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    let zeros = zero_pairs(sorted);
    let nonzero = n * (n - 1) / 2 - zeros;
    if nonzero == 0 {
        return None;
    }
    let mid = nonzero / 2;
    if nonzero % 2 == 1 {
        Some(kth_pairwise_diff(sorted, zeros + mid))
    } else {
        let lo = kth_pairwise_diff(sorted, zeros + mid - 1);
        let hi = kth_pairwise_diff(sorted, zeros + mid);
        Some(0.5 * (lo + hi))
    }
}

/// `k`-th smallest (0-based) of `sorted[j] - sorted[i]` over `i < j`.
///
/// Selection in the implicit sorted matrix of differences: every row `i` keeps a
/// window `[lo_i, hi_i)` of candidate columns, and each round partitions all
/// windows around the weighted median of the row midpoints, which discards at
/// least a quarter of the candidates.
pub(crate) fn kth_pairwise_diff(sorted: &[f64], k: usize) -> f64 {
    let n = sorted.len();
    debug_assert!(k < n * (n - 1) / 2);
    let mut lo: Vec<usize> = (0..n).map(|i| i + 1).collect();
    let mut hi: Vec<usize> = vec![n; n];
    let mut k = k;
    let diff = |i: usize, j: usize| sorted[j] - sorted[i];

    loop {
        let remaining: usize = (0..n).map(|i| hi[i] - lo[i]).sum();
        if remaining <= 4 * n + 16 {
            let mut cand: Vec<f64> = Vec::with_capacity(remaining);
            for i in 0..n {
                cand.extend((lo[i]..hi[i]).map(|j| diff(i, j)));
            }
            let (_, v, _) = cand.select_nth_unstable_by(k, f64::total_cmp);
            return *v;
        }

        let mut mids: Vec<(f64, usize)> = (0..n)
            .filter(|&i| hi[i] > lo[i])
            .map(|i| (diff(i, lo[i] + (hi[i] - lo[i]) / 2), hi[i] - lo[i]))
            .collect();
        mids.sort_by(|a, b| a.0.total_cmp(&b.0));
        let half = remaining.div_ceil(2);
        let mut seen = 0;
        let mut pivot = mids[0].0;
        for (v, w) in &mids {
            seen += w;
            if seen >= half {
                pivot = *v;
                break;
            }
        }

        // lt[i]: first column with diff >= pivot; le[i]: first with diff > pivot.
        // Both are non-decreasing in i because rows are shifted copies of `sorted`.
        let mut lt = vec![0usize; n];
        let mut le = vec![0usize; n];
        let (mut p_lt, mut p_le) = (0usize, 0usize);
        for i in 0..n {
            p_lt = p_lt.max(i + 1);
            while p_lt < n && diff(i, p_lt) < pivot {
                p_lt += 1;
            }
            p_le = p_le.max(p_lt);
            while p_le < n && diff(i, p_le) <= pivot {
                p_le += 1;
            }
            lt[i] = p_lt.clamp(lo[i], hi[i]);
            le[i] = p_le.clamp(lo[i], hi[i]);
        }
        let below: usize = (0..n).map(|i| lt[i] - lo[i]).sum();
        let through: usize = (0..n).map(|i| le[i] - lo[i]).sum();
        if k < below {
            hi.copy_from_slice(&lt);
        } else if k < through {
            return pivot;
        } else {
            k -= through;
            lo.copy_from_slice(&le);
        }
    }
}
