//! Unbiased MMD² estimator, its variance estimate and the power ratio.
//!
//! Variance: first-order (leading-term) variance of the two-sample U-statistic,
//!
//! ```text
//! f_i = mean_{i' != i} k(x_i, x_i') - mean_j k(x_i, y_j)
//! g_j = mean_{j' != j} k(y_j, y_j') - mean_i k(x_i, y_j)
//! V   = 4/n * var(f) + 4/m * var(g)
//! ```
//!
//! with plug-in (1/n) variances. It is quadratic-time, built from the same
//! Gram matrices as the estimator, nonnegative, and defined for `n != m`.
//! This is the single place to swap in a different variance estimator.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram, gram_sym, ArdKernelParams, Packed};
use crate::sum::ExactSum;

/// Added to the variance under the square root of the ratio.
pub const RATIO_STABILITY_CONSTANT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    pub mmd_sq: f64,
    pub variance: f64,
    pub ratio: f64,
    pub n_x: usize,
    pub n_y: usize,
}

pub(crate) fn require_rows(x: usize, y: usize, required: usize) -> Result<()> {
    if x < required || y < required {
        return Err(Error::SampleTooSmall { required, n_x: x, n_y: y });
    }
    Ok(())
}

fn check_dims(x: ArrayView2<f64>, y: ArrayView2<f64>, params: &ArdKernelParams) -> Result<()> {
    for found in [x.ncols(), y.ncols()] {
        if found != params.dim() {
            return Err(Error::DimensionMismatch { expected: params.dim(), found });
        }
    }
    Ok(())
}

/// `1/(n(n-1)) * sxx + 1/(m(m-1)) * syy - 2/(nm) * sxy` from off-diagonal sums.
#[inline]
pub(crate) fn mmd_from_sums(sxx: f64, syy: f64, sxy: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    sxx / (n * (n - 1.0)) + syy / (m * (m - 1.0)) - 2.0 * sxy / (n * m)
}

/// Row and total sums of the three Gram blocks.
#[derive(Debug, Clone)]
pub(crate) struct GramSums {
    pub n: usize,
    pub m: usize,
    /// Off-diagonal row sums of Kxx.
    pub row_xx: Vec<f64>,
    /// Off-diagonal row sums of Kyy.
    pub row_yy: Vec<f64>,
    /// Row sums of Kxy.
    pub row_xy: Vec<f64>,
    /// Column sums of Kxy.
    pub col_xy: Vec<f64>,
    pub sxx: f64,
    pub syy: f64,
    pub sxy: f64,
}

impl GramSums {
    pub fn new(kxx: &Array2<f64>, kyy: &Array2<f64>, kxy: &Array2<f64>) -> Self {
        let (n, m) = kxy.dim();
        let off_diag_rows = |k: &Array2<f64>| -> Vec<ExactSum> {
            let len = k.nrows();
            let mut rows = vec![ExactSum::new(); len];
            for i in 0..len {
                let r = k.row(i);
                for j in (i + 1)..len {
                    let v = ExactSum::fixed_unit(r[j]);
                    rows[i].add_fixed(v);
                    rows[j].add_fixed(v);
                }
            }
            rows
        };
        let rxx = off_diag_rows(kxx);
        let ryy = off_diag_rows(kyy);
        let mut rxy = vec![ExactSum::new(); n];
        let mut cxy = vec![ExactSum::new(); m];
        for (i, r) in kxy.axis_iter(Axis(0)).enumerate() {
            for (j, v) in r.iter().enumerate() {
                let v = ExactSum::fixed_unit(*v);
                rxy[i].add_fixed(v);
                cxy[j].add_fixed(v);
            }
        }
        let total = |rows: &[ExactSum]| {
            let mut t = ExactSum::new();
            rows.iter().for_each(|r| t.merge(*r));
            t.value()
        };
        GramSums {
            n,
            m,
            sxx: total(&rxx),
            syy: total(&ryy),
            sxy: total(&rxy),
            row_xx: rxx.iter().map(|s| s.value()).collect(),
            row_yy: ryy.iter().map(|s| s.value()).collect(),
            row_xy: rxy.iter().map(|s| s.value()).collect(),
            col_xy: cxy.iter().map(|s| s.value()).collect(),
        }
    }

    pub fn mmd_sq(&self) -> f64 {
        mmd_from_sums(self.sxx, self.syy, self.sxy, self.n, self.m)
    }

    /// Centred first-order projections `f_i - mean(f)` and `g_j - mean(g)`.
    pub fn centred_projections(&self) -> (Vec<f64>, Vec<f64>) {
        let (nf, mf) = (self.n as f64, self.m as f64);
        let f: Vec<f64> = (0..self.n)
            .map(|i| self.row_xx[i] / (nf - 1.0) - self.row_xy[i] / mf)
            .collect();
        let g: Vec<f64> = (0..self.m)
            .map(|j| self.row_yy[j] / (mf - 1.0) - self.col_xy[j] / nf)
            .collect();
        let centre = |v: Vec<f64>| {
            let mean = v.iter().copied().collect::<ExactSum>().value() / v.len() as f64;
            v.into_iter().map(|x| x - mean).collect::<Vec<f64>>()
        };
        (centre(f), centre(g))
    }

    pub fn variance(&self) -> f64 {
        let (f, g) = self.centred_projections();
        let (nf, mf) = (self.n as f64, self.m as f64);
        let var_f = f.iter().map(|v| v * v).collect::<ExactSum>().value() / nf;
        let var_g = g.iter().map(|v| v * v).collect::<ExactSum>().value() / mf;
        (4.0 * var_f / nf + 4.0 * var_g / mf).max(0.0)
    }
}

pub(crate) struct Grams {
    pub px: Packed,
    pub py: Packed,
    /// Original indices of the packed columns.
    pub active: Vec<usize>,
    pub kxx: Array2<f64>,
    pub kyy: Array2<f64>,
    pub kxy: Array2<f64>,
}

impl Grams {
    pub fn compute(x: ArrayView2<f64>, y: ArrayView2<f64>, params: &ArdKernelParams) -> Self {
        let (active, scales) = params.active_scales();
        let px = Packed::new(x, &active, &scales);
        let py = Packed::new(y, &active, &scales);
        Grams { kxx: gram_sym(&px), kyy: gram_sym(&py), kxy: gram(&px, &py), px, py, active }
    }

    pub fn sums(&self) -> GramSums {
        GramSums::new(&self.kxx, &self.kyy, &self.kxy)
    }
}

pub(crate) fn estimate_from_sums(sums: &GramSums) -> MmdEstimate {
    let mmd_sq = sums.mmd_sq();
    let variance = sums.variance();
    MmdEstimate {
        mmd_sq,
        variance,
        ratio: mmd_sq / (variance + RATIO_STABILITY_CONSTANT).sqrt(),
        n_x: sums.n,
        n_y: sums.m,
    }
}

/// Unbiased MMD² between the rows of `x` and `y`. May be negative.
pub fn mmd_unbiased(x: ArrayView2<f64>, y: ArrayView2<f64>, params: &ArdKernelParams) -> Result<f64> {
    require_rows(x.nrows(), y.nrows(), 2)?;
    check_dims(x, y, params)?;
    Ok(Grams::compute(x, y, params).sums().mmd_sq())
}

/// Variance estimate of [`mmd_unbiased`]; needs at least four rows per side.
pub fn mmd_variance(x: ArrayView2<f64>, y: ArrayView2<f64>, params: &ArdKernelParams) -> Result<f64> {
    require_rows(x.nrows(), y.nrows(), 4)?;
    check_dims(x, y, params)?;
    Ok(Grams::compute(x, y, params).sums().variance())
}

/// `mmd² / sqrt(variance + 1e-8)`, the test-power surrogate.
pub fn ratio_statistic(x: ArrayView2<f64>, y: ArrayView2<f64>, params: &ArdKernelParams) -> Result<MmdEstimate> {
    require_rows(x.nrows(), y.nrows(), 4)?;
    check_dims(x, y, params)?;
    Ok(estimate_from_sums(&Grams::compute(x, y, params).sums()))
}
