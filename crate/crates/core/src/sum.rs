//! Order-independent accumulation.
//!
//! Kernel sums are accumulated in 2^-80 fixed point inside an `i128`. Integer
//! addition is associative, so the total does not depend on the order in which
//! terms arrive: swapping the two samples, permuting rows, or splitting the work
//! across threads all give bit-identical statistics.

const FRAC_BITS: i32 = 80;
const HALF_BITS: i32 = 40;
const HALF_SCALE: f64 = (1u64 << HALF_BITS) as f64;
const UNIT_BITS: i32 = 62;
const UNIT_SCALE: f64 = (1u64 << UNIT_BITS) as f64;

/// Largest magnitude a single term may have.
pub const MAX_TERM: f64 = 4_194_304.0; // 2^22

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExactSum(i128);

impl ExactSum {
    pub const fn new() -> Self {
        ExactSum(0)
    }

    /// Adds `v`, truncating it toward zero at 2^-80 resolution.
    #[inline]
    pub fn add(&mut self, v: f64) {
        self.0 += Self::fixed(v);
    }

    /// `v` in 2^-80 fixed point, for adding one term to several sums.
    #[inline]
    pub fn fixed(v: f64) -> i128 {
        debug_assert!(v.is_finite() && v.abs() < MAX_TERM, "term out of range: {v}");
        let scaled = v * HALF_SCALE;
        let hi = scaled.trunc();
        let lo = (scaled - hi) * HALF_SCALE;
        ((hi as i64 as i128) << HALF_BITS) + lo as i64 as i128
    }

    /// Fixed-point form of a value in `[0, 1]` (kernel entries): truncated
    /// at 2^-62 with a single conversion.
    #[inline]
    pub fn fixed_unit(v: f64) -> i128 {
        debug_assert!((0.0..=1.0).contains(&v), "not a unit value: {v}");
        ((v * UNIT_SCALE) as i64 as i128) << (FRAC_BITS - UNIT_BITS)
    }

    #[inline]
    pub fn add_fixed(&mut self, v: i128) {
        self.0 += v;
    }

    #[inline]
    pub fn merge(&mut self, other: ExactSum) {
        self.0 += other.0;
    }

    pub fn value(self) -> f64 {
        // Split so the conversion rounds once, at the final f64.
        self.0 as f64 * 2f64.powi(-FRAC_BITS)
    }
}

impl std::iter::FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = ExactSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}
