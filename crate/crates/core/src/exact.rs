//! Exact floating-point accumulation.
//!
//! Partial sums are kept as non-overlapping expansions (Shewchuk's
//! `grow-expansion`, as in Python's `math.fsum`) and rounded once at the end.
//! The rounded result is the correctly rounded exact sum, so it does not
//! depend on the order or grouping of the additions. Cross-node reductions
//! use this to make traces independent of how examples are partitioned.

use smallvec::SmallVec;

/// Exact running sum of `f64` values.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: SmallVec<[f64; 2]>,
    // Inf/NaN cannot be represented in an expansion; they are summed naively.
    special: f64,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let mut i = 0;
        for k in 0..self.partials.len() {
            let mut y = self.partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    /// Adds every partial of `other`; the result is still exact.
    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
        self.special += other.special;
    }

    /// Correctly rounded value of the exact sum.
    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Round-half-even correction when the remaining partials push the
        // tail past a halfway point.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Dense vector of exact accumulators.
#[derive(Clone, Debug)]
pub struct ExactVec {
    acc: Vec<ExactSum>,
}

impl ExactVec {
    pub fn zeros(dim: usize) -> Self {
        Self {
            acc: vec![ExactSum::new(); dim],
        }
    }

    /// Accumulator holding `scale * v` (each product rounded once).
    pub fn scaled(v: &[f64], scale: f64) -> Self {
        let mut out = Self::zeros(v.len());
        for (a, &x) in out.acc.iter_mut().zip(v) {
            a.add(scale * x);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.acc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acc.is_empty()
    }

    #[inline]
    pub fn add_at(&mut self, j: usize, x: f64) {
        self.acc[j].add(x);
    }

    pub fn merge(&mut self, other: &ExactVec) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.acc.iter_mut().zip(&other.acc) {
            a.merge(b);
        }
    }

    pub fn round(&self) -> Vec<f64> {
        self.acc.iter().map(ExactSum::value).collect()
    }
}

impl From<&[f64]> for ExactVec {
    fn from(v: &[f64]) -> Self {
        Self::scaled(v, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cancels_catastrophically_large_terms() {
        let s: ExactSum = [1e100, 1.0, -1e100, 1e-100].into_iter().collect();
        assert_eq!(s.value(), 1.0);
        let s: ExactSum = [0.1; 10].into_iter().collect();
        assert_eq!(s.value(), 1.0);
    }

    #[test]
    fn halfway_case_rounds_to_even() {
        // 1 + 2^-53 + 2^-106: the exact sum lies above the halfway point.
        let s: ExactSum = [1.0, 2f64.powi(-53), 2f64.powi(-106)].into_iter().collect();
        assert_eq!(s.value(), 1.0 + f64::EPSILON);
    }

    #[test]
    fn empty_is_zero() {
        assert_eq!(ExactSum::new().value(), 0.0);
        assert!(ExactVec::zeros(0).is_empty());
    }

    proptest! {
        #[test]
        fn sum_is_order_and_grouping_invariant(
            xs in prop::collection::vec(-1e6f64..1e6, 1..60),
            split in 0usize..60,
        ) {
            let forward: ExactSum = xs.iter().copied().collect();
            let backward: ExactSum = xs.iter().rev().copied().collect();
            prop_assert_eq!(forward.value().to_bits(), backward.value().to_bits());

            let k = split.min(xs.len());
            let mut left: ExactSum = xs[..k].iter().copied().collect();
            let right: ExactSum = xs[k..].iter().copied().collect();
            left.merge(&right);
            prop_assert_eq!(left.value().to_bits(), forward.value().to_bits());
        }
    }
}
