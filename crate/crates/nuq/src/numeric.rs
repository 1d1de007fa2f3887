//! Deterministic floating-point reductions.
//!
//! Reported scores must not depend on thread count or on how a sum happened
//! to be partitioned, so every reduction that feeds a reported number goes
//! through these helpers instead of ad-hoc `sum()` calls. The workhorse is
//! [`canonical_sum`]: sort the addends by IEEE total order, then accumulate
//! with Neumaier compensation. The result is a pure function of the value
//! *multiset* — reordering, re-chunking, or swapping the two argument sets
//! of a symmetric computation cannot change a single bit.

/// Neumaier-compensated sequential sum (fixed input order).
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64; // running compensation for lost low-order bits
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sum that depends only on the multiset of inputs, not their order.
/// Sorts in place, then Neumaier-accumulates.
pub(crate) fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    neumaier_sum(values.iter().copied())
}

/// Compensated dot product, left-to-right.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    neumaier_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Compensated squared Euclidean distance, left-to-right.
pub(crate) fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    neumaier_sum(a.iter().zip(b).map(|(x, y)| {
        let d = x - y;
        d * d
    }))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    neumaier_sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased sample standard deviation (n−1 denominator); requires n ≥ 2.
pub(crate) fn sample_std(values: &[f64]) -> f64 {
    debug_assert!(values.len() >= 2);
    let m = mean(values);
    let ss = neumaier_sum(values.iter().map(|v| {
        let d = v - m;
        d * d
    }));
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Median of a pre-sorted slice; the mean of the two middle order statistics
/// when the count is even. Empty input returns None.
pub(crate) fn median_sorted(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    if n % 2 == 1 {
        Some(sorted[n / 2])
    } else {
        Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2]))
    }
}

/// q-quantile (0 ≤ q ≤ 1) of a pre-sorted slice by linear interpolation
/// between closest ranks. Empty input returns None.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Collect the finite values of an iterator, sorted ascending. NaN (and
/// ±inf) entries are dropped — used for medians over maps with NaN holes.
pub(crate) fn finite_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    v.sort_unstable_by(f64::total_cmp);
    v
}
