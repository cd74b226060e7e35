//! Performance bookkeeping: normalized cost against a nominal baseline,
//! running-minimum regret, and percentile aggregation across repetitions.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Normalized performance `(J - J_baseline) / J_baseline`; negative
/// values beat the baseline. Requires a positive baseline.
pub fn normalized_performance(cost: f64, baseline: f64) -> f64 {
    assert!(baseline > 0.0, "baseline cost must be positive");
    (cost - baseline) / baseline
}

/// Running-minimum regret: `r_t = |f_star - min_{s <= t} values_s|`.
/// The output is non-increasing.
pub fn regret_curve(values: &[f64], f_star: f64) -> Vec<f64> {
    assert!(!values.is_empty(), "regret needs at least one value");
    let mut best = f64::INFINITY;
    values
        .iter()
        .map(|v| {
            best = best.min(*v);
            (f_star - best).abs()
        })
        .collect()
}

/// Linear-interpolation percentile of already-sorted values, `p` in
/// `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Per-iteration median and quartiles across repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub median: Vec<f64>,
    pub p25: Vec<f64>,
    pub p75: Vec<f64>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.median.len()
    }

    pub fn is_empty(&self) -> bool {
        self.median.is_empty()
    }
}

/// Elementwise median/25th/75th percentile across curves; shorter curves
/// are padded with their last value.
pub fn aggregate(curves: &[Vec<f64>]) -> MetricSeries {
    assert!(!curves.is_empty(), "aggregate needs at least one curve");
    assert!(curves.iter().all(|c| !c.is_empty()), "curves must be nonempty");
    let len = curves.iter().map(Vec::len).max().unwrap_or(0);
    let mut median = Vec::with_capacity(len);
    let mut p25 = Vec::with_capacity(len);
    let mut p75 = Vec::with_capacity(len);
    for t in 0..len {
        let mut column: Vec<f64> = curves
            .iter()
            .map(|c| *c.get(t).unwrap_or_else(|| c.last().expect("nonempty")))
            .collect();
        column.sort_by(f64::total_cmp);
        p25.push(percentile_sorted(&column, 0.25));
        median.push(percentile_sorted(&column, 0.5));
        p75.push(percentile_sorted(&column, 0.75));
    }
    MetricSeries { median, p25, p75 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normalized_performance_formula() {
        assert_abs_diff_eq!(normalized_performance(2.0, 2.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(normalized_performance(3.0, 2.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normalized_performance(1.0, 2.0), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn regret_formula() {
        assert_eq!(regret_curve(&[5.0, 3.0, 4.0], 1.0), vec![4.0, 2.0, 2.0]);
        assert_eq!(regret_curve(&[1.0, 1.0, 1.0], 1.0), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn regret_never_increases_on_fuzzed_inputs() {
        use rand::Rng;
        let mut rng = crate::seed::rng(4);
        for _ in 0..50 {
            let n = 1 + (rng.random::<f64>() * 40.0) as usize;
            let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
            // The reference value is the global optimum, a lower bound.
            let f_star = -rng.random::<f64>() * 2.0;
            let curve = regret_curve(&values, f_star);
            for pair in curve.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-15);
            }
            // Appending never increases the final regret.
            let mut longer = values.clone();
            longer.push(rng.random::<f64>() * 10.0);
            let longer_curve = regret_curve(&longer, f_star);
            assert!(longer_curve.last().unwrap() <= curve.last().unwrap());
        }
    }

    #[test]
    fn aggregate_single_record_is_identity() {
        let series = aggregate(&[vec![3.0, 1.0, 2.0]]);
        assert_eq!(series.median, vec![3.0, 1.0, 2.0]);
        assert_eq!(series.p25, series.median);
        assert_eq!(series.p75, series.median);
    }

    #[test]
    fn aggregate_uses_linear_interpolation() {
        let series = aggregate(&[vec![0.0], vec![2.0], vec![4.0]]);
        assert_abs_diff_eq!(series.median[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(series.p25[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(series.p75[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn aggregate_is_permutation_invariant_and_pads() {
        let a = aggregate(&[vec![1.0, 1.0], vec![2.0], vec![3.0, 0.0]]);
        let b = aggregate(&[vec![3.0, 0.0], vec![1.0, 1.0], vec![2.0]]);
        assert_eq!(a, b);
        // The short curve is padded with its last value (2.0).
        assert_abs_diff_eq!(a.median[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn quartiles_bracket_the_median() {
        use rand::Rng;
        let mut rng = crate::seed::rng(8);
        let curves: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..6).map(|_| rng.random::<f64>()).collect())
            .collect();
        let series = aggregate(&curves);
        for t in 0..series.len() {
            assert!(series.p25[t] <= series.median[t]);
            assert!(series.median[t] <= series.p75[t]);
        }
    }
}
