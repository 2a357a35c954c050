//! Empirical quantiles with linear interpolation between order statistics.
//!
//! The k-th of n sorted points sits at probability (k-1)/(n-1); quantiles
//! between order statistics interpolate linearly. The same convention is
//! used everywhere (sample filters, winsorization, debt-capacity
//! thresholds) so that the grid search is well defined.

/// Quantile of `sorted` (ascending, non-empty) at probability `p` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Quantile of an unsorted sample; sorts a copy.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    quantile_sorted(&v, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn midpoint_interpolation() {
        assert_eq!(quantile(&[0.0, 0.1, 0.2, 0.3], 0.5), 0.15);
    }

    #[test]
    fn constant_sample() {
        let v = vec![0.2; 7];
        for &p in &[0.0, 0.25, 0.5, 0.9, 1.0] {
            assert_eq!(quantile(&v, p), 0.2);
        }
    }

    #[test]
    fn endpoints() {
        let v = [3.0, 1.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 3.0);
    }

    #[test]
    fn single_point() {
        assert_eq!(quantile(&[5.0], 0.7), 5.0);
    }

    #[test]
    fn zero_inflated_lower_tail() {
        // 21 zeros out of 100: every quantile below 0.21 lands inside the
        // zero block under the (k-1)/(n-1) convention.
        let mut v = vec![0.0; 21];
        v.extend((1..=79).map(|i| i as f64 / 100.0));
        assert_eq!(quantile(&v, 0.10), 0.0);
        assert_eq!(quantile(&v, 0.20), 0.0);
        assert!(quantile(&v, 0.25) > 0.0);
    }

    proptest! {
        #[test]
        fn monotone_in_p(mut xs in proptest::collection::vec(-1e3..1e3f64, 2..40),
                         p1 in 0.0..1.0f64, p2 in 0.0..1.0f64) {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(quantile_sorted(&xs, lo) <= quantile_sorted(&xs, hi) + 1e-12);
        }

        #[test]
        fn within_range(mut xs in proptest::collection::vec(-1e3..1e3f64, 1..40),
                        p in 0.0..1.0f64) {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = quantile_sorted(&xs, p);
            prop_assert!(q >= xs[0] - 1e-12 && q <= xs[xs.len() - 1] + 1e-12);
        }
    }
}
