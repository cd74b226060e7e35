//! Property tests for the geometric and bookkeeping invariants.

use bops_core::domain::{
    independence_domain, pca_domain, BoxDomain, GainSampleSet, PcaScale,
};
use bops_core::metrics::{aggregate, regret_curve};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sample_matrix(rows: Vec<Vec<f64>>) -> GainSampleSet {
    let dim = rows[0].len();
    let mut m = DMatrix::zeros(rows.len(), dim);
    for (r, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            m[(r, c)] = *v;
        }
    }
    GainSampleSet::new(m).unwrap()
}

prop_compose! {
    fn arb_samples()(dim in 1usize..6, n in 3usize..30)(
        rows in prop::collection::vec(
            prop::collection::vec(-10.0f64..10.0, dim..=dim),
            n..=n,
        )
    ) -> Vec<Vec<f64>> {
        rows
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pca_scale_product_never_exceeds_independence(rows in arb_samples()) {
        let set = sample_matrix(rows);
        let (_, indep) = independence_domain(&set, 0.5).unwrap();
        let (_, pca) = pca_domain(&set, 0.5, 0.0, PcaScale::SqrtEigenvalue).unwrap();
        let prod_indep: f64 = indep.scales.iter().product();
        let prod_pca: f64 = pca.scales.iter().product();
        prop_assert!(prod_pca <= prod_indep * (1.0 + 1e-8) + 1e-300);
    }

    #[test]
    fn pca_transform_is_orthonormal(rows in arb_samples()) {
        let set = sample_matrix(rows);
        let (_, pca) = pca_domain(&set, 0.5, 0.0, PcaScale::SqrtEigenvalue).unwrap();
        let d = pca.transform.nrows();
        let gram = &pca.transform * pca.transform.transpose();
        prop_assert!((gram - DMatrix::identity(d, d)).amax() <= 1e-8);
    }

    #[test]
    fn independence_box_always_contains_the_mean(rows in arb_samples()) {
        let set = sample_matrix(rows);
        let (domain, reparam) = independence_domain(&set, 0.5).unwrap();
        let tilde = reparam.from_policy_params(&set.mean());
        prop_assert!(domain.contains(&tilde));
    }

    #[test]
    fn pca_round_trip_on_active_subspace(rows in arb_samples()) {
        let set = sample_matrix(rows);
        let (domain, reparam) = pca_domain(&set, 0.5, 0.0, PcaScale::SqrtEigenvalue).unwrap();
        let mid: Vec<f64> = domain
            .lower()
            .iter()
            .zip(domain.upper())
            .map(|(l, u)| 0.33 * l + 0.67 * u)
            .collect();
        let theta = reparam.to_policy_params(&mid);
        let back = reparam.from_policy_params(&theta);
        for (a, b) in mid.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn box_normalization_round_trips(
        lower in prop::collection::vec(-100.0f64..100.0, 1..6),
        widths in prop::collection::vec(1e-6f64..50.0, 6),
        fracs in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let d = lower.len();
        let upper: Vec<f64> = lower.iter().zip(&widths).map(|(l, w)| l + w).collect();
        let domain = BoxDomain::new(lower, upper).unwrap();
        let point: Vec<f64> = (0..d)
            .map(|i| domain.lower()[i] + fracs[i] * domain.extent(i))
            .collect();
        let unit = domain.normalize(&point);
        let back = domain.denormalize(&unit);
        for (a, b) in point.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
        prop_assert!(unit.iter().all(|u| (-1e-12..=1.0 + 1e-12).contains(u)));
    }

    #[test]
    fn regret_is_non_increasing(
        values in prop::collection::vec(0.0f64..100.0, 1..50),
        offset in 0.0f64..10.0,
    ) {
        let f_star = -offset;
        let curve = regret_curve(&values, f_star);
        for pair in curve.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn aggregate_orders_quartiles(
        curves in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..8), 1..10),
    ) {
        let series = aggregate(&curves);
        for t in 0..series.len() {
            prop_assert!(series.p25[t] <= series.median[t] && series.median[t] <= series.p75[t]);
        }
    }
}
