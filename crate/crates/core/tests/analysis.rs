mod common;

use approx::assert_abs_diff_eq;
use irtcal::analysis::{standardize_with, SdDenominator, ONE_SIDED_10PCT_CRITICAL};
use irtcal::{fisher_z, pearson_r, standardize, z_difference_test, z_sigma, IrtError};
use proptest::prelude::*;

use common::pearson_ref;

#[test]
fn fisher_z_against_direct_formula() {
    let direct = |r: f64| 0.5 * ((1.0 + r) / (1.0 - r)).ln();
    assert_eq!(fisher_z(0.0).unwrap(), 0.0);
    assert_abs_diff_eq!(fisher_z(0.5).unwrap(), 0.549306, epsilon = 1e-6);
    assert_abs_diff_eq!(fisher_z(0.975).unwrap(), direct(0.975), epsilon = 1e-12);
    assert_abs_diff_eq!(fisher_z(0.975).unwrap(), 2.185, epsilon = 1e-3);
    assert!(fisher_z(1.0).is_err());
    assert!(fisher_z(-1.0).is_err());
}

#[test]
fn published_statistics() {
    assert_abs_diff_eq!(z_sigma(46).unwrap(), 0.152, epsilon = 1e-3);
    assert_abs_diff_eq!(z_sigma(44).unwrap(), 0.156, epsilon = 1e-3);
    assert_eq!(z_sigma(4).unwrap(), 1.0);
    assert!(z_sigma(3).is_err());

    let same = z_difference_test(2.177, 2.177, 46).unwrap();
    assert_eq!(same.delta, 0.0);
    assert_eq!(same.ratio, 0.0);
    assert!(!same.significant_at_10pct);

    let t = z_difference_test(2.521, 2.177, 46).unwrap();
    assert_abs_diff_eq!(t.delta.abs(), 0.344, epsilon = 1e-3);
    assert_abs_diff_eq!(t.sigma_delta, 0.216, epsilon = 2e-3);
    assert!((1.58..=1.61).contains(&t.ratio), "ratio {}", t.ratio);
    assert!(t.significant_at_10pct);
}

#[test]
fn standardize_examples() {
    assert_eq!(standardize(&[1.0, 2.0, 3.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
    assert!(matches!(
        standardize(&[5.0, 5.0, 5.0]),
        Err(IrtError::UndefinedCorrelation(_)) | Err(IrtError::Domain(_))
    ));
    let pop = standardize_with(&[1.0, 3.0], SdDenominator::Population).unwrap();
    assert_eq!(pop, vec![-1.0, 1.0]);
}

#[test]
fn pearson_examples() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert_abs_diff_eq!(
        pearson_r(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap(),
        0.8,
        epsilon = 1e-15
    );
    let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 7.0).collect();
    assert_abs_diff_eq!(pearson_r(&x, &affine).unwrap(), 1.0, epsilon = 1e-15);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert_abs_diff_eq!(pearson_r(&x, &neg).unwrap(), -1.0, epsilon = 1e-15);
}

fn series() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 5..40).prop_filter("needs spread", |v| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() > 1e-3
    })
}

proptest! {
    #[test]
    fn fisher_round_trip(r in -0.999f64..0.999) {
        prop_assert!((fisher_z(r).unwrap().tanh() - r).abs() < 1e-12);
    }

    #[test]
    fn standardize_is_idempotent(v in series()) {
        let once = standardize(&v).unwrap();
        let twice = standardize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_preserves_ranking(v in series()) {
        let z = standardize(&v).unwrap();
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] < v[j] {
                    prop_assert!(z[i] < z[j]);
                }
            }
        }
    }

    #[test]
    fn pearson_invariant_under_standardization((x, y) in (5usize..40).prop_flat_map(|n| {
        (prop::collection::vec(-50.0f64..50.0, n), prop::collection::vec(-50.0f64..50.0, n))
    })) {
        prop_assume!(pearson_r(&x, &y).is_ok());
        let r = pearson_r(&x, &y).unwrap();
        let rs = pearson_r(&standardize(&x).unwrap(), &standardize(&y).unwrap()).unwrap();
        prop_assert!((r - rs).abs() < 1e-12);
        prop_assert!((r - pearson_ref(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn significance_is_monotone_in_delta(d1 in 0.0f64..2.0, d2 in 0.0f64..2.0, n in 4usize..500) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let a = z_difference_test(1.0 + lo, 1.0, n).unwrap();
        let b = z_difference_test(1.0, 1.0 + hi, n).unwrap();
        prop_assert!(!a.significant_at_10pct || b.significant_at_10pct);
        prop_assert!(!a.reaches_quoted_boundary || b.reaches_quoted_boundary);
        prop_assert_eq!(b.significant_at_10pct, b.ratio >= ONE_SIDED_10PCT_CRITICAL);
        prop_assert_eq!(b.reaches_quoted_boundary, b.ratio >= 1.64);
        prop_assert!((b.sigma_delta - std::f64::consts::SQRT_2 * z_sigma(n).unwrap()).abs() < 1e-15);
    }
}
