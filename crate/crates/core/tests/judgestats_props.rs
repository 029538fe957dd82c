use approx::assert_relative_eq;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use tinytok_core::judgestats::{critical_r, pearson_xy, CorrelationResult};
use tinytok_core::stats;

#[test]
fn t_cdf_matches_reference() {
    for df in [1.0, 2.5, 7.0, 30.0, 198.0, 2998.0] {
        let reference = StudentsT::new(0.0, 1.0, df).unwrap();
        for t in [-6.0, -2.0, -0.3, 0.0, 0.7, 1.96, 4.0, 12.0] {
            assert_relative_eq!(stats::student_t_cdf(t, df), reference.cdf(t), epsilon = 1e-10);
        }
    }
}

#[test]
fn small_p_values_keep_precision() {
    let reference = StudentsT::new(0.0, 1.0, 198.0).unwrap();
    let p = CorrelationResult::from_r(0.6, 200).unwrap().p_value();
    let t = CorrelationResult::from_r(0.6, 200).unwrap().t;
    assert_relative_eq!(p, 2.0 * reference.sf(t), max_relative = 1e-6);
    assert!(p > 0.0);
}

#[test]
fn critical_r_falls_with_n_and_approaches_normal_limit() {
    let mut prev = 1.0;
    for n in [5, 10, 30, 100, 300, 1000, 3000, 10_000] {
        let r = critical_r(n, 0.05).unwrap();
        assert!(r < prev, "n = {n}");
        prev = r;
    }
    let n = 1_000_000;
    let r = critical_r(n, 0.05).unwrap();
    assert_relative_eq!(r * (n as f64).sqrt(), 1.959964, max_relative = 1e-4);
}

#[test]
fn critical_r_matches_reference_quantile() {
    for (n, p) in [(10, 0.05), (50, 0.01), (3000, 0.001), (200, 0.2)] {
        let df = (n - 2) as f64;
        let t = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(1.0 - p / 2.0);
        assert_relative_eq!(critical_r(n, p).unwrap(), t / (t * t + df).sqrt(), max_relative = 1e-8);
    }
}

#[test]
fn constant_column_is_undefined() {
    assert!(pearson_xy(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).is_err());
}

proptest! {
    #[test]
    fn t_is_monotone_in_r(a in -0.99f64..0.99, b in -0.99f64..0.99, n in 3usize..5000) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let tl = CorrelationResult::from_r(lo, n).unwrap().t;
        let th = CorrelationResult::from_r(hi, n).unwrap().t;
        prop_assert!(tl <= th);
    }

    #[test]
    fn pearson_ignores_pair_order_and_affine_maps(
        xs in prop::collection::vec(0.0f64..10.0, 3..60),
        noise in prop::collection::vec(-1.0f64..1.0, 60),
        shift in -5.0f64..5.0,
        scale in 0.1f64..10.0,
        rot in 0usize..60,
    ) {
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 0.5 * x + e).collect();
        prop_assume!(stats::sample_std(&ys).unwrap() > 1e-9 && stats::sample_std(&xs).unwrap() > 1e-9);
        let r = pearson_xy(&xs, &ys).unwrap().r;
        let k = rot % xs.len();
        let mut xr = xs.clone();
        let mut yr = ys.clone();
        xr.rotate_left(k);
        yr.rotate_left(k);
        prop_assert!((pearson_xy(&xr, &yr).unwrap().r - r).abs() < 1e-9);
        let mapped: Vec<f64> = xs.iter().map(|x| shift + scale * x).collect();
        prop_assert!((pearson_xy(&mapped, &ys).unwrap().r - r).abs() < 1e-9);
        prop_assert!(r.abs() <= 1.0);
    }
}
