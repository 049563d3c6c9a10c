mod common;

use adskew::stats::{
    analytic_power, holm_correct, min_sample_size, normal_cdf, skew_test, RaceBreakdown,
};
use common::{holm_oracle, phi_oracle, z_oracle};
use proptest::prelude::*;

fn bd(b: u64, w: u64) -> RaceBreakdown {
    RaceBreakdown::new(b, w)
}

proptest! {
    #[test]
    fn z_matches_exact_oracle(b1 in 1u64..100_000, w1 in 1u64..100_000, b2 in 1u64..100_000, w2 in 1u64..100_000) {
        let r = skew_test(&bd(b1, w1), &bd(b2, w2), 0.05).unwrap();
        let z = z_oracle(b1, w1, b2, w2);
        if z == 0.0 {
            prop_assert!(r.z.abs() < 1e-12);
        } else {
            prop_assert!(((r.z - z) / z).abs() <= 1e-9, "{} vs {}", r.z, z);
        }
    }

    #[test]
    fn scaling_counts_scales_z_by_root_k(b1 in 1u64..5_000, w1 in 1u64..5_000, b2 in 1u64..5_000, w2 in 1u64..5_000, k in 2u64..50) {
        let a = skew_test(&bd(b1, w1), &bd(b2, w2), 0.05).unwrap();
        let s = skew_test(&bd(k * b1, k * w1), &bd(k * b2, k * w2), 0.05).unwrap();
        prop_assert!((a.s_f_b - s.s_f_b).abs() < 1e-12);
        prop_assert!((a.s_p_b - s.s_p_b).abs() < 1e-12);
        prop_assert!((a.d - s.d).abs() < 1e-12);
        prop_assert!((s.z - a.z * (k as f64).sqrt()).abs() <= 1e-9 * s.z.abs().max(1.0));
    }

    #[test]
    fn swapping_sides_negates_d_and_z(b1 in 1u64..10_000, w1 in 1u64..10_000, b2 in 1u64..10_000, w2 in 1u64..10_000) {
        let a = skew_test(&bd(b1, w1), &bd(b2, w2), 0.05).unwrap();
        let b = skew_test(&bd(b2, w2), &bd(b1, w1), 0.05).unwrap();
        prop_assert!((a.d + b.d).abs() < 1e-12);
        prop_assert!((a.z + b.z).abs() < 1e-9);
    }

    #[test]
    fn holm_rejections_subset_of_uncorrected(p in prop::collection::vec(0.0f64..=1.0, 1..20), alpha in 0.001f64..0.2) {
        let h = holm_correct(&p, alpha).unwrap().rejected();
        for (pi, r) in p.iter().zip(h) {
            prop_assert!(!r || *pi <= alpha);
        }
    }

    #[test]
    fn holm_matches_brute_force(p in prop::collection::vec(0.0f64..0.2, 1..=10)) {
        prop_assert_eq!(holm_correct(&p, 0.05).unwrap().rejected(), holm_oracle(&p, 0.05));
    }

    #[test]
    fn cdf_matches_integration_oracle(x in -6.0f64..6.0) {
        prop_assert!((normal_cdf(x) - phi_oracle(x)).abs() <= 1e-7);
    }

    #[test]
    fn min_sample_size_is_minimal(s2 in 0.2f64..0.7, d in 0.02f64..0.2, power in 0.5f64..0.95) {
        let s1 = s2 + d;
        let n = min_sample_size(0.05, power, s1, s2).unwrap();
        let oracle = |n: f64| {
            let pooled = (s1 + s2) / 2.0;
            let se = (pooled * (1.0 - pooled) * 2.0 / n).sqrt();
            phi_oracle(d / se - 1.64)
        };
        prop_assert!(oracle(n as f64) >= power - 1e-6);
        if n > 1 {
            prop_assert!(oracle((n - 1) as f64) < power + 1e-6);
        }
    }
}

#[test]
fn cdf_grid_against_oracle() {
    let mut x = -6.0;
    while x <= 6.0 {
        assert!((normal_cdf(x) - phi_oracle(x)).abs() <= 1e-7, "x = {x}");
        x += 0.01;
    }
}

#[test]
fn sample_size_for_reference_power() {
    let n = min_sample_size(0.05, 0.86, 0.55, 0.50).unwrap();
    assert!((1_400..=1_600).contains(&n), "{n}");
    assert_eq!(min_sample_size(0.05, 0.05, 0.55, 0.50).unwrap(), 1);
    assert!(min_sample_size(0.05, 0.8, 0.5, 0.5).is_err());
}

#[test]
fn analytic_power_reference() {
    let se = (0.525f64 * 0.475 * 2.0 / 1500.0).sqrt();
    let expected = phi_oracle(0.05 / se - 1.64);
    assert!((analytic_power(0.05, 0.525, 1500.0, 1500.0, 1.64) - expected).abs() < 1e-7);
    assert!((expected - 0.86).abs() < 0.01);
}
