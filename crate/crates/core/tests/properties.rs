use conloss_core::bounds::{
    b1_log_bound, b2_log_bound, b3_log_bound, b_lb_log_bound, bennett_log_bound, log_bound, BoundFamily, SummandStats,
};
use conloss_core::portfolio::{year_summary, LossTerm};
use conloss_core::returns::LevelMatrix;
use conloss_core::sampler::{coupled_sample, BoundDistribution, Tail};
use conloss_core::special::{f_k, f_k_series, lambert_w0, LAMBERT_BRANCH_POINT};
use conloss_core::{Method, ReplicateMatrix};
use proptest::prelude::*;

fn stats_strategy() -> impl Strategy<Value = SummandStats> {
    (1u64..100_000, -2.0f64..4.0, -6.0f64..0.0, 0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(n, log_c, log_r, a, b)| {
        let cstar = 10f64.powf(log_c);
        let vbar = cstar * cstar * 10f64.powf(log_r);
        let k = a * vbar;
        SummandStats::new(n, vbar, k, b * k, cstar)
    })
}

fn t_grid(s: &SummandStats) -> Vec<f64> {
    (0..10).map(|i| s.cstar * 10f64.powf(-4.0 + 0.45 * i as f64)).collect()
}

fn term_strategy() -> impl Strategy<Value = LossTerm> {
    (0.0f64..=1.0, 0.01f64..0.9, 2.0f64..50.0, 1.0f64..1e5, 1u32..6, 1u32..4).prop_map(
        |(p, mu, conc, exposure, n_sub, event)| LossTerm {
            year: 1,
            event,
            risk: 0,
            p,
            alpha: mu * conc,
            beta: (1.0 - mu) * conc,
            exposure,
            n_sub,
        },
    )
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bound_families_are_ordered(s in stats_strategy()) {
        let tol = 1e-9;
        for t in t_grid(&s) {
            let lb = b_lb_log_bound(t, &s);
            let b1 = b1_log_bound(t, &s);
            let b2 = b2_log_bound(t, &s);
            let b3 = b3_log_bound(t, &s);
            let be = bennett_log_bound(t, &s);
            let slack = tol * be.abs().max(1.0);
            prop_assert!(lb <= b1 + slack, "lb {lb} b1 {b1} at t {t}");
            prop_assert!(b1 <= b2 + slack, "b1 {b1} b2 {b2} at t {t}");
            prop_assert!(b2 <= b3 + slack, "b2 {b2} b3 {b3} at t {t}");
            prop_assert!(b3 <= be + slack, "b3 {b3} bennett {be} at t {t}");
            prop_assert!(be <= slack);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn log_bounds_nonincreasing_in_t(s in stats_strategy()) {
        let grid: Vec<f64> = (0..40).map(|i| s.cstar * 10f64.powf(-4.0 + 0.1 * i as f64)).collect();
        for family in [BoundFamily::Bennett, BoundFamily::B1, BoundFamily::B2, BoundFamily::B3,
                       BoundFamily::Bernstein, BoundFamily::BLb] {
            let vals: Vec<f64> = grid.iter().map(|&t| log_bound(family, t, &s).unwrap()).collect();
            for w in vals.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{family}: {} then {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn b2_equals_b3_without_k1(s in stats_strategy()) {
        let s = SummandStats::new(s.n, s.vbar, s.k, 0.0, s.cstar);
        for t in t_grid(&s) {
            prop_assert_eq!(b2_log_bound(t, &s).to_bits(), b3_log_bound(t, &s).to_bits());
        }
    }

    #[test]
    fn f1_closed_form_matches_series(u in -0.5f64..0.5) {
        prop_assert!((u * f_k(u, 1) + 1.0 - u.exp()).abs() <= 1e-10);
        prop_assert!((f_k(u, 2) - f_k_series(u, 2)).abs() <= 1e-10);
    }

    #[test]
    fn lambert_round_trip(e in -6.0f64..6.0) {
        let x = LAMBERT_BRANCH_POINT + 10f64.powf(e);
        let w = lambert_w0(x).unwrap();
        prop_assert!((w * w.exp() - x).abs() <= 1e-13 * x.abs().max(1.0));
    }

    #[test]
    fn year_summary_ignores_order_and_splitting(terms in prop::collection::vec(term_strategy(), 1..12)) {
        let base = year_summary(1, &terms);
        let mut reversed = terms.clone();
        reversed.reverse();
        let rev = year_summary(1, &reversed);
        let split: Vec<LossTerm> = terms
            .iter()
            .flat_map(|t| std::iter::repeat_n(LossTerm { n_sub: 1, ..*t }, t.n_sub as usize))
            .collect();
        let spl = year_summary(1, &split);
        for other in [&rev, &spl] {
            prop_assert_eq!(base.n, other.n);
            prop_assert!(close(base.expected_total, other.expected_total, 1e-12));
            for (a, b) in [(&base.upper, &other.upper), (&base.lower, &other.lower)] {
                prop_assert!(close(a.vbar, b.vbar, 1e-10));
                prop_assert!(close(a.k, b.k, 1e-10));
                prop_assert!(close(a.k1, b.k1, 1e-10));
                prop_assert_eq!(a.cstar, b.cstar);
            }
        }
        for tail in [&base.upper, &base.lower] {
            prop_assert!(0.0 <= tail.k1 && tail.k1 <= tail.k && tail.k <= tail.vbar);
        }
    }

    #[test]
    fn coupled_samples_are_ordered_and_monotone(
        terms in prop::collection::vec(term_strategy(), 1..12),
        us in prop::collection::vec(1e-6f64..1.0 - 1e-6, 2..20),
    ) {
        let s = year_summary(1, &terms);
        prop_assume!(!s.is_degenerate());
        let lo = BoundDistribution::new(&s, Tail::Lower, BoundFamily::B2).unwrap();
        let hi = BoundDistribution::new(&s, Tail::Upper, BoundFamily::B2).unwrap();
        let mut us = us;
        us.sort_by(f64::total_cmp);
        let draws: Vec<(f64, f64)> = us.iter().map(|&u| coupled_sample(&lo, &hi, u).unwrap()).collect();
        for (l, h) in &draws {
            prop_assert!(l <= h);
        }
        for w in draws.windows(2) {
            prop_assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn return_levels_nondecreasing_in_k(rows in prop::collection::vec(prop::collection::vec(0.0f64..1e9, 50), 1..10)) {
        let m = rows.len();
        let mat = ReplicateMatrix::new(Method::Standard, 0, m, 50, rows.concat()).unwrap();
        let ks = [2, 3, 5, 7, 10, 20, 50];
        let lm = LevelMatrix::from_matrix(&mat, &ks).unwrap();
        for r in 0..m {
            for j in 1..ks.len() {
                prop_assert!(lm.get(r, j) >= lm.get(r, j - 1));
            }
        }
    }
}
