//! Algebraic laws of the fuzzy connectives and quantifier aggregators over
//! randomized inputs.

mod common;

use common::algebra::{agg, bin, in_unit, neg, Binary, TOL};
use proptest::prelude::*;
use symdqn_core::logic::{and, iff, implies, or, sat_agg, DEFAULT_P};
use symdqn_core::tensor::{Tape, Var};

fn unit() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64]
}

fn batch() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(unit(), 1..24)
}

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(2.0), Just(DEFAULT_P), 1.0..16.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn connectives_stay_in_unit_interval(a in unit(), b in unit()) {
        for op in [and as Binary, or, implies, iff] {
            prop_assert!(in_unit(bin(op, a, b)));
        }
        prop_assert!(in_unit(neg(a)));
    }

    #[test]
    fn product_t_norm_laws(a in unit(), b in unit(), c in unit()) {
        prop_assert_eq!(bin(and, a, 1.0), a);
        prop_assert_eq!(bin(and, a, 0.0), 0.0);
        prop_assert_eq!(bin(and, a, b), bin(and, b, a));
        let left = bin(and, bin(and, a, b), c);
        let right = bin(and, a, bin(and, b, c));
        prop_assert!((left - right).abs() <= TOL);
    }

    #[test]
    fn de_morgan_duality_is_exact(a in unit(), b in unit()) {
        let dual = neg(bin(and, neg(a), neg(b)));
        prop_assert_eq!(bin(or, a, b).to_bits(), dual.to_bits());
    }

    #[test]
    fn connectives_match_closed_forms(a in unit(), b in unit()) {
        prop_assert!((bin(or, a, b) - (a + b - a * b)).abs() <= TOL);
        prop_assert!((bin(implies, a, b) - (1.0 - a + a * b)).abs() <= TOL);
        let i = |x: f64, y: f64| 1.0 - x + x * y;
        prop_assert!((bin(iff, a, b) - i(a, b) * i(b, a)).abs() <= TOL);
    }

    #[test]
    fn aggregators_respect_power_mean_bounds(v in batch(), p in exponent()) {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for forall in [true, false] {
            let r = agg(forall, &v, p);
            prop_assert!(in_unit(r));
            prop_assert!(r >= lo - TOL && r <= hi + TOL, "{} not in [{}, {}]", r, lo, hi);
        }
    }

    #[test]
    fn aggregators_are_monotone(v in batch(), p in exponent(), k in any::<prop::sample::Index>(), bump in 0.0..=1.0f64) {
        let i = k.index(v.len());
        let mut w = v.clone();
        w[i] = (w[i] + bump).min(1.0);
        for forall in [true, false] {
            prop_assert!(agg(forall, &w, p) >= agg(forall, &v, p) - TOL);
        }
    }

    #[test]
    fn constant_batches_are_fixed_points(c in unit(), n in 1usize..20, p in exponent()) {
        let v = vec![c; n];
        prop_assert!((agg(true, &v, p) - c).abs() <= TOL);
        prop_assert!((agg(false, &v, p) - c).abs() <= TOL);
        let mut t = Tape::new();
        let parts: Vec<Var> = (0..n).map(|_| t.scalar(c)).collect();
        let s = sat_agg(&mut t, &parts, 2.0).unwrap();
        prop_assert!((t.item(s).unwrap() - c).abs() <= TOL);
    }
}

#[test]
fn seeded_sweep_of_all_laws() {
    common::algebra::check_algebra(2, 5000);
}
