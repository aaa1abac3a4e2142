// Scalar views of the fuzzy connectives and aggregators, and a seeded sweep
// of their algebraic laws.

use rand::Rng;
use symdqn_core::logic::{
    aggregate_exists, aggregate_forall, and, iff, implies, not, or, sat_agg, DEFAULT_P,
};
use symdqn_core::tensor::{Tape, Tensor, Var};

pub const TOL: f64 = 1e-12;

pub type Binary = fn(&mut Tape, Var, Var) -> symdqn_core::logic::Result<Var>;

pub fn bin(op: Binary, a: f64, b: f64) -> f64 {
    let mut t = Tape::new();
    let (a, b) = (t.scalar(a), t.scalar(b));
    let r = op(&mut t, a, b).unwrap();
    t.item(r).unwrap()
}

pub fn neg(a: f64) -> f64 {
    let mut t = Tape::new();
    let a = t.scalar(a);
    let r = not(&mut t, a).unwrap();
    t.item(r).unwrap()
}

pub fn agg(forall: bool, values: &[f64], p: f64) -> f64 {
    let mut t = Tape::new();
    let v = t.constant(Tensor::vector(values.to_vec()).unwrap());
    let r = if forall {
        aggregate_forall(&mut t, v, p)
    } else {
        aggregate_exists(&mut t, v, p)
    }
    .unwrap();
    t.item(r).unwrap()
}

pub fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

fn unit(r: &mut impl Rng) -> f64 {
    match r.gen_range(0..8) {
        0 => 0.0,
        1 => 1.0,
        _ => r.gen_range(0.0..=1.0),
    }
}

/// Identities, De Morgan duality, range closure, power-mean bounds and
/// monotonicity over `batches` random batches; panics on the first violation.
pub fn check_algebra(seed: u64, batches: usize) {
    let mut r = super::rng(seed);
    for _ in 0..batches {
        let (a, b, c) = (unit(&mut r), unit(&mut r), unit(&mut r));
        for op in [and as Binary, or, implies, iff] {
            assert!(in_unit(bin(op, a, b)));
        }
        assert!(in_unit(neg(a)));
        assert_eq!(bin(and, a, 1.0), a);
        assert_eq!(bin(and, a, 0.0), 0.0);
        assert_eq!(bin(and, a, b), bin(and, b, a));
        assert!((bin(and, bin(and, a, b), c) - bin(and, a, bin(and, b, c))).abs() <= TOL);
        assert_eq!(bin(or, a, b).to_bits(), neg(bin(and, neg(a), neg(b))).to_bits());
        assert!((bin(implies, a, b) - (1.0 - a + a * b)).abs() <= TOL);

        let n = r.gen_range(1..24);
        let v: Vec<f64> = (0..n).map(|_| unit(&mut r)).collect();
        let p = if r.gen_bool(0.5) { DEFAULT_P } else { r.gen_range(1.0..16.0) };
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let k = r.gen_range(0..n);
        let mut w = v.clone();
        w[k] = (w[k] + r.gen_range(0.0..=1.0)).min(1.0);
        for forall in [true, false] {
            let x = agg(forall, &v, p);
            assert!(in_unit(x) && x >= lo - TOL && x <= hi + TOL, "{x} outside [{lo}, {hi}]");
            assert!(agg(forall, &w, p) >= x - TOL, "not monotone");
        }
        let mut t = Tape::new();
        let parts: Vec<Var> = (0..n).map(|_| t.scalar(a)).collect();
        let s = sat_agg(&mut t, &parts, 2.0).unwrap();
        assert!((t.item(s).unwrap() - a).abs() <= TOL);
    }
}
