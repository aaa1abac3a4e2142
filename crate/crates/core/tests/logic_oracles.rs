//! Recognizer and reasoner axioms on hand-built groundings.

mod common;

use common::logic_oracles::*;

#[test]
fn perfect_grounding_values() {
    let ([a1, a2, a3], loss) = perfect_grounding();
    // A1's existential is a power mean over five labels with one hit.
    let a1_expected = 0.2f64.powf(0.125);
    assert!((a1 - a1_expected).abs() < 1e-12);
    assert_eq!((a2, a3), (1.0, 1.0));
    assert!((loss - ((1.0 - a1_expected).powi(2) / 3.0).sqrt()).abs() < 1e-12);
}

#[test]
fn label_collision_breaks_a3() {
    let ([_, _, a3], _) = collision_grounding();
    // 2 of the 100 guarded instances are false.
    assert!((a3 - (1.0 - 0.02f64.powf(0.125))).abs() < 1e-12);
    assert!(a3 < 0.6);
}

#[test]
fn reasoner_matches_closed_forms() {
    for (name, got, want) in a4_cases() {
        assert!((got - want).abs() < 1e-6, "{name}: {got} vs {want}");
    }
    let cases = a4_cases();
    assert!(cases[0].1 >= 0.99 && cases[1].1 <= 0.1 && cases[3].1 == 1.0);
}
