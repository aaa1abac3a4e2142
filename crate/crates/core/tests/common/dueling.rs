// Dueling-combination identities on exactly representable inputs.

use rand::Rng;
use symdqn_core::dqn::dueling_combine;
use symdqn_core::tensor::{argmax, Tape, Tensor};

/// Multiples of 1/16 in [-4, 4]; sums and means of four stay exact.
fn dyadic(r: &mut impl Rng) -> f64 {
    r.gen_range(-64i32..=64) as f64 / 16.0
}

fn q(value: &[f64], advantage: &[f64], k: usize) -> Vec<f64> {
    let n = value.len();
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new(vec![n, 1], value.to_vec()).unwrap());
    let a = tape.constant(Tensor::new(vec![n, k], advantage.to_vec()).unwrap());
    let out = dueling_combine(&mut tape, v, a).unwrap();
    tape.value(out).unwrap().data().to_vec()
}

/// Shifting every advantage of a row by a constant leaves its Q-values
/// unchanged; shifting the value leaves the greedy action unchanged.
pub fn check_dueling_identities(seed: u64, trials: usize) {
    let mut r = super::rng(seed);
    let k = 4;
    for _ in 0..trials {
        let n = r.gen_range(1..8);
        let value: Vec<f64> = (0..n).map(|_| dyadic(&mut r)).collect();
        let adv: Vec<f64> = (0..n * k).map(|_| dyadic(&mut r)).collect();
        let base = q(&value, &adv, k);
        let shifts: Vec<f64> = (0..n).map(|_| dyadic(&mut r)).collect();
        let shifted: Vec<f64> = adv.iter().enumerate().map(|(i, a)| a + shifts[i / k]).collect();
        assert_eq!(q(&value, &shifted, k), base, "advantage shift changed Q");
        let lifted: Vec<f64> = value.iter().zip(&shifts).map(|(v, c)| v + c).collect();
        let moved = q(&lifted, &adv, k);
        for row in 0..n {
            let span = row * k..(row + 1) * k;
            assert_eq!(argmax(&moved[span.clone()]), argmax(&base[span]), "value shift changed argmax");
        }
    }
}
