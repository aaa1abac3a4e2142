// Hand-built groundings for the recognizer axioms and closed-form reasoner
// truths.

use symdqn_core::guidance::{reasoner_truth, ReasonerConfig};
use symdqn_core::perception::axioms_from_scores;
use symdqn_core::tensor::{Tape, Tensor};

/// (A1, A2, A3, kb_loss) when each patch is grounded by the given rows.
pub fn recognizer_truths(rows: &[[f64; 5]]) -> ([f64; 3], f64) {
    let mut tape = Tape::new();
    let data = rows.iter().flatten().copied().collect();
    let s = tape.constant(Tensor::new(vec![rows.len(), 5], data).unwrap());
    let kb = axioms_from_scores(&mut tape, s).unwrap();
    let t = kb.truths.map(|v| tape.item(v).unwrap());
    (t, tape.item(kb.loss).unwrap())
}

fn one_hot(c: usize) -> [f64; 5] {
    let mut v = [0.0; 5];
    v[c] = 1.0;
    v
}

/// One patch per class, each recognized with certainty.
pub fn perfect_grounding() -> ([f64; 3], f64) {
    recognizer_truths(&(0..5).map(one_hot).collect::<Vec<_>>())
}

/// Two distinct patches both recognized as class 0.
pub fn collision_grounding() -> ([f64; 3], f64) {
    let mut rows: Vec<[f64; 5]> = (0..5).map(one_hot).collect();
    rows[1] = one_hot(0);
    recognizer_truths(&rows)
}

/// `1 - (mean over pairs with r_i > r_j of (1 - sigmoid(5 (q_i - q_j)))^8)^(1/8)`,
/// or 1 without such pairs.
pub fn a4_closed_form(q: &[f64], r: &[f64]) -> f64 {
    let mut errs = Vec::new();
    for i in 0..q.len() {
        for j in 0..q.len() {
            if r[i] > r[j] {
                let gt = 1.0 / (1.0 + (-5.0 * (q[i] - q[j])).exp());
                errs.push((1.0 - gt).powi(8));
            }
        }
    }
    if errs.is_empty() {
        return 1.0;
    }
    1.0 - (errs.iter().sum::<f64>() / errs.len() as f64).powf(0.125)
}

pub fn a4_truth(q: &[f64], r: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let qv = tape.constant(Tensor::vector(q.to_vec()).unwrap());
    let t = reasoner_truth(&mut tape, qv, r, &ReasonerConfig::default()).unwrap();
    tape.item(t).unwrap()
}

/// (name, computed, closed form) for ordered, misordered and vacuous cases.
pub fn a4_cases() -> Vec<(&'static str, f64, f64)> {
    let cases: [(&str, [f64; 4], [f64; 4]); 4] = [
        ("ordered", [2.0, 1.0, 0.0, -1.0], [1.0, 0.0, -0.5, -1.0]),
        ("misordered", [-1.0, 0.0, 1.0, 2.0], [1.0, 0.0, -0.5, -1.0]),
        ("partly ordered", [0.3, 0.1, 0.2, -0.4], [0.0, 1.0, 0.0, -1.0]),
        ("vacuous", [0.7, -0.2, 0.1, 0.0], [0.0; 4]),
    ];
    cases
        .iter()
        .map(|(name, q, r)| (*name, a4_truth(q, r), a4_closed_form(q, r)))
        .collect()
}
