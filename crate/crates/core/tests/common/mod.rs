// Shared helpers for integration tests: finite-difference oracles and RNG.
#![allow(dead_code)]

pub mod algebra;
pub mod dueling;
pub mod envcheck;
pub mod grad;
pub mod logic_oracles;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symdqn_core::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor for relative error, so that gradients that are
/// essentially zero are compared on an absolute 1e-8 scale.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Central finite differences of a scalar function of one tensor.
pub fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] += FD_STEP;
        minus[i] -= FD_STEP;
        let fp = f(&Tensor::new(x.shape().to_vec(), plus).unwrap());
        let fm = f(&Tensor::new(x.shape().to_vec(), minus).unwrap());
        out.push((fp - fm) / (2.0 * FD_STEP));
    }
    out
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}
