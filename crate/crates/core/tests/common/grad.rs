// Finite-difference gradient checks shared by the gradcheck and acceptance
// targets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use symdqn_core::guidance::{reasoner_loss, ReasonerConfig};
use symdqn_core::perception::axioms_from_scores;
use symdqn_core::tensor::{Axes, Reduce, Tape, Tensor, Var};

use super::{max_rel_err, numeric_grad, rng, uniform};

pub const TRIALS: usize = 100;

pub type Build = dyn Fn(&mut Tape, &[Var]) -> Var;
pub type Gen = dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>;

pub struct Case {
    pub name: String,
    pub seed: u64,
    pub gen: Box<Gen>,
    pub op: Box<Build>,
}

fn case(
    name: impl Into<String>,
    seed: u64,
    gen: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + 'static,
    op: impl Fn(&mut Tape, &[Var]) -> Var + 'static,
) -> Case {
    Case {
        name: name.into(),
        seed,
        gen: Box::new(gen),
        op: Box::new(op),
    }
}

/// Scalar probe `sum(op(inputs) * weights)` on a fresh tape.
fn probe(op: &Build, inputs: &[Tensor], weights: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = op(&mut tape, &vars);
    let w = tape.constant(weights.clone());
    let yw = tape.mul(y, w).unwrap();
    let s = tape.sum(yw).unwrap();
    tape.item(s).unwrap()
}

/// Worst relative error between reverse-mode and central-difference
/// gradients over `TRIALS` random instances.
pub fn worst_error(c: &Case) -> f64 {
    let mut rng = rng(c.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let inputs = (c.gen)(&mut rng);
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let y = (c.op)(&mut tape, &vars);
        let weights = uniform(&mut rng, tape.shape(y).unwrap(), -1.0, 1.0);
        let w = tape.constant(weights.clone());
        let yw = tape.mul(y, w).unwrap();
        let root = tape.sum(yw).unwrap();
        let grads = tape.backward(root).unwrap();
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads
                .wrt(*v)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
            let numeric = numeric_grad(
                |xi| {
                    let mut trial = inputs.clone();
                    trial[i] = xi.clone();
                    probe(&*c.op, &trial, &weights)
                },
                &inputs[i],
            );
            worst = worst.max(max_rel_err(&analytic, &numeric));
        }
    }
    worst
}

fn pair(shape: &'static [usize]) -> impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> {
    move |r| vec![uniform(r, shape, -2.0, 2.0), uniform(r, shape, -2.0, 2.0)]
}

fn single(shape: &'static [usize], lo: f64, hi: f64) -> impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> {
    move |r| vec![uniform(r, shape, lo, hi)]
}

pub fn primitive_cases() -> Vec<Case> {
    vec![
        case("add", 1, pair(&[3, 2]), |t, v| t.add(v[0], v[1]).unwrap()),
        case("sub", 2, pair(&[4]), |t, v| t.sub(v[0], v[1]).unwrap()),
        case("mul", 3, pair(&[2, 3]), |t, v| t.mul(v[0], v[1]).unwrap()),
        case(
            "div",
            4,
            |r| {
                let a = uniform(r, &[5], -2.0, 2.0);
                let b: Vec<f64> = (0..5)
                    .map(|_| {
                        let m = r.gen_range(0.5..2.0);
                        if r.gen_bool(0.5) {
                            m
                        } else {
                            -m
                        }
                    })
                    .collect();
                vec![a, Tensor::vector(b).unwrap()]
            },
            |t, v| t.div(v[0], v[1]).unwrap(),
        ),
        case(
            "scalar broadcast",
            5,
            |r| vec![uniform(r, &[4], -2.0, 2.0), uniform(r, &[1], -2.0, 2.0)],
            |t, v| {
                let m = t.mul(v[0], v[1]).unwrap();
                t.sub(v[1], m).unwrap()
            },
        ),
        case("neg", 10, single(&[6], -2.0, 2.0), |t, v| t.neg(v[0]).unwrap()),
        case("exp", 11, single(&[6], -2.0, 2.0), |t, v| t.exp(v[0]).unwrap()),
        case("log", 12, single(&[6], 0.1, 2.0), |t, v| t.log(v[0]).unwrap()),
        case("clamp01", 13, single(&[6], -2.0, 2.0), |t, v| t.clamp01(v[0]).unwrap()),
        case("pow8", 14, single(&[6], -2.0, 2.0), |t, v| t.pow_scalar(v[0], 8.0).unwrap()),
        case("pow_frac", 15, single(&[6], 0.1, 2.0), |t, v| {
            t.pow_scalar(v[0], 0.125).unwrap()
        }),
        case("relu", 16, single(&[6], -2.0, 2.0), |t, v| t.relu(v[0]).unwrap()),
        case("sigmoid", 17, single(&[6], -2.0, 2.0), |t, v| t.sigmoid(v[0]).unwrap()),
        case("huber", 18, single(&[6], -2.0, 2.0), |t, v| t.huber(v[0], 1.0).unwrap()),
        case("sum all", 20, single(&[2, 3], -2.0, 2.0), |t, v| t.sum(v[0]).unwrap()),
        case("mean axis1", 21, single(&[3, 4], -2.0, 2.0), |t, v| {
            t.reduce(Reduce::Mean, v[0], &Axes::Only(vec![1])).unwrap()
        }),
        case("max axis0", 22, single(&[4, 3], -2.0, 2.0), |t, v| {
            t.reduce(Reduce::Max, v[0], &Axes::Only(vec![0])).unwrap()
        }),
        case("sum axes 0,2", 23, single(&[2, 3, 2], -2.0, 2.0), |t, v| {
            t.reduce(Reduce::Sum, v[0], &Axes::Only(vec![0, 2])).unwrap()
        }),
        case(
            "affine",
            30,
            |r| {
                vec![
                    uniform(r, &[3, 4], -2.0, 2.0),
                    uniform(r, &[4, 2], -2.0, 2.0),
                    uniform(r, &[2], -2.0, 2.0),
                ]
            },
            |t, v| t.affine(v[0], v[1], v[2]).unwrap(),
        ),
        case("reshape", 31, single(&[2, 3], -2.0, 2.0), |t, v| {
            t.reshape(v[0], vec![3, 2]).unwrap()
        }),
        case("gather", 32, single(&[5], -2.0, 2.0), |t, v| {
            t.gather(v[0], vec![4, 0, 0, 2, 4, 4], vec![2, 3]).unwrap()
        }),
        case(
            "conv2d stride1",
            40,
            |r| {
                vec![
                    uniform(r, &[2, 5, 5], -2.0, 2.0),
                    uniform(r, &[3, 2, 3, 3], -2.0, 2.0),
                    uniform(r, &[3], -2.0, 2.0),
                ]
            },
            |t, v| t.conv2d(v[0], v[1], v[2], 1).unwrap(),
        ),
        case(
            "conv2d stride2 batched",
            41,
            |r| {
                vec![
                    uniform(r, &[2, 1, 7, 6], -2.0, 2.0),
                    uniform(r, &[2, 1, 3, 2], -2.0, 2.0),
                    uniform(r, &[2], -2.0, 2.0),
                ]
            },
            |t, v| t.conv2d(v[0], v[1], v[2], 2).unwrap(),
        ),
        case("power mean p8", 50, single(&[6], 0.0, 2.0), |t, v| {
            t.power_mean(v[0], 8.0, &Axes::All, None).unwrap()
        }),
        case("masked power mean axis", 51, single(&[3, 4], 0.0, 2.0), |t, v| {
            let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
            t.power_mean(v[0], 2.0, &Axes::Only(vec![1]), Some(&mask))
                .unwrap()
        }),
        case(
            "concat",
            80,
            |r| vec![uniform(r, &[2, 2], -2.0, 2.0), uniform(r, &[], -2.0, 2.0)],
            |t, v| t.concat(&[v[0], v[1], v[0]]).unwrap(),
        ),
    ]
}

/// Recognizer scores for 1 to 6 unique patches, away from 0 and 1.
fn scores(r: &mut ChaCha8Rng) -> Vec<Tensor> {
    let n = r.gen_range(1..=6);
    vec![uniform(r, &[n, 5], 0.05, 0.95)]
}

/// A1–A3 truths and the knowledge-base loss as functions of the scores, and
/// the A4 loss as a function of the Q-values for several reward profiles.
pub fn axiom_cases() -> Vec<Case> {
    let mut out = Vec::new();
    for (i, name) in ["A1", "A2", "A3"].into_iter().enumerate() {
        out.push(case(format!("{name} truth"), 100 + i as u64, scores, move |t, v| {
            axioms_from_scores(t, v[0]).unwrap().truths[i]
        }));
    }
    out.push(case("A1-A3 kb loss", 103, scores, |t, v| {
        axioms_from_scores(t, v[0]).unwrap().loss
    }));
    let profiles: [[f64; 4]; 4] = [
        [1.0, 0.0, 0.0, -1.0],
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, 0.3, 0.7, 0.1],
        [0.0, 0.0, 0.0, 0.0],
    ];
    for (i, rpred) in profiles.into_iter().enumerate() {
        out.push(case(
            format!("A4 loss {rpred:?}"),
            110 + i as u64,
            single(&[4], -2.0, 2.0),
            move |t, v| reasoner_loss(t, v[0], &rpred, &ReasonerConfig::default()).unwrap().0,
        ));
    }
    out
}
