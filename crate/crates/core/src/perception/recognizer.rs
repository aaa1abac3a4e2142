use rand::Rng;

use crate::env::GLYPH;
use crate::logic::{eval_truth, kb_loss, Formula, GroundingEnv, Guard, Term, DEFAULT_P, DEFAULT_P_SAT};
use crate::tensor::{argmax, Axes, ParamId, ParamStore, Reduce, Tape, Tensor, Var};

use super::{PatchMemory, PerceptionError, Result};

/// Number of shape classes (the `shape_types` one-hots).
pub const CLASSES: usize = 5;

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

/// Per-patch CNN with independent sigmoid scores per class.
#[derive(Debug, Clone)]
pub struct RecognizerNet {
    params: ParamStore,
    conv1: Layer,
    conv2: Layer,
    fc1: Layer,
    fc2: Layer,
    flat: usize,
}

impl RecognizerNet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        let mut layer = |p: &mut ParamStore, name: &str, shape: &[usize], fan_in: usize, out: usize| Layer {
            w: p.add_uniform(format!("{name}.weight"), shape, fan_in, rng),
            b: p.add_uniform(format!("{name}.bias"), &[out], fan_in, rng),
        };
        // 10 -> 8 (3x3, stride 1) -> 3 (3x3, stride 2).
        let s2 = (GLYPH - 2 - 3) / 2 + 1;
        let flat = 16 * s2 * s2;
        let conv1 = layer(&mut p, "conv1", &[8, 1, 3, 3], 9, 8);
        let conv2 = layer(&mut p, "conv2", &[16, 8, 3, 3], 72, 16);
        let fc1 = layer(&mut p, "fc1", &[flat, 32], flat, 32);
        let fc2 = layer(&mut p, "fc2", &[32, CLASSES], 32, CLASSES);
        Self {
            params: p,
            conv1,
            conv2,
            fc1,
            fc2,
            flat,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Scores `[n, CLASSES]` in (0, 1) for patches `[n, 1, GLYPH, GLYPH]`.
    pub fn recognize(&self, tape: &mut Tape, patches: Var, trainable: bool) -> Result<Var> {
        let shape = tape.shape(patches)?.to_vec();
        if shape.len() != 4 || shape[1..] != [1, GLYPH, GLYPH] {
            return Err(PerceptionError::Shape(format!(
                "expected [n, 1, {GLYPH}, {GLYPH}] patches, got {shape:?}"
            )));
        }
        let n = shape[0];
        let bind = |tape: &mut Tape, l: Layer| {
            if trainable {
                (tape.param(&self.params, l.w), tape.param(&self.params, l.b))
            } else {
                (
                    tape.frozen_param(&self.params, l.w),
                    tape.frozen_param(&self.params, l.b),
                )
            }
        };
        let (w, b) = bind(tape, self.conv1);
        let h = tape.conv2d(patches, w, b, 1)?;
        let h = tape.relu(h)?;
        let (w, b) = bind(tape, self.conv2);
        let h = tape.conv2d(h, w, b, 2)?;
        let h = tape.relu(h)?;
        let h = tape.reshape(h, vec![n, self.flat])?;
        let (w, b) = bind(tape, self.fc1);
        let h = tape.affine(h, w, b)?;
        let h = tape.relu(h)?;
        let (w, b) = bind(tape, self.fc2);
        let z = tape.affine(h, w, b)?;
        Ok(tape.sigmoid(z)?)
    }

    /// Scores of each patch, without gradients.
    pub fn scores(&self, patches: &Tensor) -> Result<Vec<[f64; CLASSES]>> {
        let mut tape = Tape::new();
        let x = tape.constant(patches.clone());
        let y = self.recognize(&mut tape, x, false)?;
        Ok(tape
            .value(y)?
            .data()
            .chunks(CLASSES)
            .map(|c| c.try_into().expect("row of CLASSES scores"))
            .collect())
    }
}

/// Crisp class of a score vector; ties go to the lowest index.
pub fn classify(scores: &[f64]) -> usize {
    argmax(scores)
}

/// The fixed one-hot labels `[CLASSES, CLASSES]`.
pub fn shape_types() -> Tensor {
    let mut data = vec![0.0; CLASSES * CLASSES];
    for i in 0..CLASSES {
        data[i * CLASSES + i] = 1.0;
    }
    Tensor::new(vec![CLASSES, CLASSES], data).expect("square identity")
}

/// Axioms A1–A3 over shapes `s*` and labels `l*`, with predicate `IS`.
pub fn recognizer_axioms(p: f64) -> [Formula; 3] {
    let is = |s: &str, l: &str| Formula::atom("IS", [Term::var(s), Term::var(l)]);
    let a1 = Formula::forall(&["s"])
        .p(p)
        .of(Formula::exists(&["l"]).p(p).of(is("s", "l")));
    let a2 = Formula::exists(&["s", "l1", "l2"])
        .guard(Guard::distinct("l1", "l2"))
        .p(p)
        .of(is("s", "l1").and(is("s", "l2")))
        .not();
    let a3 = Formula::forall(&["s1", "s2", "l"])
        .guard(Guard::distinct("s1", "s2"))
        .p(p)
        .of(is("s1", "l").implies(is("s2", "l").not()));
    [a1, a2, a3]
}

/// Truths of A1–A3 and the knowledge-base loss when the shapes are grounded
/// by `scores: [n, CLASSES]` (one row per unique patch).
#[derive(Debug, Clone, Copy)]
pub struct RecognizerKb {
    pub truths: [Var; 3],
    pub loss: Var,
}

/// `IS(s, l) = <s, l>`: picks out the score of label `l`.
fn is_predicate(tape: &mut Tape, args: &[Var]) -> crate::tensor::Result<Var> {
    let prod = tape.mul(args[0], args[1])?;
    tape.reduce(Reduce::Sum, prod, &Axes::Only(vec![1]))
}

pub fn axioms_from_scores(tape: &mut Tape, scores: Var) -> Result<RecognizerKb> {
    let shape = tape.shape(scores)?.to_vec();
    if shape.len() != 2 || shape[1] != CLASSES || shape[0] == 0 {
        return Err(PerceptionError::Shape(format!(
            "expected [n, {CLASSES}] scores, got {shape:?}"
        )));
    }
    let labels = tape.constant(shape_types());
    let mut env = GroundingEnv::new();
    for s in ["s", "s1", "s2"] {
        env.variable(s, scores);
    }
    for l in ["l", "l1", "l2"] {
        env.variable(l, labels);
    }
    env.predicate("IS", is_predicate);
    let mut truths = Vec::with_capacity(3);
    for axiom in recognizer_axioms(DEFAULT_P) {
        let t = eval_truth(tape, &axiom, &env)?;
        truths.push(t.value);
    }
    let loss = kb_loss(tape, &truths, DEFAULT_P_SAT)?;
    Ok(RecognizerKb {
        truths: [truths[0], truths[1], truths[2]],
        loss,
    })
}

/// `1 - SatAgg(A1, A2, A3)` over the whole unique-patch memory, with
/// gradients flowing into the recognizer.
pub fn recognizer_loss(tape: &mut Tape, net: &RecognizerNet, mem: &PatchMemory) -> Result<RecognizerKb> {
    let batch = tape.constant(mem.batch()?);
    let scores = net.recognize(tape, batch, true)?;
    axioms_from_scores(tape, scores)
}
