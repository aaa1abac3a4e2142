//! Product Real Logic connectives and p-mean quantifier aggregation.

use crate::tensor::{Axes, Tape, Var};

use super::{LogicError, Result};

/// Exponent used when aggregating axiom truths into a knowledge-base score.
pub const DEFAULT_P_SAT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connective {
    Not,
    And,
    Or,
    Implies,
    Iff,
}

/// Rejects values outside `[0, 1]`.
pub(crate) fn check_unit(tape: &Tape, v: Var, what: &str) -> Result<()> {
    let values = tape.value(v)?.data();
    match values.iter().position(|x| !(0.0..=1.0).contains(x)) {
        Some(index) => Err(LogicError::OutOfRange {
            what: what.to_string(),
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

pub fn not(tape: &mut Tape, a: Var) -> Result<Var> {
    check_unit(tape, a, "not")?;
    Ok(tape.one_minus(a)?)
}

/// Product t-norm `a * b`.
pub fn and(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    check_unit(tape, a, "and")?;
    check_unit(tape, b, "and")?;
    Ok(tape.mul(a, b)?)
}

/// Probabilistic sum `a + b - a*b`, computed as `1 - (1-a)(1-b)` so the
/// result never leaves `[0, 1]` and De Morgan duality holds bit-exactly.
pub fn or(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let na = not(tape, a)?;
    let nb = not(tape, b)?;
    let both = tape.mul(na, nb)?;
    Ok(tape.one_minus(both)?)
}

/// Reichenbach implication `1 - a + a*b`. Evaluated in this order the
/// boundary cases `implies(1, b) = b` and `implies(0, b) = 1` are exact and
/// rounding cannot push the result above 1.
pub fn implies(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let na = not(tape, a)?;
    let ab = and(tape, a, b)?;
    Ok(tape.add(na, ab)?)
}

pub fn iff(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let ab = implies(tape, a, b)?;
    let ba = implies(tape, b, a)?;
    and(tape, ab, ba)
}

/// Applies `kind`; `b` is required for every connective except `Not`.
pub fn connective(tape: &mut Tape, kind: Connective, a: Var, b: Option<Var>) -> Result<Var> {
    let second = || b.ok_or_else(|| LogicError::Invalid(format!("{kind:?} needs two operands")));
    match kind {
        Connective::Not => not(tape, a),
        Connective::And => and(tape, a, second()?),
        Connective::Or => or(tape, a, second()?),
        Connective::Implies => implies(tape, a, second()?),
        Connective::Iff => iff(tape, a, second()?),
    }
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(LogicError::Invalid(format!("aggregation exponent {p} must be >= 1")))
    }
}

/// p-mean error `1 - (mean (1 - v)^p)^(1/p)` over every entry of `values`.
pub fn aggregate_forall(tape: &mut Tape, values: Var, p: f64) -> Result<Var> {
    forall_over(tape, values, p, &Axes::All, None)
}

/// p-mean `(mean v^p)^(1/p)` over every entry of `values`.
pub fn aggregate_exists(tape: &mut Tape, values: Var, p: f64) -> Result<Var> {
    exists_over(tape, values, p, &Axes::All, None)
}

/// Universal aggregation over `axes`; groups with no selected entry are
/// vacuously true.
pub(crate) fn forall_over(
    tape: &mut Tape,
    values: Var,
    p: f64,
    axes: &Axes,
    mask: Option<&[bool]>,
) -> Result<Var> {
    check_p(p)?;
    check_unit(tape, values, "forall")?;
    let err = tape.one_minus(values)?;
    let pm = tape.power_mean(err, p, axes, mask)?;
    Ok(tape.one_minus(pm)?)
}

/// Existential aggregation over `axes`; the caller must ensure no group is
/// empty.
pub(crate) fn exists_over(
    tape: &mut Tape,
    values: Var,
    p: f64,
    axes: &Axes,
    mask: Option<&[bool]>,
) -> Result<Var> {
    check_p(p)?;
    check_unit(tape, values, "exists")?;
    Ok(tape.power_mean(values, p, axes, mask)?)
}

/// Aggregated satisfiability of a knowledge base: p-mean error over the
/// axiom truths.
pub fn sat_agg(tape: &mut Tape, truths: &[Var], p_sat: f64) -> Result<Var> {
    if truths.is_empty() {
        return Err(LogicError::EmptyKnowledgeBase);
    }
    let all = tape.concat(truths)?;
    aggregate_forall(tape, all, p_sat)
}

/// `1 - sat_agg(truths)`.
pub fn kb_loss(tape: &mut Tape, truths: &[Var], p_sat: f64) -> Result<Var> {
    let sat = sat_agg(tape, truths, p_sat)?;
    Ok(tape.one_minus(sat)?)
}
