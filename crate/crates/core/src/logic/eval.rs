use std::collections::HashMap;

use crate::tensor::{self, Axes, Tape, Var};

use super::formula::{Formula, Guard, Quantified, QuantifierKind, Term};
use super::ops;
use super::{LogicError, Result};

/// Differentiable grounding of a function or predicate symbol.
///
/// Every argument arrives batched with a leading instance axis of the same
/// length `n`. Predicates return `n` truth degrees (shape `[n]` or `[n, 1]`);
/// functions return `[n, ...]`.
pub type SymbolFn<'a> = Box<dyn Fn(&mut Tape, &[Var]) -> tensor::Result<Var> + 'a>;

/// Assignment of tensors and differentiable maps to logical symbols.
///
/// Constants and variable batches are values already recorded on the tape
/// used for evaluation, so they may themselves depend on parameters.
#[derive(Default)]
pub struct GroundingEnv<'a> {
    constants: HashMap<String, Var>,
    variables: HashMap<String, Var>,
    functions: HashMap<String, SymbolFn<'a>>,
    predicates: HashMap<String, SymbolFn<'a>>,
}

impl<'a> GroundingEnv<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(&mut self, name: &str, value: Var) -> &mut Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    /// Grounds `name` with a batch whose first axis indexes instances.
    pub fn variable(&mut self, name: &str, batch: Var) -> &mut Self {
        self.variables.insert(name.to_string(), batch);
        self
    }

    pub fn function(
        &mut self,
        name: &str,
        f: impl Fn(&mut Tape, &[Var]) -> tensor::Result<Var> + 'a,
    ) -> &mut Self {
        self.functions.insert(name.to_string(), Box::new(f));
        self
    }

    pub fn predicate(
        &mut self,
        name: &str,
        f: impl Fn(&mut Tape, &[Var]) -> tensor::Result<Var> + 'a,
    ) -> &mut Self {
        self.predicates.insert(name.to_string(), Box::new(f));
        self
    }
}

/// A value whose leading axes are indexed by free variables (or Diag groups).
#[derive(Debug, Clone)]
pub struct Truth {
    pub value: Var,
    /// Axis labels, one per leading axis of `value`.
    pub axes: Vec<String>,
}

impl Truth {
    /// The truth degree of a closed formula.
    pub fn scalar(&self, tape: &Tape) -> Result<f64> {
        if !self.axes.is_empty() {
            return Err(LogicError::Invalid(format!(
                "formula has free variables {:?}",
                self.axes
            )));
        }
        Ok(tape.item(self.value)?)
    }
}

struct Ctx<'e, 'a> {
    env: &'e GroundingEnv<'a>,
    /// Axis label of each variable currently paired by an enclosing Diag.
    labels: HashMap<String, String>,
    sizes: HashMap<String, usize>,
}

/// Recursively evaluates `formula` under `env`. Free variables stay as
/// leading axes of the result (pointwise semantics); quantifiers reduce the
/// axes of their bound variables.
pub fn eval_truth(tape: &mut Tape, formula: &Formula, env: &GroundingEnv<'_>) -> Result<Truth> {
    let mut ctx = Ctx {
        env,
        labels: HashMap::new(),
        sizes: HashMap::new(),
    };
    ctx.formula(tape, formula)
}

impl Ctx<'_, '_> {
    fn label(&self, var: &str) -> String {
        self.labels.get(var).cloned().unwrap_or_else(|| var.to_string())
    }

    fn batch(&self, tape: &Tape, var: &str) -> Result<(Var, usize)> {
        let v = *self.env.variables.get(var).ok_or_else(|| LogicError::Unknown {
            kind: "variable",
            name: var.to_string(),
        })?;
        match tape.shape(v)?.first() {
            Some(&n) if n > 0 => Ok((v, n)),
            _ => Err(LogicError::EmptyBatch(var.to_string())),
        }
    }

    fn register(&mut self, label: &str, n: usize) -> Result<()> {
        match self.sizes.get(label) {
            Some(&m) if m != n => Err(LogicError::DiagLength {
                group: label.to_string(),
                sizes: vec![m, n],
            }),
            _ => {
                self.sizes.insert(label.to_string(), n);
                Ok(())
            }
        }
    }

    fn term(&mut self, tape: &mut Tape, term: &Term) -> Result<Truth> {
        match term {
            Term::Variable(name) => {
                let (value, n) = self.batch(tape, name)?;
                let label = self.label(name);
                self.register(&label, n)?;
                Ok(Truth {
                    value,
                    axes: vec![label],
                })
            }
            Term::Constant(name) => {
                let value = *self.env.constants.get(name).ok_or_else(|| LogicError::Unknown {
                    kind: "constant",
                    name: name.clone(),
                })?;
                Ok(Truth {
                    value,
                    axes: Vec::new(),
                })
            }
            Term::Function(name, args) => {
                let f = self.env.functions.get(name).ok_or_else(|| LogicError::Unknown {
                    kind: "function",
                    name: name.clone(),
                })?;
                let (out, axes, n) = self.apply(tape, f, args)?;
                let shape = tape.shape(out)?.to_vec();
                if shape.first() != Some(&n) {
                    return Err(LogicError::Invalid(format!(
                        "function {name} returned shape {shape:?} for {n} instances"
                    )));
                }
                let mut full = self.dims(&axes);
                full.extend_from_slice(&shape[1..]);
                let value = tape.reshape(out, full)?;
                Ok(Truth { value, axes })
            }
        }
    }

    /// Aligns the arguments on the union of their axes, flattens those axes
    /// into one instance axis and applies `f`.
    fn apply(
        &mut self,
        tape: &mut Tape,
        f: &SymbolFn<'_>,
        args: &[Term],
    ) -> Result<(Var, Vec<String>, usize)> {
        let parts = args
            .iter()
            .map(|a| self.term(tape, a))
            .collect::<Result<Vec<_>>>()?;
        let axes = union(parts.iter().map(|p| p.axes.as_slice()));
        let n: usize = self.dims(&axes).iter().product();
        let mut inputs = Vec::with_capacity(parts.len());
        for p in &parts {
            let aligned = self.expand(tape, p, &axes)?;
            let features = tape.shape(aligned)?[axes.len()..].to_vec();
            let mut flat = vec![n];
            flat.extend(features);
            inputs.push(tape.reshape(aligned, flat)?);
        }
        Ok((f(tape, &inputs)?, axes, n))
    }

    fn dims(&self, axes: &[String]) -> Vec<usize> {
        axes.iter().map(|a| self.sizes[a]).collect()
    }

    /// Broadcasts `t` onto `target` axes (a superset of its own), keeping any
    /// trailing feature dimensions.
    fn expand(&self, tape: &mut Tape, t: &Truth, target: &[String]) -> Result<Var> {
        if t.axes == target {
            return Ok(t.value);
        }
        let shape = tape.shape(t.value)?.to_vec();
        let features = &shape[t.axes.len()..];
        let feature_len: usize = features.iter().product();
        // Stride of each target axis in the source layout; 0 where absent.
        let mut src_stride = vec![0usize; target.len()];
        let mut acc = feature_len;
        for (k, a) in t.axes.iter().enumerate().rev() {
            let pos = target.iter().position(|x| x == a).expect("target covers source");
            src_stride[pos] = acc;
            acc *= shape[k];
        }
        let dims = self.dims(target);
        let total: usize = dims.iter().product();
        let mut indices = Vec::with_capacity(total * feature_len);
        let mut counter = vec![0usize; dims.len()];
        for _ in 0..total {
            let base: usize = counter.iter().zip(&src_stride).map(|(c, s)| c * s).sum();
            indices.extend(base..base + feature_len);
            increment(&mut counter, &dims);
        }
        let mut out_shape = dims;
        out_shape.extend_from_slice(features);
        Ok(tape.gather(t.value, indices, out_shape)?)
    }

    fn formula(&mut self, tape: &mut Tape, formula: &Formula) -> Result<Truth> {
        match formula {
            Formula::Atom { predicate, args } => {
                let f = self
                    .env
                    .predicates
                    .get(predicate)
                    .ok_or_else(|| LogicError::Unknown {
                        kind: "predicate",
                        name: predicate.clone(),
                    })?;
                let (out, axes, n) = self.apply(tape, f, args)?;
                if tape.value(out)?.len() != n {
                    return Err(LogicError::Invalid(format!(
                        "predicate {predicate} returned shape {:?} for {n} instances",
                        tape.shape(out)?
                    )));
                }
                ops::check_unit(tape, out, predicate)?;
                let value = tape.reshape(out, self.dims(&axes))?;
                Ok(Truth { value, axes })
            }
            Formula::Not(a) => {
                let a = self.formula(tape, a)?;
                Ok(Truth {
                    value: ops::not(tape, a.value)?,
                    axes: a.axes,
                })
            }
            Formula::And(a, b) => self.binary(tape, a, b, ops::and),
            Formula::Or(a, b) => self.binary(tape, a, b, ops::or),
            Formula::Implies(a, b) => self.binary(tape, a, b, ops::implies),
            Formula::Iff(a, b) => self.binary(tape, a, b, ops::iff),
            Formula::Quantified(q) => self.quantified(tape, q),
        }
    }

    fn binary(
        &mut self,
        tape: &mut Tape,
        a: &Formula,
        b: &Formula,
        op: fn(&mut Tape, Var, Var) -> Result<Var>,
    ) -> Result<Truth> {
        let a = self.formula(tape, a)?;
        let b = self.formula(tape, b)?;
        let axes = union([a.axes.as_slice(), b.axes.as_slice()]);
        let va = self.expand(tape, &a, &axes)?;
        let vb = self.expand(tape, &b, &axes)?;
        Ok(Truth {
            value: op(tape, va, vb)?,
            axes,
        })
    }

    fn quantified(&mut self, tape: &mut Tape, q: &Quantified) -> Result<Truth> {
        let saved = self.labels.clone();
        for group in &q.diag {
            let label = format!("Diag({})", group.join(","));
            let mut sizes = Vec::with_capacity(group.len());
            for v in group {
                sizes.push(self.batch(tape, v)?.1);
                self.labels.insert(v.clone(), label.clone());
            }
            if sizes.windows(2).any(|w| w[0] != w[1]) {
                return Err(LogicError::DiagLength { group: label, sizes });
            }
            self.sizes.insert(label, sizes[0]);
        }
        let result = self.quantified_body(tape, q);
        self.labels = saved;
        result
    }

    fn quantified_body(&mut self, tape: &mut Tape, q: &Quantified) -> Result<Truth> {
        let body = self.formula(tape, &q.body)?;
        let mut bound: Vec<String> = Vec::new();
        for v in &q.vars {
            let label = self.label(v);
            let n = self.batch(tape, v)?.1;
            self.register(&label, n)?;
            if !bound.contains(&label) {
                bound.push(label);
            }
        }
        let mut axes = body.axes.clone();
        let guard_vars: Vec<&str> = q.guard.iter().flat_map(|g| g.variables()).collect();
        let guard_labels: Vec<String> = guard_vars.iter().map(|v| self.label(v)).collect();
        for label in bound.iter().cloned().chain(guard_labels) {
            if !axes.contains(&label) {
                if !self.sizes.contains_key(&label) {
                    let var = guard_vars
                        .iter()
                        .find(|v| self.label(v) == label)
                        .expect("unsized labels come from guard variables");
                    let n = self.batch(tape, var)?.1;
                    self.register(&label, n)?;
                }
                axes.push(label);
            }
        }
        let value = self.expand(tape, &body, &axes)?;
        let dims = self.dims(&axes);
        let mask = match &q.guard {
            Some(g) => Some(self.guard_mask(tape, g, &axes, &dims)?),
            None => None,
        };
        let reduce: Vec<usize> = bound
            .iter()
            .map(|b| axes.iter().position(|a| a == b).expect("bound axes present"))
            .collect();
        let kept: Vec<String> = axes
            .iter()
            .filter(|a| !bound.contains(a))
            .cloned()
            .collect();
        let reduce_axes = Axes::Only(reduce.clone());
        let value = match q.kind {
            QuantifierKind::Forall => {
                ops::forall_over(tape, value, q.p, &reduce_axes, mask.as_deref())?
            }
            QuantifierKind::Exists => {
                if let Some(m) = &mask {
                    if has_empty_group(m, &dims, &reduce) {
                        return Err(LogicError::VacuousExists(
                            Formula::Quantified(q.clone()).to_string(),
                        ));
                    }
                }
                ops::exists_over(tape, value, q.p, &reduce_axes, mask.as_deref())?
            }
        };
        Ok(Truth { value, axes: kept })
    }

    fn guard_mask(
        &self,
        tape: &Tape,
        guard: &Guard,
        axes: &[String],
        dims: &[usize],
    ) -> Result<Vec<bool>> {
        let [a, b] = guard.variables();
        let (pa, pb) = (self.position(axes, a), self.position(axes, b));
        let values = |v: &str| -> Result<Vec<f64>> {
            let (batch, n) = self.batch(tape, v)?;
            let data = tape.value(batch)?.data().to_vec();
            if data.len() != n {
                return Err(LogicError::Invalid(format!(
                    "guard {guard} compares non-scalar instances of {v}"
                )));
            }
            Ok(data)
        };
        let compare: Box<dyn Fn(usize, usize) -> bool> = match guard {
            Guard::Distinct(..) => Box::new(|i, j| i != j),
            Guard::Greater(..) => {
                let (va, vb) = (values(a)?, values(b)?);
                Box::new(move |i, j| va[i] > vb[j])
            }
        };
        let total: usize = dims.iter().product();
        let mut mask = Vec::with_capacity(total);
        let mut counter = vec![0usize; dims.len()];
        for _ in 0..total {
            mask.push(compare(counter[pa], counter[pb]));
            increment(&mut counter, dims);
        }
        Ok(mask)
    }

    fn position(&self, axes: &[String], var: &str) -> usize {
        let label = self.label(var);
        axes.iter().position(|a| *a == label).expect("guard axes present")
    }
}

fn union<'s>(lists: impl IntoIterator<Item = &'s [String]>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for list in lists {
        for a in list {
            if !out.contains(a) {
                out.push(a.clone());
            }
        }
    }
    out
}

fn increment(counter: &mut [usize], dims: &[usize]) {
    for axis in (0..dims.len()).rev() {
        counter[axis] += 1;
        if counter[axis] < dims[axis] {
            return;
        }
        counter[axis] = 0;
    }
}

/// Whether some output group of a reduction over `reduce` selects nothing.
fn has_empty_group(mask: &[bool], dims: &[usize], reduce: &[usize]) -> bool {
    let mut out_stride = vec![0usize; dims.len()];
    let mut acc = 1;
    for axis in (0..dims.len()).rev() {
        if !reduce.contains(&axis) {
            out_stride[axis] = acc;
            acc *= dims[axis];
        }
    }
    let mut any = vec![false; acc];
    let mut counter = vec![0usize; dims.len()];
    for &m in mask {
        let g: usize = counter.iter().zip(&out_stride).map(|(c, s)| c * s).sum();
        any[g] |= m;
        increment(&mut counter, dims);
    }
    any.iter().any(|&x| !x)
}
