use std::fmt;

/// Quantifier exponent used when none is given.
pub const DEFAULT_P: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Variable(String),
    Constant(String),
    Function(String, Vec<Term>),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Variable(name.to_string())
    }

    pub fn constant(name: &str) -> Self {
        Term::Constant(name.to_string())
    }

    pub fn apply(function: &str, args: impl IntoIterator<Item = Term>) -> Self {
        Term::Function(function.to_string(), args.into_iter().collect())
    }
}

/// Crisp restriction of a quantifier's instance set.
#[derive(Debug, Clone, PartialEq)]
pub enum Guard {
    /// Instances of the two variables have different indices.
    Distinct(String, String),
    /// The (scalar) instance value of the first variable exceeds the second's.
    /// Compared on detached values.
    Greater(String, String),
}

impl Guard {
    pub fn distinct(a: &str, b: &str) -> Self {
        Guard::Distinct(a.to_string(), b.to_string())
    }

    pub fn greater(a: &str, b: &str) -> Self {
        Guard::Greater(a.to_string(), b.to_string())
    }

    pub fn variables(&self) -> [&str; 2] {
        match self {
            Guard::Distinct(a, b) | Guard::Greater(a, b) => [a, b],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantifierKind {
    Forall,
    Exists,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantified {
    pub kind: QuantifierKind,
    pub vars: Vec<String>,
    /// Variables iterated in lockstep; each group shares one instance axis.
    pub diag: Vec<Vec<String>>,
    pub guard: Option<Guard>,
    pub p: f64,
    pub body: Box<Formula>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Atom { predicate: String, args: Vec<Term> },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
    Quantified(Quantified),
}

impl Formula {
    pub fn atom(predicate: &str, args: impl IntoIterator<Item = Term>) -> Self {
        Formula::Atom {
            predicate: predicate.to_string(),
            args: args.into_iter().collect(),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Formula::Not(Box::new(self))
    }

    pub fn and(self, other: Formula) -> Self {
        Formula::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Formula) -> Self {
        Formula::Or(Box::new(self), Box::new(other))
    }

    pub fn implies(self, other: Formula) -> Self {
        Formula::Implies(Box::new(self), Box::new(other))
    }

    pub fn iff(self, other: Formula) -> Self {
        Formula::Iff(Box::new(self), Box::new(other))
    }

    pub fn forall(vars: &[&str]) -> QuantifierBuilder {
        QuantifierBuilder::new(QuantifierKind::Forall, vars)
    }

    pub fn exists(vars: &[&str]) -> QuantifierBuilder {
        QuantifierBuilder::new(QuantifierKind::Exists, vars)
    }
}

/// Builder for quantified formulas: `Formula::forall(&["s"]).p(8.0).of(body)`.
#[derive(Debug, Clone)]
pub struct QuantifierBuilder {
    kind: QuantifierKind,
    vars: Vec<String>,
    diag: Vec<Vec<String>>,
    guard: Option<Guard>,
    p: f64,
}

impl QuantifierBuilder {
    fn new(kind: QuantifierKind, vars: &[&str]) -> Self {
        Self {
            kind,
            vars: vars.iter().map(|v| v.to_string()).collect(),
            diag: Vec::new(),
            guard: None,
            p: DEFAULT_P,
        }
    }

    pub fn diag(mut self, group: &[&str]) -> Self {
        self.diag.push(group.iter().map(|v| v.to_string()).collect());
        self
    }

    pub fn guard(mut self, guard: Guard) -> Self {
        self.guard = Some(guard);
        self
    }

    pub fn p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn of(self, body: Formula) -> Formula {
        Formula::Quantified(Quantified {
            kind: self.kind,
            vars: self.vars,
            diag: self.diag,
            guard: self.guard,
            p: self.p,
            body: Box::new(body),
        })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Variable(n) | Term::Constant(n) => write!(f, "{n}"),
            Term::Function(name, args) => {
                write!(f, "{name}(")?;
                write_list(f, args)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::Distinct(a, b) => write!(f, "({a} != {b})"),
            Guard::Greater(a, b) => write!(f, "({a} > {b})"),
        }
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, items: &[Term]) -> fmt::Result {
    for (i, t) in items.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{t}")?;
    }
    Ok(())
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom { predicate, args } => {
                write!(f, "{predicate}(")?;
                write_list(f, args)?;
                write!(f, ")")
            }
            Formula::Not(a) => write!(f, "not {a}"),
            Formula::And(a, b) => write!(f, "({a} and {b})"),
            Formula::Or(a, b) => write!(f, "({a} or {b})"),
            Formula::Implies(a, b) => write!(f, "({a} -> {b})"),
            Formula::Iff(a, b) => write!(f, "({a} <-> {b})"),
            Formula::Quantified(q) => {
                let word = match q.kind {
                    QuantifierKind::Forall => "forall",
                    QuantifierKind::Exists => "exists",
                };
                write!(f, "{word}")?;
                let mut shown: Vec<&str> = Vec::new();
                for v in &q.vars {
                    if shown.contains(&v.as_str()) {
                        continue;
                    }
                    match q.diag.iter().find(|g| g.contains(v)) {
                        Some(group) => {
                            write!(f, " Diag({})", group.join(","))?;
                            shown.extend(group.iter().map(String::as_str));
                        }
                        None => {
                            write!(f, " {v}")?;
                            shown.push(v);
                        }
                    }
                }
                if let Some(g) = &q.guard {
                    write!(f, " : {g}")?;
                }
                write!(f, ". {}", q.body)
            }
        }
    }
}
