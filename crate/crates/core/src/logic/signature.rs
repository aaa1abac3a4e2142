use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::formula::{Formula, Guard, Term};
use super::{LogicError, Result};

/// Typed vocabulary: domains, the domain of every constant and variable, and
/// the argument/result domains of every function and predicate.
#[derive(Debug, Clone, Default)]
pub struct Signature {
    domains: BTreeSet<String>,
    symbols: BTreeMap<String, String>,
    functions: BTreeMap<String, (Vec<String>, String)>,
    predicates: BTreeMap<String, Vec<String>>,
}

/// First ill-typed application found by [`Signature::check_types`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeError {
    /// Function or predicate (or guard) at which the mismatch occurs.
    pub site: String,
    /// 1-based argument position.
    pub position: usize,
    pub expected: String,
    pub actual: String,
    /// The offending subterm.
    pub term: String,
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "argument {} of {} ({}): expected domain {}, got {}",
            self.position, self.site, self.term, self.expected, self.actual
        )
    }
}

impl Signature {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn domain(mut self, name: &str) -> Self {
        self.domains.insert(name.to_string());
        self
    }

    pub fn constant(self, name: &str, domain: &str) -> Result<Self> {
        self.symbol(name, domain)
    }

    pub fn variable(self, name: &str, domain: &str) -> Result<Self> {
        self.symbol(name, domain)
    }

    fn symbol(mut self, name: &str, domain: &str) -> Result<Self> {
        self.require_domain(domain)?;
        self.symbols.insert(name.to_string(), domain.to_string());
        Ok(self)
    }

    pub fn function(mut self, name: &str, inputs: &[&str], output: &str) -> Result<Self> {
        for d in inputs.iter().chain([&output]) {
            self.require_domain(d)?;
        }
        self.functions.insert(
            name.to_string(),
            (to_strings(inputs), output.to_string()),
        );
        Ok(self)
    }

    pub fn predicate(mut self, name: &str, inputs: &[&str]) -> Result<Self> {
        for d in inputs {
            self.require_domain(d)?;
        }
        self.predicates.insert(name.to_string(), to_strings(inputs));
        Ok(self)
    }

    fn require_domain(&self, d: &str) -> Result<()> {
        if self.domains.contains(d) {
            Ok(())
        } else {
            Err(LogicError::Unknown {
                kind: "domain",
                name: d.to_string(),
            })
        }
    }

    /// Domain of a constant or variable symbol.
    pub fn domain_of(&self, symbol: &str) -> Option<&str> {
        self.symbols.get(symbol).map(String::as_str)
    }

    /// Domain a term evaluates to.
    pub fn term_domain(&self, term: &Term) -> Result<String> {
        match term {
            Term::Variable(n) | Term::Constant(n) => {
                self.domain_of(n).map(str::to_string).ok_or_else(|| LogicError::Unknown {
                    kind: "symbol",
                    name: n.clone(),
                })
            }
            Term::Function(name, args) => {
                let (inputs, output) =
                    self.functions.get(name).ok_or_else(|| LogicError::Unknown {
                        kind: "function",
                        name: name.clone(),
                    })?;
                self.check_args(name, inputs, args)?;
                Ok(output.clone())
            }
        }
    }

    fn check_args(&self, site: &str, expected: &[String], args: &[Term]) -> Result<()> {
        if expected.len() != args.len() {
            return Err(LogicError::Arity {
                symbol: site.to_string(),
                expected: expected.len(),
                actual: args.len(),
            });
        }
        for (i, (want, arg)) in expected.iter().zip(args).enumerate() {
            let got = self.term_domain(arg)?;
            if &got != want {
                return Err(LogicError::Type(TypeError {
                    site: site.to_string(),
                    position: i + 1,
                    expected: want.clone(),
                    actual: got,
                    term: arg.to_string(),
                }));
            }
        }
        Ok(())
    }

    /// Accepts iff every application site receives arguments of its declared
    /// domains and every guard compares same-domain variables.
    pub fn check_types(&self, formula: &Formula) -> Result<()> {
        match formula {
            Formula::Atom { predicate, args } => {
                let inputs = self
                    .predicates
                    .get(predicate)
                    .ok_or_else(|| LogicError::Unknown {
                        kind: "predicate",
                        name: predicate.clone(),
                    })?;
                self.check_args(predicate, inputs, args)
            }
            Formula::Not(a) => self.check_types(a),
            Formula::And(a, b)
            | Formula::Or(a, b)
            | Formula::Implies(a, b)
            | Formula::Iff(a, b) => {
                self.check_types(a)?;
                self.check_types(b)
            }
            Formula::Quantified(q) => {
                for v in q.vars.iter().chain(q.diag.iter().flatten()) {
                    self.term_domain(&Term::Variable(v.clone()))?;
                }
                if let Some(guard) = &q.guard {
                    let [a, b] = guard.variables();
                    let da = self.term_domain(&Term::var(a))?;
                    let db = self.term_domain(&Term::var(b))?;
                    if da != db {
                        let site = match guard {
                            Guard::Distinct(..) => "!=",
                            Guard::Greater(..) => ">",
                        };
                        return Err(LogicError::Type(TypeError {
                            site: site.to_string(),
                            position: 2,
                            expected: da,
                            actual: db,
                            term: b.to_string(),
                        }));
                    }
                }
                self.check_types(&q.body)
            }
        }
    }
}

fn to_strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}
