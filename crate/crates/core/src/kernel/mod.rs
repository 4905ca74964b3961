//! Horn-clause knowledge representation and the stratified Datalog engine
//! used to check individual reasoning steps.
//!
//! The rule language (`.kbl`) is deliberately small:
//!
//! ```text
//! % comments run to end of line
//! fact parent(alice, bob).
//! rule ancestor(X, Y) :- parent(X, Y).
//! rule orphan(X) :- person(X), not parent(_P, X).   % rejected: _P unbound
//! ```
//!
//! Constants start with a lowercase letter or digit, variables with an
//! uppercase letter or `?`.

mod engine;
mod syntax;
mod verify;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{
    answer_query, forward_chain, forward_chain_traced, stratify, Derivation, Justification,
};
pub use syntax::{parse_program, RULE_LANGUAGE_VERSION};
pub use verify::{render_conclusions, verify_step, verify_step_text, StepFailure, StepVerdict};

/// Default bound on productive semi-naive rounds.
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("syntax error at {line}:{col}: expected {expected}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
    },
    #[error("predicate `{predicate}` used with arity {found}, previously {expected}")]
    ArityMismatch {
        predicate: String,
        expected: usize,
        found: usize,
    },
    #[error("unsafe rule `{rule}`: variable {variable} is not bound by a positive body atom")]
    UnsafeRule { rule: String, variable: String },
    #[error("fact `{0}` is not ground")]
    NonGroundFact(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("program is not stratifiable: `{predicate}` depends negatively on itself")]
    NonStratifiable { predicate: String },
    #[error("fixpoint not reached within {limit} iterations")]
    IterationLimitExceeded { limit: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Const(String),
    Var(String),
}

impl Term {
    pub fn constant(name: impl Into<String>) -> Self {
        Term::Const(name.into())
    }

    pub fn var(name: impl Into<String>) -> Self {
        Term::Var(name.into())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    pub fn name(&self) -> &str {
        match self {
            Term::Const(s) | Term::Var(s) => s,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `predicate(arg, ...)`. Ordering is lexicographic on (predicate, args).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Atom {
            predicate: predicate.into(),
            args,
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_var())
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if self.args.is_empty() {
            return Ok(());
        }
        f.write_str("(")?;
        for (i, arg) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{arg}")?;
        }
        f.write_str(")")
    }
}

/// A ground atom.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Fact(Atom);

impl Fact {
    pub fn new(atom: Atom) -> Result<Self, KernelError> {
        if atom.is_ground() {
            Ok(Fact(atom))
        } else {
            Err(KernelError::NonGroundFact(atom.to_string()))
        }
    }

    /// Convenience constructor from constant names.
    pub fn from_consts(predicate: &str, args: &[&str]) -> Self {
        Fact(Atom::new(
            predicate,
            args.iter().map(|a| Term::constant(*a)).collect(),
        ))
    }

    pub fn atom(&self) -> &Atom {
        &self.0
    }

    pub fn predicate(&self) -> &str {
        &self.0.predicate
    }

    pub fn into_atom(self) -> Atom {
        self.0
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl std::str::FromStr for Fact {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Fact::new(syntax::parse_atom(s)?)
    }
}

impl TryFrom<String> for Fact {
    type Error = KernelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Fact> for String {
    fn from(f: Fact) -> String {
        f.to_string()
    }
}

/// `head :- body_pos..., not body_neg...`
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Rule {
    pub head: Atom,
    pub body_pos: Vec<Atom>,
    pub body_neg: Vec<Atom>,
}

impl Rule {
    /// Builds a rule and checks safety.
    pub fn new(head: Atom, body_pos: Vec<Atom>, body_neg: Vec<Atom>) -> Result<Self, KernelError> {
        let rule = Rule {
            head,
            body_pos,
            body_neg,
        };
        rule.check_safety()?;
        Ok(rule)
    }

    /// Every variable in the head and in negated atoms must occur in a
    /// positive body atom.
    pub fn check_safety(&self) -> Result<(), KernelError> {
        let bound: BTreeSet<&str> = self.body_pos.iter().flat_map(Atom::variables).collect();
        let needs = self
            .head
            .variables()
            .chain(self.body_neg.iter().flat_map(Atom::variables));
        for var in needs {
            if !bound.contains(var) {
                return Err(KernelError::UnsafeRule {
                    rule: self.to_string(),
                    variable: var.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        std::iter::once(&self.head)
            .chain(&self.body_pos)
            .chain(&self.body_neg)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if self.body_pos.is_empty() && self.body_neg.is_empty() {
            return Ok(());
        }
        f.write_str(" :- ")?;
        let literals = self
            .body_pos
            .iter()
            .map(|a| a.to_string())
            .chain(self.body_neg.iter().map(|a| format!("not {a}")));
        for (i, lit) in literals.enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(&lit)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Rule {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        syntax::parse_rule(s)
    }
}

impl TryFrom<String> for Rule {
    type Error = KernelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Rule> for String {
    fn from(r: Rule) -> String {
        r.to_string()
    }
}

/// Deduplicated facts plus an ordered rule list, with one arity per
/// predicate and only safe rules.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    facts: BTreeSet<Fact>,
    rules: Vec<Rule>,
}

impl KnowledgeBase {
    pub fn new(
        facts: impl IntoIterator<Item = Fact>,
        rules: Vec<Rule>,
    ) -> Result<Self, KernelError> {
        let kb = KnowledgeBase {
            facts: facts.into_iter().collect(),
            rules,
        };
        for rule in &kb.rules {
            rule.check_safety()?;
        }
        check_arities(
            kb.facts
                .iter()
                .map(Fact::atom)
                .chain(kb.rules.iter().flat_map(Rule::atoms)),
        )?;
        Ok(kb)
    }

    pub fn facts(&self) -> &BTreeSet<Fact> {
        &self.facts
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty() && self.rules.is_empty()
    }
}

/// Pretty-prints in the `.kbl` rule language; the output reparses to an
/// equal knowledge base.
impl fmt::Display for KnowledgeBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for fact in &self.facts {
            writeln!(f, "fact {fact}.")?;
        }
        for rule in &self.rules {
            writeln!(f, "rule {rule}.")?;
        }
        Ok(())
    }
}

pub(crate) fn check_arities<'a>(
    atoms: impl IntoIterator<Item = &'a Atom>,
) -> Result<(), KernelError> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for atom in atoms {
        let expected = *seen.entry(&atom.predicate).or_insert(atom.arity());
        if expected != atom.arity() {
            return Err(KernelError::ArityMismatch {
                predicate: atom.predicate.clone(),
                expected,
                found: atom.arity(),
            });
        }
    }
    Ok(())
}

/// Three-valued answers are not needed: queries are closed-world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truth {
    True,
    False,
}

impl From<bool> for Truth {
    fn from(b: bool) -> Self {
        if b {
            Truth::True
        } else {
            Truth::False
        }
    }
}
