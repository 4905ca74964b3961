//! Single-step syllogism checking: does `rule` fire on exactly the cited
//! facts?

use serde::{Deserialize, Serialize};

use super::{check_arities, engine, parse_program, Fact, KernelError, Rule};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum StepFailure {
    ParseFailure(String),
    NoRuleFiring,
    UnsafeRule(String),
    ArityMismatch(String),
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepFailure::ParseFailure(d) => write!(f, "ParseFailure: {d}"),
            StepFailure::NoRuleFiring => f.write_str("NoRuleFiring"),
            StepFailure::UnsafeRule(d) => write!(f, "UnsafeRule: {d}"),
            StepFailure::ArityMismatch(d) => write!(f, "ArityMismatch: {d}"),
        }
    }
}

impl From<KernelError> for StepFailure {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::Syntax { .. } | KernelError::NonGroundFact(_) => {
                StepFailure::ParseFailure(e.to_string())
            }
            KernelError::ArityMismatch { .. } => StepFailure::ArityMismatch(e.to_string()),
            KernelError::UnsafeRule { .. } => StepFailure::UnsafeRule(e.to_string()),
        }
    }
}

/// `executed` holds exactly when `conclusions` is non-empty and there is no
/// failure; the constructors keep that invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepVerdict {
    executed: bool,
    conclusions: Vec<Fact>,
    failure: Option<StepFailure>,
}

impl StepVerdict {
    pub fn success(conclusions: Vec<Fact>) -> Self {
        assert!(
            !conclusions.is_empty(),
            "a successful step derives at least one fact"
        );
        StepVerdict {
            executed: true,
            conclusions,
            failure: None,
        }
    }

    pub fn failed(failure: StepFailure) -> Self {
        StepVerdict {
            executed: false,
            conclusions: Vec::new(),
            failure: Some(failure),
        }
    }

    pub fn executed(&self) -> bool {
        self.executed
    }

    pub fn conclusions(&self) -> &[Fact] {
        &self.conclusions
    }

    pub fn failure(&self) -> Option<&StepFailure> {
        self.failure.as_ref()
    }
}

/// Checks `rule` against exactly `facts` (closed world over those facts).
/// Conclusions are the distinct derived heads in canonical order.
pub fn verify_step(facts: &[Fact], rule: &Rule) -> StepVerdict {
    if let Err(e) = rule.check_safety() {
        return StepVerdict::failed(e.into());
    }
    if let Err(e) = check_arities(facts.iter().map(Fact::atom).chain(rule.atoms())) {
        return StepVerdict::failed(e.into());
    }
    let heads = engine::bindings_for(facts, rule);
    if heads.is_empty() {
        StepVerdict::failed(StepFailure::NoRuleFiring)
    } else {
        StepVerdict::success(heads.into_iter().collect())
    }
}

/// Text front end: `premises` is a `.kbl` program whose facts are the
/// cited premises; `step` must contain exactly one rule (plus optional
/// extra facts).
pub fn verify_step_text(premises: &str, step: &str) -> StepVerdict {
    let premises = match parse_program(premises) {
        Ok(kb) => kb,
        Err(e) => return StepVerdict::failed(e.into()),
    };
    let step = match parse_program(step) {
        Ok(kb) => kb,
        Err(e) => return StepVerdict::failed(e.into()),
    };
    let [rule] = step.rules() else {
        return StepVerdict::failed(StepFailure::ParseFailure(format!(
            "step must contain exactly one rule, found {}",
            step.rules().len()
        )));
    };
    let facts: Vec<Fact> = premises
        .facts()
        .iter()
        .chain(step.facts())
        .cloned()
        .collect();
    verify_step(&facts, rule)
}

/// Canonical text for a list of conclusions, as written into a step's
/// reasoning-result field.
pub fn render_conclusions(conclusions: &[Fact]) -> String {
    let mut sorted: Vec<&Fact> = conclusions.iter().collect();
    sorted.sort();
    sorted.dedup();
    sorted
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn facts(src: &[&str]) -> Vec<Fact> {
        src.iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn classic_syllogism() {
        let v = verify_step(
            &facts(&["man(socrates)"]),
            &"mortal(X) :- man(X)".parse().unwrap(),
        );
        assert!(v.executed());
        assert_eq!(render_conclusions(v.conclusions()), "mortal(socrates)");
    }

    #[test]
    fn unrelated_rule_does_not_fire() {
        let v = verify_step(&facts(&["p(a)"]), &"q(X) :- r(X)".parse().unwrap());
        assert_eq!(v.failure(), Some(&StepFailure::NoRuleFiring));
        assert!(!v.executed());
    }

    #[test]
    fn negation_is_checked_against_cited_facts_only() {
        let rule: Rule = "rough(X) :- big(X), not kind(X)".parse().unwrap();
        assert!(verify_step(&facts(&["big(bob)"]), &rule).executed());
        assert!(!verify_step(&facts(&["big(bob)", "kind(bob)"]), &rule).executed());
    }

    #[test]
    fn unsafe_and_arity_failures() {
        use crate::kernel::{Atom, Term};
        let unsafe_rule = Rule {
            head: Atom::new("q", vec![Term::var("X")]),
            body_pos: vec![],
            body_neg: vec![Atom::new("p", vec![Term::var("X")])],
        };
        assert!(matches!(
            verify_step(&facts(&["p(a)"]), &unsafe_rule).failure(),
            Some(StepFailure::UnsafeRule(_))
        ));
        let v = verify_step(&facts(&["p(a, b)"]), &"q(X) :- p(X)".parse().unwrap());
        assert!(matches!(v.failure(), Some(StepFailure::ArityMismatch(_))));
    }

    #[test]
    fn empty_premises_never_execute_a_non_ground_head() {
        assert!(!verify_step(&[], &"q(X) :- p(X)".parse().unwrap()).executed());
    }

    #[test]
    fn conclusions_are_sorted_and_distinct() {
        let v = verify_step(
            &facts(&["e(b, c)", "e(a, c)", "e(a, d)"]),
            &"src(X) :- e(X, Y)".parse().unwrap(),
        );
        assert_eq!(render_conclusions(v.conclusions()), "src(a); src(b)");
    }

    #[test]
    fn text_front_end() {
        let v = verify_step_text("fact man(socrates).", "rule mortal(X) :- man(X).");
        assert!(v.executed());
        let v = verify_step_text("fact man(socrates).", "rule mortal(X) :- not man(X).");
        assert!(matches!(v.failure(), Some(StepFailure::UnsafeRule(_))));
        let v = verify_step_text("fact man(socrates", "rule mortal(X) :- man(X).");
        assert!(matches!(v.failure(), Some(StepFailure::ParseFailure(_))));
    }
}
