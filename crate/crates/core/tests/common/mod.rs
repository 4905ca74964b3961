//! Test-only oracles. Nothing here calls into the engine's evaluation
//! path; only the plain data types are shared.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use oracle_forge::kernel::{Atom, Fact, Rule, Term};
use oracle_forge::template::{ReasoningStep, RevisionResult, StructuredResponse, Tag};
use rand::seq::SliceRandom;
use rand::Rng;

/// Stratum per predicate by repeated relaxation; `None` when a negative
/// dependency sits on a cycle (levels would grow without bound).
pub fn oracle_levels(rules: &[Rule]) -> Option<BTreeMap<String, usize>> {
    let mut level: BTreeMap<String, usize> = BTreeMap::new();
    for r in rules {
        for a in r.atoms() {
            level.entry(a.predicate.clone()).or_insert(0);
        }
    }
    let bound = level.len() + 1;
    loop {
        let mut changed = false;
        for r in rules {
            let mut need = level[&r.head.predicate];
            for a in &r.body_pos {
                need = need.max(level[&a.predicate]);
            }
            for a in &r.body_neg {
                need = need.max(level[&a.predicate] + 1);
            }
            if need > level[&r.head.predicate] {
                if need > bound {
                    return None;
                }
                level.insert(r.head.predicate.clone(), need);
                changed = true;
            }
        }
        if !changed {
            return Some(level);
        }
    }
}

fn rule_vars(rule: &Rule) -> Vec<String> {
    let mut vars: Vec<String> = Vec::new();
    for a in rule.atoms() {
        for v in a.variables() {
            if !vars.iter().any(|x| x == v) {
                vars.push(v.to_string());
            }
        }
    }
    vars
}

fn substitute(atom: &Atom, env: &BTreeMap<String, String>) -> Fact {
    let args = atom
        .args
        .iter()
        .map(|t| match t {
            Term::Const(c) => Term::Const(c.clone()),
            Term::Var(v) => Term::Const(env[v].clone()),
        })
        .collect();
    Fact::new(Atom::new(atom.predicate.clone(), args)).unwrap()
}

/// Every assignment of `vars` to `domain` values, in odometer order.
pub fn assignments(vars: &[String], domain: &[String]) -> Vec<BTreeMap<String, String>> {
    let mut out = vec![BTreeMap::new()];
    for v in vars {
        let mut next = Vec::with_capacity(out.len() * domain.len());
        for env in &out {
            for c in domain {
                let mut e = env.clone();
                e.insert(v.clone(), c.clone());
                next.push(e);
            }
        }
        out = next;
    }
    out
}

fn domain_of(facts: &BTreeSet<Fact>, rules: &[Rule]) -> Vec<String> {
    let mut d = BTreeSet::new();
    for f in facts {
        for t in &f.atom().args {
            d.insert(t.name().to_string());
        }
    }
    for r in rules {
        for a in r.atoms() {
            for t in &a.args {
                if let Term::Const(c) = t {
                    d.insert(c.clone());
                }
            }
        }
    }
    d.into_iter().collect()
}

/// Naive closure: per stratum, apply every ground instantiation of every
/// rule until nothing changes.
pub fn naive_closure(facts: &BTreeSet<Fact>, rules: &[Rule]) -> Option<BTreeSet<Fact>> {
    let levels = oracle_levels(rules)?;
    let top = levels.values().copied().max().unwrap_or(0);
    let domain = domain_of(facts, rules);
    let mut db = facts.clone();
    for level in 0..=top {
        let here: Vec<&Rule> = rules
            .iter()
            .filter(|r| levels[&r.head.predicate] == level)
            .collect();
        loop {
            let mut changed = false;
            for rule in &here {
                let vars = rule_vars(rule);
                for env in assignments(&vars, &domain) {
                    let pos_ok = rule
                        .body_pos
                        .iter()
                        .all(|a| db.contains(&substitute(a, &env)));
                    let neg_ok = rule
                        .body_neg
                        .iter()
                        .all(|a| !db.contains(&substitute(a, &env)));
                    if pos_ok && neg_ok && db.insert(substitute(&rule.head, &env)) {
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }
    Some(db)
}

/// Brute-force step check: all heads of ground instances whose body holds
/// over exactly `facts`.
pub fn brute_force_step(facts: &[Fact], rule: &Rule) -> BTreeSet<Fact> {
    let set: BTreeSet<Fact> = facts.iter().cloned().collect();
    let domain = domain_of(&set, std::slice::from_ref(rule));
    let mut out = BTreeSet::new();
    for env in assignments(&rule_vars(rule), &domain) {
        let pos_ok = rule
            .body_pos
            .iter()
            .all(|a| set.contains(&substitute(a, &env)));
        let neg_ok = rule
            .body_neg
            .iter()
            .all(|a| !set.contains(&substitute(a, &env)));
        if pos_ok && neg_ok {
            out.insert(substitute(&rule.head, &env));
        }
    }
    out
}

pub struct KbShape {
    pub max_predicates: usize,
    pub max_facts: usize,
    pub max_rules: usize,
    pub constants: usize,
    pub negation: bool,
}

impl Default for KbShape {
    fn default() -> Self {
        KbShape {
            max_predicates: 8,
            max_facts: 30,
            max_rules: 10,
            constants: 5,
            negation: true,
        }
    }
}

/// Random safe KB (not necessarily stratified): returns predicate arities,
/// facts and rules.
pub fn random_kb<R: Rng>(rng: &mut R, shape: &KbShape) -> (BTreeSet<Fact>, Vec<Rule>) {
    let n_preds = rng.gen_range(1..=shape.max_predicates);
    let preds: Vec<(String, usize)> = (0..n_preds)
        .map(|i| (format!("p{i}"), rng.gen_range(0..=2)))
        .collect();
    let consts: Vec<String> = (0..shape.constants).map(|i| format!("c{i}")).collect();

    let mut facts = BTreeSet::new();
    for _ in 0..rng.gen_range(0..=shape.max_facts) {
        let (p, arity) = preds.choose(rng).unwrap();
        let args = (0..*arity)
            .map(|_| Term::Const(consts.choose(rng).unwrap().clone()))
            .collect();
        facts.insert(Fact::new(Atom::new(p.clone(), args)).unwrap());
    }

    let vars = ["X", "Y", "Z"];
    let mut rules = Vec::new();
    for _ in 0..rng.gen_range(0..=shape.max_rules) {
        let mut body_pos = Vec::new();
        for _ in 0..rng.gen_range(1..=3) {
            let (p, arity) = preds.choose(rng).unwrap();
            let args = (0..*arity)
                .map(|_| {
                    if rng.gen_bool(0.8) {
                        Term::Var(vars.choose(rng).unwrap().to_string())
                    } else {
                        Term::Const(consts.choose(rng).unwrap().clone())
                    }
                })
                .collect();
            body_pos.push(Atom::new(p.clone(), args));
        }
        let bound: Vec<String> = body_pos
            .iter()
            .flat_map(|a| a.variables().map(String::from))
            .collect();
        let pick_term = |rng: &mut R| {
            if !bound.is_empty() && rng.gen_bool(0.85) {
                Term::Var(bound.choose(rng).unwrap().clone())
            } else {
                Term::Const(consts.choose(rng).unwrap().clone())
            }
        };
        let mut body_neg = Vec::new();
        if shape.negation && rng.gen_bool(0.35) {
            let (p, arity) = preds.choose(rng).unwrap();
            let args = (0..*arity).map(|_| pick_term(rng)).collect();
            body_neg.push(Atom::new(p.clone(), args));
        }
        let (hp, harity) = preds.choose(rng).unwrap();
        let head = Atom::new(hp.clone(), (0..*harity).map(|_| pick_term(rng)).collect());
        rules.push(Rule::new(head, body_pos, body_neg).expect("generated rules are safe"));
    }
    (facts, rules)
}

/// Random KB that the relaxation oracle accepts as stratified.
pub fn random_stratified_kb<R: Rng>(rng: &mut R, shape: &KbShape) -> (BTreeSet<Fact>, Vec<Rule>) {
    loop {
        let (facts, rules) = random_kb(rng, shape);
        if oracle_levels(&rules).is_some() {
            return (facts, rules);
        }
    }
}

/// Random (facts, rule) pair biased towards rules that can fire.
pub fn random_step<R: Rng>(rng: &mut R) -> (Vec<Fact>, Rule) {
    let shape = KbShape {
        max_predicates: 4,
        max_facts: 8,
        max_rules: 1,
        constants: 4,
        negation: true,
    };
    loop {
        let (facts, rules) = random_kb(rng, &shape);
        if let Some(rule) = rules.into_iter().next() {
            return (facts.into_iter().collect(), rule);
        }
    }
}

/// Fragments that stress escaping: tag-like text, backslashes, markers.
pub const PIECES: &[&str] = &[
    "wumpus",
    "Max",
    " ",
    " ",
    "is",
    "a",
    ".",
    "\n",
    "<",
    ">",
    "</",
    "\\",
    "\\n",
    "<QUERY>",
    "</FACTS>",
    "<RULE>",
    "</REASONING_RESULT>",
    "- ",
    "FINAL ANSWER:",
    "RETAINED",
    "REVISED:",
    "\t",
    "é",
    "∀",
    "\\<",
    "<FACTS",
    "%",
];

pub fn fuzz_text<R: Rng>(rng: &mut R, inline: bool) -> String {
    loop {
        let n = rng.gen_range(1..8);
        let s: String = (0..n).map(|_| *PIECES.choose(rng).unwrap()).collect();
        let s = if inline { s.replace('\n', " ") } else { s };
        let s = s.trim().to_string();
        if !s.is_empty() {
            return s;
        }
    }
}

pub fn random_reasoning_step<R: Rng>(rng: &mut R) -> ReasoningStep {
    ReasoningStep {
        step_index: 0,
        query: fuzz_text(rng, false),
        facts: (0..rng.gen_range(1..4))
            .map(|_| {
                let inline = rng.gen_bool(0.5);
                fuzz_text(rng, inline)
            })
            .collect(),
        rule: fuzz_text(rng, false),
        revision: if rng.gen_bool(0.2) {
            String::new()
        } else {
            fuzz_text(rng, false)
        },
        revision_result: if rng.gen_bool(0.5) {
            RevisionResult::Retained
        } else {
            RevisionResult::Revised(fuzz_text(rng, false))
        },
        reasoning_result: fuzz_text(rng, false),
    }
}

pub fn random_response<R: Rng>(rng: &mut R) -> StructuredResponse {
    let steps = (0..rng.gen_range(1..5)).map(|_| random_reasoning_step(rng)).collect();
    StructuredResponse::new(steps, Some(fuzz_text(rng, true))).unwrap()
}

/// Byte ranges of every unescaped tag in `raw`.
pub fn tag_spans(raw: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            i += 2;
            continue;
        }
        if bytes[i] == b'<' {
            for t in Tag::ALL {
                for candidate in [format!("<{}>", t.name()), format!("</{}>", t.name())] {
                    if raw[i..].starts_with(&candidate) {
                        spans.push((i, i + candidate.len()));
                    }
                }
            }
        }
        i += 1;
    }
    spans
}
