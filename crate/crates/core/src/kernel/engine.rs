//! Stratified semi-naive forward chaining.
//!
//! Predicates are grouped into strongly connected components of the
//! dependency graph; components are evaluated in topological order, so a
//! negated atom is only ever tested against a relation that is already at
//! its fixpoint.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use super::{Atom, EngineError, Fact, KnowledgeBase, Rule, Term, Truth};

type Tuple = Vec<u32>;
type Relations = BTreeMap<String, BTreeSet<Tuple>>;

#[derive(Default)]
struct Symbols {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Symbols {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }

    fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Const(u32),
    Var(usize),
}

#[derive(Debug, Clone)]
struct CAtom {
    predicate: String,
    slots: Vec<Slot>,
}

#[derive(Debug, Clone)]
struct CRule {
    index: usize,
    head: CAtom,
    pos: Vec<CAtom>,
    neg: Vec<CAtom>,
    n_vars: usize,
}

fn compile_atom(atom: &Atom, vars: &mut Vec<String>, syms: &mut Symbols) -> CAtom {
    let slots = atom
        .args
        .iter()
        .map(|t| match t {
            Term::Const(c) => Slot::Const(syms.intern(c)),
            Term::Var(v) => {
                let idx = vars.iter().position(|x| x == v).unwrap_or_else(|| {
                    vars.push(v.clone());
                    vars.len() - 1
                });
                Slot::Var(idx)
            }
        })
        .collect();
    CAtom {
        predicate: atom.predicate.clone(),
        slots,
    }
}

fn compile_rule(index: usize, rule: &Rule, syms: &mut Symbols) -> CRule {
    let mut vars = Vec::new();
    // Positive body first so every variable gets bound before use.
    let pos: Vec<CAtom> = rule
        .body_pos
        .iter()
        .map(|a| compile_atom(a, &mut vars, syms))
        .collect();
    let neg = rule
        .body_neg
        .iter()
        .map(|a| compile_atom(a, &mut vars, syms))
        .collect();
    let head = compile_atom(&rule.head, &mut vars, syms);
    CRule {
        index,
        head,
        pos,
        neg,
        n_vars: vars.len(),
    }
}

fn ground(atom: &CAtom, binding: &[Option<u32>]) -> Tuple {
    atom.slots
        .iter()
        .map(|s| match *s {
            Slot::Const(c) => c,
            Slot::Var(v) => binding[v].expect("safe rule binds every variable"),
        })
        .collect()
}

fn contains(rel: &Relations, predicate: &str, tuple: &Tuple) -> bool {
    rel.get(predicate).is_some_and(|r| r.contains(tuple))
}

/// Enumerates every binding of `rule.pos` against `full`, with the atom at
/// `delta_at` (if any) drawn from `delta` instead, and calls `emit` for each
/// binding that also satisfies the negated body.
fn join(
    rule: &CRule,
    i: usize,
    delta_at: Option<usize>,
    full: &Relations,
    delta: &Relations,
    binding: &mut Vec<Option<u32>>,
    emit: &mut dyn FnMut(&[Option<u32>]),
) {
    if i == rule.pos.len() {
        if rule
            .neg
            .iter()
            .all(|n| !contains(full, &n.predicate, &ground(n, binding)))
        {
            emit(binding);
        }
        return;
    }
    let atom = &rule.pos[i];
    let source = if delta_at == Some(i) { delta } else { full };
    let Some(tuples) = source.get(&atom.predicate) else {
        return;
    };
    let mut newly_bound = Vec::with_capacity(atom.slots.len());
    for tuple in tuples {
        if tuple.len() != atom.slots.len() {
            continue;
        }
        newly_bound.clear();
        let mut ok = true;
        for (slot, &value) in atom.slots.iter().zip(tuple) {
            match *slot {
                Slot::Const(c) if c != value => {
                    ok = false;
                    break;
                }
                Slot::Const(_) => {}
                Slot::Var(v) => match binding[v] {
                    Some(b) if b != value => {
                        ok = false;
                        break;
                    }
                    Some(_) => {}
                    None => {
                        binding[v] = Some(value);
                        newly_bound.push(v);
                    }
                },
            }
        }
        if ok {
            join(rule, i + 1, delta_at, full, delta, binding, emit);
        }
        for &v in &newly_bound {
            binding[v] = None;
        }
    }
}

/// Why a derived fact holds: the first rule application that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Justification {
    pub rule_index: usize,
    /// Ground instances of the rule's positive body, in body order.
    pub premises: Vec<Fact>,
}

/// The least fixpoint plus one justification per derived (non-base) fact.
#[derive(Debug, Clone, Default)]
pub struct Derivation {
    pub facts: BTreeSet<Fact>,
    pub support: BTreeMap<Fact, Justification>,
    /// Number of productive rounds used.
    pub rounds: usize,
}

impl Derivation {
    /// Post-order list of (fact, justification) needed to derive `goal`,
    /// each premise preceding the facts that use it. Base facts are not
    /// listed. Returns `None` if `goal` was not derived.
    pub fn proof_of(&self, goal: &Fact) -> Option<Vec<(Fact, Justification)>> {
        if !self.facts.contains(goal) {
            return None;
        }
        let mut out = Vec::new();
        let mut done = BTreeSet::new();
        self.collect(goal, &mut done, &mut out);
        Some(out)
    }

    fn collect(
        &self,
        fact: &Fact,
        done: &mut BTreeSet<Fact>,
        out: &mut Vec<(Fact, Justification)>,
    ) {
        if done.contains(fact) {
            return;
        }
        done.insert(fact.clone());
        if let Some(j) = self.support.get(fact) {
            for p in &j.premises {
                self.collect(p, done, out);
            }
            out.push((fact.clone(), j.clone()));
        }
    }
}

/// Groups rule indices into evaluation strata (topological order over the
/// predicate dependency graph). Fails when a predicate depends negatively
/// on itself through a cycle.
pub fn stratify(rules: &[Rule]) -> Result<Vec<Vec<usize>>, EngineError> {
    let mut graph: DiGraph<&str, bool> = DiGraph::new();
    let mut nodes: BTreeMap<&str, NodeIndex> = BTreeMap::new();
    let mut heads = Vec::with_capacity(rules.len());
    for rule in rules {
        for atom in rule.atoms() {
            let p = atom.predicate.as_str();
            nodes.entry(p).or_insert_with(|| graph.add_node(p));
        }
        let h = nodes[rule.head.predicate.as_str()];
        heads.push(h);
        for a in &rule.body_pos {
            graph.add_edge(nodes[a.predicate.as_str()], h, false);
        }
        for a in &rule.body_neg {
            graph.add_edge(nodes[a.predicate.as_str()], h, true);
        }
    }

    // tarjan_scc yields components in reverse topological order.
    let mut sccs = tarjan_scc(&graph);
    sccs.reverse();
    let mut component = vec![0usize; graph.node_count()];
    for (ci, scc) in sccs.iter().enumerate() {
        for n in scc {
            component[n.index()] = ci;
        }
    }
    for edge in graph.raw_edges() {
        if edge.weight && component[edge.source().index()] == component[edge.target().index()] {
            return Err(EngineError::NonStratifiable {
                predicate: graph[edge.target()].to_string(),
            });
        }
    }

    let mut strata = vec![Vec::new(); sccs.len()];
    for (i, h) in heads.into_iter().enumerate() {
        strata[component[h.index()]].push(i);
    }
    strata.retain(|s| !s.is_empty());
    Ok(strata)
}

type GroundAtom = (String, Tuple);

struct Evaluator {
    syms: Symbols,
    full: Relations,
    /// First derivation of each fact: rule index and positive body atoms.
    support: BTreeMap<GroundAtom, (usize, Vec<GroundAtom>)>,
    rounds: usize,
    limit: usize,
}

impl Evaluator {
    fn fact_of(&self, predicate: &str, tuple: &[u32]) -> Fact {
        let args = tuple
            .iter()
            .map(|&c| Term::Const(self.syms.name(c).to_string()))
            .collect();
        Fact::new(Atom::new(predicate, args)).expect("tuples are ground")
    }

    /// Runs one pass of `rules`; returns facts not already in `full`.
    fn pass(&mut self, rules: &[CRule], delta: Option<&Relations>, trace: bool) -> Relations {
        let mut fresh: Relations = BTreeMap::new();
        let empty = Relations::new();
        for rule in rules {
            let positions: Vec<Option<usize>> = match delta {
                None => vec![None],
                Some(d) => (0..rule.pos.len())
                    .filter(|&i| d.contains_key(&rule.pos[i].predicate))
                    .map(Some)
                    .collect(),
            };
            for delta_at in positions {
                let mut binding = vec![None; rule.n_vars];
                let full = &self.full;
                let support = &mut self.support;
                let mut emit = |b: &[Option<u32>]| {
                    let tuple = ground(&rule.head, b);
                    if contains(full, &rule.head.predicate, &tuple) {
                        return;
                    }
                    let inserted = fresh
                        .entry(rule.head.predicate.clone())
                        .or_default()
                        .insert(tuple.clone());
                    if inserted && trace {
                        let premises = rule
                            .pos
                            .iter()
                            .map(|a| (a.predicate.clone(), ground(a, b)))
                            .collect();
                        support
                            .entry((rule.head.predicate.clone(), tuple))
                            .or_insert((rule.index, premises));
                    }
                };
                join(
                    rule,
                    0,
                    delta_at,
                    full,
                    delta.unwrap_or(&empty),
                    &mut binding,
                    &mut emit,
                );
            }
        }
        fresh
    }

    fn merge(&mut self, delta: &Relations) {
        for (p, tuples) in delta {
            self.full
                .entry(p.clone())
                .or_default()
                .extend(tuples.iter().cloned());
        }
    }

    fn stratum(&mut self, rules: &[CRule], trace: bool) -> Result<(), EngineError> {
        let mut delta = self.pass(rules, None, trace);
        while delta.values().any(|d| !d.is_empty()) {
            self.rounds += 1;
            if self.rounds > self.limit {
                return Err(EngineError::IterationLimitExceeded { limit: self.limit });
            }
            self.merge(&delta);
            delta = self.pass(rules, Some(&delta), trace);
        }
        Ok(())
    }
}

fn evaluate(
    kb: &KnowledgeBase,
    max_iterations: usize,
    trace: bool,
) -> Result<Derivation, EngineError> {
    let strata = stratify(kb.rules())?;
    let mut syms = Symbols::default();
    let mut full: Relations = BTreeMap::new();
    for fact in kb.facts() {
        let tuple = fact
            .atom()
            .args
            .iter()
            .map(|t| syms.intern(t.name()))
            .collect();
        full.entry(fact.predicate().to_string())
            .or_default()
            .insert(tuple);
    }
    let compiled: Vec<CRule> = kb
        .rules()
        .iter()
        .enumerate()
        .map(|(i, r)| compile_rule(i, r, &mut syms))
        .collect();

    let mut ev = Evaluator {
        syms,
        full,
        support: BTreeMap::new(),
        rounds: 0,
        limit: max_iterations,
    };
    for stratum in &strata {
        let rules: Vec<CRule> = stratum.iter().map(|&i| compiled[i].clone()).collect();
        ev.stratum(&rules, trace)?;
    }

    let facts = ev
        .full
        .iter()
        .flat_map(|(p, ts)| ts.iter().map(move |t| (p, t)))
        .map(|(p, t)| ev.fact_of(p, t))
        .collect();
    let support = ev
        .support
        .iter()
        .map(|((p, t), (rule_index, premises))| {
            let premises = premises.iter().map(|(pp, pt)| ev.fact_of(pp, pt)).collect();
            (
                ev.fact_of(p, t),
                Justification {
                    rule_index: *rule_index,
                    premises,
                },
            )
        })
        .collect();
    Ok(Derivation {
        facts,
        support,
        rounds: ev.rounds,
    })
}

/// Least fixpoint of `kb`, including its base facts.
pub fn forward_chain(
    kb: &KnowledgeBase,
    max_iterations: usize,
) -> Result<BTreeSet<Fact>, EngineError> {
    evaluate(kb, max_iterations, false).map(|d| d.facts)
}

/// Like [`forward_chain`] but keeps the first justification of every
/// derived fact, for proof extraction.
pub fn forward_chain_traced(
    kb: &KnowledgeBase,
    max_iterations: usize,
) -> Result<Derivation, EngineError> {
    evaluate(kb, max_iterations, true)
}

/// Closed-world membership of a ground goal in the fixpoint.
pub fn answer_query(kb: &KnowledgeBase, goal: &Atom) -> Result<Truth, EngineError> {
    let Ok(goal) = Fact::new(goal.clone()) else {
        return Ok(Truth::False);
    };
    let closure = forward_chain(kb, super::DEFAULT_MAX_ITERATIONS)?;
    Ok(closure.contains(&goal).into())
}

/// All heads derivable by one application of `rule` over exactly `facts`.
pub(super) fn bindings_for(facts: &[Fact], rule: &Rule) -> BTreeSet<Fact> {
    let mut syms = Symbols::default();
    let mut full: Relations = BTreeMap::new();
    for fact in facts {
        let tuple = fact
            .atom()
            .args
            .iter()
            .map(|t| syms.intern(t.name()))
            .collect();
        full.entry(fact.predicate().to_string())
            .or_default()
            .insert(tuple);
    }
    let crule = compile_rule(0, rule, &mut syms);
    let mut out = BTreeSet::new();
    let mut binding = vec![None; crule.n_vars];
    let empty = Relations::new();
    let mut emit = |b: &[Option<u32>]| {
        let tuple = ground(&crule.head, b);
        let args = tuple
            .iter()
            .map(|&c| Term::Const(syms.name(c).to_string()))
            .collect();
        out.insert(Fact::new(Atom::new(crule.head.predicate.clone(), args)).expect("ground"));
    };
    join(&crule, 0, None, &full, &empty, &mut binding, &mut emit);
    out
}
