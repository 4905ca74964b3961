//! Deterministic synthetic reasoning tasks with ground-truth proofs and an
//! exact sentence-to-symbol pairing table.

mod chain;
mod rulebase;
pub mod vocab;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{render_conclusions, Fact, KnowledgeBase, Rule};
use crate::seed::{mix, mix_index};
use crate::template::{ReasoningStep, RevisionResult, StructuredResponse};

pub use chain::{gen_chain_task, MAX_HOPS};
pub use rulebase::{gen_rulebase_task, MAX_FACTS, MAX_RULES, MAX_STRATIFICATION_ATTEMPTS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no stratified rule base with a derivable query after {attempts} attempts")]
    RetryExhausted { attempts: usize },
    #[error("invalid corpus request: {0}")]
    InvalidSpec(String),
    #[error("task file line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Chain,
    Rulebase,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Chain => "chain",
            Family::Rulebase => "rulebase",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "form", rename_all = "snake_case")]
pub enum SymbolicForm {
    Fact(Fact),
    Rule(Rule),
}

/// One application in a ground-truth proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub facts: Vec<Fact>,
    pub rule: Rule,
    pub conclusion: Fact,
}

/// The asked-about fact. A negated question asks whether the fact does not
/// hold, so its gold answer is the complement of membership.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub goal: Fact,
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub family: Family,
    pub question: String,
    pub context: String,
    pub gold_answer: String,
    pub query: Query,
    pub facts: Vec<Fact>,
    pub rules: Vec<Rule>,
    pub ground_truth_proof: Vec<ProofStep>,
    pub nl_pairing: BTreeMap<String, SymbolicForm>,
}

pub const REVISION_NOTE: &str =
    "The cited facts are stated or already derived, and the rule applies to them.";

fn answer_text(truth: bool) -> &'static str {
    if truth {
        "true"
    } else {
        "false"
    }
}

impl TaskInstance {
    pub fn kb(&self) -> KnowledgeBase {
        KnowledgeBase::new(self.facts.iter().cloned(), self.rules.clone())
            .expect("generated tasks are valid")
    }

    /// Context followed by the question; the prompt of every emitted record.
    pub fn prompt(&self) -> String {
        format!("{}\n\n{}", self.context, self.question)
    }

    /// The answer a reasoner reaches if it gets the decisive fact wrong.
    pub fn wrong_answer(&self) -> &'static str {
        answer_text(self.gold_answer != "true")
    }

    pub fn step_count(&self) -> usize {
        self.ground_truth_proof.len()
    }

    /// The ground-truth proof as template steps, reasoning results in
    /// canonical engine rendering.
    pub fn ground_truth_steps(&self) -> Vec<ReasoningStep> {
        self.ground_truth_proof
            .iter()
            .enumerate()
            .map(|(i, p)| ReasoningStep {
                step_index: i,
                query: format!("Does it follow that {}?", vocab::fact_clause(&p.conclusion)),
                facts: p.facts.iter().map(vocab::fact_sentence).collect(),
                rule: vocab::rule_sentence(&p.rule),
                revision: REVISION_NOTE.to_string(),
                revision_result: RevisionResult::Retained,
                reasoning_result: render_conclusions(std::slice::from_ref(&p.conclusion)),
            })
            .collect()
    }

    pub fn ground_truth_response(&self) -> StructuredResponse {
        StructuredResponse::new(self.ground_truth_steps(), Some(self.gold_answer.clone()))
            .expect("ground-truth steps satisfy the template invariants")
    }
}

/// Assembles a task from its symbolic parts: verbalizes everything, fills
/// the pairing table, shuffles the context and phrases the question.
fn assemble<R: Rng>(
    rng: &mut R,
    id: String,
    family: Family,
    facts: Vec<Fact>,
    rules: Vec<Rule>,
    proof: Vec<ProofStep>,
    query: Query,
) -> TaskInstance {
    let mut nl_pairing = BTreeMap::new();
    let mut sentences = Vec::new();
    for f in &facts {
        let s = vocab::fact_sentence(f);
        sentences.push(s.clone());
        nl_pairing.insert(s, SymbolicForm::Fact(f.clone()));
    }
    for r in &rules {
        let s = vocab::rule_sentence(r);
        sentences.push(s.clone());
        nl_pairing.insert(s, SymbolicForm::Rule(r.clone()));
    }
    for p in &proof {
        nl_pairing.insert(
            vocab::fact_sentence(&p.conclusion),
            SymbolicForm::Fact(p.conclusion.clone()),
        );
    }
    nl_pairing.insert(
        vocab::fact_sentence(&query.goal),
        SymbolicForm::Fact(query.goal.clone()),
    );
    sentences.shuffle(rng);

    let clause = vocab::fact_clause(&query.goal);
    let asked = if query.negated {
        clause.replacen(" is ", " is not ", 1)
    } else {
        clause
    };
    let holds =
        proof.last().is_some_and(|p| p.conclusion == query.goal) || facts.contains(&query.goal);
    TaskInstance {
        id,
        family,
        question: format!("True or false: {asked}."),
        context: sentences.join(" "),
        gold_answer: answer_text(holds != query.negated).to_string(),
        query,
        facts,
        rules,
        ground_truth_proof: proof,
        nl_pairing,
    }
}

/// Independent per-candidate corruption probabilities for the scripted
/// noisy backend. A bad rule is unmatchable text, a bad fact cites the
/// step's own conclusion as its first premise, a format break deletes one
/// tag from the candidate text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionModel {
    pub p_bad_rule: f64,
    pub p_bad_fact: f64,
    pub p_format_break: f64,
    pub seed: u64,
}

impl Default for CorruptionModel {
    fn default() -> Self {
        CorruptionModel::none()
    }
}

impl CorruptionModel {
    pub fn none() -> Self {
        CorruptionModel {
            p_bad_rule: 0.0,
            p_bad_fact: 0.0,
            p_format_break: 0.0,
            seed: 0,
        }
    }

    /// Rule and fact corruption both at `p`; format stays intact.
    pub fn uniform(p: f64) -> Self {
        CorruptionModel {
            p_bad_rule: p,
            p_bad_fact: p,
            ..CorruptionModel::none()
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, p) in [
            ("p_bad_rule", self.p_bad_rule),
            ("p_bad_fact", self.p_bad_fact),
            ("p_format_break", self.p_format_break),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::InvalidSpec(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }

    /// Probability that a well-formed candidate step executes.
    pub fn expected_success_rate(&self) -> f64 {
        (1.0 - self.p_bad_rule) * (1.0 - self.p_bad_fact)
    }
}

/// What to generate. Hop counts are drawn uniformly from
/// `min_hops..=max_hops`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub chain_tasks: usize,
    pub rulebase_tasks: usize,
    pub min_hops: usize,
    pub max_hops: usize,
    pub distractors: usize,
    pub rulebase_facts: usize,
    pub rulebase_rules: usize,
    pub negation: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            chain_tasks: 20,
            rulebase_tasks: 0,
            min_hops: 1,
            max_hops: 5,
            distractors: 2,
            rulebase_facts: 8,
            rulebase_rules: 6,
            negation: true,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.min_hops == 0 || self.min_hops > self.max_hops || self.max_hops > MAX_HOPS {
            return Err(CorpusError::InvalidSpec(format!(
                "hops must satisfy 1 <= min_hops <= max_hops <= {MAX_HOPS}"
            )));
        }
        if self.rulebase_tasks > 0
            && (self.rulebase_facts == 0
                || self.rulebase_facts > MAX_FACTS
                || self.rulebase_rules == 0
                || self.rulebase_rules > MAX_RULES)
        {
            return Err(CorpusError::InvalidSpec(format!(
                "rule bases need 1..={MAX_FACTS} facts and 1..={MAX_RULES} rules"
            )));
        }
        Ok(())
    }
}

/// Generates the whole corpus; task `i` of each family depends only on
/// `(seed, family, i)`. Chain task seeds alternate parity so true and
/// false gold answers are balanced.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<TaskInstance>, CorpusError> {
    spec.validate()?;
    let chain_seed = mix(seed, "chain");
    let span = (spec.max_hops - spec.min_hops + 1) as u64;
    let mut tasks: Vec<TaskInstance> = (0..spec.chain_tasks)
        .into_par_iter()
        .map(|i| {
            let s = (mix_index(chain_seed, i as u64) & !1) | (i as u64 & 1);
            let hops = spec.min_hops + (mix(s, "hops") % span) as usize;
            gen_chain_task(hops, spec.distractors, s).map(|mut t| {
                t.id = format!("chain-{i:05}");
                t
            })
        })
        .collect::<Result<_, _>>()?;
    let rb_seed = mix(seed, "rulebase");
    let rulebase: Vec<TaskInstance> = (0..spec.rulebase_tasks)
        .into_par_iter()
        .map(|i| {
            let s = (mix_index(rb_seed, i as u64) & !1) | (i as u64 & 1);
            gen_rulebase_task(spec.rulebase_facts, spec.rulebase_rules, spec.negation, s).map(
                |mut t| {
                    t.id = format!("rulebase-{i:05}");
                    t
                },
            )
        })
        .collect::<Result<_, _>>()?;
    tasks.extend(rulebase);
    Ok(tasks)
}

pub fn write_jsonl<W: Write>(tasks: &[TaskInstance], mut out: W) -> Result<(), CorpusError> {
    for t in tasks {
        serde_json::to_writer(&mut out, t)
            .map_err(|source| CorpusError::Json { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TaskInstance>, CorpusError> {
    let mut tasks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        tasks.push(
            serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(tasks)
}

/// Loader for an external benchmark. Only the interface exists: mapping
/// free-form benchmark contexts to gold proofs is not possible, so no
/// implementation ships.
pub trait BenchmarkAdapter {
    fn name(&self) -> &str;
    fn load(&self, path: &std::path::Path) -> Result<Vec<TaskInstance>, CorpusError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let tasks = generate_corpus(
            &CorpusSpec {
                chain_tasks: 3,
                rulebase_tasks: 2,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_jsonl(&tasks, &mut buf).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), tasks);
    }

    #[test]
    fn ids_are_positional() {
        let tasks = generate_corpus(
            &CorpusSpec {
                chain_tasks: 2,
                rulebase_tasks: 1,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        let ids: Vec<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["chain-00000", "chain-00001", "rulebase-00000"]);
    }

    #[test]
    fn bad_hop_range_is_rejected() {
        let spec = CorpusSpec {
            min_hops: 3,
            max_hops: 2,
            ..Default::default()
        };
        assert!(matches!(
            generate_corpus(&spec, 0),
            Err(CorpusError::InvalidSpec(_))
        ));
    }
}
