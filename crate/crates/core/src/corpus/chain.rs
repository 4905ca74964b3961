//! Linear ontology chains: `c0(e)`, `c1(X) :- c0(X)`, ..., `a(X) :- c_{n-1}(X)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{ADJECTIVES, ENTITIES, NOUNS};
use super::{assemble, CorpusError, Family, ProofStep, Query, TaskInstance};
use crate::kernel::{Atom, Fact, Rule, Term};

pub const MAX_HOPS: usize = 12;

fn unary_rule(head: &str, body: &str) -> Rule {
    Rule::new(
        Atom::new(head, vec![Term::var("X")]),
        vec![Atom::new(body, vec![Term::var("X")])],
        vec![],
    )
    .expect("unary chain rules are safe")
}

/// A `hops`-step implication chain from one entity to a property, with
/// `distractors` extra sentences off the proof path. Odd seeds ask the
/// negated question.
pub fn gen_chain_task(
    hops: usize,
    distractors: usize,
    seed: u64,
) -> Result<TaskInstance, CorpusError> {
    if hops == 0 || hops > MAX_HOPS {
        return Err(CorpusError::InvalidSpec(format!(
            "hops must be in 1..={MAX_HOPS}, got {hops}"
        )));
    }
    if hops + distractors > NOUNS.len() {
        return Err(CorpusError::InvalidSpec(format!(
            "at most {} concepts available",
            NOUNS.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nouns: Vec<&str> = NOUNS.to_vec();
    nouns.shuffle(&mut rng);
    let mut adjectives: Vec<&str> = ADJECTIVES.to_vec();
    adjectives.shuffle(&mut rng);
    let mut entities: Vec<&str> = ENTITIES.to_vec();
    entities.shuffle(&mut rng);

    let chain = &nouns[..hops];
    let fresh = &nouns[hops..];
    let property = adjectives[0];
    let subject = entities[0];

    let mut facts = vec![Fact::from_consts(chain[0], &[subject])];
    let mut rules = Vec::new();
    let mut proof = Vec::new();
    let mut current = facts[0].clone();
    for i in 0..hops {
        let head = if i + 1 < hops { chain[i + 1] } else { property };
        let rule = unary_rule(head, chain[i]);
        let conclusion = Fact::from_consts(head, &[subject]);
        proof.push(ProofStep {
            facts: vec![current.clone()],
            rule: rule.clone(),
            conclusion: conclusion.clone(),
        });
        rules.push(rule);
        current = conclusion;
    }

    // Distractors branch off the chain into fresh concepts (never rejoining
    // it) or place chain concepts on other entities.
    let mut next_fresh = 0;
    for d in 0..distractors {
        let on_chain = chain[rng.gen_range(0..hops)];
        if d % 2 == 0 {
            let target = if rng.gen_bool(0.5) {
                let n = fresh[next_fresh];
                next_fresh += 1;
                n
            } else {
                adjectives[1 + d]
            };
            rules.push(unary_rule(target, on_chain));
        } else {
            let other = entities[1 + d % (entities.len() - 1)];
            facts.push(Fact::from_consts(on_chain, &[other]));
        }
    }
    facts.sort();
    facts.dedup();
    rules.shuffle(&mut rng);

    let query = Query {
        goal: current,
        negated: seed % 2 == 1,
    };
    Ok(assemble(
        &mut rng,
        format!("chain-{seed:016x}"),
        Family::Chain,
        facts,
        rules,
        proof,
        query,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::verify_step;

    #[test]
    fn one_hop_is_a_single_syllogism() {
        let t = gen_chain_task(1, 0, 4).unwrap();
        assert_eq!(t.ground_truth_proof.len(), 1);
        assert_eq!(t.rules.len(), 1);
        assert_eq!(t.gold_answer, "true");
        let p = &t.ground_truth_proof[0];
        assert!(verify_step(&p.facts, &p.rule).executed());
    }

    #[test]
    fn odd_seeds_negate() {
        let t = gen_chain_task(2, 1, 5).unwrap();
        assert!(t.query.negated);
        assert_eq!(t.gold_answer, "false");
        assert!(t.question.contains(" is not "), "{}", t.question);
    }

    #[test]
    fn same_seed_same_task() {
        assert_eq!(
            gen_chain_task(3, 4, 77).unwrap(),
            gen_chain_task(3, 4, 77).unwrap()
        );
    }

    #[test]
    fn out_of_range_hops() {
        assert!(gen_chain_task(0, 0, 1).is_err());
        assert!(gen_chain_task(MAX_HOPS + 1, 0, 1).is_err());
    }
}
