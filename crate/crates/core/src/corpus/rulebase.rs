//! Random attribute rule bases with optional negation; the query and its
//! proof come from the engine's derivation trace.

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{ADJECTIVES, ENTITIES};
use super::{assemble, CorpusError, Family, ProofStep, Query, TaskInstance};
use crate::kernel::{
    forward_chain_traced, stratify, Atom, Fact, KnowledgeBase, Rule, Term, DEFAULT_MAX_ITERATIONS,
};
use crate::seed::mix_index;

pub const MAX_FACTS: usize = 30;
pub const MAX_RULES: usize = 12;
pub const MAX_STRATIFICATION_ATTEMPTS: usize = 100;

fn x(predicate: &str) -> Atom {
    Atom::new(predicate, vec![Term::var("X")])
}

fn random_rule<R: Rng>(rng: &mut R, attrs: &[&str], negation: bool) -> Rule {
    let head = *attrs.choose(rng).expect("non-empty attribute pool");
    let others: Vec<&str> = attrs.iter().copied().filter(|a| *a != head).collect();
    let n_pos = rng.gen_range(1..=2);
    let mut picked: Vec<&str> = others.iter().copied().choose_multiple(rng, n_pos + 1);
    picked.shuffle(rng);
    let neg = (negation && rng.gen_bool(0.3) && picked.len() > n_pos)
        .then(|| picked.pop().expect("len checked"));
    picked.truncate(n_pos);
    picked.sort();
    Rule::new(
        x(head),
        picked.into_iter().map(x).collect(),
        neg.into_iter().map(x).collect(),
    )
    .expect("every variable is bound by a positive atom")
}

/// A stratified rule base over unary attributes whose query is the derived
/// fact with the longest proof. Odd seeds ask the negated question.
pub fn gen_rulebase_task(
    n_facts: usize,
    n_rules: usize,
    negation: bool,
    seed: u64,
) -> Result<TaskInstance, CorpusError> {
    if n_facts == 0 || n_facts > MAX_FACTS || n_rules == 0 || n_rules > MAX_RULES {
        return Err(CorpusError::InvalidSpec(format!(
            "rule bases need 1..={MAX_FACTS} facts and 1..={MAX_RULES} rules"
        )));
    }
    for attempt in 0..MAX_STRATIFICATION_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_index(seed, attempt as u64));
        let n_entities = (1 + n_facts / 6).min(3);
        let entities: Vec<&str> = ENTITIES
            .choose_multiple(&mut rng, n_entities)
            .copied()
            .collect();
        let attrs: Vec<&str> = ADJECTIVES
            .choose_multiple(&mut rng, (3 + n_rules).min(ADJECTIVES.len()))
            .copied()
            .collect();

        let mut pairs: Vec<(&str, &str)> = entities
            .iter()
            .flat_map(|e| attrs.iter().map(move |a| (*e, *a)))
            .collect();
        pairs.shuffle(&mut rng);
        let mut facts: Vec<Fact> = pairs
            .iter()
            .take(n_facts)
            .map(|(e, a)| Fact::from_consts(a, &[e]))
            .collect();
        facts.sort();

        let mut rules: Vec<Rule> = Vec::new();
        while rules.len() < n_rules {
            let r = random_rule(&mut rng, &attrs, negation);
            if !rules.contains(&r) {
                rules.push(r);
            }
        }
        if stratify(&rules).is_err() {
            continue;
        }
        let kb = KnowledgeBase::new(facts.iter().cloned(), rules.clone())
            .expect("generated rule bases are valid");
        let Ok(derivation) = forward_chain_traced(&kb, DEFAULT_MAX_ITERATIONS) else {
            continue;
        };
        let best = derivation
            .support
            .keys()
            .filter_map(|goal| derivation.proof_of(goal).map(|p| (goal, p)))
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| b.0.cmp(a.0)));
        let Some((goal, chain)) = best else {
            continue;
        };
        let proof = chain
            .into_iter()
            .map(|(conclusion, j)| ProofStep {
                facts: j.premises,
                rule: rules[j.rule_index].clone(),
                conclusion,
            })
            .collect();
        let query = Query {
            goal: goal.clone(),
            negated: seed % 2 == 1,
        };
        return Ok(assemble(
            &mut rng,
            format!("rulebase-{seed:016x}"),
            Family::Rulebase,
            facts,
            rules,
            proof,
            query,
        ));
    }
    Err(CorpusError::RetryExhausted {
        attempts: MAX_STRATIFICATION_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{answer_query, verify_step, Truth};

    #[test]
    fn gold_is_the_engine_answer() {
        for seed in 0..40 {
            let t = gen_rulebase_task(10, 8, true, seed).unwrap();
            let truth = answer_query(&t.kb(), t.query.goal.atom()).unwrap() == Truth::True;
            assert_eq!(t.gold_answer == "true", truth != t.query.negated);
        }
    }

    #[test]
    fn proof_replays() {
        let t = gen_rulebase_task(6, 5, false, 12).unwrap();
        for p in &t.ground_truth_proof {
            let v = verify_step(&p.facts, &p.rule);
            assert_eq!(v.conclusions(), std::slice::from_ref(&p.conclusion));
        }
    }

    #[test]
    fn size_bounds() {
        assert!(gen_rulebase_task(31, 2, true, 0).is_err());
        assert!(gen_rulebase_task(3, 13, true, 0).is_err());
    }
}
