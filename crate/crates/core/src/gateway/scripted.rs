//! Deterministic backend driven by a task's ground-truth proof. With the
//! zero corruption model it is an oracle; otherwise each candidate is
//! corrupted independently according to the model.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    DefectKind, EvalVerdict, Evaluator, GatewayError, GenerationContext, Generator,
    TranslationResult, Translator,
};
use crate::corpus::{vocab, CorruptionModel, SymbolicForm, TaskInstance};
use crate::kernel::{Atom, Fact, Rule};
use crate::seed::{mix, mix_index};
use crate::template::{render_response, tag_spans, ReasoningStep};

pub struct ScriptedBackend {
    task: Arc<TaskInstance>,
    steps: Vec<ReasoningStep>,
    model: CorruptionModel,
    id: String,
}

struct Draw {
    format_break: bool,
    bad_rule: bool,
    bad_fact: bool,
    rng: ChaCha8Rng,
}

impl ScriptedBackend {
    pub fn new(task: Arc<TaskInstance>, model: CorruptionModel) -> Self {
        let steps = task.ground_truth_steps();
        let id = if model == CorruptionModel::none() {
            "scripted-oracle"
        } else {
            "scripted-noisy"
        };
        ScriptedBackend {
            task,
            steps,
            model,
            id: id.to_string(),
        }
    }

    pub fn oracle(task: Arc<TaskInstance>) -> Self {
        ScriptedBackend::new(task, CorruptionModel::none())
    }

    fn draw(&self, seed: u64) -> Draw {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_index(seed, self.model.seed));
        let (u_format, u_rule, u_fact): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        Draw {
            format_break: u_format < self.model.p_format_break,
            bad_rule: u_rule < self.model.p_bad_rule,
            bad_fact: u_fact < self.model.p_bad_fact,
            rng,
        }
    }

    /// Unmatchable rule text: the ground-truth rule read backwards.
    fn bad_rule_text(&self, depth: usize) -> String {
        let rule = &self.task.ground_truth_proof[depth].rule;
        let head = Atom::new(rule.body_pos[0].predicate.clone(), rule.head.args.clone());
        let reversed = Rule::new(head, vec![rule.head.clone()], vec![])
            .expect("reversal keeps the variable bound");
        let text = vocab::rule_sentence(&reversed);
        if self.task.nl_pairing.contains_key(&text) {
            format!("{} in general", text.trim_end_matches('.'))
        } else {
            text
        }
    }

    fn path_is_clean(&self, prior: &[ReasoningStep]) -> bool {
        prior
            .iter()
            .zip(&self.steps)
            .all(|(p, gt)| p.facts == gt.facts && p.rule == gt.rule)
    }

    fn break_format(text: String, rng: &mut ChaCha8Rng) -> String {
        let spans = tag_spans(&text);
        let (_, _, range) = spans[rng.gen_range(0..spans.len())].clone();
        format!("{}{}", &text[..range.start], &text[range.end..])
    }

    fn candidate(&self, ctx: &GenerationContext, index: usize) -> String {
        let depth = ctx.depth();
        let mut draw = self.draw(mix_index(ctx.seed, index as u64));
        let mut step = self.steps[depth].clone();
        if draw.bad_rule {
            step.rule = self.bad_rule_text(depth);
        }
        if draw.bad_fact {
            step.facts[0] = vocab::fact_sentence(&self.task.ground_truth_proof[depth].conclusion);
        }
        let terminal = depth + 1 == self.steps.len();
        let clean = self.path_is_clean(&ctx.prior_steps) && !draw.bad_rule && !draw.bad_fact;
        let answer = if clean {
            self.task.gold_answer.as_str()
        } else {
            self.task.wrong_answer()
        };
        let text = render_response(&[step], terminal.then_some(answer))
            .expect("corruptions keep fields non-empty");
        if draw.format_break {
            Self::break_format(text, &mut draw.rng)
        } else {
            text
        }
    }
}

impl Generator for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, ctx: &GenerationContext, n: usize) -> Result<Vec<String>, GatewayError> {
        if ctx.depth() >= self.steps.len() {
            return Ok(Vec::new());
        }
        Ok((0..n).map(|i| self.candidate(ctx, i)).collect())
    }

    /// The whole ground-truth response; a rule or fact corruption flips the
    /// final answer and a format break deletes one tag.
    fn respond(&self, ctx: &GenerationContext) -> Result<String, GatewayError> {
        let mut draw = self.draw(mix(ctx.seed, "respond"));
        let answer = if draw.bad_rule || draw.bad_fact {
            self.task.wrong_answer()
        } else {
            self.task.gold_answer.as_str()
        };
        let text = render_response(&self.steps, Some(answer)).expect("ground truth renders");
        Ok(if draw.format_break {
            Self::break_format(text, &mut draw.rng)
        } else {
            text
        })
    }
}

impl Translator for ScriptedBackend {
    /// Exact lookup in the task's pairing table.
    fn translate(
        &self,
        step: &ReasoningStep,
        _: &GenerationContext,
    ) -> Result<TranslationResult, GatewayError> {
        let mut facts: Vec<Fact> = Vec::with_capacity(step.facts.len());
        for text in &step.facts {
            match self.task.nl_pairing.get(text) {
                Some(SymbolicForm::Fact(f)) => facts.push(f.clone()),
                _ => {
                    return Ok(TranslationResult::malformed(
                        DefectKind::NoPairing,
                        format!("no pairing for fact `{text}`"),
                    ))
                }
            }
        }
        match self.task.nl_pairing.get(&step.rule) {
            Some(SymbolicForm::Rule(rule)) => Ok(TranslationResult::Ok {
                facts,
                rule: rule.clone(),
            }),
            _ => Ok(TranslationResult::malformed(
                DefectKind::NoPairing,
                format!("no pairing for rule `{}`", step.rule),
            )),
        }
    }
}

impl Evaluator for ScriptedBackend {
    /// Precision: every cited fact and the rule are true statements of the
    /// task. Feasibility: the rule is the one the proof applies next.
    fn evaluate(
        &self,
        step: &ReasoningStep,
        ctx: &GenerationContext,
    ) -> Result<EvalVerdict, GatewayError> {
        let Some(expected) = self.steps.get(ctx.depth()) else {
            return Ok(EvalVerdict::FAILED);
        };
        let known = |text: &String| self.task.nl_pairing.contains_key(text);
        Ok(EvalVerdict {
            precision_pass: step.facts.iter().all(known) && known(&step.rule),
            feasibility_pass: step.rule == expected.rule,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::gen_chain_task;
    use crate::gateway::{Gateway, Telemetry};

    fn ctx(task: &TaskInstance, prior: Vec<ReasoningStep>, seed: u64) -> GenerationContext {
        GenerationContext {
            task_id: task.id.clone(),
            question: task.prompt(),
            prior_steps: prior,
            few_shot_asset: Arc::from(""),
            temperature: 1.0,
            seed,
        }
    }

    #[test]
    fn oracle_emits_the_next_ground_truth_step() {
        let task = Arc::new(gen_chain_task(3, 2, 10).unwrap());
        let g = Gateway::uniform(
            Arc::new(ScriptedBackend::oracle(task.clone())),
            Arc::new(Telemetry::default()),
        );
        let gt = task.ground_truth_steps();
        let c = g
            .generate_candidates(&ctx(&task, gt[..1].to_vec(), 3), 3)
            .unwrap();
        assert_eq!(c.len(), 3);
        assert!(c
            .iter()
            .all(|c| c.step == gt[1] && c.final_answer.is_none()));
        let last = g
            .generate_candidates(&ctx(&task, gt[..2].to_vec(), 3), 1)
            .unwrap();
        assert_eq!(
            last[0].final_answer.as_deref(),
            Some(task.gold_answer.as_str())
        );
    }

    #[test]
    fn translation_is_the_pairing_table() {
        let task = Arc::new(gen_chain_task(2, 0, 2).unwrap());
        let b = ScriptedBackend::oracle(task.clone());
        let gt = task.ground_truth_steps();
        let t = b.translate(&gt[0], &ctx(&task, vec![], 0)).unwrap();
        let p = &task.ground_truth_proof[0];
        assert_eq!(
            t,
            TranslationResult::Ok {
                facts: p.facts.clone(),
                rule: p.rule.clone()
            }
        );
    }

    #[test]
    fn full_corruption_never_yields_the_true_rule() {
        let task = Arc::new(gen_chain_task(2, 0, 2).unwrap());
        let b = ScriptedBackend::new(task.clone(), CorruptionModel::uniform(1.0));
        let texts = b.generate(&ctx(&task, vec![], 1), 5).unwrap();
        for t in texts {
            let step = crate::template::parse_steps(&t).unwrap().steps.remove(0);
            assert!(b
                .translate(&step, &ctx(&task, vec![], 1))
                .unwrap()
                .defect()
                .is_some());
            assert_eq!(
                b.evaluate(&step, &ctx(&task, vec![], 1)).unwrap(),
                EvalVerdict::FAILED
            );
        }
    }

    #[test]
    fn replay_is_identical() {
        let task = Arc::new(gen_chain_task(4, 3, 8).unwrap());
        let b = ScriptedBackend::new(
            task.clone(),
            CorruptionModel {
                p_format_break: 0.3,
                ..CorruptionModel::uniform(0.4)
            },
        );
        let c = ctx(&task, vec![], 99);
        assert_eq!(b.generate(&c, 9).unwrap(), b.generate(&c, 9).unwrap());
    }
}
