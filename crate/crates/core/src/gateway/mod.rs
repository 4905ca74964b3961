//! Backend contracts for step generation, translation to symbolic form and
//! step evaluation, plus the [`Gateway`] that enforces template and kernel
//! invariants on whatever a backend returns.

pub mod http;
mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{check_arities, Fact, KernelError, Rule, StepFailure, StepVerdict};
use crate::template::{parse_steps, ReasoningStep};

pub use scripted::ScriptedBackend;

pub const GENERATION_TEMPERATURE: f64 = 1.0;
pub const EVALUATION_TEMPERATURE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {detail}")]
    BackendUnavailable { attempts: u32, detail: String },
    #[error("backend rejected the request with status {status}: {detail}")]
    Rejected { status: u16, detail: String },
    #[error("malformed backend reply: {0}")]
    Protocol(String),
    #[error("unparseable judgment `{0}`")]
    UnparseableJudgment(String),
}

/// Everything a backend sees when asked for the next step.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationContext {
    pub task_id: String,
    /// The full question text, context included.
    pub question: String,
    pub prior_steps: Vec<ReasoningStep>,
    pub few_shot_asset: Arc<str>,
    pub temperature: f64,
    pub seed: u64,
}

impl GenerationContext {
    pub fn depth(&self) -> usize {
        self.prior_steps.len()
    }
}

/// A generated step that passed the strict template parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateStep {
    pub step: ReasoningStep,
    pub final_answer: Option<String>,
    pub raw_text: String,
    pub backend_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    /// Source text has no symbolic counterpart.
    NoPairing,
    /// Source text is too convoluted to translate.
    TooComplex,
    Syntax,
    UnsafeRule,
    ArityMismatch,
    /// Output parsed but is not facts plus exactly one rule.
    Shape,
}

impl DefectKind {
    /// Defects rooted in the natural-language step rather than in the
    /// symbolic output.
    pub fn is_source_defect(self) -> bool {
        matches!(self, DefectKind::NoPairing | DefectKind::TooComplex)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationDefect {
    pub kind: DefectKind,
    pub detail: String,
}

impl From<KernelError> for TranslationDefect {
    fn from(e: KernelError) -> Self {
        let kind = match e {
            KernelError::Syntax { .. } | KernelError::NonGroundFact(_) => DefectKind::Syntax,
            KernelError::ArityMismatch { .. } => DefectKind::ArityMismatch,
            KernelError::UnsafeRule { .. } => DefectKind::UnsafeRule,
        };
        TranslationDefect {
            kind,
            detail: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TranslationResult {
    Ok { facts: Vec<Fact>, rule: Rule },
    Malformed(TranslationDefect),
}

impl TranslationResult {
    pub fn malformed(kind: DefectKind, detail: impl Into<String>) -> Self {
        TranslationResult::Malformed(TranslationDefect {
            kind,
            detail: detail.into(),
        })
    }

    pub fn defect(&self) -> Option<&TranslationDefect> {
        match self {
            TranslationResult::Malformed(d) => Some(d),
            TranslationResult::Ok { .. } => None,
        }
    }

    /// The engine verdict for a translation that never reached the engine.
    pub fn failed_verdict(defect: &TranslationDefect) -> StepVerdict {
        StepVerdict::failed(match defect.kind {
            DefectKind::UnsafeRule => StepFailure::UnsafeRule(defect.detail.clone()),
            DefectKind::ArityMismatch => StepFailure::ArityMismatch(defect.detail.clone()),
            _ => StepFailure::ParseFailure(defect.detail.clone()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalVerdict {
    pub precision_pass: bool,
    pub feasibility_pass: bool,
}

impl EvalVerdict {
    pub const FAILED: EvalVerdict = EvalVerdict {
        precision_pass: false,
        feasibility_pass: false,
    };
}

pub trait Generator: Send + Sync {
    fn id(&self) -> &str;
    /// Up to `n` raw candidate texts for the next step.
    fn generate(&self, ctx: &GenerationContext, n: usize) -> Result<Vec<String>, GatewayError>;
    /// One complete multi-step response.
    fn respond(&self, ctx: &GenerationContext) -> Result<String, GatewayError>;
}

pub trait Translator: Send + Sync {
    fn translate(
        &self,
        step: &ReasoningStep,
        ctx: &GenerationContext,
    ) -> Result<TranslationResult, GatewayError>;
}

pub trait Evaluator: Send + Sync {
    fn evaluate(
        &self,
        step: &ReasoningStep,
        ctx: &GenerationContext,
    ) -> Result<EvalVerdict, GatewayError>;
}

/// Run-wide counters, shared by every worker.
#[derive(Debug, Default)]
pub struct Telemetry {
    pub candidates_requested: AtomicU64,
    pub candidates_accepted: AtomicU64,
    pub candidates_discarded: AtomicU64,
    pub translations_malformed: AtomicU64,
    pub evaluations_failed: AtomicU64,
    pub backend_errors: AtomicU64,
    pub retries: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub candidates_requested: u64,
    pub candidates_accepted: u64,
    pub candidates_discarded: u64,
    pub translations_malformed: u64,
    pub evaluations_failed: u64,
    pub backend_errors: u64,
    pub retries: u64,
}

impl Telemetry {
    pub fn bump(counter: &AtomicU64, by: u64) {
        counter.fetch_add(by, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> TelemetrySnapshot {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        TelemetrySnapshot {
            candidates_requested: get(&self.candidates_requested),
            candidates_accepted: get(&self.candidates_accepted),
            candidates_discarded: get(&self.candidates_discarded),
            translations_malformed: get(&self.translations_malformed),
            evaluations_failed: get(&self.evaluations_failed),
            backend_errors: get(&self.backend_errors),
            retries: get(&self.retries),
        }
    }
}

/// A generator, translator and evaluator behind one validating front end.
#[derive(Clone)]
pub struct Gateway {
    generator: Arc<dyn Generator>,
    translator: Arc<dyn Translator>,
    evaluator: Arc<dyn Evaluator>,
    telemetry: Arc<Telemetry>,
    eval_temperature: f64,
}

impl Gateway {
    pub fn new(
        generator: Arc<dyn Generator>,
        translator: Arc<dyn Translator>,
        evaluator: Arc<dyn Evaluator>,
        telemetry: Arc<Telemetry>,
    ) -> Self {
        Gateway {
            generator,
            translator,
            evaluator,
            telemetry,
            eval_temperature: EVALUATION_TEMPERATURE,
        }
    }

    /// One backend serving all three roles.
    pub fn uniform<B: Generator + Translator + Evaluator + 'static>(
        backend: Arc<B>,
        telemetry: Arc<Telemetry>,
    ) -> Self {
        Gateway::new(backend.clone(), backend.clone(), backend, telemetry)
    }

    pub fn with_eval_temperature(mut self, t: f64) -> Self {
        self.eval_temperature = t;
        self
    }

    pub fn telemetry(&self) -> &Arc<Telemetry> {
        &self.telemetry
    }

    pub fn backend_id(&self) -> &str {
        self.generator.id()
    }

    /// Candidates for the next step. Texts that are not exactly one
    /// strictly well-formed step (optionally with a final answer) are
    /// dropped and counted.
    pub fn generate_candidates(
        &self,
        ctx: &GenerationContext,
        n: usize,
    ) -> Result<Vec<CandidateStep>, GatewayError> {
        Telemetry::bump(&self.telemetry.candidates_requested, n as u64);
        let raw = self.generator.generate(ctx, n).inspect_err(|_| {
            Telemetry::bump(&self.telemetry.backend_errors, 1);
        })?;
        let mut out = Vec::new();
        for text in raw.into_iter().take(n) {
            match parse_steps(&text) {
                Ok(mut parsed) if parsed.steps.len() == 1 => {
                    let step = parsed.steps.remove(0).at_index(ctx.depth());
                    out.push(CandidateStep {
                        step,
                        final_answer: parsed.final_answer,
                        raw_text: text,
                        backend_id: self.generator.id().to_string(),
                    });
                }
                Ok(_) | Err(_) => {
                    Telemetry::bump(&self.telemetry.candidates_discarded, 1);
                    tracing::debug!(task = %ctx.task_id, depth = ctx.depth(), "discarding malformed candidate");
                }
            }
        }
        Telemetry::bump(&self.telemetry.candidates_accepted, out.len() as u64);
        Ok(out)
    }

    /// Backend translation, re-checked against the kernel's safety and
    /// arity invariants.
    pub fn translate(
        &self,
        step: &ReasoningStep,
        ctx: &GenerationContext,
    ) -> Result<TranslationResult, GatewayError> {
        let ctx = GenerationContext {
            temperature: self.eval_temperature,
            ..ctx.clone()
        };
        let result = self.translator.translate(step, &ctx).inspect_err(|_| {
            Telemetry::bump(&self.telemetry.backend_errors, 1);
        })?;
        let result = match result {
            TranslationResult::Ok { facts, rule } => match validate_translation(&facts, &rule) {
                Ok(()) => TranslationResult::Ok { facts, rule },
                Err(defect) => TranslationResult::Malformed(defect),
            },
            malformed => malformed,
        };
        if result.defect().is_some() {
            Telemetry::bump(&self.telemetry.translations_malformed, 1);
        }
        Ok(result)
    }

    /// Precision and feasibility judgments. A failing backend or an
    /// unparseable judgment counts as both failing.
    pub fn evaluate(&self, step: &ReasoningStep, ctx: &GenerationContext) -> EvalVerdict {
        let ctx = GenerationContext {
            temperature: self.eval_temperature,
            ..ctx.clone()
        };
        match self.evaluator.evaluate(step, &ctx) {
            Ok(v) => v,
            Err(e) => {
                Telemetry::bump(&self.telemetry.evaluations_failed, 1);
                tracing::warn!(task = %ctx.task_id, error = %e, "evaluation failed; scoring both judgments as failed");
                EvalVerdict::FAILED
            }
        }
    }

    /// A complete response (used by the filtered few-shot stage).
    pub fn respond(&self, ctx: &GenerationContext) -> Result<String, GatewayError> {
        self.generator.respond(ctx).inspect_err(|_| {
            Telemetry::bump(&self.telemetry.backend_errors, 1);
        })
    }
}

fn validate_translation(facts: &[Fact], rule: &Rule) -> Result<(), TranslationDefect> {
    rule.check_safety()?;
    check_arities(facts.iter().map(Fact::atom).chain(rule.atoms()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Atom, Term};

    struct Fixed {
        texts: Vec<String>,
        translation: TranslationResult,
    }

    impl Generator for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }
        fn generate(&self, _: &GenerationContext, _: usize) -> Result<Vec<String>, GatewayError> {
            Ok(self.texts.clone())
        }
        fn respond(&self, _: &GenerationContext) -> Result<String, GatewayError> {
            Ok(self.texts.join("\n"))
        }
    }

    impl Translator for Fixed {
        fn translate(
            &self,
            _: &ReasoningStep,
            _: &GenerationContext,
        ) -> Result<TranslationResult, GatewayError> {
            Ok(self.translation.clone())
        }
    }

    impl Evaluator for Fixed {
        fn evaluate(
            &self,
            _: &ReasoningStep,
            _: &GenerationContext,
        ) -> Result<EvalVerdict, GatewayError> {
            Err(GatewayError::UnparseableJudgment("maybe".into()))
        }
    }

    fn ctx() -> GenerationContext {
        GenerationContext {
            task_id: "t".into(),
            question: "q".into(),
            prior_steps: vec![],
            few_shot_asset: Arc::from(""),
            temperature: GENERATION_TEMPERATURE,
            seed: 0,
        }
    }

    const STEP: &str = "<QUERY>q</QUERY>\n<FACTS>\n- f\n</FACTS>\n<RULE>r</RULE>\n<REVISION></REVISION>\n\
                        <REVISION_RESULT>RETAINED</REVISION_RESULT>\n<REASONING_RESULT>c</REASONING_RESULT>\n";

    fn gateway(texts: Vec<String>, translation: TranslationResult) -> Gateway {
        Gateway::uniform(
            Arc::new(Fixed { texts, translation }),
            Arc::new(Telemetry::default()),
        )
    }

    #[test]
    fn malformed_candidates_are_dropped_and_counted() {
        let broken = STEP.replace("<RULE>", "");
        let g = gateway(
            vec![STEP.into(), broken, format!("{STEP}\n{STEP}")],
            TranslationResult::malformed(DefectKind::Syntax, ""),
        );
        let c = g.generate_candidates(&ctx(), 3).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(g.telemetry().snapshot().candidates_discarded, 2);
    }

    #[test]
    fn unsafe_translations_are_rejected() {
        let rule = Rule {
            head: Atom::new("q", vec![Term::var("X")]),
            body_pos: vec![],
            body_neg: vec![],
        };
        let g = gateway(
            vec![],
            TranslationResult::Ok {
                facts: vec![],
                rule,
            },
        );
        let step = crate::template::parse_steps(STEP).unwrap().steps.remove(0);
        let t = g.translate(&step, &ctx()).unwrap();
        assert_eq!(t.defect().map(|d| d.kind), Some(DefectKind::UnsafeRule));
        assert_eq!(g.telemetry().snapshot().translations_malformed, 1);
    }

    #[test]
    fn failed_evaluation_is_conservative() {
        let g = gateway(vec![], TranslationResult::malformed(DefectKind::Syntax, ""));
        let step = crate::template::parse_steps(STEP).unwrap().steps.remove(0);
        assert_eq!(g.evaluate(&step, &ctx()), EvalVerdict::FAILED);
        assert_eq!(g.telemetry().snapshot().evaluations_failed, 1);
    }
}
