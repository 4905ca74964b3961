//! Filtering, failure taxonomy, record emission and run statistics.

mod emit;
mod stats;

use serde::{Deserialize, Serialize};

use crate::gateway::{CandidateStep, TranslationResult};
use crate::kernel::StepVerdict;
use crate::template::{conforms_strictly, parse_response, serialize_step, ReasoningStep};

pub use emit::{
    dpo_records, emit_datasets, emit_stage1, file_sha256, sft_records, Counts, DatasetManifest,
    DpoRecord, EmitError, RejectionRecord, RunMeta, SftRecord, Stage,
};
pub use stats::{compute_stats, read_audit, FamilyStats, RunStats, StatsError};

/// Why a failed step failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureClass {
    /// The natural-language step itself is defective: empty fields, or
    /// text that has no (or no tractable) symbolic counterpart.
    GenerationError,
    /// A symbolic form was produced but is ill-formed or does not fire.
    TranslationError,
}

/// Classifies a step the engine did not execute.
pub fn classify_failure(
    candidate: &CandidateStep,
    translation: &TranslationResult,
    verdict: &StepVerdict,
) -> FailureClass {
    debug_assert!(!verdict.executed(), "only failed steps are classified");
    if candidate.step.validate().is_err() {
        return FailureClass::GenerationError;
    }
    match translation.defect() {
        Some(d) if d.kind.is_source_defect() => FailureClass::GenerationError,
        _ => FailureClass::TranslationError,
    }
}

/// Trim, case-fold, collapse inner whitespace, drop trailing punctuation,
/// and map yes/true to "true" and no/false to "false".
pub fn normalize_answer(raw: &str) -> String {
    let folded = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let stripped = folded.trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    match stripped {
        "yes" | "true" => "true".to_string(),
        "no" | "false" => "false".to_string(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    FormatViolation,
    WrongAnswer,
}

/// One stage-1 input: a raw response, its gold answer and provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage1Input {
    pub task_id: String,
    pub prompt: String,
    pub raw: String,
    pub gold: String,
}

/// Keeps responses that conform strictly and answer correctly.
pub fn stage1_filter(inputs: &[Stage1Input]) -> (Vec<SftRecord>, Vec<RejectionRecord>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for input in inputs {
        let reject = |reason, detail: String| RejectionRecord {
            task_id: input.task_id.clone(),
            reason,
            detail,
        };
        if !conforms_strictly(&input.raw) {
            let detail = parse_response(&input.raw)
                .err()
                .map_or_else(|| "field invariant".into(), |e| e.to_string());
            rejected.push(reject(RejectReason::FormatViolation, detail));
            continue;
        }
        let response = parse_response(&input.raw).expect("conforming text parses");
        let answer = response.final_answer.unwrap_or_default();
        if normalize_answer(&answer) != normalize_answer(&input.gold) {
            rejected.push(reject(
                RejectReason::WrongAnswer,
                format!("answered `{answer}`, gold `{}`", input.gold),
            ));
            continue;
        }
        kept.push(SftRecord {
            prompt: input.prompt.clone(),
            response: input.raw.clone(),
            task_id: input.task_id.clone(),
            stage: Stage::Stage1,
        });
    }
    (kept, rejected)
}

/// Canonical text of a single step as stored in DPO records.
pub fn step_text(step: &ReasoningStep) -> String {
    serialize_step(step).expect("recorded steps satisfy the template invariants")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer(" True."), "true");
        assert_eq!(normalize_answer("YES"), "true");
        assert_eq!(normalize_answer("no!"), "false");
        assert_eq!(normalize_answer("  The   Cat \t sat ..."), "the cat sat");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("?!"), "");
    }
}
