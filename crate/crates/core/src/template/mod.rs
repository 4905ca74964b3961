//! The fixed-format reasoning step template.
//!
//! A step is six tagged fields in a fixed order; a response is a sequence
//! of steps optionally followed by a `FINAL ANSWER:` line. The grammar is
//! documented in `docs/template-format.md`.

mod parse;
mod render;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{
    conforms_strictly, parse_lenient, parse_response, parse_steps, tag_spans, LenientParse,
};
pub use render::{render_response, serialize_response, serialize_step};

pub const FINAL_ANSWER_MARKER: &str = "FINAL ANSWER:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    Query,
    Facts,
    Rule,
    Revision,
    RevisionResult,
    ReasoningResult,
}

impl Tag {
    /// Canonical field order within a step.
    pub const ALL: [Tag; 6] = [
        Tag::Query,
        Tag::Facts,
        Tag::Rule,
        Tag::Revision,
        Tag::RevisionResult,
        Tag::ReasoningResult,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Query => "QUERY",
            Tag::Facts => "FACTS",
            Tag::Rule => "RULE",
            Tag::Revision => "REVISION",
            Tag::RevisionResult => "REVISION_RESULT",
            Tag::ReasoningResult => "REASONING_RESULT",
        }
    }

    pub fn position(self) -> usize {
        self as usize
    }

    pub fn from_name(name: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RevisionResult {
    Retained,
    Revised(String),
}

/// One template-structured reasoning step. Text fields are stored trimmed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub step_index: usize,
    pub query: String,
    pub facts: Vec<String>,
    pub rule: String,
    pub revision: String,
    pub revision_result: RevisionResult,
    pub reasoning_result: String,
}

impl ReasoningStep {
    /// Checks the field invariants: query, rule and reasoning result are
    /// non-empty, and there is at least one non-empty fact.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let empty = |tag| {
            Err(TemplateError::InvariantViolation {
                tag,
                step_index: self.step_index,
            })
        };
        if self.query.trim().is_empty() {
            return empty(Tag::Query);
        }
        if self.facts.is_empty() || self.facts.iter().any(|f| f.trim().is_empty()) {
            return empty(Tag::Facts);
        }
        if self.rule.trim().is_empty() {
            return empty(Tag::Rule);
        }
        if matches!(&self.revision_result, RevisionResult::Revised(t) if t.trim().is_empty()) {
            return empty(Tag::RevisionResult);
        }
        if self.reasoning_result.trim().is_empty() {
            return empty(Tag::ReasoningResult);
        }
        Ok(())
    }

    /// The same step renumbered to `step_index`.
    pub fn at_index(mut self, step_index: usize) -> Self {
        self.step_index = step_index;
        self
    }
}

/// Parsed multi-step response. `final_answer` is present exactly when the
/// response is terminal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub steps: Vec<ReasoningStep>,
    pub final_answer: Option<String>,
    pub raw_text: String,
}

impl StructuredResponse {
    /// Builds a canonical response: steps are renumbered from zero and
    /// `raw_text` is the serializer's rendering.
    pub fn new(
        steps: Vec<ReasoningStep>,
        final_answer: Option<String>,
    ) -> Result<Self, TemplateError> {
        let steps: Vec<ReasoningStep> = steps
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.at_index(i))
            .collect();
        let raw_text = render_response(&steps, final_answer.as_deref())?;
        Ok(StructuredResponse {
            steps,
            final_answer,
            raw_text,
        })
    }

    pub fn is_terminal(&self) -> bool {
        self.final_answer.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("step {step_index}: missing <{tag}>")]
    MissingTag { tag: Tag, step_index: usize },
    #[error("step {step_index}: expected <{expected}> but found <{found}>")]
    TagOrderViolation {
        step_index: usize,
        expected: Tag,
        found: Tag,
    },
    #[error("step {step_index}: <{tag}> is never closed")]
    UnclosedTag { tag: Tag, step_index: usize },
    #[error("step {step_index}: closing </{tag}> without a matching opening tag")]
    UnexpectedClose { tag: Tag, step_index: usize },
    #[error("step {step_index}: <{tag}> is empty")]
    EmptyField { tag: Tag, step_index: usize },
    #[error("step {step_index}: malformed FACTS entry `{line}`")]
    MalformedFacts { step_index: usize, line: String },
    #[error(
        "step {step_index}: REVISION_RESULT must be RETAINED or REVISED: <text>, found `{found}`"
    )]
    InvalidRevisionResult { step_index: usize, found: String },
    #[error("text outside any field: `{0}`")]
    StrayText(String),
    #[error("content after the final answer")]
    TrailingContent,
    #[error("no reasoning steps")]
    NoSteps,
    #[error("no final answer")]
    NoFinalAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("step {step_index}: required field <{tag}> is empty")]
    InvariantViolation { tag: Tag, step_index: usize },
    #[error("final answer must be a single non-empty line")]
    InvalidFinalAnswer,
}
