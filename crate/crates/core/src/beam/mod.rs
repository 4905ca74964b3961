//! Scored beam search over template steps: expand, verify, score, select,
//! then harvest correct paths and sibling preference pairs.

mod audit;
mod pairs;

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Family, TaskInstance};
use crate::dataset::{classify_failure, normalize_answer, FailureClass};
use crate::gateway::{
    CandidateStep, DefectKind, EvalVerdict, Gateway, GenerationContext, TranslationResult,
    GENERATION_TEMPERATURE,
};
use crate::kernel::{render_conclusions, verify_step, Fact, StepVerdict};
use crate::seed::{mix, mix_index};
use crate::template::ReasoningStep;

pub use audit::{audit_tree, AuditRecord, AuditViolation};
pub use pairs::{backtrack_pairs, pair_prompt, PreferencePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    /// Each step is checked against its own cited facts only.
    Closed,
    /// Conclusions of executed ancestors are added to the cited facts.
    Accumulating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub width: usize,
    pub top_k: usize,
    pub max_depth: usize,
    pub score_w1: i64,
    pub score_w2: i64,
    pub score_w3: i64,
    pub max_pairs_per_node: usize,
    pub engine_mode: EngineMode,
    pub generation_temperature: f64,
    pub seed: u64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 9,
            top_k: 3,
            max_depth: 12,
            score_w1: 3,
            score_w2: 2,
            score_w3: 5,
            max_pairs_per_node: 2,
            engine_mode: EngineMode::Closed,
            generation_temperature: GENERATION_TEMPERATURE,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BeamConfigError {
    #[error("width, top_k and max_depth must be positive")]
    NonPositive,
    #[error("top_k ({top_k}) must divide width ({width})")]
    Indivisible { width: usize, top_k: usize },
    #[error("score weights must be non-negative")]
    NegativeWeight,
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), BeamConfigError> {
        if self.width == 0 || self.top_k == 0 || self.max_depth == 0 {
            return Err(BeamConfigError::NonPositive);
        }
        if self.top_k > self.width || !self.width.is_multiple_of(self.top_k) {
            return Err(BeamConfigError::Indivisible {
                width: self.width,
                top_k: self.top_k,
            });
        }
        if self.score_w1 < 0 || self.score_w2 < 0 || self.score_w3 < 0 {
            return Err(BeamConfigError::NegativeWeight);
        }
        Ok(())
    }

    /// Children per expanded node.
    pub fn fanout(&self) -> usize {
        self.width / self.top_k
    }

    /// Every total a node can receive.
    pub fn admissible_totals(&self) -> BTreeSet<i64> {
        [
            0,
            self.score_w2,
            self.score_w3,
            self.score_w2 + self.score_w3,
            self.score_w1 + self.score_w3,
        ]
        .into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub w1: i64,
    pub w2: i64,
    pub w3: i64,
    pub total: i64,
}

impl ScoreBreakdown {
    /// Engine success earns w1 and ignores precision; otherwise precision
    /// earns w2. Feasibility earns w3 either way.
    pub fn compute(executed: bool, eval: EvalVerdict, cfg: &BeamConfig) -> Self {
        let w1 = if executed { cfg.score_w1 } else { 0 };
        let w2 = if !executed && eval.precision_pass {
            cfg.score_w2
        } else {
            0
        };
        let w3 = if eval.feasibility_pass {
            cfg.score_w3
        } else {
            0
        };
        ScoreBreakdown {
            w1,
            w2,
            w3,
            total: w1 + w2 + w3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeamNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Position within its depth, in generation order.
    pub gen_index: usize,
    /// `None` only for the root, which holds just the question.
    pub step: Option<ReasoningStep>,
    pub translation: Option<TranslationResult>,
    pub engine_verdict: Option<StepVerdict>,
    pub eval: Option<EvalVerdict>,
    pub score: ScoreBreakdown,
    pub failure_class: Option<FailureClass>,
    pub terminal: bool,
    pub answer: Option<String>,
    pub expanded: bool,
}

impl BeamNode {
    pub fn root() -> Self {
        BeamNode {
            id: 0,
            parent: None,
            depth: 0,
            gen_index: 0,
            step: None,
            translation: None,
            engine_verdict: None,
            eval: None,
            score: ScoreBreakdown::default(),
            failure_class: None,
            terminal: false,
            answer: None,
            expanded: false,
        }
    }

    pub fn executed(&self) -> bool {
        self.engine_verdict
            .as_ref()
            .is_some_and(StepVerdict::executed)
    }
}

/// Root-to-terminal path that reached the gold answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningPath {
    /// Node ids from the first step to the terminal node (root excluded).
    pub node_ids: Vec<usize>,
    pub steps: Vec<ReasoningStep>,
    pub final_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeamResult {
    pub task_id: String,
    pub family: Family,
    pub prompt: String,
    pub gold_answer: String,
    pub tree: Vec<BeamNode>,
    pub sft_paths: Vec<ReasoningPath>,
    pub pairs: Vec<PreferencePair>,
}

/// The `k` highest totals; ties keep generation order.
pub fn select_frontier(candidates: &[BeamNode], k: usize) -> Vec<&BeamNode> {
    let mut ranked: Vec<&BeamNode> = candidates.iter().collect();
    ranked.sort_by_key(|n| (std::cmp::Reverse(n.score.total), n.gen_index));
    ranked.truncate(k);
    ranked
}

/// Node ids from the root's first child down to `id`.
pub fn path_to(tree: &[BeamNode], id: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut cur = Some(id);
    while let Some(i) = cur {
        if tree[i].parent.is_some() {
            out.push(i);
        }
        cur = tree[i].parent;
    }
    out.reverse();
    out
}

fn path_steps(tree: &[BeamNode], id: usize) -> Vec<ReasoningStep> {
    path_to(tree, id)
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            tree[n]
                .step
                .clone()
                .expect("non-root nodes hold a step")
                .at_index(i)
        })
        .collect()
}

/// Scores one candidate: translate, verify, evaluate, and write the
/// engine's conclusions into the step on success.
pub fn score_candidate(
    gateway: &Gateway,
    cfg: &BeamConfig,
    ctx: &GenerationContext,
    candidate: CandidateStep,
    accumulated: &[Fact],
) -> BeamNode {
    // An incomplete step has nothing to translate and never executes.
    let translation = match candidate.step.validate() {
        Err(e) => TranslationResult::malformed(DefectKind::NoPairing, e.to_string()),
        Ok(()) => gateway.translate(&candidate.step, ctx).unwrap_or_else(|e| {
            tracing::warn!(task = %ctx.task_id, error = %e, "translation backend failed");
            TranslationResult::malformed(DefectKind::Syntax, e.to_string())
        }),
    };
    let verdict = match &translation {
        TranslationResult::Ok { facts, rule } => {
            let mut cited = facts.clone();
            cited.extend(accumulated.iter().filter(|f| !facts.contains(f)).cloned());
            verify_step(&cited, rule)
        }
        TranslationResult::Malformed(defect) => TranslationResult::failed_verdict(defect),
    };
    let eval = gateway.evaluate(&candidate.step, ctx);
    let score = ScoreBreakdown::compute(verdict.executed(), eval, cfg);
    let failure_class =
        (!verdict.executed()).then(|| classify_failure(&candidate, &translation, &verdict));
    let mut step = candidate.step;
    if verdict.executed() {
        step.reasoning_result = render_conclusions(verdict.conclusions());
    }
    BeamNode {
        id: 0,
        parent: None,
        depth: ctx.depth() + 1,
        gen_index: 0,
        step: Some(step),
        translation: Some(translation),
        engine_verdict: Some(verdict),
        eval: Some(eval),
        score,
        failure_class,
        terminal: candidate.final_answer.is_some(),
        answer: candidate.final_answer,
        expanded: false,
    }
}

/// Children of `node`: up to `fanout` generated and scored candidates.
/// Backend failure yields no children.
pub fn expand_node(
    gateway: &Gateway,
    cfg: &BeamConfig,
    node: &BeamNode,
    ctx: &GenerationContext,
    fanout: usize,
    accumulated: &[Fact],
) -> Vec<BeamNode> {
    let candidates = match gateway.generate_candidates(ctx, fanout) {
        Ok(c) => c,
        Err(e) => {
            tracing::warn!(task = %ctx.task_id, node = node.id, error = %e, "generation failed; node has no children");
            return Vec::new();
        }
    };
    candidates
        .into_iter()
        .map(|c| {
            let mut child = score_candidate(gateway, cfg, ctx, c, accumulated);
            child.parent = Some(node.id);
            child.depth = node.depth + 1;
            child
        })
        .collect()
}

fn accumulated_facts(tree: &[BeamNode], id: usize) -> Vec<Fact> {
    let mut out = Vec::new();
    for n in path_to(tree, id) {
        if let Some(v) = &tree[n].engine_verdict {
            out.extend(v.conclusions().iter().cloned());
        }
    }
    out
}

/// Runs the search for one task. Deterministic for deterministic backends:
/// node ids follow (depth, parent rank, candidate order).
pub fn run_beam(
    task: &TaskInstance,
    gateway: &Gateway,
    cfg: &BeamConfig,
    few_shot: Arc<str>,
) -> BeamResult {
    let prompt = task.prompt();
    let task_seed = mix(cfg.seed, &task.id);
    let mut tree = vec![BeamNode::root()];
    let mut layer: Vec<usize> = vec![0];

    for _ in 0..cfg.max_depth {
        let open: Vec<BeamNode> = layer
            .iter()
            .map(|&i| tree[i].clone())
            .filter(|n| !n.terminal)
            .collect();
        let selected: Vec<usize> = select_frontier(&open, cfg.top_k)
            .into_iter()
            .map(|n| n.id)
            .collect();
        if selected.is_empty() {
            break;
        }
        let batches: Vec<Vec<BeamNode>> = selected
            .par_iter()
            .map(|&id| {
                let node = &tree[id];
                let ctx = GenerationContext {
                    task_id: task.id.clone(),
                    question: prompt.clone(),
                    prior_steps: path_steps(&tree, id),
                    few_shot_asset: few_shot.clone(),
                    temperature: cfg.generation_temperature,
                    seed: mix_index(task_seed, id as u64),
                };
                let accumulated = match cfg.engine_mode {
                    EngineMode::Closed => Vec::new(),
                    EngineMode::Accumulating => accumulated_facts(&tree, id),
                };
                expand_node(gateway, cfg, node, &ctx, cfg.fanout(), &accumulated)
            })
            .collect();
        for &id in &selected {
            tree[id].expanded = true;
        }
        let mut next = Vec::new();
        for mut child in batches.into_iter().flatten() {
            child.id = tree.len();
            child.gen_index = next.len();
            next.push(child.id);
            tree.push(child);
        }
        layer = next;
    }

    let gold = normalize_answer(&task.gold_answer);
    let sft_paths: Vec<ReasoningPath> = tree
        .iter()
        .filter(|n| {
            n.terminal
                && n.answer
                    .as_deref()
                    .is_some_and(|a| normalize_answer(a) == gold)
        })
        .map(|n| ReasoningPath {
            node_ids: path_to(&tree, n.id),
            steps: path_steps(&tree, n.id),
            final_answer: n.answer.clone().expect("terminal nodes carry an answer"),
        })
        .collect();
    if sft_paths.is_empty() {
        tracing::info!(task = %task.id, nodes = tree.len(), "no correct path found");
    }
    let pairs = backtrack_pairs(&tree, &sft_paths, cfg.max_pairs_per_node, &prompt);
    BeamResult {
        task_id: task.id.clone(),
        family: task.family,
        prompt,
        gold_answer: task.gold_answer.clone(),
        tree,
        sft_paths,
        pairs,
    }
}
