//! One JSON line per search-tree node, and an independent checker for the
//! structural invariants of a dumped tree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BeamConfig, BeamNode, BeamResult, ScoreBreakdown};
use crate::corpus::Family;
use crate::dataset::FailureClass;
use crate::gateway::{DefectKind, EvalVerdict};
use crate::kernel::{render_conclusions, Fact, StepFailure};
use crate::template::ReasoningStep;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub task_id: String,
    pub family: Family,
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub gen_index: usize,
    pub step: Option<ReasoningStep>,
    pub score: ScoreBreakdown,
    pub executed: bool,
    pub conclusions: Vec<Fact>,
    pub failure: Option<StepFailure>,
    pub failure_class: Option<FailureClass>,
    pub defect: Option<DefectKind>,
    pub eval: Option<EvalVerdict>,
    pub terminal: bool,
    pub answer: Option<String>,
    pub expanded: bool,
}

impl AuditRecord {
    pub fn from_node(task_id: &str, family: Family, node: &BeamNode) -> Self {
        let verdict = node.engine_verdict.as_ref();
        AuditRecord {
            task_id: task_id.to_string(),
            family,
            id: node.id,
            parent: node.parent,
            depth: node.depth,
            gen_index: node.gen_index,
            step: node.step.clone(),
            score: node.score,
            executed: node.executed(),
            conclusions: verdict
                .map(|v| v.conclusions().to_vec())
                .unwrap_or_default(),
            failure: verdict.and_then(|v| v.failure().cloned()),
            failure_class: node.failure_class,
            defect: node
                .translation
                .as_ref()
                .and_then(|t| t.defect())
                .map(|d| d.kind),
            eval: node.eval,
            terminal: node.terminal,
            answer: node.answer.clone(),
            expanded: node.expanded,
        }
    }

    pub fn records(result: &BeamResult) -> Vec<AuditRecord> {
        result
            .tree
            .iter()
            .map(|n| AuditRecord::from_node(&result.task_id, result.family, n))
            .collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("task {task_id}, node {node}: {message}")]
pub struct AuditViolation {
    pub task_id: String,
    pub node: usize,
    pub message: String,
}

/// Largest observed layer, per-depth expansion count and per-node child
/// count across the audited trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AuditSummary {
    pub trees: usize,
    pub nodes: usize,
    pub max_frontier: usize,
    pub max_expanded_per_depth: usize,
    pub max_children: usize,
}

/// Checks every tree in `records` (grouped by task, in order of first
/// appearance) against `cfg`.
pub fn audit_tree(
    records: &[AuditRecord],
    cfg: &BeamConfig,
) -> Result<AuditSummary, AuditViolation> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_task: BTreeMap<&str, Vec<&AuditRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(&r.task_id).or_insert_with(|| {
            order.push(&r.task_id);
            Vec::new()
        });
        by_task
            .get_mut(r.task_id.as_str())
            .expect("inserted")
            .push(r);
    }
    let mut summary = AuditSummary::default();
    for task in order {
        check_one(&by_task[task], cfg, &mut summary)?;
        summary.trees += 1;
    }
    Ok(summary)
}

fn check_one(
    nodes: &[&AuditRecord],
    cfg: &BeamConfig,
    summary: &mut AuditSummary,
) -> Result<(), AuditViolation> {
    let fail = |r: &AuditRecord, message: String| {
        Err(AuditViolation {
            task_id: r.task_id.clone(),
            node: r.id,
            message,
        })
    };
    let admissible = cfg.admissible_totals();
    let mut layer_size: BTreeMap<usize, usize> = BTreeMap::new();
    let mut expanded_at: BTreeMap<usize, usize> = BTreeMap::new();
    let mut children: BTreeMap<usize, usize> = BTreeMap::new();

    for (i, r) in nodes.iter().enumerate() {
        if r.id != i {
            return fail(r, format!("ids must be contiguous, expected {i}"));
        }
        if r.expanded {
            if r.terminal {
                return fail(r, "terminal node was expanded".into());
            }
            *expanded_at.entry(r.depth).or_default() += 1;
        }
        if r.terminal && r.answer.is_none() {
            return fail(r, "terminal node without an answer".into());
        }
        let Some(p) = r.parent else {
            if i != 0 || r.depth != 0 || r.step.is_some() {
                return fail(
                    r,
                    "only the first node may be parentless; it has depth 0 and no step".into(),
                );
            }
            continue;
        };
        if p >= i {
            return fail(r, format!("parent {p} does not precede the node"));
        }
        let parent = nodes[p];
        if r.depth != parent.depth + 1 {
            return fail(
                r,
                format!("depth {} under a parent at depth {}", r.depth, parent.depth),
            );
        }
        if !parent.expanded {
            return fail(r, format!("parent {p} was not marked expanded"));
        }
        *layer_size.entry(r.depth).or_default() += 1;
        *children.entry(p).or_default() += 1;

        let s = r.score;
        if !admissible.contains(&s.total) || s.total != s.w1 + s.w2 + s.w3 {
            return fail(r, format!("inadmissible score {s:?}"));
        }
        if s.w1 != if r.executed { cfg.score_w1 } else { 0 } {
            return fail(r, "w1 disagrees with engine execution".into());
        }
        if r.executed && s.w2 != 0 {
            return fail(r, "w1 and w2 both contribute".into());
        }
        if r.executed != (!r.conclusions.is_empty() && r.failure.is_none()) {
            return fail(
                r,
                "executed flag disagrees with conclusions and failure".into(),
            );
        }
        if r.executed == r.failure_class.is_some() {
            return fail(
                r,
                "failure class must be present exactly for failed steps".into(),
            );
        }
        let Some(step) = &r.step else {
            return fail(r, "non-root node without a step".into());
        };
        if r.executed && step.reasoning_result != render_conclusions(&r.conclusions) {
            return fail(r, "reasoning result is not the engine's conclusion".into());
        }
    }

    for (&depth, &n) in &layer_size {
        if n > cfg.width {
            return fail(
                nodes[0],
                format!(
                    "layer at depth {depth} has {n} nodes, width is {}",
                    cfg.width
                ),
            );
        }
        summary.max_frontier = summary.max_frontier.max(n);
    }
    for (&depth, &n) in &expanded_at {
        if n > cfg.top_k {
            return fail(
                nodes[0],
                format!(
                    "{n} nodes expanded at depth {depth}, top_k is {}",
                    cfg.top_k
                ),
            );
        }
        summary.max_expanded_per_depth = summary.max_expanded_per_depth.max(n);
    }
    for (&p, &n) in &children {
        if n > cfg.fanout() {
            return fail(
                nodes[p],
                format!("{n} children, fanout is {}", cfg.fanout()),
            );
        }
        summary.max_children = summary.max_children.max(n);
    }
    summary.nodes += nodes.len();
    Ok(())
}
