use std::collections::BTreeSet;

use super::{path_steps, BeamNode, ReasoningPath};
use crate::dataset::step_text;
use crate::template::{render_response, ReasoningStep};

/// An engine-validated step preferred over a failed sibling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: ReasoningStep,
    pub rejected: ReasoningStep,
    pub parent_id: usize,
    pub chosen_id: usize,
    pub rejected_id: usize,
}

/// The question followed by the shared prefix of steps, if any.
pub fn pair_prompt(question: &str, prefix: &[ReasoningStep]) -> String {
    if prefix.is_empty() {
        return question.to_string();
    }
    let prefix =
        render_response(prefix, None).expect("recorded steps satisfy the template invariants");
    format!("{question}\n\n{prefix}")
}

/// For each executed node on a correct path, pairs it with up to `cap`
/// failed siblings (same parent), earliest generated first. Siblings whose
/// text equals the chosen step are skipped. Each node is paired once even
/// when several paths share it.
pub fn backtrack_pairs(
    tree: &[BeamNode],
    sft_paths: &[ReasoningPath],
    cap: usize,
    question: &str,
) -> Vec<PreferencePair> {
    let mut done = BTreeSet::new();
    let mut out = Vec::new();
    for path in sft_paths {
        for &id in &path.node_ids {
            let node = &tree[id];
            if !node.executed() || !done.insert(id) {
                continue;
            }
            let parent = node.parent.expect("path nodes have parents");
            let chosen = node.step.clone().expect("path nodes hold a step");
            let chosen_text = step_text(&chosen);
            let mut siblings: Vec<&BeamNode> = tree
                .iter()
                .filter(|s| s.parent == Some(parent) && s.id != id && !s.executed())
                .filter(|s| {
                    s.step
                        .as_ref()
                        .is_some_and(|st| step_text(st) != chosen_text)
                })
                .collect();
            siblings.sort_by_key(|s| s.gen_index);
            let prefix = if node.depth > 1 {
                path_steps(tree, parent)
            } else {
                Vec::new()
            };
            let prompt = pair_prompt(question, &prefix);
            for s in siblings.into_iter().take(cap) {
                out.push(PreferencePair {
                    prompt: prompt.clone(),
                    chosen: chosen.clone(),
                    rejected: s.step.clone().expect("non-root"),
                    parent_id: parent,
                    chosen_id: id,
                    rejected_id: s.id,
                });
            }
        }
    }
    out
}
