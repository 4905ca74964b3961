//! Fictional vocabulary and the fixed sentence shapes used to verbalize
//! symbolic facts and rules.

use crate::kernel::{Atom, Fact, Rule};

pub const NOUNS: &[&str] = &[
    "wumpus", "yumpus", "zumpus", "dumpus", "rompus", "numpus", "tumpus", "vumpus", "impus",
    "jompus", "gorpus", "shumpus", "lempus", "sterpus", "grimpus", "lorpus", "brimpus", "fompus",
    "quimpus", "hompus", "kerpus", "plompus", "snerpus", "twimpus",
];

pub const ADJECTIVES: &[&str] = &[
    "dull",
    "shy",
    "bright",
    "sour",
    "hot",
    "cold",
    "small",
    "large",
    "red",
    "blue",
    "happy",
    "mean",
    "kind",
    "metallic",
    "wooden",
    "luminous",
    "opaque",
    "transparent",
    "aggressive",
    "floral",
    "fruity",
    "spicy",
    "earthy",
    "feisty",
    "nervous",
    "sweet",
    "bitter",
    "liquid",
];

pub const ENTITIES: &[&str] = &[
    "max", "sally", "fae", "rex", "sam", "polly", "wren", "stella", "alex", "bob", "anne", "gary",
    "erin", "fiona",
];

fn is_noun(predicate: &str) -> bool {
    NOUNS.contains(&predicate)
}

fn article(noun: &str) -> &'static str {
    if noun.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// "is a wumpus" / "is dull".
fn predication(predicate: &str) -> String {
    if is_noun(predicate) {
        format!("is {} {predicate}", article(predicate))
    } else {
        format!("is {predicate}")
    }
}

/// Verbalizes a unary fact: `wumpus(max)` becomes "Max is a wumpus.".
pub fn fact_sentence(fact: &Fact) -> String {
    let atom = fact.atom();
    let subject = atom
        .args
        .first()
        .map(|t| capitalize(t.name()))
        .unwrap_or_else(|| "It".to_string());
    format!("{subject} {}.", predication(&atom.predicate))
}

/// The clause form of a fact for questions: "Max is a wumpus".
pub fn fact_clause(fact: &Fact) -> String {
    fact_sentence(fact).trim_end_matches('.').to_string()
}

/// Verbalizes a unary rule. Single-premise noun rules read "Every wumpus
/// is a yumpus."; anything else reads "If something is A and not B then it
/// is C.".
pub fn rule_sentence(rule: &Rule) -> String {
    if let ([body], []) = (rule.body_pos.as_slice(), rule.body_neg.as_slice()) {
        if is_noun(&body.predicate) {
            return format!(
                "Every {} {}.",
                body.predicate,
                predication(&rule.head.predicate)
            );
        }
    }
    let mut conds: Vec<String> = rule
        .body_pos
        .iter()
        .map(|a| predication(&a.predicate))
        .collect();
    conds.extend(
        rule.body_neg
            .iter()
            .map(|a: &Atom| predication(&a.predicate).replacen("is ", "is not ", 1)),
    );
    format!(
        "If something {} then it {}.",
        conds.join(" and "),
        predication(&rule.head.predicate)
    )
}
