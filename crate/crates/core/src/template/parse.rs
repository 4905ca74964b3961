//! Hand-rolled scanner for the step template. Strict mode fails on the
//! first defect; lenient mode keeps every well-formed block and reports
//! the rest.

use super::render::starts_tag;
use super::{
    ParseError, ReasoningStep, RevisionResult, StructuredResponse, Tag, FINAL_ANSWER_MARKER,
};

enum Event {
    Open(Tag),
    Close(Tag),
    Text(String),
}

/// Splits raw text into tag and text events. Escapes are kept verbatim in
/// text so bodies can be unescaped after trimming.
fn events(raw: &str) -> Vec<Event> {
    let mut out = Vec::new();
    let mut text = String::new();
    let mut i = 0;
    while i < raw.len() {
        let c = raw[i..].chars().next().expect("char boundary");
        if c == '\\' {
            text.push(c);
            i += 1;
            if let Some(next) = raw[i..].chars().next() {
                text.push(next);
                i += next.len_utf8();
            }
            continue;
        }
        if c == '<' {
            if let Some((tag, closing, len)) = starts_tag(&raw[i + 1..]) {
                if !text.is_empty() {
                    out.push(Event::Text(std::mem::take(&mut text)));
                }
                out.push(if closing {
                    Event::Close(tag)
                } else {
                    Event::Open(tag)
                });
                i += 1 + len;
                continue;
            }
        }
        text.push(c);
        i += c.len_utf8();
    }
    if !text.is_empty() {
        out.push(Event::Text(text));
    }
    out
}

/// Byte range of every unescaped tag in `raw`, in order, with its tag and
/// whether it closes.
pub fn tag_spans(raw: &str) -> Vec<(Tag, bool, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let c = raw[i..].chars().next().expect("char boundary");
        if c == '\\' {
            i += 1;
            if let Some(next) = raw[i..].chars().next() {
                i += next.len_utf8();
            }
            continue;
        }
        if c == '<' {
            if let Some((tag, closing, len)) = starts_tag(&raw[i + 1..]) {
                out.push((tag, closing, i..i + 1 + len));
                i += 1 + len;
                continue;
            }
        }
        i += c.len_utf8();
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('<') => out.push('<'),
            Some('n') => out.push('\n'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

struct Reporter {
    lenient: bool,
    defects: Vec<ParseError>,
}

impl Reporter {
    fn report(&mut self, e: ParseError) -> Result<(), ParseError> {
        if self.lenient {
            self.defects.push(e);
            Ok(())
        } else {
            Err(e)
        }
    }
}

struct Scan {
    elements: Vec<(Tag, String)>,
    final_answer: Option<String>,
}

fn scan(raw: &str, rep: &mut Reporter) -> Result<Scan, ParseError> {
    let mut elements: Vec<(Tag, String)> = Vec::new();
    let mut open: Option<(Tag, String)> = None;
    let mut final_answer: Option<(String, usize)> = None;
    let step_of = |elements: &Vec<(Tag, String)>| {
        elements
            .iter()
            .filter(|(t, _)| *t == Tag::Query)
            .count()
            .saturating_sub(1)
    };

    let mut outside =
        |text: &str, elements: &Vec<(Tag, String)>, rep: &mut Reporter| -> Result<(), ParseError> {
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                if let Some(answer) = line.strip_prefix(FINAL_ANSWER_MARKER) {
                    if final_answer.is_some() {
                        rep.report(ParseError::TrailingContent)?;
                        continue;
                    }
                    final_answer = Some((unescape(answer.trim()), elements.len()));
                } else {
                    rep.report(ParseError::StrayText(line.to_string()))?;
                }
            }
            Ok(())
        };

    for event in events(raw) {
        match (event, open.take()) {
            (Event::Open(tag), None) => open = Some((tag, String::new())),
            (Event::Open(tag), Some((prev, _))) => {
                rep.report(ParseError::UnclosedTag {
                    tag: prev,
                    step_index: step_of(&elements),
                })?;
                open = Some((tag, String::new()));
            }
            (Event::Close(tag), Some((prev, body))) if tag == prev => elements.push((tag, body)),
            (Event::Close(_), Some((prev, _))) => {
                rep.report(ParseError::UnclosedTag {
                    tag: prev,
                    step_index: step_of(&elements),
                })?;
            }
            (Event::Close(tag), None) => {
                rep.report(ParseError::UnexpectedClose {
                    tag,
                    step_index: step_of(&elements),
                })?;
            }
            (Event::Text(t), Some((tag, mut body))) => {
                body.push_str(&t);
                open = Some((tag, body));
            }
            (Event::Text(t), None) => outside(&t, &elements, rep)?,
        }
    }
    if let Some((tag, _)) = open {
        rep.report(ParseError::UnclosedTag {
            tag,
            step_index: step_of(&elements),
        })?;
    }

    let final_answer = match final_answer {
        Some((_, at)) if at < elements.len() => {
            rep.report(ParseError::TrailingContent)?;
            None
        }
        Some((answer, _)) => Some(answer),
        None => None,
    };
    Ok(Scan {
        elements,
        final_answer,
    })
}

/// Groups elements into blocks that each start at a QUERY; elements before
/// the first QUERY form a headless block.
fn blocks(elements: Vec<(Tag, String)>) -> Vec<Vec<(Tag, String)>> {
    let mut out: Vec<Vec<(Tag, String)>> = Vec::new();
    for el in elements {
        if el.0 == Tag::Query || out.is_empty() {
            out.push(Vec::new());
        }
        out.last_mut().expect("non-empty").push(el);
    }
    out
}

fn check_order(block: &[(Tag, String)], step_index: usize) -> Result<(), ParseError> {
    for (j, expected) in Tag::ALL.into_iter().enumerate() {
        match block.get(j) {
            Some((found, _)) if *found == expected => {}
            Some((found, _)) if block.iter().any(|(t, _)| *t == expected) => {
                return Err(ParseError::TagOrderViolation {
                    step_index,
                    expected,
                    found: *found,
                });
            }
            _ => {
                return Err(ParseError::MissingTag {
                    tag: expected,
                    step_index,
                })
            }
        }
    }
    if let Some((extra, _)) = block.get(Tag::ALL.len()) {
        return Err(ParseError::TagOrderViolation {
            step_index,
            expected: Tag::Query,
            found: *extra,
        });
    }
    Ok(())
}

fn required(body: &str, tag: Tag, step_index: usize) -> Result<String, ParseError> {
    let text = unescape(body.trim());
    if text.trim().is_empty() {
        return Err(ParseError::EmptyField { tag, step_index });
    }
    Ok(text)
}

fn build_step(block: &[(Tag, String)], step_index: usize) -> Result<ReasoningStep, ParseError> {
    check_order(block, step_index)?;
    let body = |tag: Tag| block[tag.position()].1.as_str();

    let mut facts = Vec::new();
    for line in body(Tag::Facts).lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(item) = line.strip_prefix('-') else {
            return Err(ParseError::MalformedFacts {
                step_index,
                line: line.to_string(),
            });
        };
        facts.push(required(item, Tag::Facts, step_index)?);
    }
    if facts.is_empty() {
        return Err(ParseError::EmptyField {
            tag: Tag::Facts,
            step_index,
        });
    }

    let rr = body(Tag::RevisionResult).trim();
    let revision_result = if rr == "RETAINED" {
        RevisionResult::Retained
    } else if let Some(text) = rr.strip_prefix("REVISED:") {
        RevisionResult::Revised(required(text, Tag::RevisionResult, step_index)?)
    } else if rr.is_empty() {
        return Err(ParseError::EmptyField {
            tag: Tag::RevisionResult,
            step_index,
        });
    } else {
        return Err(ParseError::InvalidRevisionResult {
            step_index,
            found: rr.to_string(),
        });
    };

    Ok(ReasoningStep {
        step_index,
        query: required(body(Tag::Query), Tag::Query, step_index)?,
        facts,
        rule: required(body(Tag::Rule), Tag::Rule, step_index)?,
        revision: unescape(body(Tag::Revision).trim()),
        revision_result,
        reasoning_result: required(body(Tag::ReasoningResult), Tag::ReasoningResult, step_index)?,
    })
}

fn strict(raw: &str) -> Result<StructuredResponse, ParseError> {
    let mut rep = Reporter {
        lenient: false,
        defects: Vec::new(),
    };
    let scan = scan(raw, &mut rep)?;
    let steps = blocks(scan.elements)
        .iter()
        .enumerate()
        .map(|(i, b)| build_step(b, i))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(answer) = &scan.final_answer {
        if answer.trim().is_empty() {
            return Err(ParseError::NoFinalAnswer);
        }
    }
    Ok(StructuredResponse {
        steps,
        final_answer: scan.final_answer,
        raw_text: raw.to_string(),
    })
}

/// Strict parse of a complete response: at least one step and a
/// `FINAL ANSWER:` line.
pub fn parse_response(raw: &str) -> Result<StructuredResponse, ParseError> {
    let response = strict(raw)?;
    if response.steps.is_empty() {
        return Err(if response.final_answer.is_some() {
            ParseError::NoSteps
        } else {
            ParseError::NoFinalAnswer
        });
    }
    if response.final_answer.is_none() {
        return Err(ParseError::NoFinalAnswer);
    }
    Ok(response)
}

/// Strict parse of one or more steps where the final answer is optional,
/// as produced for a single candidate step during search.
pub fn parse_steps(raw: &str) -> Result<StructuredResponse, ParseError> {
    let response = strict(raw)?;
    if response.steps.is_empty() {
        return Err(ParseError::NoSteps);
    }
    Ok(response)
}

/// True iff `raw` is a complete response that parses strictly.
pub fn conforms_strictly(raw: &str) -> bool {
    parse_response(raw).is_ok_and(|r| r.steps.iter().all(|s| s.validate().is_ok()))
}

/// Diagnostics-only parse: keeps every block that builds and reports the
/// rest. Kept steps are renumbered contiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LenientParse {
    pub steps: Vec<ReasoningStep>,
    pub final_answer: Option<String>,
    pub defects: Vec<ParseError>,
}

pub fn parse_lenient(raw: &str) -> LenientParse {
    let mut rep = Reporter {
        lenient: true,
        defects: Vec::new(),
    };
    let scan = scan(raw, &mut rep).expect("lenient scanning does not fail");
    let mut steps = Vec::new();
    for (i, block) in blocks(scan.elements).iter().enumerate() {
        match build_step(block, i) {
            Ok(step) => steps.push(step.at_index(steps.len())),
            Err(e) => rep.defects.push(e),
        }
    }
    if scan
        .final_answer
        .as_deref()
        .is_none_or(|a| a.trim().is_empty())
    {
        rep.defects.push(ParseError::NoFinalAnswer);
    }
    LenientParse {
        steps,
        final_answer: scan.final_answer.filter(|a| !a.trim().is_empty()),
        defects: rep.defects,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::render_response;

    const BLOCK: &str = "<QUERY>Is Max a yumpus?</QUERY>
<FACTS>
- Max is a wumpus.
</FACTS>
<RULE>Every wumpus is a yumpus.</RULE>
<REVISION>The premises suffice.</REVISION>
<REVISION_RESULT>RETAINED</REVISION_RESULT>
<REASONING_RESULT>Max is a yumpus.</REASONING_RESULT>
";

    #[test]
    fn single_block_with_answer() {
        let r = parse_response(&format!("{BLOCK}\nFINAL ANSWER: true\n")).unwrap();
        assert_eq!(r.steps.len(), 1);
        assert_eq!(r.final_answer.as_deref(), Some("true"));
        assert_eq!(r.steps[0].facts, vec!["Max is a wumpus."]);
    }

    #[test]
    fn missing_rule_is_reported() {
        let raw =
            BLOCK.replace("<RULE>Every wumpus is a yumpus.</RULE>\n", "") + "FINAL ANSWER: true";
        assert_eq!(
            parse_response(&raw).unwrap_err(),
            ParseError::MissingTag {
                tag: Tag::Rule,
                step_index: 0
            }
        );
    }

    #[test]
    fn reordered_fields_violate_order() {
        let raw = BLOCK.replace(
            "<FACTS>\n- Max is a wumpus.\n</FACTS>\n<RULE>Every wumpus is a yumpus.</RULE>",
            "<RULE>Every wumpus is a yumpus.</RULE>\n<FACTS>\n- Max is a wumpus.\n</FACTS>",
        ) + "FINAL ANSWER: true";
        assert!(matches!(
            parse_response(&raw),
            Err(ParseError::TagOrderViolation {
                expected: Tag::Facts,
                found: Tag::Rule,
                ..
            })
        ));
    }

    #[test]
    fn empty_input_and_missing_answer() {
        assert_eq!(parse_response(""), Err(ParseError::NoFinalAnswer));
        assert_eq!(parse_response(BLOCK), Err(ParseError::NoFinalAnswer));
        assert!(parse_steps(BLOCK).is_ok());
        assert!(!conforms_strictly(""));
    }

    #[test]
    fn unclosed_and_stray() {
        let raw = BLOCK.replace("</RULE>", "") + "FINAL ANSWER: true";
        assert!(matches!(
            parse_response(&raw),
            Err(ParseError::UnclosedTag { tag: Tag::Rule, .. })
        ));
        let raw = format!("Step 1:\n{BLOCK}FINAL ANSWER: true");
        assert_eq!(
            parse_response(&raw),
            Err(ParseError::StrayText("Step 1:".into()))
        );
    }

    #[test]
    fn answer_must_come_last() {
        let raw = format!("FINAL ANSWER: true\n{BLOCK}");
        assert_eq!(parse_response(&raw), Err(ParseError::TrailingContent));
    }

    #[test]
    fn revision_result_grammar() {
        let raw = BLOCK.replace("RETAINED", "REVISED: use the second rule") + "FINAL ANSWER: no";
        let r = parse_response(&raw).unwrap();
        assert_eq!(
            r.steps[0].revision_result,
            RevisionResult::Revised("use the second rule".into())
        );
        let raw = BLOCK.replace("RETAINED", "KEPT") + "FINAL ANSWER: no";
        assert!(matches!(
            parse_response(&raw),
            Err(ParseError::InvalidRevisionResult { .. })
        ));
        let raw = BLOCK.replace("RETAINED", "REVISED:") + "FINAL ANSWER: no";
        assert!(matches!(
            parse_response(&raw),
            Err(ParseError::EmptyField {
                tag: Tag::RevisionResult,
                ..
            })
        ));
    }

    #[test]
    fn escaped_tags_round_trip() {
        let mut step = parse_steps(BLOCK).unwrap().steps.remove(0);
        step.rule = "quote <RULE> and </FACTS> and a \\ backslash".into();
        step.facts = vec!["line one\nline two".into(), "- dash".into()];
        let text = render_response(std::slice::from_ref(&step), Some("true")).unwrap();
        let back = parse_response(&text).unwrap();
        assert_eq!(back.steps[0], step);
    }

    #[test]
    fn lenient_mode_collects_good_blocks() {
        let bad = BLOCK.replace("<RULE>Every wumpus is a yumpus.</RULE>\n", "");
        let raw = format!("{bad}\n{BLOCK}\nFINAL ANSWER: yes");
        let lenient = parse_lenient(&raw);
        assert_eq!(lenient.steps.len(), 1);
        assert_eq!(lenient.steps[0].step_index, 0);
        assert_eq!(lenient.final_answer.as_deref(), Some("yes"));
        assert_eq!(
            lenient.defects,
            vec![ParseError::MissingTag {
                tag: Tag::Rule,
                step_index: 0
            }]
        );
    }
}
