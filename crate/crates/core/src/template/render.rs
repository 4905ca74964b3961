use super::{
    ReasoningStep, RevisionResult, StructuredResponse, Tag, TemplateError, FINAL_ANSWER_MARKER,
};

/// True if `rest` (the text right after a `<`) would be read as a tag.
pub(super) fn starts_tag(rest: &str) -> Option<(Tag, bool, usize)> {
    let (closing, name_start) = if rest.starts_with('/') {
        (true, 1)
    } else {
        (false, 0)
    };
    let tail = &rest[name_start..];
    Tag::ALL.into_iter().find_map(|tag| {
        let name = tag.name();
        (tail.starts_with(name) && tail[name.len()..].starts_with('>'))
            .then(|| (tag, closing, name_start + name.len() + 1))
    })
}

/// Backslash-escapes backslashes and anything that would read as a tag.
/// `inline` fields (fact items, the final answer) also escape newlines.
fn escape(text: &str, inline: bool) -> String {
    let mut out = String::with_capacity(text.len());
    for (i, c) in text.char_indices() {
        match c {
            '\\' => out.push_str("\\\\"),
            '<' if starts_tag(&text[i + 1..]).is_some() => out.push_str("\\<"),
            '\n' if inline => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn field(out: &mut String, tag: Tag, body: &str) {
    out.push('<');
    out.push_str(tag.name());
    out.push('>');
    out.push_str(&escape(body, false));
    out.push_str("</");
    out.push_str(tag.name());
    out.push_str(">\n");
}

/// Canonical text of one step, tags in fixed order, LF line endings.
pub fn serialize_step(step: &ReasoningStep) -> Result<String, TemplateError> {
    step.validate()?;
    let mut out = String::new();
    field(&mut out, Tag::Query, &step.query);
    out.push_str("<FACTS>\n");
    for fact in &step.facts {
        out.push_str("- ");
        out.push_str(&escape(fact, true));
        out.push('\n');
    }
    out.push_str("</FACTS>\n");
    field(&mut out, Tag::Rule, &step.rule);
    field(&mut out, Tag::Revision, &step.revision);
    let revision_result = match &step.revision_result {
        RevisionResult::Retained => "RETAINED".to_string(),
        RevisionResult::Revised(text) => format!("REVISED: {text}"),
    };
    field(&mut out, Tag::RevisionResult, &revision_result);
    field(&mut out, Tag::ReasoningResult, &step.reasoning_result);
    Ok(out)
}

/// Steps separated by blank lines, then the final answer line if any.
pub fn render_response(
    steps: &[ReasoningStep],
    final_answer: Option<&str>,
) -> Result<String, TemplateError> {
    let mut blocks = Vec::with_capacity(steps.len());
    for step in steps {
        blocks.push(serialize_step(step)?);
    }
    let mut out = blocks.join("\n");
    if let Some(answer) = final_answer {
        let answer = answer.trim();
        if answer.is_empty() || answer.contains('\n') {
            return Err(TemplateError::InvalidFinalAnswer);
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(FINAL_ANSWER_MARKER);
        out.push(' ');
        out.push_str(&escape(answer, true));
        out.push('\n');
    }
    Ok(out)
}

pub fn serialize_response(response: &StructuredResponse) -> Result<String, TemplateError> {
    render_response(&response.steps, response.final_answer.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step() -> ReasoningStep {
        ReasoningStep {
            step_index: 0,
            query: "Is Max a yumpus?".into(),
            facts: vec!["A".into(), "B".into()],
            rule: "Every wumpus is a yumpus.".into(),
            revision: "Both premises are stated in the context.".into(),
            revision_result: RevisionResult::Retained,
            reasoning_result: "yumpus(max)".into(),
        }
    }

    #[test]
    fn facts_block_preserves_order() {
        let text = serialize_step(&step()).unwrap();
        assert!(text.contains("<FACTS>\n- A\n- B\n</FACTS>\n"), "{text}");
        assert!(text.starts_with("<QUERY>Is Max a yumpus?</QUERY>\n"));
    }

    #[test]
    fn equal_steps_render_identically() {
        assert_eq!(
            serialize_step(&step()).unwrap(),
            serialize_step(&step().clone()).unwrap()
        );
    }

    #[test]
    fn empty_required_field_is_rejected() {
        let mut s = step();
        s.rule = "  ".into();
        assert_eq!(
            serialize_step(&s),
            Err(TemplateError::InvariantViolation {
                tag: Tag::Rule,
                step_index: 0
            })
        );
    }

    #[test]
    fn tag_text_and_backslashes_are_escaped() {
        assert_eq!(escape("a <RULE> b \\ c", false), "a \\<RULE> b \\\\ c");
        assert_eq!(escape("x </FACTS> <RULEZ>", false), "x \\</FACTS> <RULEZ>");
        assert_eq!(escape("two\nlines", true), "two\\nlines");
    }
}
