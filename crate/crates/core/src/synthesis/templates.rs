//! Question templates, the referent-substitution combiner, and the textual
//! decomposition that recovers sub-questions from a combined question.
//!
//! Questions are built from node profiles with two fixed connectives:
//! " on the " attaches a terminal subject to its containing entity, and
//! " near the " attaches one intermediary to the next. A whole-image tail
//! adds nothing. Keeping the connectives fixed is what makes combination a
//! pure string substitution and decomposition a greedy peel.

use serde::{Deserialize, Serialize};

use super::{NodeKind, NodeProfile};
use crate::tools::ToolKind;

/// Connective between a terminal subject and its container.
pub const ON: &str = " on the ";
/// Connective between consecutive intermediaries.
pub const NEAR: &str = " near the ";

/// What the tail of an edge contributes to the question.
#[derive(Debug, Clone, Copy)]
pub enum TailCtx<'a> {
    /// Tail is the whole image: no context suffix.
    Whole,
    /// Tail is an intermediary the head sits near.
    Middle(&'a NodeProfile),
    /// Tail is the entity the terminal subject sits on.
    Terminal(&'a NodeProfile),
}

/// How a node reads inside a question, without a leading article.
pub fn desc_core(profile: &NodeProfile) -> String {
    match profile.kind {
        NodeKind::SingleEntity => {
            let label = profile.label.as_deref().unwrap_or("object");
            match profile.color.as_deref() {
                Some(color) => format!("{color} {label}"),
                None => label.to_string(),
            }
        }
        NodeKind::EntityGroup => profile
            .caption
            .clone()
            .unwrap_or_else(|| "group".to_string()),
        NodeKind::WholeImage => "whole image".to_string(),
    }
}

fn ctx_suffix(tail: &TailCtx<'_>) -> String {
    match tail {
        TailCtx::Whole => String::new(),
        TailCtx::Middle(p) => format!("{NEAR}{}", desc_core(p)),
        TailCtx::Terminal(p) => format!("{ON}{}", desc_core(p)),
    }
}

/// The question asked when `tool` runs on the edge `head -> tail`.
pub fn edge_question(head: &NodeProfile, tail: &TailCtx<'_>, tool: ToolKind) -> String {
    let ctx = ctx_suffix(tail);
    match tool {
        ToolKind::Grounding => format!("Where is the {}{}?", desc_core(head), ctx),
        ToolKind::Highlight => {
            let label = head.label.as_deref().unwrap_or("object");
            format!("Which ones are the {label}s{ctx}?")
        }
        ToolKind::Ocr => format!("What is the text on the {}{}?", desc_core(head), ctx),
        ToolKind::Answer => match head.kind {
            NodeKind::EntityGroup => {
                let label = head.label.as_deref().unwrap_or("object");
                format!("How many {label}s are there{ctx}?")
            }
            _ => {
                let label = head.label.as_deref().unwrap_or("object");
                format!("What color is the {label}{ctx}?")
            }
        },
    }
}

/// The phrase a locating tool is pointed at.
pub fn grounding_target(head: &NodeProfile) -> String {
    format!("the {}", desc_core(head))
}

/// The phrase the counting realization highlights: the group's member label,
/// alone, so nothing else in the view matches it.
pub fn highlight_target(head: &NodeProfile) -> String {
    format!("the {}s", head.label.as_deref().unwrap_or("object"))
}

/// Splices a locating question into the question that depends on it.
///
/// `outer` must be a "Where is the ...?" question. Its full referent replaces
/// the first occurrence of its core referent (the part before any connective)
/// inside `inner`. Returns `None` when `outer` has the wrong shape or `inner`
/// never mentions the core referent.
pub fn combine(inner: &str, outer: &str) -> Option<String> {
    let ref_full = outer.strip_prefix("Where is ")?.strip_suffix('?')?;
    if !ref_full.starts_with("the ") {
        return None;
    }
    let cut = [ref_full.find(NEAR), ref_full.find(ON)]
        .into_iter()
        .flatten()
        .min();
    let ref_core = match cut {
        Some(i) => &ref_full[..i],
        None => ref_full,
    };
    if !inner.contains(ref_core) {
        return None;
    }
    Some(inner.replacen(ref_core, ref_full, 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    Text,
    Color,
    Counting,
}

impl TerminalKind {
    pub fn name(&self) -> &'static str {
        match self {
            TerminalKind::Text => "text",
            TerminalKind::Color => "color",
            TerminalKind::Counting => "counting",
        }
    }
}

/// A combined question peeled back into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub terminal: TerminalKind,
    /// Plural subject of a counting question.
    pub subject_plural: Option<String>,
    /// Referents in chain order, each starting with "the". For text and
    /// color questions the first is the terminal subject; for counting the
    /// list holds only the locating referents.
    pub referents: Vec<String>,
    /// The per-edge questions in chain order, terminal first.
    pub edge_questions: Vec<String>,
}

/// Splits "the A on the B near the C" into referents. The first connective
/// must be `first` and the rest the intermediary one; any other arrangement
/// is not a question this module built. Text and color questions carry the
/// subject in the chain, so their first connective is the terminal one;
/// counting questions peel the subject off beforehand and join straight
/// into the intermediaries.
fn split_referent_chain(chain: &str, first: &str) -> Option<Vec<String>> {
    if !chain.starts_with("the ") {
        return None;
    }
    let mut referents = Vec::new();
    let mut rest = chain.to_string();
    loop {
        let near = rest.find(NEAR);
        let on = rest.find(ON);
        let cut = [near, on].into_iter().flatten().min();
        match cut {
            None => {
                referents.push(rest);
                break;
            }
            Some(i) => {
                let expected = if referents.is_empty() { first } else { NEAR };
                if !rest[i..].starts_with(expected) {
                    return None;
                }
                referents.push(rest[..i].to_string());
                rest = format!("the {}", &rest[i + expected.len()..]);
            }
        }
    }
    Some(referents)
}

fn rebuild_locating_questions(locating: &[String]) -> Vec<String> {
    let mut questions = Vec::with_capacity(locating.len());
    for (i, referent) in locating.iter().enumerate() {
        match locating.get(i + 1) {
            Some(next) => {
                let next_core = next.strip_prefix("the ").unwrap_or(next);
                questions.push(format!("Where is {referent}{NEAR}{next_core}?"));
            }
            None => questions.push(format!("Where is {referent}?")),
        }
    }
    questions
}

/// Recovers the terminal kind, referent sequence, and per-edge questions
/// from a combined question. Returns `None` for shapes this module does
/// not produce.
pub fn decompose(question: &str) -> Option<Decomposition> {
    let body = question.strip_suffix('?')?;

    if let Some(chain) = body.strip_prefix("What is the text on ") {
        let referents = split_referent_chain(chain, ON)?;
        let mut edge_questions = vec![match referents.get(1) {
            Some(tail) => {
                let tail_core = tail.strip_prefix("the ")?;
                format!("What is the text on {}{ON}{tail_core}?", referents[0])
            }
            None => format!("What is the text on {}?", referents[0]),
        }];
        edge_questions.extend(rebuild_locating_questions(&referents[1..]));
        return Some(Decomposition {
            terminal: TerminalKind::Text,
            subject_plural: None,
            referents,
            edge_questions,
        });
    }

    if let Some(chain) = body.strip_prefix("What color is ") {
        let referents = split_referent_chain(chain, ON)?;
        let mut edge_questions = vec![match referents.get(1) {
            Some(tail) => {
                let tail_core = tail.strip_prefix("the ")?;
                format!("What color is {}{ON}{tail_core}?", referents[0])
            }
            None => format!("What color is {}?", referents[0]),
        }];
        edge_questions.extend(rebuild_locating_questions(&referents[1..]));
        return Some(Decomposition {
            terminal: TerminalKind::Color,
            subject_plural: None,
            referents,
            edge_questions,
        });
    }

    if let Some(rest) = body.strip_prefix("How many ") {
        let split = rest.find(" are there")?;
        let subject_plural = rest[..split].to_string();
        let ctx = &rest[split + " are there".len()..];
        let referents = if ctx.is_empty() {
            Vec::new()
        } else {
            let chain = ctx.strip_prefix(" on ")?;
            split_referent_chain(chain, NEAR)?
        };
        let mut edge_questions = vec![match referents.first() {
            Some(first) => format!("How many {subject_plural} are there on {first}?"),
            None => format!("How many {subject_plural} are there?"),
        }];
        edge_questions.extend(rebuild_locating_questions(&referents));
        return Some(Decomposition {
            terminal: TerminalKind::Counting,
            subject_plural: Some(subject_plural),
            referents,
            edge_questions,
        });
    }

    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(
        kind: NodeKind,
        label: Option<&str>,
        color: Option<&str>,
        text: &[&str],
    ) -> NodeProfile {
        NodeProfile {
            kind,
            label: label.map(Into::into),
            color: color.map(Into::into),
            text: text.iter().map(|s| s.to_string()).collect(),
            member_count: 0,
            caption: None,
        }
    }

    #[test]
    fn grounding_question_for_a_whole_image_tail() {
        let sign = profile(NodeKind::SingleEntity, Some("sign"), None, &["STOP"]);
        let q = edge_question(&sign, &TailCtx::Whole, ToolKind::Grounding);
        assert_eq!(q, "Where is the sign?");
        assert_eq!(grounding_target(&sign), "the sign");
    }

    #[test]
    fn context_suffixes_name_the_tail() {
        let cup = profile(NodeKind::SingleEntity, Some("cup"), Some("red"), &[]);
        let table = profile(NodeKind::SingleEntity, Some("table"), None, &[]);
        let shelf = profile(NodeKind::SingleEntity, Some("shelf"), Some("brown"), &[]);
        assert_eq!(
            edge_question(&cup, &TailCtx::Terminal(&table), ToolKind::Answer),
            "What color is the cup on the table?"
        );
        assert_eq!(
            edge_question(&table, &TailCtx::Middle(&shelf), ToolKind::Grounding),
            "Where is the table near the brown shelf?"
        );
        assert_eq!(
            edge_question(&cup, &TailCtx::Whole, ToolKind::Ocr),
            "What is the text on the red cup?"
        );
    }

    #[test]
    fn color_questions_never_leak_the_color() {
        let cup = profile(NodeKind::SingleEntity, Some("cup"), Some("red"), &[]);
        let q = edge_question(&cup, &TailCtx::Whole, ToolKind::Answer);
        assert_eq!(q, "What color is the cup?");
        assert!(!q.contains("red"));
    }

    #[test]
    fn counting_and_highlight_questions_use_the_member_label() {
        let group = NodeProfile {
            kind: NodeKind::EntityGroup,
            label: Some("person".into()),
            color: None,
            text: vec![],
            member_count: 4,
            caption: Some("a group of 4 persons".into()),
        };
        let bench = profile(NodeKind::SingleEntity, Some("bench"), None, &[]);
        assert_eq!(
            edge_question(&group, &TailCtx::Terminal(&bench), ToolKind::Answer),
            "How many persons are there on the bench?"
        );
        assert_eq!(
            edge_question(&group, &TailCtx::Whole, ToolKind::Highlight),
            "Which ones are the persons?"
        );
        assert_eq!(highlight_target(&group), "the persons");
    }

    #[test]
    fn combine_splices_the_full_referent() {
        let combined = combine(
            "What is the text on the sign?",
            "Where is the sign near the door?",
        )
        .unwrap();
        assert_eq!(combined, "What is the text on the sign near the door?");
    }

    #[test]
    fn combine_with_a_plain_referent_is_identity() {
        let combined = combine("What color is the cup on the table?", "Where is the table?");
        assert_eq!(
            combined.as_deref(),
            Some("What color is the cup on the table?")
        );
    }

    #[test]
    fn combine_rejects_foreign_shapes() {
        assert!(combine("What color is the cup?", "How big is the cup?").is_none());
        assert!(combine("What color is the cup?", "Where is the lamp?").is_none());
    }

    #[test]
    fn decompose_recovers_a_three_node_text_chain() {
        let d = decompose("What is the text on the sign on the door near the shelf?").unwrap();
        assert_eq!(d.terminal, TerminalKind::Text);
        assert_eq!(d.referents, vec!["the sign", "the door", "the shelf"]);
        assert_eq!(
            d.edge_questions,
            vec![
                "What is the text on the sign on the door?",
                "Where is the door near the shelf?",
                "Where is the shelf?",
            ]
        );
    }

    #[test]
    fn decompose_handles_single_edge_questions() {
        let d = decompose("What color is the cup?").unwrap();
        assert_eq!(d.terminal, TerminalKind::Color);
        assert_eq!(d.referents, vec!["the cup"]);
        assert_eq!(d.edge_questions, vec!["What color is the cup?"]);

        let d = decompose("How many persons are there?").unwrap();
        assert_eq!(d.terminal, TerminalKind::Counting);
        assert_eq!(d.subject_plural.as_deref(), Some("persons"));
        assert!(d.referents.is_empty());
        assert_eq!(d.edge_questions, vec!["How many persons are there?"]);
    }

    #[test]
    fn decompose_counting_with_context() {
        let d = decompose("How many persons are there on the bench near the window?").unwrap();
        assert_eq!(d.referents, vec!["the bench", "the window"]);
        assert_eq!(
            d.edge_questions,
            vec![
                "How many persons are there on the bench?",
                "Where is the bench near the window?",
                "Where is the window?",
            ]
        );
    }

    #[test]
    fn decompose_rejects_unknown_shapes() {
        assert!(decompose("Why is the sky blue?").is_none());
        assert!(decompose("What is the text on a sign?").is_none());
        // An intermediary connective cannot come before the terminal one.
        assert!(decompose("What color is the cup near the table on the shelf?").is_none());
    }

    #[test]
    fn fold_of_decomposed_questions_restores_the_original() {
        let original = "What is the text on the sign on the door near the shelf?";
        let d = decompose(original).unwrap();
        let mut folded = d.edge_questions[0].clone();
        for outer in &d.edge_questions[1..] {
            folded = combine(&folded, outer).unwrap();
        }
        assert_eq!(folded, original);
    }
}
