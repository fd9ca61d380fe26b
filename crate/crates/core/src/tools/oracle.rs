//! Deterministic tool backends computed directly from scene ground truth.
//!
//! The oracle lets the whole engine run and be tested without any model in
//! the loop: matching is substring containment over labels and colors,
//! reading is the scene's text fields, and answering resolves a referent
//! from the view's annotations before looking up the asked-for attribute.

use crate::canvas::{add_highlights, add_mark, AnnotationKind, ViewState};
use crate::evalharness::metrics::normalize;
use crate::scene::{BBox, Entity, Scene};
use crate::tools::{ToolError, ToolInvocation, ToolKind, ToolOutput};

/// A mark or clipped entity covering at least this fraction of the viewport
/// no longer picks anything out of it.
const SELECTIVE_COVERAGE: f64 = 0.99;

/// Entities the phrase refers to, in a deterministic order: larger first,
/// ties broken by id.
///
/// An entity matches when its box intersects the viewport, its label occurs
/// in the phrase (case-insensitive), and, if the phrase mentions any known
/// color, that entity's color occurs in the phrase too.
pub fn oracle_match<'a>(scene: &'a Scene, view: &ViewState, phrase: &str) -> Vec<&'a Entity> {
    let phrase = phrase.to_lowercase();
    let phrase_names_color = crate::render::NAMED_COLORS
        .iter()
        .any(|(name, _)| phrase.contains(name));
    let mut matches: Vec<&Entity> = scene
        .entities
        .iter()
        .filter(|e| e.bbox.intersects(&view.viewport))
        .filter(|e| phrase.contains(&e.label.to_lowercase()))
        .filter(|e| {
            if !phrase_names_color {
                return true;
            }
            e.color
                .as_deref()
                .is_some_and(|c| phrase.contains(&c.to_lowercase()))
        })
        .collect();
    matches.sort_by(|a, b| {
        b.bbox
            .area()
            .partial_cmp(&a.bbox.area())
            .expect("entity areas are finite")
            .then_with(|| a.id.cmp(&b.id))
    });
    matches
}

/// All text lines visible in the view: entities intersecting the viewport,
/// in scene order, each contributing its lines in order.
pub fn visible_text(scene: &Scene, view: &ViewState) -> Vec<String> {
    scene
        .entities
        .iter()
        .filter(|e| !e.text.is_empty() && e.bbox.intersects(&view.viewport))
        .flat_map(|e| e.text.iter().cloned())
        .collect()
}

/// The entity an attribute question is about.
///
/// The most recent mark that still picks out a strict part of the viewport
/// wins by best overlap-over-union against entity boxes clipped to the
/// viewport. Without such a mark, the question is about the dominant
/// entity: largest visible area, ignoring entities that blanket the
/// viewport (such as a container the view was cropped to). Ties go to the
/// smaller id.
pub fn resolve_attribute_entity<'a>(scene: &'a Scene, view: &ViewState) -> Option<&'a Entity> {
    let vp = &view.viewport;
    let vp_area = vp.area();
    let selective_mark =
        view.annotations.iter().rev().find(|a| {
            a.kind == AnnotationKind::Mark && a.rect.area() < SELECTIVE_COVERAGE * vp_area
        });

    if let Some(mark) = selective_mark {
        let mut best: Option<(&Entity, f64)> = None;
        for e in &scene.entities {
            let Some(clipped) = e.bbox.intersection(vp) else {
                continue;
            };
            let inter = clipped
                .intersection(&mark.rect)
                .map(|b| b.area())
                .unwrap_or(0.0);
            let union = clipped.area() + mark.rect.area() - inter;
            let iou = if union > 0.0 { inter / union } else { 0.0 };
            let better = match best {
                None => true,
                Some((_, best_iou)) => iou > best_iou,
            };
            if better {
                best = Some((e, iou));
            }
        }
        return best.map(|(e, _)| e);
    }

    let mut best: Option<(&Entity, f64)> = None;
    for e in &scene.entities {
        let Some(clipped) = e.bbox.intersection(vp) else {
            continue;
        };
        let visible = clipped.area();
        if visible >= SELECTIVE_COVERAGE * vp_area {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, best_area)) => visible > best_area,
        };
        if better {
            best = Some((e, visible));
        }
    }
    best.map(|(e, _)| e)
}

/// Strips question scaffolding down to the phrase being asked about, for
/// matching against provided key/value lines.
fn question_key(question: &str) -> String {
    let q = normalize(question);
    let mut rest = q.as_str();
    for prefix in ["what is ", "what are ", "what does "] {
        if let Some(stripped) = rest.strip_prefix(prefix) {
            rest = stripped;
            break;
        }
    }
    for article in ["the ", "a ", "an "] {
        if let Some(stripped) = rest.strip_prefix(article) {
            rest = stripped;
            break;
        }
    }
    rest.to_string()
}

fn unanswerable(question: &str, why: &str) -> ToolError {
    ToolError::Execution {
        tool: ToolKind::Answer,
        message: format!("cannot answer `{question}`: {why}"),
    }
}

/// Answers a question from ground truth and the current view.
///
/// Shapes are tried in order: provided characters are treated as key/value
/// lines (a line matching the question names the answer on the next line);
/// "how many" counts the view's highlights; "what color" and the marked
/// object/text shapes resolve a referent and read the attribute off it.
pub fn oracle_answer(
    scene: &Scene,
    view: &ViewState,
    question: &str,
    characters: &[String],
) -> Result<String, ToolError> {
    if !characters.is_empty() {
        let key = question_key(question);
        for (i, item) in characters.iter().enumerate() {
            if normalize(item) == key {
                if let Some(next) = characters.get(i + 1) {
                    return Ok(next.clone());
                }
            }
        }
        return Ok(characters.join(" "));
    }

    let q = normalize(question);
    if q.starts_with("how many") {
        return Ok(view.highlight_count().to_string());
    }
    if q.contains("what color") {
        let entity = resolve_attribute_entity(scene, view)
            .ok_or_else(|| unanswerable(question, "nothing to refer to in this view"))?;
        return entity.color.clone().ok_or_else(|| {
            unanswerable(
                question,
                format!("the {} has no color", entity.label).as_str(),
            )
        });
    }
    if q.contains("what is the text") || q.contains(" say") || q.contains("written") {
        let lines = visible_text(scene, view);
        if lines.is_empty() {
            return Err(unanswerable(question, "no text in this view"));
        }
        return Ok(lines.join(" "));
    }
    if q.contains("what is the marked object") || q.contains("what is this") {
        let entity = resolve_attribute_entity(scene, view)
            .ok_or_else(|| unanswerable(question, "nothing to refer to in this view"))?;
        return Ok(entity.label.clone());
    }
    Err(unanswerable(question, "no supported question shape"))
}

/// Runs one invocation against the oracle, producing the annotated view and
/// the tool output. The view passed in must already be preprocessed.
pub(crate) fn execute(
    scene: &Scene,
    view: &ViewState,
    invocation: &ToolInvocation,
) -> Result<(ViewState, ToolOutput), ToolError> {
    match invocation.kind {
        ToolKind::Grounding => {
            let target = invocation.target_entity.as_deref().expect("validated");
            let matches = oracle_match(scene, view, target);
            let Some(best) = matches.first() else {
                return Err(ToolError::Execution {
                    tool: ToolKind::Grounding,
                    message: format!("no match for `{target}` in this view"),
                });
            };
            let rect = best
                .bbox
                .intersection(&view.viewport)
                .expect("matched entities intersect the viewport");
            let new_view = add_mark(view, rect, vec![best.id.clone()]);
            Ok((
                new_view,
                ToolOutput::Image {
                    marks: vec![rect],
                    highlights: Vec::new(),
                },
            ))
        }
        ToolKind::Highlight => {
            let target = invocation.target_entity.as_deref().expect("validated");
            let matches = oracle_match(scene, view, target);
            let rects: Vec<BBox> = matches
                .iter()
                .map(|e| {
                    e.bbox
                        .intersection(&view.viewport)
                        .expect("matched entities intersect the viewport")
                })
                .collect();
            let ids: Vec<String> = matches.iter().map(|e| e.id.clone()).collect();
            let new_view = if rects.is_empty() {
                view.clone()
            } else {
                add_highlights(view, &rects, &ids)
            };
            Ok((
                new_view,
                ToolOutput::Image {
                    marks: Vec::new(),
                    highlights: rects,
                },
            ))
        }
        ToolKind::Ocr => Ok((
            view.clone(),
            ToolOutput::Text {
                items: visible_text(scene, view),
            },
        )),
        ToolKind::Answer => {
            let question = invocation.question.as_deref().expect("validated");
            let answer = oracle_answer(scene, view, question, &invocation.characters)?;
            Ok((
                view.clone(),
                ToolOutput::Text {
                    items: vec![answer],
                },
            ))
        }
    }
}
