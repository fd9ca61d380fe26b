//! Validation of synthesized reasoning paths.
//!
//! A path is only emitted if it survives three checks: its recorded
//! sub-questions and invocations are exactly what the chain's structure
//! dictates, replaying the invocations against the oracle reproduces every
//! recorded output and the gold answer, and the sub-questions fold back
//! into the combined question, which in turn decomposes into them.

use thiserror::Error;

use super::templates::{self, TerminalKind};
use super::{Chain, GeneratorBinding, NodeKind, ReasoningPath, SynthesisConfig};
use crate::canvas::full_view;
use crate::reasoner::next_view;
use crate::scene::Scene;
use crate::tools::{ToolKind, ToolOutput};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("chain invariant {which} violated: {message}")]
    Invariant { which: u8, message: String },
    #[error("expected {expected} edge questions, found {found}")]
    EdgeCount { expected: usize, found: usize },
    #[error("edge {edge} question is `{found}`, expected `{expected}`")]
    QuestionMismatch {
        edge: usize,
        expected: String,
        found: String,
    },
    #[error("step {step}: {message}")]
    Realization { step: usize, message: String },
    #[error("step {step} replay failed: {message}")]
    ReplayFailed { step: usize, message: String },
    #[error("step {step} output diverges from the oracle replay")]
    OutputMismatch { step: usize },
    #[error("step {step} viewport diverges from the oracle replay")]
    ViewportMismatch { step: usize },
    #[error("recorded gold answer `{gold}` but the path derives `{derived}`")]
    GoldMismatch { gold: String, derived: String },
    #[error("semantic check failed: {0}")]
    Semantic(String),
    #[error("sub-questions fold into `{folded}`, not the recorded `{question}`")]
    FoldMismatch { folded: String, question: String },
    #[error("combined question does not decompose: `{0}`")]
    Undecomposable(String),
    #[error("decomposition disagrees with the recorded path: {0}")]
    DecompositionMismatch(String),
}

/// The recorded per-edge questions in execution order: consecutive steps
/// sharing a sub-question belong to one edge's realization.
pub fn recorded_edge_questions(path: &ReasoningPath) -> Vec<String> {
    let mut questions: Vec<String> = Vec::new();
    for step in &path.steps {
        if questions.last() != Some(&step.sub_question) {
            questions.push(step.sub_question.clone());
        }
    }
    questions
}

fn check_templates(chain: &Chain, path: &ReasoningPath) -> Result<(), ValidationError> {
    let expected = super::edge_questions(chain, &GeneratorBinding::default())
        .expect("template generation is infallible");
    let mut recorded = recorded_edge_questions(path);
    recorded.reverse();
    if recorded.len() != expected.len() {
        return Err(ValidationError::EdgeCount {
            expected: expected.len(),
            found: recorded.len(),
        });
    }
    for (edge, (exp, found)) in expected.iter().zip(&recorded).enumerate() {
        if exp != found {
            return Err(ValidationError::QuestionMismatch {
                edge,
                expected: exp.clone(),
                found: found.clone(),
            });
        }
    }

    let mut expected_kinds: Vec<ToolKind> = Vec::new();
    for _ in 1..chain.edges.len() {
        expected_kinds.push(ToolKind::Grounding);
    }
    match chain.terminal_kind() {
        TerminalKind::Text => expected_kinds.extend([ToolKind::Ocr, ToolKind::Answer]),
        TerminalKind::Color => expected_kinds.push(ToolKind::Answer),
        TerminalKind::Counting => expected_kinds.extend([ToolKind::Highlight, ToolKind::Answer]),
    }
    let found_kinds: Vec<ToolKind> = path.steps.iter().map(|s| s.invocation.kind).collect();
    if found_kinds != expected_kinds {
        return Err(ValidationError::Realization {
            step: 0,
            message: format!("invocation kinds {found_kinds:?}, expected {expected_kinds:?}"),
        });
    }

    for (i, step) in path.steps.iter().enumerate() {
        step.invocation
            .validate()
            .map_err(|e| ValidationError::Realization {
                step: i,
                message: e.to_string(),
            })?;
        if step.output.class() != step.invocation.kind.output_class() {
            return Err(ValidationError::Realization {
                step: i,
                message: "output class does not fit the tool".to_string(),
            });
        }
    }

    let grounding_count = chain.edges.len() - 1;
    for j in 0..grounding_count {
        let node = &chain.nodes[chain.nodes.len() - 2 - j];
        let expected_target = templates::grounding_target(&node.profile);
        let found = path.steps[j].invocation.target_entity.as_deref();
        if found != Some(expected_target.as_str()) {
            return Err(ValidationError::Realization {
                step: j,
                message: format!("locating target {found:?}, expected `{expected_target}`"),
            });
        }
    }
    let q1 = &expected[0];
    for step in &path.steps[grounding_count..] {
        if &step.sub_question != q1 {
            return Err(ValidationError::Realization {
                step: grounding_count,
                message: "terminal steps must share the terminal sub-question".to_string(),
            });
        }
    }
    let last = path.steps.last().expect("kind pattern is non-empty");
    if last.invocation.question.as_deref() != Some(q1.as_str()) {
        return Err(ValidationError::Realization {
            step: path.steps.len() - 1,
            message: "final answer invocation must carry the terminal question".to_string(),
        });
    }
    if chain.terminal_kind() == TerminalKind::Counting {
        let target = templates::highlight_target(&chain.head().profile);
        let found = path.steps[grounding_count]
            .invocation
            .target_entity
            .as_deref();
        if found != Some(target.as_str()) {
            return Err(ValidationError::Realization {
                step: grounding_count,
                message: format!("highlight target {found:?}, expected `{target}`"),
            });
        }
    }
    if chain.terminal_kind() == TerminalKind::Text {
        let ToolOutput::Text { items } = &path.steps[grounding_count].output else {
            return Err(ValidationError::Realization {
                step: grounding_count,
                message: "reading step must produce text".to_string(),
            });
        };
        if &last.invocation.characters != items {
            return Err(ValidationError::Realization {
                step: path.steps.len() - 1,
                message: "answer characters must echo the reading step's output".to_string(),
            });
        }
    }
    Ok(())
}

fn replay_steps(
    scene: &Scene,
    path: &ReasoningPath,
    config: &SynthesisConfig,
) -> Result<String, ValidationError> {
    let executor = config.executor();
    let mut view = full_view(scene);
    let mut final_answer = None;
    for (i, step) in path.steps.iter().enumerate() {
        let (out_view, output) = executor
            .invoke(scene, &view, &step.invocation)
            .map_err(|e| ValidationError::ReplayFailed {
                step: i,
                message: e.to_string(),
            })?;
        if output != step.output {
            return Err(ValidationError::OutputMismatch { step: i });
        }
        if out_view.viewport != step.viewport {
            return Err(ValidationError::ViewportMismatch { step: i });
        }
        if step.invocation.kind == ToolKind::Answer {
            final_answer = output.answer_text();
        }
        view = next_view(&view, &out_view, &output);
    }
    final_answer.ok_or_else(|| ValidationError::Semantic("no answer step recorded".to_string()))
}

fn expected_answer(scene: &Scene, chain: &Chain) -> Option<String> {
    let head = chain.head();
    match chain.terminal_kind() {
        TerminalKind::Text => Some(head.profile.text.join(" ")),
        TerminalKind::Color => head.profile.color.clone(),
        TerminalKind::Counting => {
            let count = head
                .entity_ids
                .iter()
                .filter(|id| {
                    scene
                        .entity(id)
                        .map(|e| Some(&e.label) == head.profile.label.as_ref())
                        .unwrap_or(false)
                })
                .count();
            Some(count.to_string())
        }
    }
}

fn check_execution(
    scene: &Scene,
    chain: &Chain,
    path: &ReasoningPath,
    config: &SynthesisConfig,
) -> Result<(), ValidationError> {
    let derived = replay_steps(scene, path, config)?;
    if derived != path.gold_answer {
        return Err(ValidationError::GoldMismatch {
            gold: path.gold_answer.clone(),
            derived,
        });
    }

    let grounding_count = chain.edges.len() - 1;
    for j in 0..grounding_count {
        let node = &chain.nodes[chain.nodes.len() - 2 - j];
        let ToolOutput::Image { marks, .. } = &path.steps[j].output else {
            return Err(ValidationError::Semantic(format!(
                "locating step {j} produced no image"
            )));
        };
        if marks.as_slice() != [node.bbox] {
            return Err(ValidationError::Semantic(format!(
                "locating step {j} marked {marks:?}, expected the region of node {}",
                node.id
            )));
        }
    }

    let head = chain.head();
    match chain.terminal_kind() {
        TerminalKind::Text => {
            let ToolOutput::Text { items } = &path.steps[grounding_count].output else {
                return Err(ValidationError::Semantic(
                    "reading step lost its text".into(),
                ));
            };
            if !head.profile.text.iter().all(|line| items.contains(line)) {
                return Err(ValidationError::Semantic(format!(
                    "read text {items:?} misses the subject's text {:?}",
                    head.profile.text
                )));
            }
        }
        TerminalKind::Counting => {
            let ToolOutput::Image { highlights, .. } = &path.steps[grounding_count].output else {
                return Err(ValidationError::Semantic(
                    "highlight step produced no image".into(),
                ));
            };
            for id in &head.entity_ids {
                let bbox = scene
                    .entity(id)
                    .map(|e| e.bbox)
                    .ok_or_else(|| ValidationError::Semantic(format!("unknown member `{id}`")))?;
                if !highlights.contains(&bbox) {
                    return Err(ValidationError::Semantic(format!(
                        "member `{id}` was not highlighted"
                    )));
                }
            }
        }
        TerminalKind::Color => {}
    }

    match expected_answer(scene, chain) {
        Some(expected) if expected == path.gold_answer => Ok(()),
        Some(expected) => Err(ValidationError::Semantic(format!(
            "gold answer `{}` differs from the subject's own attribute `{expected}`",
            path.gold_answer
        ))),
        None => Err(ValidationError::Semantic(
            "subject has no attribute to answer with".to_string(),
        )),
    }
}

fn check_combination(path: &ReasoningPath) -> Result<(), ValidationError> {
    let mut chain_order = recorded_edge_questions(path);
    chain_order.reverse();
    let mut folded = chain_order[0].clone();
    for outer in &chain_order[1..] {
        folded =
            templates::combine(&folded, outer).ok_or_else(|| ValidationError::FoldMismatch {
                folded: folded.clone(),
                question: path.question.clone(),
            })?;
    }
    if folded != path.question {
        return Err(ValidationError::FoldMismatch {
            folded,
            question: path.question.clone(),
        });
    }

    let decomposition = templates::decompose(&path.question)
        .ok_or_else(|| ValidationError::Undecomposable(path.question.clone()))?;
    if decomposition.terminal != path.terminal {
        return Err(ValidationError::DecompositionMismatch(format!(
            "terminal {} recorded, {} decomposed",
            path.terminal.name(),
            decomposition.terminal.name()
        )));
    }
    if decomposition.edge_questions != chain_order {
        return Err(ValidationError::DecompositionMismatch(format!(
            "edge questions {:?} decomposed, {chain_order:?} recorded",
            decomposition.edge_questions
        )));
    }
    Ok(())
}

/// Full validation against the originating chain.
pub fn validate_path(
    scene: &Scene,
    chain: &Chain,
    path: &ReasoningPath,
    config: &SynthesisConfig,
) -> Result<(), ValidationError> {
    chain.validate(scene, config)?;
    if path.scene_id != scene.id {
        return Err(ValidationError::Semantic(format!(
            "path references scene `{}`, validating against `{}`",
            path.scene_id, scene.id
        )));
    }
    if path.chain_kinds
        != chain
            .nodes
            .iter()
            .map(|n| n.kind.name())
            .collect::<Vec<_>>()
    {
        return Err(ValidationError::Semantic(
            "recorded node kinds differ".to_string(),
        ));
    }
    check_templates(chain, path)?;
    check_execution(scene, chain, path, config)?;
    check_combination(path)
}

/// Validation of a stored path without its chain: structural fit, oracle
/// replay, and question algebra. Used to re-check datasets from disk.
pub fn revalidate_recorded(
    scene: &Scene,
    path: &ReasoningPath,
    config: &SynthesisConfig,
) -> Result<(), ValidationError> {
    if path.scene_id != scene.id {
        return Err(ValidationError::Semantic(format!(
            "path references scene `{}`, validating against `{}`",
            path.scene_id, scene.id
        )));
    }
    if path.steps.is_empty() {
        return Err(ValidationError::Semantic("path has no steps".to_string()));
    }
    for (i, step) in path.steps.iter().enumerate() {
        step.invocation
            .validate()
            .map_err(|e| ValidationError::Realization {
                step: i,
                message: e.to_string(),
            })?;
        if step.output.class() != step.invocation.kind.output_class() {
            return Err(ValidationError::Realization {
                step: i,
                message: "output class does not fit the tool".to_string(),
            });
        }
    }
    if path.steps.last().expect("non-empty").invocation.kind != ToolKind::Answer {
        return Err(ValidationError::Semantic(
            "path does not end in an answer".to_string(),
        ));
    }
    let edge_count = recorded_edge_questions(path).len();
    if path.chain_kinds.len() != edge_count + 1 {
        return Err(ValidationError::Semantic(format!(
            "{} node kinds recorded for {edge_count} edges",
            path.chain_kinds.len()
        )));
    }
    if path.chain_kinds.last().map(String::as_str) != Some(NodeKind::WholeImage.name()) {
        return Err(ValidationError::Semantic(
            "recorded chain does not end at the whole image".to_string(),
        ));
    }

    let derived = replay_steps(scene, path, config)?;
    if derived != path.gold_answer {
        return Err(ValidationError::GoldMismatch {
            gold: path.gold_answer.clone(),
            derived,
        });
    }
    check_combination(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{BBox, Entity};
    use crate::synthesis::{build_nodes, sample_chain, synthesize_for_scene, synthesize_path};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ent(id: &str, label: &str, b: [f64; 4], color: &str, text: &[&str]) -> Entity {
        Entity {
            id: id.into(),
            label: label.into(),
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            confidence: 0.9,
            color: Some(color.into()),
            text: text.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn lab() -> Scene {
        Scene {
            id: "lab".into(),
            width: 300,
            height: 200,
            image_ref: None,
            caption: Some("a lab bench".into()),
            entities: vec![
                ent("e0", "tray", [20.0, 20.0, 120.0, 120.0], "silver", &[]),
                ent(
                    "e1",
                    "card",
                    [40.0, 40.0, 80.0, 70.0],
                    "white",
                    &["ROOM 12"],
                ),
                ent("e2", "bottle", [140.0, 20.0, 170.0, 60.0], "green", &[]),
                ent("e3", "shelf", [130.0, 10.0, 190.0, 80.0], "brown", &[]),
                ent("e4", "person", [200.0, 150.0, 210.0, 165.0], "blue", &[]),
                ent("e5", "person", [215.0, 150.0, 225.0, 165.0], "olive", &[]),
                ent("e6", "person", [230.0, 150.0, 240.0, 165.0], "teal", &[]),
            ],
        }
    }

    fn sample_one(scene: &Scene, seed: u64) -> (Chain, ReasoningPath) {
        let config = SynthesisConfig::default();
        let nodes = build_nodes(scene, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            if let Some(chain) = sample_chain(scene, &nodes, &mut rng, &config) {
                let path =
                    synthesize_path(scene, &chain, &GeneratorBinding::default(), &config, "t-p0")
                        .unwrap();
                return (chain, path);
            }
        }
    }

    #[test]
    fn synthesized_paths_validate() {
        let scene = lab();
        let config = SynthesisConfig::default();
        for seed in 0..20 {
            let (chain, path) = sample_one(&scene, seed);
            validate_path(&scene, &chain, &path, &config).unwrap();
            revalidate_recorded(&scene, &path, &config).unwrap();
        }
    }

    #[test]
    fn tampered_questions_are_rejected() {
        let scene = lab();
        let config = SynthesisConfig::default();
        let (chain, path) = sample_one(&scene, 1);

        let mut wrong_question = path.clone();
        wrong_question.question = "What shape is the moon?".into();
        assert!(validate_path(&scene, &chain, &wrong_question, &config).is_err());
        assert!(revalidate_recorded(&scene, &wrong_question, &config).is_err());

        let mut wrong_sub = path.clone();
        wrong_sub.steps[0].sub_question = "Where is the unicorn?".into();
        assert!(validate_path(&scene, &chain, &wrong_sub, &config).is_err());
    }

    #[test]
    fn tampered_outputs_and_answers_are_rejected() {
        let scene = lab();
        let config = SynthesisConfig::default();
        let (chain, path) = sample_one(&scene, 2);

        let mut wrong_gold = path.clone();
        wrong_gold.gold_answer = "never".into();
        let err = validate_path(&scene, &chain, &wrong_gold, &config).unwrap_err();
        assert!(matches!(err, ValidationError::GoldMismatch { .. }));

        let mut wrong_output = path.clone();
        wrong_output.steps[0].output = match &wrong_output.steps[0].output {
            ToolOutput::Image { .. } => ToolOutput::Image {
                marks: vec![BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()],
                highlights: vec![],
            },
            ToolOutput::Text { .. } => ToolOutput::Text {
                items: vec!["x".into()],
            },
        };
        assert!(validate_path(&scene, &chain, &wrong_output, &config).is_err());
    }

    #[test]
    fn replay_on_a_perturbed_scene_is_rejected() {
        let scene = lab();
        let config = SynthesisConfig::default();
        let paths = synthesize_for_scene(&scene, &config, &GeneratorBinding::default());
        let mut perturbed = scene.clone();
        for entity in &mut perturbed.entities {
            entity.color = Some("black".into());
            if !entity.text.is_empty() {
                entity.text = vec!["REDACTED".into()];
            }
            let b = entity.bbox;
            entity.bbox = BBox::new(b.x0 + 1.0, b.y0 + 1.0, b.x1 + 1.0, b.y1 + 1.0).unwrap();
        }
        let rejected = paths
            .iter()
            .filter(|p| revalidate_recorded(&perturbed, p, &config).is_err())
            .count();
        assert_eq!(rejected, paths.len());
    }

    #[test]
    fn recorded_edge_questions_collapse_realization_steps() {
        let scene = lab();
        let (chain, path) = sample_one(&scene, 3);
        let questions = recorded_edge_questions(&path);
        assert_eq!(questions.len(), chain.edges.len());
        let terminal_steps = path
            .steps
            .iter()
            .filter(|s| s.sub_question == *questions.last().unwrap())
            .count();
        match chain.terminal_kind() {
            TerminalKind::Color => assert_eq!(terminal_steps, 1),
            _ => assert_eq!(terminal_steps, 2),
        }
    }
}
