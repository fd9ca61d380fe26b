//! Error taxonomy for executed traces.
//!
//! A predicted trace is walked against its reference path step by step.
//! The first divergence decides the label: a different tool is a reasoning
//! error over tools; a tool whose arguments resolve (under the deterministic
//! backend) to something other than the reference output is a reasoning
//! error over arguments; and an invocation whose deterministic result
//! matches the reference while the recorded result does not is an execution
//! error of that tool. Arguments are judged by what they resolve to rather
//! than by string equality, so a paraphrased target that lands on the same
//! region counts as faithful. A trace that follows the reference all the way
//! through is judged on its final answer alone.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::canvas::full_view;
use crate::evalharness::metrics::normalize;
use crate::reasoner::{next_view, StepOutcome, Trace};
use crate::scene::Scene;
use crate::synthesis::ReasoningPath;
use crate::tools::{ToolExecutor, ToolKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorLabel {
    Correct,
    ReasoningTool,
    ReasoningArguments,
    ExecutionGrounding,
    ExecutionOcr,
    ExecutionHighlight,
    InferenceWrong,
    InferenceMissing,
}

impl ErrorLabel {
    pub const ALL: [ErrorLabel; 8] = [
        ErrorLabel::Correct,
        ErrorLabel::ReasoningTool,
        ErrorLabel::ReasoningArguments,
        ErrorLabel::ExecutionGrounding,
        ErrorLabel::ExecutionOcr,
        ErrorLabel::ExecutionHighlight,
        ErrorLabel::InferenceWrong,
        ErrorLabel::InferenceMissing,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ErrorLabel::Correct => "correct",
            ErrorLabel::ReasoningTool => "reasoning_tool",
            ErrorLabel::ReasoningArguments => "reasoning_arguments",
            ErrorLabel::ExecutionGrounding => "execution_grounding",
            ErrorLabel::ExecutionOcr => "execution_ocr",
            ErrorLabel::ExecutionHighlight => "execution_highlight",
            ErrorLabel::InferenceWrong => "inference_wrong",
            ErrorLabel::InferenceMissing => "inference_missing",
        }
    }
}

impl std::fmt::Display for ErrorLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn alnum_tokens(s: &str) -> BTreeSet<String> {
    normalize(s)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn answer_label(prediction: Option<&str>, gold: &str) -> ErrorLabel {
    let Some(prediction) = prediction else {
        return ErrorLabel::InferenceMissing;
    };
    if normalize(prediction) == normalize(gold) {
        return ErrorLabel::Correct;
    }
    let shared = alnum_tokens(prediction)
        .intersection(&alnum_tokens(gold))
        .count();
    if shared == 0 {
        ErrorLabel::InferenceMissing
    } else {
        ErrorLabel::InferenceWrong
    }
}

fn execution_label(kind: ToolKind) -> Option<ErrorLabel> {
    match kind {
        ToolKind::Grounding => Some(ErrorLabel::ExecutionGrounding),
        ToolKind::Ocr => Some(ErrorLabel::ExecutionOcr),
        ToolKind::Highlight => Some(ErrorLabel::ExecutionHighlight),
        ToolKind::Answer => None,
    }
}

/// Labels a trace against the reference path that defines how the question
/// should have been worked.
///
/// `executor` is the deterministic referee the trace's invocations are
/// re-run against; pass an oracle-backed executor with the crop threshold
/// the reference was recorded under.
pub fn classify(
    scene: &Scene,
    reference: &ReasoningPath,
    trace: &Trace,
    executor: &ToolExecutor,
    gold: &str,
) -> ErrorLabel {
    if trace.steps.is_empty() {
        return ErrorLabel::InferenceMissing;
    }
    let mut view = full_view(scene);
    for (ref_step, step) in reference.steps.iter().zip(&trace.steps) {
        if step.invocation.kind != ref_step.invocation.kind {
            return ErrorLabel::ReasoningTool;
        }
        let (out_view, resolved) = match executor.invoke(scene, &view, &step.invocation) {
            Ok(pair) => pair,
            Err(_) => return ErrorLabel::ReasoningArguments,
        };
        if resolved != ref_step.output {
            return ErrorLabel::ReasoningArguments;
        }
        let diverged = match &step.outcome {
            StepOutcome::Error { .. } => true,
            StepOutcome::Output { output } => output != &resolved,
        };
        if diverged {
            match execution_label(step.invocation.kind) {
                Some(label) => return label,
                None => return answer_label(trace.final_answer.as_deref(), gold),
            }
        }
        view = next_view(&view, &out_view, &resolved);
    }
    answer_label(trace.final_answer.as_deref(), gold)
}
