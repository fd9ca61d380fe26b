//! Corpus-level evaluation: replay every path's recorded steps through an
//! executor, score the answers, and aggregate error labels into a report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::evalharness::classify::{classify, ErrorLabel};
use crate::evalharness::metrics::{score, MetricKind};
use crate::reasoner::{replay, ProposedStep, ReasonError, RunConfig, Termination, Trace};
use crate::scene::{Scene, SceneError, SceneSet};
use crate::synthesis::ReasoningPath;
use crate::tools::{ToolBackendBinding, ToolExecutor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("path {path_id}")]
    Replay {
        path_id: String,
        source: ReasonError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub path_id: String,
    pub scene_id: String,
    pub question: String,
    pub gold_answer: String,
    pub prediction: Option<String>,
    pub exact_match: f64,
    pub answer_recall: f64,
    pub termination: Termination,
    pub label: ErrorLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub answered: usize,
    pub mean_exact_match: f64,
    pub mean_answer_recall: f64,
    pub label_counts: BTreeMap<String, usize>,
    pub items: Vec<EvalItem>,
}

/// The deterministic referee traces are diagnosed against: oracle backends
/// for every tool, keeping only the crop threshold of the given executor.
pub fn referee_for(executor: &ToolExecutor) -> ToolExecutor {
    ToolExecutor {
        binding: ToolBackendBinding {
            crop_alpha: executor.binding.crop_alpha,
            ..ToolBackendBinding::default()
        },
    }
}

/// Scores one recorded trace against the path that defines its task.
///
/// `referee` must execute deterministically; see [`referee_for`].
pub fn item_from_trace(
    scene: &Scene,
    path: &ReasoningPath,
    trace: &Trace,
    referee: &ToolExecutor,
) -> EvalItem {
    let prediction = trace.final_answer.clone();
    let pred_str = prediction.as_deref().unwrap_or("");
    EvalItem {
        path_id: path.id.clone(),
        scene_id: path.scene_id.clone(),
        question: path.question.clone(),
        gold_answer: path.gold_answer.clone(),
        exact_match: score(MetricKind::ExactMatch, pred_str, &path.gold_answer),
        answer_recall: score(MetricKind::AnswerRecall, pred_str, &path.gold_answer),
        termination: trace.termination,
        label: classify(scene, path, trace, referee, &path.gold_answer),
        prediction,
    }
}

/// Builds the aggregate report from already-scored items.
pub fn summarize(items: Vec<EvalItem>) -> EvalReport {
    let total = items.len();
    let answered = items
        .iter()
        .filter(|i| i.termination == Termination::Answered)
        .count();
    let mean = |f: fn(&EvalItem) -> f64| {
        if total == 0 {
            0.0
        } else {
            items.iter().map(f).sum::<f64>() / total as f64
        }
    };
    let mut label_counts = BTreeMap::new();
    for item in &items {
        *label_counts
            .entry(item.label.name().to_string())
            .or_default() += 1;
    }
    EvalReport {
        total,
        answered,
        mean_exact_match: mean(|i| i.exact_match),
        mean_answer_recall: mean(|i| i.answer_recall),
        label_counts,
        items,
    }
}

/// Replays each path's recorded steps through `executor` on its scene and
/// scores the outcome against the path's own gold answer.
pub fn evaluate_corpus(
    scenes: &SceneSet,
    paths: &[ReasoningPath],
    executor: &ToolExecutor,
    config: &RunConfig,
) -> Result<EvalReport, EvalError> {
    let referee = referee_for(executor);
    let mut items = Vec::with_capacity(paths.len());
    for path in paths {
        let scene = scenes.get(&path.scene_id)?;
        let steps: Vec<ProposedStep> = path
            .steps
            .iter()
            .map(|s| ProposedStep {
                sub_question: s.sub_question.clone(),
                invocation: s.invocation.clone(),
            })
            .collect();
        let trace = replay(scene, &path.question, &steps, executor, config).map_err(|source| {
            EvalError::Replay {
                path_id: path.id.clone(),
                source,
            }
        })?;
        items.push(item_from_trace(scene, path, &trace, &referee));
    }
    Ok(summarize(items))
}
