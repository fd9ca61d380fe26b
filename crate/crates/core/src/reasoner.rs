//! The step loop: a policy proposes sub-questions and tool calls, the
//! executor runs them, and the working view narrows until the answer tool
//! fires or the budget runs out.
//!
//! Failures never discard work. Tool errors are recorded in-band on the
//! failing step and the trace is returned with everything up to that point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canvas::{full_view, ViewState};
use crate::scene::{BBox, Scene};
use crate::tools::{OutputClass, ToolExecutor, ToolInvocation, ToolKind, ToolOutput};
use crate::wire::{view_to_wire, RemoteClient, WireArgs, WirePolicyRequest};

#[derive(Debug, Error)]
pub enum ReasonError {
    #[error("cannot replay an empty step list")]
    EmptyReplay,
}

/// One question posed against one scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTask {
    pub scene_id: String,
    pub question: String,
}

/// What a policy proposes for the next step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedStep {
    pub sub_question: String,
    pub invocation: ToolInvocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StepOutcome {
    Output { output: ToolOutput },
    Error { message: String },
}

/// One executed step. `viewport` is the region the tool actually consumed,
/// after any pre-invocation crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub sub_question: String,
    pub invocation: ToolInvocation,
    pub viewport: BBox,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    ExecutionError,
    PolicyError,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub task: ReasoningTask,
    pub steps: Vec<Step>,
    pub termination: Termination,
    /// Why the policy gave up, when `termination` is `PolicyError`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
}

/// The working view after a step: image-class outputs replace it, text-class
/// outputs leave it alone (any crop they ran under stays internal to the
/// tool call).
pub fn next_view(current: &ViewState, output_view: &ViewState, output: &ToolOutput) -> ViewState {
    match output.class() {
        OutputClass::Image => output_view.clone(),
        OutputClass::Text => current.clone(),
    }
}

/// Everything a policy may look at when proposing the next step.
pub struct PolicyContext<'a> {
    pub scene: &'a Scene,
    pub question: &'a str,
    pub prior_sub_questions: &'a [String],
    /// Compact renderings of prior tool outputs. `None` unless the run was
    /// configured to pass outputs through to the policy.
    pub prior_outputs: Option<&'a [String]>,
    pub view: &'a ViewState,
    pub step_index: usize,
}

pub trait Policy {
    fn propose(&mut self, ctx: &PolicyContext<'_>) -> Result<ProposedStep, String>;
}

/// Replays a fixed list of proposed steps in order.
pub struct ScriptedPolicy {
    steps: Vec<ProposedStep>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(steps: Vec<ProposedStep>) -> Self {
        Self { steps, cursor: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn propose(&mut self, _ctx: &PolicyContext<'_>) -> Result<ProposedStep, String> {
        let step = self
            .steps
            .get(self.cursor)
            .cloned()
            .ok_or_else(|| format!("script exhausted after {} steps", self.cursor))?;
        self.cursor += 1;
        Ok(step)
    }
}

/// Asks a remote backend to propose each step.
pub struct RemotePolicy {
    pub client: std::sync::Arc<RemoteClient>,
}

impl RemotePolicy {
    pub fn new(client: std::sync::Arc<RemoteClient>) -> Self {
        Self { client }
    }
}

impl Policy for RemotePolicy {
    fn propose(&mut self, ctx: &PolicyContext<'_>) -> Result<ProposedStep, String> {
        use base64::engine::general_purpose::STANDARD;
        use base64::Engine as _;

        let (out_w, out_h) =
            crate::tools::render_dims(&ctx.view.viewport, self.client.endpoint.render_px);
        let png = crate::render::render(ctx.view, ctx.scene, out_w, out_h)
            .map_err(|e| format!("render failed: {e}"))?;
        let request = WirePolicyRequest {
            question: ctx.question.to_string(),
            prior_sub_questions: ctx.prior_sub_questions.to_vec(),
            view: view_to_wire(ctx.view),
            image_png_b64: STANDARD.encode(&png),
            prior_outputs: ctx.prior_outputs.map(<[String]>::to_vec),
        };
        let response = self
            .client
            .policy_step(&request)
            .map_err(|e| e.to_string())?;
        let kind = ToolKind::parse(&response.tool)
            .ok_or_else(|| format!("policy proposed unknown tool `{}`", response.tool))?;
        let WireArgs {
            target_entity,
            question,
            characters,
        } = response.args;
        let invocation = ToolInvocation {
            kind,
            target_entity,
            // An answer step defaults to answering its own sub-question.
            question: question
                .or_else(|| (kind == ToolKind::Answer).then(|| response.sub_question.clone())),
            characters: characters.unwrap_or_default(),
        };
        Ok(ProposedStep {
            sub_question: response.sub_question,
            invocation,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub max_steps: usize,
    /// When set, policies receive compact renderings of prior tool outputs.
    pub context_passthrough: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_steps: 8,
            context_passthrough: false,
        }
    }
}

fn describe_output(output: &ToolOutput) -> String {
    match output {
        ToolOutput::Image { marks, highlights } => {
            format!("marks:{} highlights:{}", marks.len(), highlights.len())
        }
        ToolOutput::Text { items } => items.join(" "),
    }
}

/// Runs the loop until the answer tool fires, a tool fails, the policy gives
/// up, or `max_steps` invocations have run.
pub fn run(
    scene: &Scene,
    question: &str,
    policy: &mut dyn Policy,
    executor: &ToolExecutor,
    config: &RunConfig,
) -> Trace {
    let task = ReasoningTask {
        scene_id: scene.id.clone(),
        question: question.to_string(),
    };
    let mut view = full_view(scene);
    let mut steps: Vec<Step> = Vec::new();
    let mut sub_questions: Vec<String> = Vec::new();
    let mut outputs: Vec<String> = Vec::new();

    for index in 0..config.max_steps {
        let ctx = PolicyContext {
            scene,
            question,
            prior_sub_questions: &sub_questions,
            prior_outputs: config.context_passthrough.then_some(outputs.as_slice()),
            view: &view,
            step_index: index,
        };
        let proposed = match policy.propose(&ctx) {
            Ok(p) => p,
            Err(message) => {
                return Trace {
                    task,
                    steps,
                    termination: Termination::PolicyError,
                    failure: Some(message),
                    final_answer: None,
                };
            }
        };
        sub_questions.push(proposed.sub_question.clone());

        match executor.invoke(scene, &view, &proposed.invocation) {
            Ok((out_view, output)) => {
                steps.push(Step {
                    index,
                    sub_question: proposed.sub_question,
                    invocation: proposed.invocation.clone(),
                    viewport: out_view.viewport,
                    outcome: StepOutcome::Output {
                        output: output.clone(),
                    },
                });
                outputs.push(describe_output(&output));
                if proposed.invocation.kind == ToolKind::Answer {
                    let final_answer = output.answer_text();
                    return Trace {
                        task,
                        steps,
                        termination: Termination::Answered,
                        failure: None,
                        final_answer,
                    };
                }
                view = next_view(&view, &out_view, &output);
            }
            Err(error) => {
                steps.push(Step {
                    index,
                    sub_question: proposed.sub_question,
                    invocation: proposed.invocation,
                    viewport: view.viewport,
                    outcome: StepOutcome::Error {
                        message: error.to_string(),
                    },
                });
                return Trace {
                    task,
                    steps,
                    termination: Termination::ExecutionError,
                    failure: None,
                    final_answer: None,
                };
            }
        }
    }

    Trace {
        task,
        steps,
        termination: Termination::MaxSteps,
        failure: None,
        final_answer: None,
    }
}

/// Re-executes recorded steps in order against the given executor.
pub fn replay(
    scene: &Scene,
    question: &str,
    steps: &[ProposedStep],
    executor: &ToolExecutor,
    config: &RunConfig,
) -> Result<Trace, ReasonError> {
    if steps.is_empty() {
        return Err(ReasonError::EmptyReplay);
    }
    let mut policy = ScriptedPolicy::new(steps.to_vec());
    let mut config = config.clone();
    config.max_steps = config.max_steps.max(steps.len());
    Ok(run(scene, question, &mut policy, executor, &config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::add_mark;
    use crate::scene::Entity;
    use proptest::prelude::*;

    fn scene() -> Scene {
        Scene {
            id: "desk".into(),
            width: 120,
            height: 100,
            image_ref: None,
            caption: None,
            entities: vec![
                Entity {
                    id: "e0".into(),
                    label: "card".into(),
                    bbox: BBox::new(10.0, 10.0, 30.0, 24.0).unwrap(),
                    confidence: 1.0,
                    color: Some("white".into()),
                    text: vec!["ROOM 12".into()],
                },
                Entity {
                    id: "e1".into(),
                    label: "desk".into(),
                    bbox: BBox::new(0.0, 0.0, 120.0, 100.0).unwrap(),
                    confidence: 1.0,
                    color: Some("brown".into()),
                    text: vec![],
                },
            ],
        }
    }

    fn script() -> Vec<ProposedStep> {
        vec![
            ProposedStep {
                sub_question: "Where is the card?".into(),
                invocation: ToolInvocation::grounding("the card"),
            },
            ProposedStep {
                sub_question: "What is the text on the card?".into(),
                invocation: ToolInvocation::answer("What is the text on the card?"),
            },
        ]
    }

    #[test]
    fn scripted_run_reaches_an_answer() {
        let s = scene();
        let mut policy = ScriptedPolicy::new(script());
        let trace = run(
            &s,
            "What is the text on the card?",
            &mut policy,
            &ToolExecutor::oracle(),
            &RunConfig::default(),
        );
        assert_eq!(trace.termination, Termination::Answered);
        assert_eq!(trace.final_answer.as_deref(), Some("ROOM 12"));
        assert_eq!(trace.steps.len(), 2);
        // The answer step consumed the cropped card region.
        assert_eq!(
            trace.steps[1].viewport,
            BBox::new(10.0, 10.0, 30.0, 24.0).unwrap()
        );
    }

    #[test]
    fn tool_failure_is_recorded_in_band() {
        let s = scene();
        let mut policy = ScriptedPolicy::new(vec![ProposedStep {
            sub_question: "Where is the lamp?".into(),
            invocation: ToolInvocation::grounding("the lamp"),
        }]);
        let trace = run(
            &s,
            "What color is the lamp?",
            &mut policy,
            &ToolExecutor::oracle(),
            &RunConfig::default(),
        );
        assert_eq!(trace.termination, Termination::ExecutionError);
        assert_eq!(trace.steps.len(), 1);
        match &trace.steps[0].outcome {
            StepOutcome::Error { message } => assert!(message.contains("no match")),
            other => panic!("expected an error outcome, got {other:?}"),
        }
        assert!(trace.final_answer.is_none());
    }

    #[test]
    fn exhausted_script_is_a_policy_error() {
        let s = scene();
        let mut policy = ScriptedPolicy::new(vec![ProposedStep {
            sub_question: "Where is the card?".into(),
            invocation: ToolInvocation::grounding("the card"),
        }]);
        let trace = run(
            &s,
            "unanswered",
            &mut policy,
            &ToolExecutor::oracle(),
            &RunConfig::default(),
        );
        assert_eq!(trace.termination, Termination::PolicyError);
        assert_eq!(trace.steps.len(), 1);
        assert!(trace
            .failure
            .as_deref()
            .unwrap()
            .contains("script exhausted"));
    }

    #[test]
    fn budget_exhaustion_terminates_with_max_steps() {
        struct Loop;
        impl Policy for Loop {
            fn propose(&mut self, _ctx: &PolicyContext<'_>) -> Result<ProposedStep, String> {
                Ok(ProposedStep {
                    sub_question: "Where is the card?".into(),
                    invocation: ToolInvocation::grounding("the card"),
                })
            }
        }
        let s = scene();
        let config = RunConfig {
            max_steps: 3,
            ..RunConfig::default()
        };
        let trace = run(&s, "loop", &mut Loop, &ToolExecutor::oracle(), &config);
        assert_eq!(trace.termination, Termination::MaxSteps);
        assert_eq!(trace.steps.len(), 3);
    }

    #[test]
    fn replay_requires_at_least_one_step() {
        let s = scene();
        let err = replay(&s, "q", &[], &ToolExecutor::oracle(), &RunConfig::default()).unwrap_err();
        assert!(matches!(err, ReasonError::EmptyReplay));
    }

    #[test]
    fn replay_diverges_when_ground_truth_changes() {
        let s = scene();
        let steps = script();
        let original = replay(
            &s,
            "q",
            &steps,
            &ToolExecutor::oracle(),
            &RunConfig::default(),
        )
        .unwrap();
        let mut perturbed_scene = scene();
        perturbed_scene.entities[0].text = vec!["ROOM 99".into()];
        let perturbed = replay(
            &perturbed_scene,
            "q",
            &steps,
            &ToolExecutor::oracle(),
            &RunConfig::default(),
        )
        .unwrap();
        assert_eq!(original.final_answer.as_deref(), Some("ROOM 12"));
        assert_eq!(perturbed.final_answer.as_deref(), Some("ROOM 99"));
    }

    #[test]
    fn replay_extends_the_budget_to_cover_the_script() {
        let s = scene();
        let mut steps = Vec::new();
        for _ in 0..9 {
            steps.push(ProposedStep {
                sub_question: "Where is the card?".into(),
                invocation: ToolInvocation::grounding("the card"),
            });
        }
        steps.push(ProposedStep {
            sub_question: "What is the text on the card?".into(),
            invocation: ToolInvocation::answer("What is the text on the card?"),
        });
        let trace = replay(
            &s,
            "q",
            &steps,
            &ToolExecutor::oracle(),
            &RunConfig::default(),
        )
        .unwrap();
        assert_eq!(trace.termination, Termination::Answered);
        assert_eq!(trace.steps.len(), 10);
    }

    proptest! {
        #[test]
        fn transition_keeps_view_for_text_and_replaces_for_image(
            x0 in 0.0f64..50.0,
            y0 in 0.0f64..40.0,
            w in 1.0f64..60.0,
            h in 1.0f64..50.0,
            text_items in proptest::collection::vec("[a-z]{1,8}", 0..4),
        ) {
            let s = scene();
            let current = full_view(&s);
            let rect = BBox::new(x0, y0, (x0 + w).min(120.0), (y0 + h).min(100.0)).unwrap();
            let marked = add_mark(&current, rect, vec![]);

            let image_output = ToolOutput::Image { marks: vec![rect], highlights: vec![] };
            prop_assert_eq!(next_view(&current, &marked, &image_output), marked.clone());

            let text_output = ToolOutput::Text { items: text_items };
            prop_assert_eq!(next_view(&current, &marked, &text_output), current);
        }
    }
}
