//! Stdio wire backends built from the question templates.
//!
//! Three single-role servers speak newline-delimited JSON on stdin/stdout:
//! `question` and `combine` mirror the built-in generators, and `policy`
//! answers template-shaped questions by decomposing them afresh on every
//! request. The policy keeps no state between requests; the number of
//! sub-questions already asked picks the next step of the plan.

use std::io::{BufRead, Write};

use anyhow::{Context, Result};
use serde::Deserialize;

use reasonforge_core::synthesis::templates::{self, TailCtx, TerminalKind};
use reasonforge_core::synthesis::NodeProfile;
use reasonforge_core::tools::ToolKind;
use reasonforge_core::wire::{
    WireArgs, WireCombineRequest, WireCombineResponse, WirePolicyRequest, WirePolicyResponse,
    WireQuestionRequest, WireQuestionResponse,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    /// Per-edge sub-question generation.
    Question,
    /// Splicing an outer locating question into the question depending on it.
    Combine,
    /// Decomposing combined questions into tool steps, easiest hop first.
    Policy,
}

pub fn serve(role: Role) -> Result<()> {
    let stdin = std::io::stdin().lock();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lines() {
        let line = line.context("reading request line")?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = respond(role, &line)?;
        stdout.write_all(reply.as_bytes())?;
        stdout.write_all(b"\n")?;
        stdout.flush()?;
    }
    Ok(())
}

fn respond(role: Role, line: &str) -> Result<String> {
    let reply = match role {
        Role::Question => {
            let request: WireQuestionRequest =
                serde_json::from_str(line).context("parsing question request")?;
            serde_json::to_string(&question_reply(request)?)
        }
        Role::Combine => {
            let request: WireCombineRequest =
                serde_json::from_str(line).context("parsing combine request")?;
            serde_json::to_string(&combine_reply(&request))
        }
        Role::Policy => {
            let request: WirePolicyRequest =
                serde_json::from_str(line).context("parsing policy request")?;
            serde_json::to_string(&policy_reply(&request))
        }
    };
    Ok(reply.expect("wire responses serialize"))
}

#[derive(Deserialize)]
#[serde(tag = "position", rename_all = "snake_case")]
enum TailWire {
    Whole,
    Middle { profile: NodeProfile },
    Terminal { profile: NodeProfile },
}

fn question_reply(request: WireQuestionRequest) -> Result<WireQuestionResponse> {
    let head: NodeProfile =
        serde_json::from_value(request.head_profile).context("parsing head profile")?;
    let tail: TailWire =
        serde_json::from_value(request.tail_profile).context("parsing tail profile")?;
    let tool = ToolKind::parse(&request.tool)
        .with_context(|| format!("unknown tool `{}`", request.tool))?;
    let tail_ctx = match &tail {
        TailWire::Whole => TailCtx::Whole,
        TailWire::Middle { profile } => TailCtx::Middle(profile),
        TailWire::Terminal { profile } => TailCtx::Terminal(profile),
    };
    let args = match tool {
        ToolKind::Grounding => WireArgs {
            target_entity: Some(templates::grounding_target(&head)),
            ..WireArgs::default()
        },
        ToolKind::Highlight => WireArgs {
            target_entity: Some(templates::highlight_target(&head)),
            ..WireArgs::default()
        },
        ToolKind::Ocr | ToolKind::Answer => WireArgs::default(),
    };
    Ok(WireQuestionResponse {
        sub_question: templates::edge_question(&head, &tail_ctx, tool),
        args,
    })
}

fn combine_reply(request: &WireCombineRequest) -> WireCombineResponse {
    WireCombineResponse {
        question: templates::combine(&request.inner, &request.outer).unwrap_or_default(),
    }
}

fn policy_reply(request: &WirePolicyRequest) -> WirePolicyResponse {
    plan_step(&request.question, request.prior_sub_questions.len())
}

fn answer_step(sub_question: String, question: String) -> WirePolicyResponse {
    WirePolicyResponse {
        sub_question,
        tool: ToolKind::Answer.wire_name().to_string(),
        args: WireArgs {
            question: Some(question),
            ..WireArgs::default()
        },
    }
}

/// Picks step `k` of the decomposition plan for `question`.
///
/// Locating referents are grounded outermost first; the terminal edge then
/// runs as OCR + answer (text), a bare answer (color), or highlight + answer
/// (counting). A question the templates cannot decompose goes straight to
/// the answer tool, which reports its own failure in-band if the question
/// is outside its reach.
fn plan_step(question: &str, k: usize) -> WirePolicyResponse {
    let Some(plan) = templates::decompose(question) else {
        return answer_step(question.to_string(), question.to_string());
    };
    let locating = plan.edge_questions.len() - 1;
    if k < locating {
        let edge = plan.edge_questions.len() - 1 - k;
        let target = match plan.terminal {
            TerminalKind::Counting => plan.referents[edge - 1].clone(),
            TerminalKind::Text | TerminalKind::Color => plan.referents[edge].clone(),
        };
        return WirePolicyResponse {
            sub_question: plan.edge_questions[edge].clone(),
            tool: ToolKind::Grounding.wire_name().to_string(),
            args: WireArgs {
                target_entity: Some(target),
                ..WireArgs::default()
            },
        };
    }
    let terminal_q = plan.edge_questions[0].clone();
    match plan.terminal {
        TerminalKind::Text if k == locating => WirePolicyResponse {
            sub_question: terminal_q,
            tool: ToolKind::Ocr.wire_name().to_string(),
            args: WireArgs::default(),
        },
        TerminalKind::Counting if k == locating => {
            let subject = plan.subject_plural.as_deref().unwrap_or("object");
            WirePolicyResponse {
                sub_question: terminal_q.clone(),
                tool: ToolKind::Highlight.wire_name().to_string(),
                args: WireArgs {
                    target_entity: Some(format!("the {subject}")),
                    ..WireArgs::default()
                },
            }
        }
        _ => answer_step(terminal_q.clone(), terminal_q),
    }
}
