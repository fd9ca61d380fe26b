//! The four visual tools and the executor that dispatches them.
//!
//! Every tool consumes the current view and produces either a new annotated
//! view (image-class output) or text items (text-class output). Before an
//! inferring tool runs, the executor may crop the view to the most recent
//! mark so the tool works on an enlarged detail instead of the whole frame.

pub mod oracle;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canvas::{add_highlights, add_mark, crop_zoom, CanvasError, ViewState};
use crate::scene::{area_fraction, BBox, Scene, SceneError};
use crate::wire::{
    view_to_wire, wire_rect_to_scene, RemoteClient, WireArgs, WireError, WireOutput,
    WireToolRequest,
};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("invalid invocation: {0}")]
    InvalidInvocation(String),
    #[error("{tool} failed: {message}")]
    Execution { tool: ToolKind, message: String },
    #[error(transparent)]
    Canvas(#[from] CanvasError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Grounding,
    Highlight,
    Ocr,
    Answer,
}

impl ToolKind {
    pub const ALL: [ToolKind; 4] = [
        ToolKind::Grounding,
        ToolKind::Highlight,
        ToolKind::Ocr,
        ToolKind::Answer,
    ];

    pub fn wire_name(&self) -> &'static str {
        match self {
            ToolKind::Grounding => "grounding",
            ToolKind::Highlight => "highlight",
            ToolKind::Ocr => "ocr",
            ToolKind::Answer => "answer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grounding" => Some(ToolKind::Grounding),
            "highlight" => Some(ToolKind::Highlight),
            "ocr" => Some(ToolKind::Ocr),
            "answer" => Some(ToolKind::Answer),
            _ => None,
        }
    }

    pub fn output_class(&self) -> OutputClass {
        match self {
            ToolKind::Grounding | ToolKind::Highlight => OutputClass::Image,
            ToolKind::Ocr | ToolKind::Answer => OutputClass::Text,
        }
    }

    /// Tools that read content off the view rather than locating regions.
    /// Only these trigger the pre-invocation crop.
    pub fn is_inferring(&self) -> bool {
        matches!(self, ToolKind::Ocr | ToolKind::Answer)
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputClass {
    Image,
    Text,
}

/// One tool call: the kind plus whichever arguments that kind takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub kind: ToolKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub characters: Vec<String>,
}

impl ToolInvocation {
    pub fn grounding(target: impl Into<String>) -> Self {
        Self {
            kind: ToolKind::Grounding,
            target_entity: Some(target.into()),
            question: None,
            characters: Vec::new(),
        }
    }

    pub fn highlight(target: impl Into<String>) -> Self {
        Self {
            kind: ToolKind::Highlight,
            target_entity: Some(target.into()),
            question: None,
            characters: Vec::new(),
        }
    }

    pub fn ocr() -> Self {
        Self {
            kind: ToolKind::Ocr,
            target_entity: None,
            question: None,
            characters: Vec::new(),
        }
    }

    pub fn answer(question: impl Into<String>) -> Self {
        Self {
            kind: ToolKind::Answer,
            target_entity: None,
            question: Some(question.into()),
            characters: Vec::new(),
        }
    }

    pub fn answer_with_characters(question: impl Into<String>, characters: Vec<String>) -> Self {
        Self {
            kind: ToolKind::Answer,
            target_entity: None,
            question: Some(question.into()),
            characters,
        }
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        let fail = |msg: String| Err(ToolError::InvalidInvocation(msg));
        match self.kind {
            ToolKind::Grounding | ToolKind::Highlight => {
                if self.target_entity.as_deref().is_none_or(str::is_empty) {
                    return fail(format!("{} requires a target entity phrase", self.kind));
                }
                if self.question.is_some() || !self.characters.is_empty() {
                    return fail(format!("{} takes only a target entity phrase", self.kind));
                }
            }
            ToolKind::Ocr => {
                if self.target_entity.is_some()
                    || self.question.is_some()
                    || !self.characters.is_empty()
                {
                    return fail("ocr takes no arguments".to_string());
                }
            }
            ToolKind::Answer => {
                if self.question.as_deref().is_none_or(str::is_empty) {
                    return fail("answer requires a question".to_string());
                }
                if self.target_entity.is_some() {
                    return fail("answer does not take a target entity".to_string());
                }
            }
        }
        Ok(())
    }
}

/// What a tool produced, independent of which backend ran it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolOutput {
    Image {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        marks: Vec<BBox>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        highlights: Vec<BBox>,
    },
    Text {
        items: Vec<String>,
    },
}

impl ToolOutput {
    pub fn class(&self) -> OutputClass {
        match self {
            ToolOutput::Image { .. } => OutputClass::Image,
            ToolOutput::Text { .. } => OutputClass::Text,
        }
    }

    /// The answer string carried by a text output (items joined by spaces).
    pub fn answer_text(&self) -> Option<String> {
        match self {
            ToolOutput::Text { items } => Some(items.join(" ")),
            ToolOutput::Image { .. } => None,
        }
    }
}

/// Which backend serves a tool.
#[derive(Clone)]
pub enum BackendChoice {
    Oracle,
    Remote(Arc<RemoteClient>),
}

impl fmt::Debug for BackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendChoice::Oracle => f.write_str("Oracle"),
            BackendChoice::Remote(client) => f
                .debug_tuple("Remote")
                .field(&client.endpoint.transport.address())
                .finish(),
        }
    }
}

pub const DEFAULT_CROP_ALPHA: f64 = 0.2;

/// Per-tool backend assignment plus the crop threshold.
#[derive(Debug, Clone)]
pub struct ToolBackendBinding {
    pub grounding: BackendChoice,
    pub highlight: BackendChoice,
    pub ocr: BackendChoice,
    pub answer: BackendChoice,
    /// Crop before an inferring tool when the marked region covers less
    /// than this fraction of the scene.
    pub crop_alpha: f64,
}

impl Default for ToolBackendBinding {
    fn default() -> Self {
        Self {
            grounding: BackendChoice::Oracle,
            highlight: BackendChoice::Oracle,
            ocr: BackendChoice::Oracle,
            answer: BackendChoice::Oracle,
            crop_alpha: DEFAULT_CROP_ALPHA,
        }
    }
}

impl ToolBackendBinding {
    pub fn choice(&self, kind: ToolKind) -> &BackendChoice {
        match kind {
            ToolKind::Grounding => &self.grounding,
            ToolKind::Highlight => &self.highlight,
            ToolKind::Ocr => &self.ocr,
            ToolKind::Answer => &self.answer,
        }
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        if !(self.crop_alpha > 0.0 && self.crop_alpha <= 1.0) {
            return Err(ToolError::InvalidInvocation(format!(
                "crop_alpha must be in (0, 1], got {}",
                self.crop_alpha
            )));
        }
        Ok(())
    }
}

/// Crops the view to the most recent mark before an inferring tool runs,
/// when that mark is small relative to the scene. Locating tools and views
/// without a usable mark pass through unchanged. A degenerate zero-area
/// mark cannot be cropped to, so it also passes through.
pub fn preprocess_for_tool(
    scene: &Scene,
    view: &ViewState,
    kind: ToolKind,
    crop_alpha: f64,
) -> Result<ViewState, ToolError> {
    if !kind.is_inferring() {
        return Ok(view.clone());
    }
    let Some(mark) = view.last_mark() else {
        return Ok(view.clone());
    };
    let rect = mark.rect;
    if rect.area() <= 0.0 {
        return Ok(view.clone());
    }
    if area_fraction(&rect, scene)? < crop_alpha {
        Ok(crop_zoom(view, rect)?)
    } else {
        Ok(view.clone())
    }
}

/// Executes tool invocations against the configured backends.
#[derive(Debug, Clone, Default)]
pub struct ToolExecutor {
    pub binding: ToolBackendBinding,
}

impl ToolExecutor {
    /// All four tools served by the deterministic oracle.
    pub fn oracle() -> Self {
        Self::default()
    }

    pub fn new(binding: ToolBackendBinding) -> Result<Self, ToolError> {
        binding.validate()?;
        Ok(Self { binding })
    }

    /// Runs one invocation, returning the view after the tool (including
    /// any pre-invocation crop) together with the tool's output.
    pub fn invoke(
        &self,
        scene: &Scene,
        view: &ViewState,
        invocation: &ToolInvocation,
    ) -> Result<(ViewState, ToolOutput), ToolError> {
        invocation.validate()?;
        let view = preprocess_for_tool(scene, view, invocation.kind, self.binding.crop_alpha)?;
        match self.binding.choice(invocation.kind) {
            BackendChoice::Oracle => oracle::execute(scene, &view, invocation),
            BackendChoice::Remote(client) => remote_execute(client, scene, &view, invocation),
        }
    }
}

pub(crate) fn render_dims(viewport: &BBox, longest: u32) -> (u32, u32) {
    let longest = longest.max(1) as f64;
    let (w, h) = (viewport.width(), viewport.height());
    if w >= h {
        (longest as u32, ((longest * h / w).round() as u32).max(1))
    } else {
        (((longest * w / h).round() as u32).max(1), longest as u32)
    }
}

fn remote_execute(
    client: &RemoteClient,
    scene: &Scene,
    view: &ViewState,
    invocation: &ToolInvocation,
) -> Result<(ViewState, ToolOutput), ToolError> {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;

    let (out_w, out_h) = render_dims(&view.viewport, client.endpoint.render_px);
    let png = crate::render::render(view, scene, out_w, out_h)?;
    let request = WireToolRequest {
        tool: invocation.kind.wire_name().to_string(),
        args: WireArgs {
            target_entity: invocation.target_entity.clone(),
            question: invocation.question.clone(),
            characters: if invocation.characters.is_empty() {
                None
            } else {
                Some(invocation.characters.clone())
            },
        },
        view: view_to_wire(view),
        image_png_b64: STANDARD.encode(&png),
    };
    let output = client.invoke_tool(&request).map_err(|e| match e {
        WireError::Backend(_, message) => ToolError::Execution {
            tool: invocation.kind,
            message,
        },
        other => ToolError::Wire(other),
    })?;
    let class_violation = || ToolError::Execution {
        tool: invocation.kind,
        message: format!(
            "backend returned the wrong output class, expected {:?}",
            invocation.kind.output_class()
        ),
    };
    match (invocation.kind.output_class(), output) {
        (OutputClass::Image, WireOutput::Image { marks, highlights }) => {
            let map = |raw: &[f64; 4]| {
                wire_rect_to_scene(raw, &view.viewport).ok_or_else(|| ToolError::Execution {
                    tool: invocation.kind,
                    message: format!("backend returned an unusable rect {raw:?}"),
                })
            };
            let mut new_view = view.clone();
            let mut mark_rects = Vec::with_capacity(marks.len());
            for raw in &marks {
                let rect = map(raw)?;
                new_view = add_mark(&new_view, rect, Vec::new());
                mark_rects.push(rect);
            }
            let mut highlight_rects = Vec::with_capacity(highlights.len());
            for raw in &highlights {
                highlight_rects.push(map(raw)?);
            }
            new_view = add_highlights(&new_view, &highlight_rects, &[]);
            Ok((
                new_view,
                ToolOutput::Image {
                    marks: mark_rects,
                    highlights: highlight_rects,
                },
            ))
        }
        (OutputClass::Text, WireOutput::Text { items }) => {
            let items = if invocation.kind == ToolKind::Answer {
                vec![items.join(" ")]
            } else {
                items
            };
            Ok((view.clone(), ToolOutput::Text { items }))
        }
        _ => Err(class_violation()),
    }
}
