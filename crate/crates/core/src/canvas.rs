//! Annotated views over a scene: a viewport plus marks and highlights.
//!
//! A [`ViewState`] is the engine's working image. Marks are single red frames
//! placed by grounding; highlights outline every member of a matched set.
//! Annotations accumulate append-only until a crop re-clips them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{BBox, Scene};

#[derive(Debug, Error)]
pub enum CanvasError {
    #[error("crop rect {0} has zero area")]
    ZeroAreaCrop(BBox),
    #[error("render target {width}x{height} must be non-zero")]
    BadRenderSize { width: u32, height: u32 },
    #[error("scene `{scene_id}` references image `{path}`: {message}")]
    ImageRef {
        scene_id: String,
        path: String,
        message: String,
    },
}

/// Kind of overlay drawn on a view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    /// Single red frame around one region of interest.
    Mark,
    /// Magenta frame, one per member of a highlighted set.
    Highlight,
}

/// One overlay rectangle, with the entity ids it refers to (possibly empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub kind: AnnotationKind,
    pub rect: BBox,
    pub ref_entity_ids: Vec<String>,
}

/// The current working image: scene reference, viewport, and overlays.
///
/// Invariant: every annotation rect lies within the viewport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewState {
    pub scene_id: String,
    pub viewport: BBox,
    pub annotations: Vec<Annotation>,
}

impl ViewState {
    /// Most recent mark, if any. The crop rule keys off this.
    pub fn last_mark(&self) -> Option<&Annotation> {
        self.annotations
            .iter()
            .rev()
            .find(|a| a.kind == AnnotationKind::Mark)
    }

    pub fn highlight_count(&self) -> usize {
        self.annotations
            .iter()
            .filter(|a| a.kind == AnnotationKind::Highlight)
            .count()
    }
}

/// View covering the whole scene with no annotations.
pub fn full_view(scene: &Scene) -> ViewState {
    ViewState {
        scene_id: scene.id.clone(),
        viewport: scene.bounds(),
        annotations: Vec::new(),
    }
}

/// Returns a copy of `view` with one mark added.
///
/// Rects reaching outside the viewport are clipped to it with a warning;
/// a fully disjoint rect collapses to a degenerate box on the boundary.
pub fn add_mark(view: &ViewState, rect: BBox, ref_entity_ids: Vec<String>) -> ViewState {
    let mut out = view.clone();
    let clipped = rect.clamp_into(&view.viewport);
    if clipped != rect {
        log::warn!(
            "mark rect {} clipped to viewport {} of scene `{}`",
            rect,
            view.viewport,
            view.scene_id
        );
    }
    out.annotations.push(Annotation {
        kind: AnnotationKind::Mark,
        rect: clipped,
        ref_entity_ids,
    });
    out
}

/// Returns a copy of `view` with one highlight per given rect.
///
/// Each rect is clipped to the viewport like marks are. `ids` pairs with
/// `rects` positionally; missing trailing ids leave the reference list empty.
pub fn add_highlights(view: &ViewState, rects: &[BBox], ids: &[String]) -> ViewState {
    let mut out = view.clone();
    for (i, rect) in rects.iter().enumerate() {
        let clipped = rect.clamp_into(&view.viewport);
        if clipped != *rect {
            log::warn!(
                "highlight rect {} clipped to viewport {} of scene `{}`",
                rect,
                view.viewport,
                view.scene_id
            );
        }
        out.annotations.push(Annotation {
            kind: AnnotationKind::Highlight,
            rect: clipped,
            ref_entity_ids: ids.get(i).cloned().into_iter().collect(),
        });
    }
    out
}

/// Narrows the viewport to `rect`, the crop-and-enlarge primitive.
///
/// Annotations fully outside the new viewport are dropped; partially
/// overlapping ones are clipped. Crops compose: cropping twice equals
/// cropping to the intersection of the requested rects.
pub fn crop_zoom(view: &ViewState, rect: BBox) -> Result<ViewState, CanvasError> {
    let target = rect.clamp_into(&view.viewport);
    if target.area() == 0.0 {
        return Err(CanvasError::ZeroAreaCrop(rect));
    }
    let annotations = view
        .annotations
        .iter()
        .filter_map(|a| {
            a.rect.intersection(&target).map(|clipped| Annotation {
                kind: a.kind,
                rect: clipped,
                ref_entity_ids: a.ref_entity_ids.clone(),
            })
        })
        .collect();
    Ok(ViewState {
        scene_id: view.scene_id.clone(),
        viewport: target,
        annotations,
    })
}
