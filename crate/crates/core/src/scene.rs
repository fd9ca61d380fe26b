//! Scene graphs: axis-aligned boxes, detected entities, and scene collections.
//!
//! Coordinates use a top-left origin with x growing right and y growing down.
//! Scenes are immutable once loaded; every operation here is a pure function.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeTuple;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Errors raised by scene construction, geometry, and import.
#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid bbox ({x0}, {y0}, {x1}, {y1}): corners must satisfy x0 <= x1 and y0 <= y1")]
    InvalidBBox { x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error("bbox {bbox:?} lies outside scene `{scene_id}` bounds {width}x{height}")]
    OutOfBounds {
        scene_id: String,
        bbox: BBox,
        width: u32,
        height: u32,
    },
    #[error("scene `{0}` has non-positive dimensions")]
    BadDimensions(String),
    #[error("scene `{scene_id}` contains duplicate entity id `{entity_id}`")]
    DuplicateEntityId { scene_id: String, entity_id: String },
    #[error(
        "entity `{entity_id}` in scene `{scene_id}` has confidence {confidence} outside [0, 1]"
    )]
    BadConfidence {
        scene_id: String,
        entity_id: String,
        confidence: f64,
    },
    #[error("failed to parse {record}: {message}")]
    Parse { record: String, message: String },
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown scene id `{0}`")]
    UnknownScene(String),
}

/// Axis-aligned rectangle with `x0 <= x1` and `y0 <= y1`.
///
/// Serialized as the four-element array `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    /// Builds a box, rejecting corner pairs that are out of order.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, SceneError> {
        if !(x0 <= x1 && y0 <= y1) || [x0, y0, x1, y1].iter().any(|v| !v.is_finite()) {
            return Err(SceneError::InvalidBBox { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Area in squared scene units. Degenerate boxes have area zero.
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// True when the boxes share at least one point (touching edges count).
    pub fn intersects(&self, other: &BBox) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }

    /// Intersection rectangle, or `None` when the boxes are disjoint.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        if !self.intersects(other) {
            return None;
        }
        Some(BBox {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        })
    }

    /// Clamps `self` into `frame`, collapsing to a degenerate edge box when disjoint.
    pub fn clamp_into(&self, frame: &BBox) -> BBox {
        BBox {
            x0: self.x0.clamp(frame.x0, frame.x1),
            y0: self.y0.clamp(frame.y0, frame.y1),
            x1: self.x1.clamp(frame.x0, frame.x1),
            y1: self.y1.clamp(frame.y0, frame.y1),
        }
    }

    /// True when `other` lies entirely inside `self` (boundary contact allowed).
    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x0, self.y0, self.x1, self.y1)
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(4)?;
        t.serialize_element(&self.x0)?;
        t.serialize_element(&self.y0)?;
        t.serialize_element(&self.x1)?;
        t.serialize_element(&self.y1)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct BBoxVisitor;
        impl<'de> Visitor<'de> for BBoxVisitor {
            type Value = BBox;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a [x0, y0, x1, y1] array")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<BBox, A::Error> {
                let x0: f64 = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(0, &self))?;
                let y0: f64 = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(1, &self))?;
                let x1: f64 = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(2, &self))?;
                let y1: f64 = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(3, &self))?;
                BBox::new(x0, y0, x1, y1).map_err(serde::de::Error::custom)
            }
        }
        deserializer.deserialize_tuple(4, BBoxVisitor)
    }
}

/// One detected object with optional color and recognized text lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub label: String,
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(default)]
    pub color: Option<String>,
    #[serde(default)]
    pub text: Vec<String>,
}

/// A single annotated image: dimensions, optional backing file, and entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub caption: Option<String>,
    pub entities: Vec<Entity>,
}

impl Scene {
    /// Full-scene bounding box `(0, 0, width, height)`.
    pub fn bounds(&self) -> BBox {
        BBox {
            x0: 0.0,
            y0: 0.0,
            x1: self.width as f64,
            y1: self.height as f64,
        }
    }

    /// Diagonal length in scene units, used to scale proximity thresholds.
    pub fn diag(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt()
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Checks the structural invariants documented on the type.
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::BadDimensions(self.id.clone()));
        }
        let bounds = self.bounds();
        let mut seen = HashSet::new();
        for e in &self.entities {
            if !seen.insert(e.id.as_str()) {
                return Err(SceneError::DuplicateEntityId {
                    scene_id: self.id.clone(),
                    entity_id: e.id.clone(),
                });
            }
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(SceneError::BadConfidence {
                    scene_id: self.id.clone(),
                    entity_id: e.id.clone(),
                    confidence: e.confidence,
                });
            }
            if !bounds.contains(&e.bbox) {
                return Err(SceneError::OutOfBounds {
                    scene_id: self.id.clone(),
                    bbox: e.bbox,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }
}

/// Ordered collection of scenes as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSet {
    pub scenes: Vec<Scene>,
}

impl SceneSet {
    pub fn get(&self, id: &str) -> Result<&Scene, SceneError> {
        self.scenes
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| SceneError::UnknownScene(id.to_string()))
    }

    /// Parses and strictly validates a scene file.
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let raw = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let set: SceneSet = serde_json::from_str(&raw).map_err(|e| SceneError::Parse {
            record: path.display().to_string(),
            message: e.to_string(),
        })?;
        for scene in &set.scenes {
            scene.validate()?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        let body = serde_json::to_string_pretty(self).expect("scene set serializes");
        std::fs::write(path, body).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Fraction of the scene area covered by `bbox`, in `[0, 1]`.
///
/// Boxes that reach outside the scene bounds are a caller bug and rejected.
pub fn area_fraction(bbox: &BBox, scene: &Scene) -> Result<f64, SceneError> {
    let bounds = scene.bounds();
    if !bounds.contains(bbox) {
        return Err(SceneError::OutOfBounds {
            scene_id: scene.id.clone(),
            bbox: *bbox,
            width: scene.width,
            height: scene.height,
        });
    }
    Ok(bbox.area() / bounds.area())
}

/// Smallest box containing both inputs.
pub fn bbox_union(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x0: a.x0.min(b.x0),
        y0: a.y0.min(b.y0),
        x1: a.x1.max(b.x1),
        y1: a.y1.max(b.y1),
    }
}

/// Euclidean distance between the closest points of two boxes.
///
/// Zero when the boxes intersect or touch.
pub fn bbox_gap(a: &BBox, b: &BBox) -> f64 {
    let dx = (b.x0 - a.x1).max(a.x0 - b.x1).max(0.0);
    let dy = (b.y0 - a.y1).max(a.y0 - b.y1).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

/// A record skipped during lenient import, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportWarning {
    pub record: String,
    pub reason: String,
}

impl fmt::Display for ImportWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "skipped {}: {}", self.record, self.reason)
    }
}

/// Lenient ingestion of raw detector output in the scene JSON schema.
///
/// Entities with confidence outside `[0, 1]` or inverted bboxes are dropped
/// with a warning instead of failing the import. Structurally malformed
/// records fail the whole import with an error naming the record.
pub fn import_detections(raw: &str) -> Result<(SceneSet, Vec<ImportWarning>), SceneError> {
    let doc: serde_json::Value = serde_json::from_str(raw).map_err(|e| SceneError::Parse {
        record: "document root".to_string(),
        message: e.to_string(),
    })?;
    let scene_values = doc
        .get("scenes")
        .and_then(|v| v.as_array())
        .ok_or_else(|| SceneError::Parse {
            record: "document root".to_string(),
            message: "expected top-level object with a `scenes` array".to_string(),
        })?;

    let mut warnings = Vec::new();
    let mut scenes = Vec::new();
    for (i, value) in scene_values.iter().enumerate() {
        let scene_name = value
            .get("id")
            .and_then(|v| v.as_str())
            .map(|s| format!("scene `{s}`"))
            .unwrap_or_else(|| format!("scene #{i}"));
        let entity_values: Vec<serde_json::Value> = match value.get("entities") {
            Some(serde_json::Value::Array(items)) => items.clone(),
            Some(_) => {
                return Err(SceneError::Parse {
                    record: scene_name,
                    message: "`entities` must be an array".to_string(),
                })
            }
            None => Vec::new(),
        };
        let mut shell = value.clone();
        shell["entities"] = serde_json::Value::Array(Vec::new());
        let mut scene: Scene = serde_json::from_value(shell).map_err(|e| SceneError::Parse {
            record: scene_name.clone(),
            message: e.to_string(),
        })?;
        if scene.width == 0 || scene.height == 0 {
            return Err(SceneError::BadDimensions(scene.id.clone()));
        }
        let bounds = scene.bounds();
        for (j, ev) in entity_values.iter().enumerate() {
            let record = format!("{scene_name} entity #{j}");
            // Inverted corners must warn rather than fail, so the bbox is
            // inspected as raw numbers before Entity deserialization runs.
            if let Some(nums) = ev.get("bbox").and_then(parse_corner_array) {
                let [x0, y0, x1, y1] = nums;
                if x0 > x1 || y0 > y1 {
                    warnings.push(ImportWarning {
                        record,
                        reason: format!("negative-size bbox [{x0}, {y0}, {x1}, {y1}] rejected"),
                    });
                    continue;
                }
            }
            let entity: Entity =
                serde_json::from_value(ev.clone()).map_err(|e| SceneError::Parse {
                    record: record.clone(),
                    message: e.to_string(),
                })?;
            if !(0.0..=1.0).contains(&entity.confidence) {
                warnings.push(ImportWarning {
                    record,
                    reason: format!("confidence {} outside [0, 1] rejected", entity.confidence),
                });
                continue;
            }
            if !bounds.contains(&entity.bbox) {
                warnings.push(ImportWarning {
                    record,
                    reason: format!("bbox {} outside scene bounds rejected", entity.bbox),
                });
                continue;
            }
            scene.entities.push(entity);
        }
        scene.validate()?;
        scenes.push(scene);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((SceneSet { scenes }, warnings))
}

fn parse_corner_array(v: &serde_json::Value) -> Option<[f64; 4]> {
    let arr = v.as_array()?;
    if arr.len() != 4 {
        return None;
    }
    let mut out = [0.0; 4];
    for (slot, item) in out.iter_mut().zip(arr) {
        *slot = item.as_f64()?;
    }
    Some(out)
}
