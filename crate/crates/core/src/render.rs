//! Deterministic raster export of views as PNG bytes.
//!
//! Scenes backed by an image file are cropped to the viewport and scaled with
//! nearest-neighbor sampling. Scenes without one get a synthetic render:
//! white background, one filled rect per visible entity in its named color,
//! drawn in scene order. Marks overlay as red outlines and highlights as
//! magenta outlines in both modes. Entity text is never rasterized.
//!
//! The scene-to-pixel mapping is affine per axis; rect edges round to the
//! nearest pixel and fill as half-open spans, so equal inputs always produce
//! byte-identical output.

use image::{ImageEncoder, RgbImage};
use std::path::Path;

use crate::canvas::{AnnotationKind, CanvasError, ViewState};
use crate::scene::{BBox, Scene};

const MARK_RGB: [u8; 3] = [255, 0, 0];
const HIGHLIGHT_RGB: [u8; 3] = [255, 0, 255];
const UNKNOWN_RGB: [u8; 3] = [128, 128, 128];

/// Fill colors for entity rects, keyed by lowercase color name.
pub const NAMED_COLORS: &[(&str, [u8; 3])] = &[
    ("red", [220, 50, 47]),
    ("green", [60, 160, 60]),
    ("blue", [50, 90, 200]),
    ("yellow", [235, 210, 50]),
    ("purple", [130, 60, 180]),
    ("orange", [240, 140, 30]),
    ("pink", [240, 130, 170]),
    ("brown", [140, 90, 50]),
    ("black", [20, 20, 20]),
    ("white", [245, 245, 245]),
    ("gray", [128, 128, 128]),
    ("cyan", [40, 190, 200]),
    ("magenta", [200, 40, 180]),
    ("teal", [30, 130, 130]),
    ("navy", [25, 35, 100]),
    ("olive", [110, 110, 40]),
    ("maroon", [120, 30, 40]),
    ("gold", [212, 175, 55]),
    ("silver", [170, 170, 180]),
    ("beige", [222, 210, 180]),
];

/// True when `name` is one of the colors the toolchain understands.
pub fn is_known_color(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    NAMED_COLORS.iter().any(|(n, _)| *n == lower)
}

fn color_rgb(name: &str) -> Option<[u8; 3]> {
    let lower = name.to_ascii_lowercase();
    NAMED_COLORS
        .iter()
        .find(|(n, _)| *n == lower)
        .map(|(_, rgb)| *rgb)
}

/// Outline stroke width in pixels for a given output size.
pub fn stroke_width(out_w: u32, out_h: u32) -> u32 {
    ((0.02 * out_w.min(out_h) as f64) as u32).max(1)
}

/// Maps one scene-space rect into half-open pixel spans of the output raster.
fn to_pixel_rect(rect: &BBox, viewport: &BBox, out_w: u32, out_h: u32) -> (i64, i64, i64, i64) {
    let sx = out_w as f64 / viewport.width();
    let sy = out_h as f64 / viewport.height();
    let x0 = ((rect.x0 - viewport.x0) * sx).round() as i64;
    let y0 = ((rect.y0 - viewport.y0) * sy).round() as i64;
    let x1 = ((rect.x1 - viewport.x0) * sx).round() as i64;
    let y1 = ((rect.y1 - viewport.y0) * sy).round() as i64;
    (x0, y0, x1, y1)
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, y0) = (x0.max(0), y0.max(0));
    let (x1, y1) = (x1.min(w), y1.min(h));
    for y in y0..y1 {
        for x in x0..x1 {
            img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
        }
    }
}

fn outline_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, s: i64, rgb: [u8; 3]) {
    // The stroke band sits just inside the rect edges. Rects thinner than
    // two strokes fill completely.
    if x1 - x0 <= 2 * s || y1 - y0 <= 2 * s {
        fill_rect(img, x0, y0, x1, y1, rgb);
        return;
    }
    fill_rect(img, x0, y0, x1, y0 + s, rgb);
    fill_rect(img, x0, y1 - s, x1, y1, rgb);
    fill_rect(img, x0, y0 + s, x0 + s, y1 - s, rgb);
    fill_rect(img, x1 - s, y0 + s, x1, y1 - s, rgb);
}

/// Renders `view` to PNG bytes at the requested output size.
pub fn render(
    view: &ViewState,
    scene: &Scene,
    out_w: u32,
    out_h: u32,
) -> Result<Vec<u8>, CanvasError> {
    if out_w == 0 || out_h == 0 {
        return Err(CanvasError::BadRenderSize {
            width: out_w,
            height: out_h,
        });
    }
    let mut img = match &scene.image_ref {
        Some(path) => base_from_image(view, scene, path, out_w, out_h)?,
        None => synthetic_base(view, scene, out_w, out_h),
    };

    let s = stroke_width(out_w, out_h) as i64;
    for a in &view.annotations {
        let (x0, y0, x1, y1) = to_pixel_rect(&a.rect, &view.viewport, out_w, out_h);
        let rgb = match a.kind {
            AnnotationKind::Mark => MARK_RGB,
            AnnotationKind::Highlight => HIGHLIGHT_RGB,
        };
        outline_rect(&mut img, x0, y0, x1, y1, s, rgb);
    }

    let mut bytes = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut bytes);
    encoder
        .write_image(img.as_raw(), out_w, out_h, image::ExtendedColorType::Rgb8)
        .expect("in-memory png encode");
    Ok(bytes)
}

fn synthetic_base(view: &ViewState, scene: &Scene, out_w: u32, out_h: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(out_w, out_h, image::Rgb([255, 255, 255]));
    for entity in &scene.entities {
        let Some(visible) = entity.bbox.intersection(&view.viewport) else {
            continue;
        };
        let rgb = match &entity.color {
            Some(name) => color_rgb(name).unwrap_or_else(|| {
                log::warn!(
                    "entity `{}` in scene `{}` has unknown color `{}`, using mid-gray",
                    entity.id,
                    scene.id,
                    name
                );
                UNKNOWN_RGB
            }),
            None => UNKNOWN_RGB,
        };
        let (x0, y0, x1, y1) = to_pixel_rect(&visible, &view.viewport, out_w, out_h);
        fill_rect(&mut img, x0, y0, x1, y1, rgb);
    }
    img
}

fn base_from_image(
    view: &ViewState,
    scene: &Scene,
    path: &str,
    out_w: u32,
    out_h: u32,
) -> Result<RgbImage, CanvasError> {
    let imageref_err = |message: String| CanvasError::ImageRef {
        scene_id: scene.id.clone(),
        path: path.to_string(),
        message,
    };
    if !Path::new(path).exists() {
        return Err(imageref_err("file not found".to_string()));
    }
    let src = image::open(path)
        .map_err(|e| imageref_err(e.to_string()))?
        .into_rgb8();
    // Crop bounds round outward to whole pixels so the viewport is covered.
    let x0 = (view.viewport.x0.floor().max(0.0) as u32).min(src.width().saturating_sub(1));
    let y0 = (view.viewport.y0.floor().max(0.0) as u32).min(src.height().saturating_sub(1));
    let x1 = (view.viewport.x1.ceil() as u32).clamp(x0 + 1, src.width());
    let y1 = (view.viewport.y1.ceil() as u32).clamp(y0 + 1, src.height());
    let cropped = image::imageops::crop_imm(&src, x0, y0, x1 - x0, y1 - y0).to_image();
    Ok(image::imageops::resize(
        &cropped,
        out_w,
        out_h,
        image::imageops::FilterType::Nearest,
    ))
}
