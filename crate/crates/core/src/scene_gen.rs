//! Seeded generation of synthetic scenes.
//!
//! Every generated scene stages the same cast with jittered geometry and
//! rotated vocabulary: two containers sitting side by side, a labeled text
//! carrier inside one and a colored subject inside the other, one large
//! dominant surface, an isolated same-label cluster, and a low-confidence
//! decoy. The layout keeps containers under the crop threshold, the cluster
//! inside the proximity threshold but away from everything else, and the
//! dominant surface strictly the largest entity, so every scene supports
//! text, color, and counting questions at chain lengths two through four.
//!
//! Labels and colors are curated so no label contains another label, its
//! plural, or a color name as a substring; phrase matching stays exact.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::render::NAMED_COLORS;
use crate::scene::{BBox, Entity, Scene, SceneSet};
use crate::synthesis::scene_seed;

const CONTAINER_LABELS: &[&str] = &["tray", "shelf", "desk", "bench", "rack"];
const TEXT_LABELS: &[&str] = &["sign", "card", "note", "poster", "ticket"];
const SUBJECT_LABELS: &[&str] = &["mug", "vase", "kettle", "jug", "bowl"];
const SURFACE_LABELS: &[&str] = &["sofa", "carpet", "table", "cabinet", "counter"];
const CLUSTER_LABELS: &[&str] = &["crate", "lamp", "drum", "helmet", "plant"];

const TEXT_CODES: &[&str] = &[
    "GATE 7", "ROOM 12", "EXIT 3", "DOCK 9", "LOT 44", "BAY 5", "LANE 2", "ZONE 8",
];
const TEXT_WORDS: &[&str] = &["OPEN", "CLOSED", "NORTH", "SOUTH", "EAST", "WEST"];

const SCENE_W: u32 = 320;
const SCENE_H: u32 = 240;

fn pick<'a>(rng: &mut impl Rng, options: &[&'a str]) -> &'a str {
    options[rng.gen_range(0..options.len())]
}

struct ColorPool {
    names: Vec<&'static str>,
}

impl ColorPool {
    fn new() -> Self {
        Self {
            names: NAMED_COLORS.iter().map(|(name, _)| *name).collect(),
        }
    }

    fn take(&mut self, rng: &mut impl Rng) -> String {
        let i = rng.gen_range(0..self.names.len());
        self.names.swap_remove(i).to_string()
    }
}

fn jitter(rng: &mut impl Rng, base: f64, spread: u32) -> f64 {
    base + rng.gen_range(0..=spread) as f64
}

fn confidence(rng: &mut impl Rng) -> f64 {
    0.55 + rng.gen_range(0..=40) as f64 / 100.0
}

fn generate_scene(index: usize, seed: u64) -> Scene {
    let id = format!("scene-{index:04}");
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(seed, &id));
    let mut colors = ColorPool::new();

    let container_a = pick(&mut rng, CONTAINER_LABELS);
    let offset = 1 + rng.gen_range(0..CONTAINER_LABELS.len() - 1);
    let a_pos = CONTAINER_LABELS
        .iter()
        .position(|l| *l == container_a)
        .expect("label comes from the list");
    let container_b = CONTAINER_LABELS[(a_pos + offset) % CONTAINER_LABELS.len()];
    let text_label = pick(&mut rng, TEXT_LABELS);
    let subject_label = pick(&mut rng, SUBJECT_LABELS);
    let surface_label = pick(&mut rng, SURFACE_LABELS);
    let cluster_label = pick(&mut rng, CLUSTER_LABELS);

    let mut entities: Vec<Entity> = Vec::new();
    fn entity(
        entities: &mut Vec<Entity>,
        label: &str,
        bbox: BBox,
        color: String,
        text: Vec<String>,
        conf: f64,
    ) {
        entities.push(Entity {
            id: format!("e{}", entities.len()),
            label: label.to_string(),
            bbox,
            confidence: conf,
            color: Some(color),
            text,
        });
    }

    let ax = jitter(&mut rng, 20.0, 6);
    let ay = jitter(&mut rng, 30.0, 3);
    let a_box = BBox::new(ax, ay, ax + 90.0, ay + 90.0).expect("static layout");
    let conf = confidence(&mut rng);
    entity(
        &mut entities,
        container_a,
        a_box,
        colors.take(&mut rng),
        vec![],
        conf,
    );

    let tx = jitter(&mut rng, ax + 18.0, 3);
    let ty = jitter(&mut rng, ay + 22.0, 3);
    let tw = jitter(&mut rng, 52.0, 6);
    let th = jitter(&mut rng, 40.0, 6);
    let mut text = vec![pick(&mut rng, TEXT_CODES).to_string()];
    if rng.gen_bool(0.5) {
        text.push(pick(&mut rng, TEXT_WORDS).to_string());
    }
    let t_box = BBox::new(tx, ty, tx + tw, ty + th).expect("static layout");
    let conf = confidence(&mut rng);
    entity(
        &mut entities,
        text_label,
        t_box,
        colors.take(&mut rng),
        text,
        conf,
    );

    let bx = a_box.x1 + 12.0 + rng.gen_range(0..=7) as f64;
    let by = jitter(&mut rng, 30.0, 3);
    let b_box = BBox::new(bx, by, bx + 90.0, by + 90.0).expect("static layout");
    let conf = confidence(&mut rng);
    entity(
        &mut entities,
        container_b,
        b_box,
        colors.take(&mut rng),
        vec![],
        conf,
    );

    let cx = jitter(&mut rng, bx + 20.0, 3);
    let cy = jitter(&mut rng, by + 20.0, 3);
    let cw = jitter(&mut rng, 48.0, 6);
    let ch = jitter(&mut rng, 38.0, 6);
    let c_box = BBox::new(cx, cy, cx + cw, cy + ch).expect("static layout");
    let conf = confidence(&mut rng);
    entity(
        &mut entities,
        subject_label,
        c_box,
        colors.take(&mut rng),
        vec![],
        conf,
    );

    let dx = jitter(&mut rng, 28.0, 6);
    let dw = jitter(&mut rng, 252.0, 8);
    let d_box = BBox::new(dx, 146.0, dx + dw, 182.0).expect("static layout");
    let conf = confidence(&mut rng);
    entity(
        &mut entities,
        surface_label,
        d_box,
        colors.take(&mut rng),
        vec![],
        conf,
    );

    let member_count = rng.gen_range(2..=4);
    let start = jitter(&mut rng, 196.0, 8);
    let row = jitter(&mut rng, 204.0, 4);
    for m in 0..member_count {
        let x = start + 21.0 * m as f64;
        let m_box = BBox::new(x, row, x + 16.0, row + 20.0).expect("static layout");
        let conf = confidence(&mut rng);
        entity(
            &mut entities,
            cluster_label,
            m_box,
            colors.take(&mut rng),
            vec![],
            conf,
        );
    }

    let decoy_box = BBox::new(300.0, 10.0, 310.0, 20.0).expect("static layout");
    entity(
        &mut entities,
        "cone",
        decoy_box,
        colors.take(&mut rng),
        vec![],
        0.3,
    );

    let scene = Scene {
        id,
        width: SCENE_W,
        height: SCENE_H,
        image_ref: None,
        caption: Some(format!(
            "a staged room with a {container_a} and a {container_b}"
        )),
        entities,
    };
    debug_assert!(scene.validate().is_ok());
    scene
}

/// Generates `count` scenes deterministically from `seed`. Scene content
/// depends only on the scene's own id and the seed, never on `count`.
pub fn generate_scenes(count: usize, seed: u64) -> SceneSet {
    SceneSet {
        scenes: (0..count).map(|i| generate_scene(i, seed)).collect(),
    }
}
