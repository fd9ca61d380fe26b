//! Bottom-up synthesis of reasoning paths from scene graphs.
//!
//! A scene's entities become nodes (single entities, proximity groups, and
//! the whole image). A sampled chain walks from a subject node outward to
//! the whole image; each edge realizes as a sub-question plus a tool call,
//! executed innermost-question-last so every recorded step carries real
//! tool output. The per-edge questions fold into one combined question, and
//! only paths that survive validation are emitted.

pub mod templates;
pub mod validate;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canvas::{crop_zoom, full_view};
use crate::reasoner::next_view;
use crate::scene::{area_fraction, bbox_gap, bbox_union, BBox, Entity, Scene, SceneSet};
use crate::tools::oracle::{oracle_match, resolve_attribute_entity, visible_text};
use crate::tools::{
    ToolBackendBinding, ToolError, ToolExecutor, ToolInvocation, ToolKind, ToolOutput,
};
use crate::wire::{RemoteClient, WireCombineRequest, WireQuestionRequest};
use templates::{TailCtx, TerminalKind};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("tool execution failed during synthesis: {0}")]
    Tool(#[from] ToolError),
    #[error("question generation failed: {0}")]
    Generator(String),
    #[error("cannot combine `{outer}` into `{inner}`")]
    Combine { inner: String, outer: String },
    #[error("synthesis produced no final answer")]
    NoAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    SingleEntity,
    EntityGroup,
    WholeImage,
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::SingleEntity => "single_entity",
            NodeKind::EntityGroup => "entity_group",
            NodeKind::WholeImage => "whole_image",
        }
    }
}

/// The question-relevant surface of a node, independent of geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub kind: NodeKind,
    /// Entity label, or the dominant member label for a group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub text: Vec<String>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub member_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub bbox: BBox,
    /// Underlying entity ids: one for a single entity, the members for a
    /// group, none for the whole image.
    pub entity_ids: Vec<String>,
    pub profile: NodeProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// The tail contains the head's region.
    Containment,
    /// Head and tail sit within the proximity threshold of each other.
    Proximity,
    /// The tail is the whole image.
    InImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainEdge {
    pub tool: ToolKind,
    pub relation: Relation,
}

/// A chain of nodes from the subject out to the whole image. `edges[i]`
/// connects `nodes[i]` to `nodes[i + 1]`; `edges[0]` is the terminal edge
/// that produces the final answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub nodes: Vec<Node>,
    pub edges: Vec<ChainEdge>,
}

impl Chain {
    pub fn head(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn terminal_kind(&self) -> TerminalKind {
        if self.edges[0].tool == ToolKind::Ocr {
            TerminalKind::Text
        } else if self.nodes[0].kind == NodeKind::EntityGroup {
            TerminalKind::Counting
        } else {
            TerminalKind::Color
        }
    }

    /// Checks the five structural invariants every chain must satisfy.
    pub fn validate(
        &self,
        scene: &Scene,
        config: &SynthesisConfig,
    ) -> Result<(), validate::ValidationError> {
        use validate::ValidationError::Invariant;
        let fail = |which: u8, message: String| Err(Invariant { which, message });
        let m = self.nodes.len();

        if !(2..=config.max_chain_len).contains(&m) {
            return fail(
                1,
                format!("chain length {m} outside 2..={}", config.max_chain_len),
            );
        }
        if self.edges.len() != m - 1 {
            return fail(1, format!("{} edges for {m} nodes", self.edges.len()));
        }

        let whole_count = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::WholeImage)
            .count();
        if whole_count != 1 || self.nodes[m - 1].kind != NodeKind::WholeImage {
            return fail(
                2,
                "exactly one whole-image node, in last position".to_string(),
            );
        }
        if self.nodes[m - 1].bbox != scene.bounds() {
            return fail(2, "whole-image node must cover the scene".to_string());
        }

        let head = &self.nodes[0];
        let head_text = !head.profile.text.is_empty();
        match self.edges[0].tool {
            ToolKind::Ocr if head_text => {}
            ToolKind::Answer if !head_text => {}
            tool => {
                return fail(
                    3,
                    format!("terminal tool {tool} with head text present = {head_text}"),
                )
            }
        }
        if self.edges[1..]
            .iter()
            .any(|e| e.tool != ToolKind::Grounding)
        {
            return fail(
                3,
                "intermediary edges must use the locating tool".to_string(),
            );
        }

        let head_ok = match head.kind {
            NodeKind::SingleEntity => head_text || head.profile.color.is_some(),
            NodeKind::EntityGroup => head.profile.member_count >= 2,
            NodeKind::WholeImage => false,
        };
        if !head_ok {
            return fail(4, "head must be a text/color entity or a group".to_string());
        }
        if self.nodes[1..m - 1]
            .iter()
            .any(|n| n.kind != NodeKind::SingleEntity)
        {
            return fail(4, "intermediaries must be single entities".to_string());
        }

        let tail = &self.nodes[1];
        match (tail.kind, self.edges[0].relation) {
            (NodeKind::WholeImage, Relation::InImage) => {}
            (NodeKind::SingleEntity, Relation::Containment) => {
                if !tail.bbox.contains(&head.bbox) {
                    return fail(5, "terminal tail does not contain the head".to_string());
                }
            }
            (kind, relation) => {
                return fail(
                    5,
                    format!("terminal tail {kind:?} with relation {relation:?}"),
                )
            }
        }
        let threshold = config.delta * scene.diag();
        for i in 1..m - 1 {
            let next = &self.nodes[i + 1];
            match (next.kind, self.edges[i].relation) {
                (NodeKind::WholeImage, Relation::InImage) => {}
                (NodeKind::SingleEntity, Relation::Proximity) => {
                    let gap = bbox_gap(&self.nodes[i].bbox, &next.bbox);
                    if gap > threshold {
                        return fail(5, format!("gap {gap:.2} exceeds threshold {threshold:.2}"));
                    }
                }
                (kind, relation) => {
                    return fail(
                        5,
                        format!("edge {i} tail {kind:?} with relation {relation:?}"),
                    )
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Entities at or below this confidence are invisible to synthesis.
    pub min_confidence: f64,
    /// Proximity threshold as a fraction of the scene diagonal.
    pub delta: f64,
    /// Crop threshold handed to the tool executor.
    pub crop_alpha: f64,
    pub max_chain_len: usize,
    /// Chance of extending the chain at each growth point.
    pub grow_probability: f64,
    /// Sampling attempts per requested path before the slot is skipped.
    pub max_attempts: usize,
    pub paths_per_scene: usize,
    pub rng_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.5,
            delta: 0.05,
            crop_alpha: 0.2,
            max_chain_len: 4,
            grow_probability: 0.5,
            max_attempts: 32,
            paths_per_scene: 5,
            rng_seed: 42,
        }
    }
}

impl SynthesisConfig {
    fn executor(&self) -> ToolExecutor {
        ToolExecutor {
            binding: ToolBackendBinding {
                crop_alpha: self.crop_alpha,
                ..ToolBackendBinding::default()
            },
        }
    }
}

/// Which backend writes questions and combines them.
#[derive(Clone, Default)]
pub enum GeneratorChoice {
    #[default]
    Template,
    Remote(Arc<RemoteClient>),
}

impl std::fmt::Debug for GeneratorChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GeneratorChoice::Template => f.write_str("Template"),
            GeneratorChoice::Remote(client) => f
                .debug_tuple("Remote")
                .field(&client.endpoint.transport.address())
                .finish(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GeneratorBinding {
    pub questioner: GeneratorChoice,
    pub combiner: GeneratorChoice,
}

fn tail_to_value(tail: &TailCtx<'_>) -> serde_json::Value {
    match tail {
        TailCtx::Whole => serde_json::json!({ "position": "whole" }),
        TailCtx::Middle(p) => serde_json::json!({
            "position": "middle",
            "profile": serde_json::to_value(p).expect("profile serializes"),
        }),
        TailCtx::Terminal(p) => serde_json::json!({
            "position": "terminal",
            "profile": serde_json::to_value(p).expect("profile serializes"),
        }),
    }
}

impl GeneratorBinding {
    pub fn question_for_edge(
        &self,
        head: &NodeProfile,
        tail: &TailCtx<'_>,
        tool: ToolKind,
    ) -> Result<String, SynthesisError> {
        match &self.questioner {
            GeneratorChoice::Template => Ok(templates::edge_question(head, tail, tool)),
            GeneratorChoice::Remote(client) => {
                let request = WireQuestionRequest {
                    head_profile: serde_json::to_value(head).expect("profile serializes"),
                    tail_profile: tail_to_value(tail),
                    tool: tool.wire_name().to_string(),
                };
                let response = client
                    .generate_question(&request)
                    .map_err(|e| SynthesisError::Generator(e.to_string()))?;
                Ok(response.sub_question)
            }
        }
    }

    pub fn combine(&self, inner: &str, outer: &str) -> Result<String, SynthesisError> {
        match &self.combiner {
            GeneratorChoice::Template => {
                templates::combine(inner, outer).ok_or_else(|| SynthesisError::Combine {
                    inner: inner.to_string(),
                    outer: outer.to_string(),
                })
            }
            GeneratorChoice::Remote(client) => {
                let request = WireCombineRequest {
                    outer: outer.to_string(),
                    inner: inner.to_string(),
                };
                let response = client
                    .generate_combine(&request)
                    .map_err(|e| SynthesisError::Generator(e.to_string()))?;
                Ok(response.question)
            }
        }
    }
}

/// Entities visible to synthesis: confidence strictly above the threshold.
pub fn recognize_entities(scene: &Scene, min_confidence: f64) -> Vec<&Entity> {
    scene
        .entities
        .iter()
        .filter(|e| e.confidence > min_confidence)
        .collect()
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut root = i;
    while parent[root] != root {
        root = parent[root];
    }
    let mut walk = i;
    while parent[walk] != root {
        let next = parent[walk];
        parent[walk] = root;
        walk = next;
    }
    root
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        parent[hi] = lo;
    }
}

fn group_caption(counts: &[(usize, &str)]) -> String {
    let parts: Vec<String> = counts
        .iter()
        .map(|(count, label)| {
            if *count > 1 {
                format!("{count} {label}s")
            } else {
                format!("{count} {label}")
            }
        })
        .collect();
    format!("a group of {}", parts.join(" and "))
}

/// Builds the node set for a scene: one node per recognized entity, one per
/// proximity cluster of two or more, and the whole image last.
pub fn build_nodes(scene: &Scene, config: &SynthesisConfig) -> Vec<Node> {
    let recognized = recognize_entities(scene, config.min_confidence);
    let mut nodes: Vec<Node> = recognized
        .iter()
        .enumerate()
        .map(|(i, e)| Node {
            id: format!("n{i}"),
            kind: NodeKind::SingleEntity,
            bbox: e.bbox,
            entity_ids: vec![e.id.clone()],
            profile: NodeProfile {
                kind: NodeKind::SingleEntity,
                label: Some(e.label.clone()),
                color: e.color.clone(),
                text: e.text.clone(),
                member_count: 0,
                caption: None,
            },
        })
        .collect();

    let n = recognized.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let threshold = config.delta * scene.diag();
    for i in 0..n {
        for j in i + 1..n {
            if bbox_gap(&recognized[i].bbox, &recognized[j].bbox) <= threshold {
                union(&mut parent, i, j);
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        clusters.entry(root).or_default().push(i);
    }
    for (group_index, members) in clusters.values().filter(|m| m.len() >= 2).enumerate() {
        let mut label_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in members {
            *label_counts
                .entry(recognized[i].label.as_str())
                .or_default() += 1;
        }
        let mut counts: Vec<(usize, &str)> =
            label_counts.into_iter().map(|(l, c)| (c, l)).collect();
        counts.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let bbox = members
            .iter()
            .map(|&i| recognized[i].bbox)
            .reduce(|a, b| bbox_union(&a, &b))
            .expect("clusters are non-empty");
        nodes.push(Node {
            id: format!("g{group_index}"),
            kind: NodeKind::EntityGroup,
            bbox,
            entity_ids: members.iter().map(|&i| recognized[i].id.clone()).collect(),
            profile: NodeProfile {
                kind: NodeKind::EntityGroup,
                label: Some(counts[0].1.to_string()),
                color: None,
                text: Vec::new(),
                member_count: members.len(),
                caption: Some(group_caption(&counts)),
            },
        });
    }

    nodes.push(Node {
        id: "w".to_string(),
        kind: NodeKind::WholeImage,
        bbox: scene.bounds(),
        entity_ids: Vec::new(),
        profile: NodeProfile {
            kind: NodeKind::WholeImage,
            label: None,
            color: None,
            text: Vec::new(),
            member_count: 0,
            caption: scene.caption.clone(),
        },
    });
    nodes
}

fn terminal_kind_for(head: &Node) -> TerminalKind {
    if !head.profile.text.is_empty() {
        TerminalKind::Text
    } else if head.kind == NodeKind::EntityGroup {
        TerminalKind::Counting
    } else {
        TerminalKind::Color
    }
}

fn group_has_single_label(scene: &Scene, node: &Node) -> bool {
    node.entity_ids.iter().all(|id| {
        scene
            .entity(id)
            .map(|e| Some(&e.label) == node.profile.label.as_ref())
            .unwrap_or(false)
    })
}

fn head_eligible(scene: &Scene, node: &Node) -> bool {
    match node.kind {
        NodeKind::SingleEntity => !node.profile.text.is_empty() || node.profile.color.is_some(),
        NodeKind::EntityGroup => {
            node.profile.member_count >= 2 && group_has_single_label(scene, node)
        }
        NodeKind::WholeImage => false,
    }
}

/// The phrase pointed at this node must locate exactly this node's entity.
fn grounding_unique(scene: &Scene, node: &Node) -> bool {
    let target = templates::grounding_target(&node.profile);
    let full = full_view(scene);
    oracle_match(scene, &full, &target)
        .first()
        .map(|e| Some(&e.id) == node.entity_ids.first())
        .unwrap_or(false)
}

/// Whether the terminal answer comes out right in the view the answering
/// tool will actually consume (the tail's region, or the full image).
fn terminal_feasible(scene: &Scene, head: &Node, tail: Option<&Node>) -> bool {
    let full = full_view(scene);
    let view = match tail {
        None => full.clone(),
        Some(t) => match crop_zoom(&full, t.bbox) {
            Ok(v) => v,
            Err(_) => return false,
        },
    };
    match terminal_kind_for(head) {
        TerminalKind::Text => {
            !head.profile.text.is_empty() && visible_text(scene, &view) == head.profile.text
        }
        TerminalKind::Color => {
            head.profile.color.is_some()
                && resolve_attribute_entity(scene, &view).map(|e| &e.id) == head.entity_ids.first()
        }
        TerminalKind::Counting => {
            let matched = oracle_match(scene, &full, &templates::highlight_target(&head.profile));
            let matched_ids: Vec<&str> = matched.iter().map(|e| e.id.as_str()).collect();
            if !head
                .entity_ids
                .iter()
                .all(|id| matched_ids.contains(&id.as_str()))
            {
                return false;
            }
            let mut kept: Vec<&str> = matched
                .iter()
                .filter(|e| e.bbox.intersects(&view.viewport))
                .map(|e| e.id.as_str())
                .collect();
            kept.sort_unstable();
            let mut members: Vec<&str> = head.entity_ids.iter().map(String::as_str).collect();
            members.sort_unstable();
            kept == members
        }
    }
}

/// A mark on this node, clipped into the tail's region, must either vanish
/// or blanket it. Anything in between would later be mistaken for a
/// referent mark.
fn mark_safe_inside(node: &Node, tail: &Node) -> bool {
    match node.bbox.intersection(&tail.bbox) {
        None => true,
        Some(clipped) => clipped.area() >= 0.99 * tail.bbox.area(),
    }
}

/// Samples one chain, or `None` if this attempt found no workable layout.
pub fn sample_chain(
    scene: &Scene,
    nodes: &[Node],
    rng: &mut impl Rng,
    config: &SynthesisConfig,
) -> Option<Chain> {
    let heads: Vec<&Node> = nodes.iter().filter(|n| head_eligible(scene, n)).collect();
    if heads.is_empty() {
        return None;
    }
    let head = heads[rng.gen_range(0..heads.len())].clone();
    let terminal = terminal_kind_for(&head);

    let used_entities = |chain: &[Node], candidate: &Node| {
        candidate
            .entity_ids
            .iter()
            .any(|id| chain.iter().any(|n| n.entity_ids.contains(id)))
    };

    let s_tails: Vec<&Node> = nodes
        .iter()
        .filter(|t| {
            t.kind == NodeKind::SingleEntity
                && t.id != head.id
                && !used_entities(std::slice::from_ref(&head), t)
                && t.bbox.contains(&head.bbox)
                && area_fraction(&t.bbox, scene)
                    .map(|f| f < config.crop_alpha)
                    .unwrap_or(false)
                && grounding_unique(scene, t)
                && terminal_feasible(scene, &head, Some(t))
        })
        .collect();

    let mut chain_nodes = vec![head.clone()];
    let grow =
        config.max_chain_len >= 3 && !s_tails.is_empty() && rng.gen_bool(config.grow_probability);
    if grow {
        let tail = s_tails[rng.gen_range(0..s_tails.len())].clone();
        chain_nodes.push(tail);
        while chain_nodes.len() + 1 < config.max_chain_len && rng.gen_bool(config.grow_probability)
        {
            let prev_bbox = chain_nodes.last().expect("chain is non-empty").bbox;
            let anchor = chain_nodes[1].clone();
            let candidates: Vec<&Node> = nodes
                .iter()
                .filter(|y| {
                    y.kind == NodeKind::SingleEntity
                        && !chain_nodes.iter().any(|c| c.id == y.id)
                        && !used_entities(&chain_nodes, y)
                        && bbox_gap(&prev_bbox, &y.bbox) <= config.delta * scene.diag()
                        && grounding_unique(scene, y)
                        && (terminal != TerminalKind::Color || mark_safe_inside(y, &anchor))
                })
                .collect();
            if candidates.is_empty() {
                break;
            }
            let pick = candidates[rng.gen_range(0..candidates.len())].clone();
            chain_nodes.push(pick);
        }
    } else if !terminal_feasible(scene, &head, None) {
        return None;
    }

    let whole = nodes
        .iter()
        .find(|n| n.kind == NodeKind::WholeImage)?
        .clone();
    chain_nodes.push(whole);

    let m = chain_nodes.len();
    let terminal_tool = if chain_nodes[0].profile.text.is_empty() {
        ToolKind::Answer
    } else {
        ToolKind::Ocr
    };
    let mut edges = vec![ChainEdge {
        tool: terminal_tool,
        relation: if chain_nodes[1].kind == NodeKind::WholeImage {
            Relation::InImage
        } else {
            Relation::Containment
        },
    }];
    for i in 1..m - 1 {
        edges.push(ChainEdge {
            tool: ToolKind::Grounding,
            relation: if chain_nodes[i + 1].kind == NodeKind::WholeImage {
                Relation::InImage
            } else {
                Relation::Proximity
            },
        });
    }
    let chain = Chain {
        nodes: chain_nodes,
        edges,
    };
    chain.validate(scene, config).ok()?;
    Some(chain)
}

/// One recorded step of a synthesized path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub sub_question: String,
    pub invocation: ToolInvocation,
    pub output: ToolOutput,
    pub viewport: BBox,
}

/// A complete synthesized example: the combined question, its gold answer,
/// and the executed steps that derive it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub id: String,
    pub scene_id: String,
    pub question: String,
    pub gold_answer: String,
    pub terminal: TerminalKind,
    /// Node kinds along the chain, subject first.
    pub chain_kinds: Vec<String>,
    pub steps: Vec<PathStep>,
}

/// The per-edge questions for a chain, indexed like `chain.edges`.
pub fn edge_questions(
    chain: &Chain,
    generators: &GeneratorBinding,
) -> Result<Vec<String>, SynthesisError> {
    let mut questions = Vec::with_capacity(chain.edges.len());
    for (e, edge) in chain.edges.iter().enumerate() {
        let head = &chain.nodes[e].profile;
        let tail_node = &chain.nodes[e + 1];
        let tail = if tail_node.kind == NodeKind::WholeImage {
            TailCtx::Whole
        } else if e == 0 {
            TailCtx::Terminal(&tail_node.profile)
        } else {
            TailCtx::Middle(&tail_node.profile)
        };
        questions.push(generators.question_for_edge(head, &tail, edge.tool)?);
    }
    Ok(questions)
}

/// Folds per-edge questions into the combined question, innermost first.
pub fn fold_question(
    questions: &[String],
    generators: &GeneratorBinding,
) -> Result<String, SynthesisError> {
    let mut combined = questions[0].clone();
    for outer in &questions[1..] {
        combined = generators.combine(&combined, outer)?;
    }
    Ok(combined)
}

/// Executes a chain against the oracle and assembles the reasoning path.
pub fn synthesize_path(
    scene: &Scene,
    chain: &Chain,
    generators: &GeneratorBinding,
    config: &SynthesisConfig,
    path_id: &str,
) -> Result<ReasoningPath, SynthesisError> {
    let questions = edge_questions(chain, generators)?;
    let combined = fold_question(&questions, generators)?;
    let executor = config.executor();

    let mut view = full_view(scene);
    let mut steps: Vec<PathStep> = Vec::new();
    let push_step = |view: &mut crate::canvas::ViewState,
                     steps: &mut Vec<PathStep>,
                     sub_question: &str,
                     invocation: ToolInvocation|
     -> Result<ToolOutput, SynthesisError> {
        let (out_view, output) = executor.invoke(scene, view, &invocation)?;
        steps.push(PathStep {
            sub_question: sub_question.to_string(),
            invocation,
            output: output.clone(),
            viewport: out_view.viewport,
        });
        *view = next_view(view, &out_view, &output);
        Ok(output)
    };

    for e in (1..chain.edges.len()).rev() {
        let target = templates::grounding_target(&chain.nodes[e].profile);
        push_step(
            &mut view,
            &mut steps,
            &questions[e],
            ToolInvocation::grounding(target),
        )?;
    }

    let q1 = &questions[0];
    let final_output = match chain.terminal_kind() {
        TerminalKind::Text => {
            let ocr_output = push_step(&mut view, &mut steps, q1, ToolInvocation::ocr())?;
            let ToolOutput::Text { items } = ocr_output else {
                return Err(SynthesisError::NoAnswer);
            };
            push_step(
                &mut view,
                &mut steps,
                q1,
                ToolInvocation::answer_with_characters(q1.clone(), items),
            )?
        }
        TerminalKind::Color => push_step(
            &mut view,
            &mut steps,
            q1,
            ToolInvocation::answer(q1.clone()),
        )?,
        TerminalKind::Counting => {
            let target = templates::highlight_target(&chain.head().profile);
            push_step(&mut view, &mut steps, q1, ToolInvocation::highlight(target))?;
            push_step(
                &mut view,
                &mut steps,
                q1,
                ToolInvocation::answer(q1.clone()),
            )?
        }
    };
    let gold_answer = final_output.answer_text().ok_or(SynthesisError::NoAnswer)?;

    Ok(ReasoningPath {
        id: path_id.to_string(),
        scene_id: scene.id.clone(),
        question: combined,
        gold_answer,
        terminal: chain.terminal_kind(),
        chain_kinds: chain
            .nodes
            .iter()
            .map(|n| n.kind.name().to_string())
            .collect(),
        steps,
    })
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in s.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The per-scene seed: independent of scene order and of how work is split
/// across threads.
pub fn scene_seed(rng_seed: u64, scene_id: &str) -> u64 {
    splitmix64(rng_seed ^ fnv1a64(scene_id))
}

/// Synthesizes up to `paths_per_scene` validated paths for one scene.
pub fn synthesize_for_scene(
    scene: &Scene,
    config: &SynthesisConfig,
    generators: &GeneratorBinding,
) -> Vec<ReasoningPath> {
    let nodes = build_nodes(scene, config);
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(config.rng_seed, &scene.id));
    let mut paths = Vec::with_capacity(config.paths_per_scene);
    for slot in 0..config.paths_per_scene {
        let path_id = format!("{}-p{}", scene.id, slot);
        for _ in 0..config.max_attempts {
            let Some(chain) = sample_chain(scene, &nodes, &mut rng, config) else {
                continue;
            };
            match synthesize_path(scene, &chain, generators, config, &path_id) {
                Ok(path) => match validate::validate_path(scene, &chain, &path, config) {
                    Ok(()) => {
                        paths.push(path);
                        break;
                    }
                    Err(e) => log::debug!("path {path_id} rejected: {e}"),
                },
                Err(e) => log::debug!("path {path_id} failed to synthesize: {e}"),
            }
        }
    }
    paths
}

/// Synthesizes across all scenes in parallel. Output order and content are
/// independent of thread count: every scene derives its own generator state
/// from its id, and results keep scene order.
pub fn synthesize_dataset(
    scenes: &SceneSet,
    config: &SynthesisConfig,
    generators: &GeneratorBinding,
) -> Vec<ReasoningPath> {
    scenes
        .scenes
        .par_iter()
        .map(|scene| synthesize_for_scene(scene, config, generators))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ent(id: &str, label: &str, b: [f64; 4], color: &str, text: &[&str], conf: f64) -> Entity {
        Entity {
            id: id.into(),
            label: label.into(),
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            confidence: conf,
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
                ent("e0", "tray", [20.0, 20.0, 120.0, 120.0], "silver", &[], 0.9),
                ent(
                    "e1",
                    "card",
                    [40.0, 40.0, 80.0, 70.0],
                    "white",
                    &["ROOM 12"],
                    0.9,
                ),
                ent(
                    "e2",
                    "bottle",
                    [140.0, 20.0, 170.0, 60.0],
                    "green",
                    &[],
                    0.9,
                ),
                ent("e3", "shelf", [130.0, 10.0, 190.0, 80.0], "brown", &[], 0.9),
                ent(
                    "e4",
                    "person",
                    [200.0, 150.0, 210.0, 165.0],
                    "blue",
                    &[],
                    0.9,
                ),
                ent(
                    "e5",
                    "person",
                    [215.0, 150.0, 225.0, 165.0],
                    "olive",
                    &[],
                    0.9,
                ),
                ent(
                    "e6",
                    "person",
                    [230.0, 150.0, 240.0, 165.0],
                    "teal",
                    &[],
                    0.9,
                ),
                ent("e7", "ghost", [5.0, 180.0, 15.0, 190.0], "gray", &[], 0.5),
            ],
        }
    }

    #[test]
    fn recognition_threshold_is_strict() {
        let s = lab();
        let recognized = recognize_entities(&s, 0.5);
        assert!(recognized.iter().all(|e| e.id != "e7"));
        assert_eq!(recognized.len(), 7);
        let mut s2 = lab();
        s2.entities[7].confidence = 0.51;
        assert_eq!(recognize_entities(&s2, 0.5).len(), 8);
    }

    #[test]
    fn nodes_cover_entities_groups_and_the_whole_image() {
        let s = lab();
        let nodes = build_nodes(&s, &SynthesisConfig::default());
        let singles = nodes
            .iter()
            .filter(|n| n.kind == NodeKind::SingleEntity)
            .count();
        assert_eq!(singles, 7);
        let groups: Vec<&Node> = nodes
            .iter()
            .filter(|n| n.kind == NodeKind::EntityGroup)
            .collect();
        assert!(groups.iter().any(|g| {
            g.profile.label.as_deref() == Some("person") && g.profile.member_count == 3
        }));
        let person_group = groups
            .iter()
            .find(|g| g.profile.label.as_deref() == Some("person"))
            .unwrap();
        assert_eq!(
            person_group.profile.caption.as_deref(),
            Some("a group of 3 persons")
        );
        assert_eq!(person_group.entity_ids, vec!["e4", "e5", "e6"]);
        let wholes: Vec<&Node> = nodes
            .iter()
            .filter(|n| n.kind == NodeKind::WholeImage)
            .collect();
        assert_eq!(wholes.len(), 1);
        assert_eq!(wholes[0].bbox, s.bounds());
        assert_eq!(nodes.last().unwrap().kind, NodeKind::WholeImage);
    }

    #[test]
    fn mixed_label_clusters_get_count_sorted_captions() {
        let mut s = lab();
        s.entities.push(ent(
            "e8",
            "dog",
            [212.0, 152.0, 218.0, 160.0],
            "black",
            &[],
            0.9,
        ));
        let nodes = build_nodes(&s, &SynthesisConfig::default());
        let group = nodes
            .iter()
            .find(|n| n.kind == NodeKind::EntityGroup && n.entity_ids.contains(&"e8".to_string()))
            .unwrap();
        assert_eq!(group.profile.member_count, 4);
        assert_eq!(
            group.profile.caption.as_deref(),
            Some("a group of 3 persons and 1 dog")
        );
        assert_eq!(group.profile.label.as_deref(), Some("person"));
    }

    #[test]
    fn scene_seeds_differ_by_scene_and_stay_stable() {
        assert_eq!(scene_seed(42, "lab"), scene_seed(42, "lab"));
        assert_ne!(scene_seed(42, "lab"), scene_seed(42, "lobby"));
        assert_ne!(scene_seed(42, "lab"), scene_seed(43, "lab"));
    }

    #[test]
    fn sampled_chains_satisfy_every_invariant() {
        let s = lab();
        let config = SynthesisConfig::default();
        let nodes = build_nodes(&s, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut produced = 0;
        let mut multi = 0;
        for _ in 0..300 {
            if let Some(chain) = sample_chain(&s, &nodes, &mut rng, &config) {
                chain.validate(&s, &config).unwrap();
                produced += 1;
                if chain.nodes.len() > 2 {
                    multi += 1;
                }
            }
        }
        assert!(produced > 100, "only {produced} chains sampled");
        assert!(multi > 0, "no multi-node chains sampled");
    }

    #[test]
    fn synthesis_yields_validated_paths_for_every_slot() {
        let s = lab();
        let config = SynthesisConfig::default();
        let paths = synthesize_for_scene(&s, &config, &GeneratorBinding::default());
        assert_eq!(paths.len(), config.paths_per_scene);
        for path in &paths {
            assert!(!path.gold_answer.is_empty());
            assert_eq!(path.scene_id, "lab");
            assert!(path.steps.last().unwrap().invocation.kind == ToolKind::Answer);
        }
    }

    #[test]
    fn synthesis_is_deterministic_across_runs_and_thread_counts() {
        let scenes = SceneSet {
            scenes: vec![lab(), {
                let mut s = lab();
                s.id = "lab2".into();
                s
            }],
        };
        let config = SynthesisConfig::default();
        let generators = GeneratorBinding::default();
        let a = synthesize_dataset(&scenes, &config, &generators);
        let b = synthesize_dataset(&scenes, &config, &generators);
        assert_eq!(a, b);

        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| synthesize_dataset(&scenes, &config, &generators));
        assert_eq!(a, single);
    }

    #[test]
    fn chain_validation_rejects_broken_structures() {
        let s = lab();
        let config = SynthesisConfig::default();
        let nodes = build_nodes(&s, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chain = loop {
            if let Some(c) = sample_chain(&s, &nodes, &mut rng, &config) {
                break c;
            }
        };

        let mut no_whole = chain.clone();
        no_whole.nodes.pop();
        no_whole.edges.pop();
        if no_whole.nodes.len() >= 2 {
            assert!(no_whole.validate(&s, &config).is_err());
        }

        let mut wrong_tool = chain.clone();
        wrong_tool.edges[0].tool = if wrong_tool.edges[0].tool == ToolKind::Ocr {
            ToolKind::Answer
        } else {
            ToolKind::Ocr
        };
        assert!(wrong_tool.validate(&s, &config).is_err());

        let too_long = chain.clone();
        let tight = SynthesisConfig {
            max_chain_len: too_long.nodes.len() - 1,
            ..config.clone()
        };
        assert!(too_long.nodes.len() >= 2);
        too_long.validate(&s, &tight).unwrap_err();
    }
}
