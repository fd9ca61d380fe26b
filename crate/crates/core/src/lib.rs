//! Stepwise visual reasoning over scene graphs.
//!
//! The engine decomposes a main question into tool-resolvable sub-questions,
//! invokes visual tools (grounding, highlighting, OCR, answering) against a
//! scene, and tracks the working image as views narrow toward the answer.
//! A companion synthesis pipeline builds reasoning paths bottom-up from
//! scene graphs, so the whole loop is verifiable end-to-end with
//! deterministic oracle backends and no model in sight.

pub mod canvas;
pub mod dataset;
pub mod evalharness;
pub mod reasoner;
pub mod render;
pub mod scene;
pub mod scene_gen;
pub mod synthesis;
pub mod tools;
pub mod wire;

pub use canvas::{Annotation, AnnotationKind, CanvasError, ViewState};
pub use dataset::{corpus_stats, CorpusStats, DatasetError, PathRecord, StepRecord};
pub use reasoner::{
    Policy, ProposedStep, ReasoningTask, RemotePolicy, RunConfig, ScriptedPolicy, Step,
    StepOutcome, Termination, Trace,
};
pub use scene::{BBox, Entity, Scene, SceneError, SceneSet};
pub use scene_gen::generate_scenes;
pub use synthesis::{
    synthesize_dataset, Chain, GeneratorBinding, GeneratorChoice, NodeKind, NodeProfile,
    ReasoningPath, SynthesisConfig, SynthesisError,
};
pub use tools::{
    OutputClass, ToolBackendBinding, ToolError, ToolExecutor, ToolInvocation, ToolKind, ToolOutput,
};
pub use wire::{RemoteClient, RemoteEndpoint, RemoteTransport, WireError};
