//! Shared fixtures for the criterion benches.

use reasonforge_core::synthesis::{
    synthesize_dataset, GeneratorBinding, ReasoningPath, SynthesisConfig,
};
use reasonforge_core::{generate_scenes, SceneSet};

/// A seeded scene set together with its synthesized reasoning paths.
pub fn corpus(scene_count: usize, seed: u64) -> (SceneSet, Vec<ReasoningPath>) {
    let scenes = generate_scenes(scene_count, seed);
    let config = SynthesisConfig {
        rng_seed: seed,
        ..SynthesisConfig::default()
    };
    let paths = synthesize_dataset(&scenes, &config, &GeneratorBinding::default());
    (scenes, paths)
}
