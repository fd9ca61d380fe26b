//! Dataset records and their on-disk JSONL forms.
//!
//! Two record shapes cover the two training regimes: one line per path for
//! end-to-end supervision, and one line per step for stepwise policy
//! supervision. Records serialize with a fixed field order and carry a
//! format marker, so a file read back and rewritten is byte-identical.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{BBox, Scene};
use crate::synthesis::templates::TerminalKind;
use crate::synthesis::ReasoningPath;
use crate::tools::{OutputClass, ToolInvocation, ToolOutput};

pub const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: format `{found}` is not `{FORMAT_VERSION}`")]
    Format { line: usize, found: String },
}

/// One reasoning path per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub format: String,
    pub id: String,
    pub scene_id: String,
    pub question: String,
    pub gold_answer: String,
    pub terminal: TerminalKind,
    pub chain_kinds: Vec<String>,
    pub steps: Vec<crate::synthesis::PathStep>,
}

impl PathRecord {
    pub fn from_path(path: &ReasoningPath) -> Self {
        Self {
            format: FORMAT_VERSION.to_string(),
            id: path.id.clone(),
            scene_id: path.scene_id.clone(),
            question: path.question.clone(),
            gold_answer: path.gold_answer.clone(),
            terminal: path.terminal,
            chain_kinds: path.chain_kinds.clone(),
            steps: path.steps.clone(),
        }
    }

    pub fn into_path(self) -> ReasoningPath {
        ReasoningPath {
            id: self.id,
            scene_id: self.scene_id,
            question: self.question,
            gold_answer: self.gold_answer,
            terminal: self.terminal,
            chain_kinds: self.chain_kinds,
            steps: self.steps,
        }
    }
}

/// One executed step per line: everything a stepwise policy sees as input,
/// and the step it should propose. The gold answer appears only on a path's
/// final record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub format: String,
    pub path_id: String,
    pub scene_id: String,
    pub question: String,
    pub step_index: usize,
    /// The view the policy is looking at when proposing this step.
    pub input_viewport: BBox,
    pub prior_sub_questions: Vec<String>,
    pub sub_question: String,
    pub invocation: ToolInvocation,
    pub output: ToolOutput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
}

/// Splits a path into stepwise records. Input viewports are derived from
/// the recorded steps: an image-producing step moves the view to its own
/// consumed viewport, anything else leaves it alone.
pub fn emit_step_records(scene: &Scene, path: &ReasoningPath) -> Vec<StepRecord> {
    let mut records = Vec::with_capacity(path.steps.len());
    let mut viewport = scene.bounds();
    let mut prior: Vec<String> = Vec::new();
    let last = path.steps.len().saturating_sub(1);
    for (i, step) in path.steps.iter().enumerate() {
        records.push(StepRecord {
            format: FORMAT_VERSION.to_string(),
            path_id: path.id.clone(),
            scene_id: path.scene_id.clone(),
            question: path.question.clone(),
            step_index: i,
            input_viewport: viewport,
            prior_sub_questions: prior.clone(),
            sub_question: step.sub_question.clone(),
            invocation: step.invocation.clone(),
            output: step.output.clone(),
            gold_answer: (i == last).then(|| path.gold_answer.clone()),
        });
        if step.output.class() == OutputClass::Image {
            viewport = step.viewport;
        }
        prior.push(step.sub_question.clone());
    }
    records
}

fn write_lines<T: Serialize>(w: &mut impl Write, records: &[T]) -> Result<(), DatasetError> {
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|source| DatasetError::Json { line: 0, source })?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn read_lines<T: serde::de::DeserializeOwned>(
    r: impl BufRead,
    format_of: impl Fn(&T) -> &str,
) -> Result<Vec<T>, DatasetError> {
    let mut records = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|source| DatasetError::Json {
            line: i + 1,
            source,
        })?;
        let found = format_of(&record);
        if found != FORMAT_VERSION {
            return Err(DatasetError::Format {
                line: i + 1,
                found: found.to_string(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_paths_jsonl(w: &mut impl Write, paths: &[ReasoningPath]) -> Result<(), DatasetError> {
    let records: Vec<PathRecord> = paths.iter().map(PathRecord::from_path).collect();
    write_lines(w, &records)
}

pub fn read_paths_jsonl(r: impl BufRead) -> Result<Vec<ReasoningPath>, DatasetError> {
    let records: Vec<PathRecord> = read_lines(r, |rec: &PathRecord| rec.format.as_str())?;
    Ok(records.into_iter().map(PathRecord::into_path).collect())
}

pub fn write_step_records_jsonl(
    w: &mut impl Write,
    records: &[StepRecord],
) -> Result<(), DatasetError> {
    write_lines(w, records)
}

pub fn read_step_records_jsonl(r: impl BufRead) -> Result<Vec<StepRecord>, DatasetError> {
    read_lines(r, |rec: &StepRecord| rec.format.as_str())
}

/// Aggregate shape of a path corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub paths: usize,
    pub scenes: usize,
    pub steps_total: usize,
    pub mean_steps: f64,
    pub by_terminal: std::collections::BTreeMap<String, usize>,
    pub by_chain_len: std::collections::BTreeMap<usize, usize>,
    pub tool_calls: std::collections::BTreeMap<String, usize>,
}

pub fn corpus_stats(paths: &[ReasoningPath]) -> CorpusStats {
    let mut scenes = std::collections::BTreeSet::new();
    let mut by_terminal = std::collections::BTreeMap::new();
    let mut by_chain_len = std::collections::BTreeMap::new();
    let mut tool_calls = std::collections::BTreeMap::new();
    let mut steps_total = 0;
    for path in paths {
        scenes.insert(path.scene_id.as_str());
        *by_terminal
            .entry(path.terminal.name().to_string())
            .or_default() += 1;
        *by_chain_len.entry(path.chain_kinds.len()).or_default() += 1;
        steps_total += path.steps.len();
        for step in &path.steps {
            *tool_calls
                .entry(step.invocation.kind.to_string())
                .or_default() += 1;
        }
    }
    CorpusStats {
        paths: paths.len(),
        scenes: scenes.len(),
        steps_total,
        mean_steps: if paths.is_empty() {
            0.0
        } else {
            steps_total as f64 / paths.len() as f64
        },
        by_terminal,
        by_chain_len,
        tool_calls,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_gen::generate_scenes;
    use crate::synthesis::{synthesize_dataset, GeneratorBinding, SynthesisConfig};

    fn small_corpus() -> (crate::scene::SceneSet, Vec<ReasoningPath>) {
        let scenes = generate_scenes(6, 42);
        let paths = synthesize_dataset(
            &scenes,
            &SynthesisConfig::default(),
            &GeneratorBinding::default(),
        );
        (scenes, paths)
    }

    #[test]
    fn paths_round_trip_byte_identically() {
        let (_, paths) = small_corpus();
        assert!(!paths.is_empty());
        let mut first = Vec::new();
        write_paths_jsonl(&mut first, &paths).unwrap();
        let reread = read_paths_jsonl(first.as_slice()).unwrap();
        assert_eq!(reread, paths);
        let mut second = Vec::new();
        write_paths_jsonl(&mut second, &reread).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn step_records_round_trip_byte_identically() {
        let (scenes, paths) = small_corpus();
        let records: Vec<StepRecord> = paths
            .iter()
            .flat_map(|p| {
                let scene = scenes.get(&p.scene_id).unwrap();
                emit_step_records(scene, p)
            })
            .collect();
        let mut first = Vec::new();
        write_step_records_jsonl(&mut first, &records).unwrap();
        let reread = read_step_records_jsonl(first.as_slice()).unwrap();
        assert_eq!(reread, records);
        let mut second = Vec::new();
        write_step_records_jsonl(&mut second, &reread).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn step_records_track_view_and_context() {
        let (scenes, paths) = small_corpus();
        let multi = paths
            .iter()
            .find(|p| p.chain_kinds.len() >= 3)
            .expect("corpus contains a grounding chain");
        let scene = scenes.get(&multi.scene_id).unwrap();
        let records = emit_step_records(scene, multi);
        assert_eq!(records.len(), multi.steps.len());
        assert_eq!(records[0].input_viewport, scene.bounds());
        assert!(records[0].prior_sub_questions.is_empty());
        for (i, rec) in records.iter().enumerate() {
            assert_eq!(rec.step_index, i);
            assert_eq!(rec.prior_sub_questions.len(), i);
            let expect_gold = i + 1 == records.len();
            assert_eq!(rec.gold_answer.is_some(), expect_gold);
        }
        let first_image = &records[0];
        assert_eq!(first_image.output.class(), OutputClass::Image);
        assert_eq!(records[1].input_viewport, multi.steps[0].viewport);
    }

    #[test]
    fn reader_rejects_foreign_format_markers() {
        let (_, paths) = small_corpus();
        let mut buf = Vec::new();
        write_paths_jsonl(&mut buf, &paths[..1]).unwrap();
        let tampered = String::from_utf8(buf).unwrap().replace("\"v1\"", "\"v9\"");
        let err = read_paths_jsonl(tampered.as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::Format { line: 1, .. }));
    }

    #[test]
    fn stats_summarize_the_corpus() {
        let (_, paths) = small_corpus();
        let stats = corpus_stats(&paths);
        assert_eq!(stats.paths, paths.len());
        assert_eq!(stats.scenes, 6);
        assert_eq!(stats.by_terminal.values().sum::<usize>(), stats.paths);
        assert_eq!(stats.by_chain_len.values().sum::<usize>(), stats.paths);
        assert_eq!(stats.tool_calls.values().sum::<usize>(), stats.steps_total);
        assert!(stats.mean_steps >= 1.0);
    }
}
