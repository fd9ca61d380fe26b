//! Operator entry point: scene generation, path synthesis, batch runs and
//! replays, dataset validation, trace scoring, rendering, and stdio-served
//! wire backends.
//!
//! Per-task failures are data: they land inside the written traces, and the
//! process exits 0. Nonzero exits mean operator trouble: 2 for bad flags,
//! files, or config, 3 when synthesis yields nothing.

mod config;
mod serve;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use config::{ClientCache, FileConfig};
use reasonforge_core::canvas::{add_mark, crop_zoom, full_view};
use reasonforge_core::dataset::{
    emit_step_records, read_paths_jsonl, write_paths_jsonl, write_step_records_jsonl,
    FORMAT_VERSION,
};
use reasonforge_core::evalharness::{item_from_trace, summarize, ErrorLabel, EvalItem, MetricKind};
use reasonforge_core::reasoner::{
    replay, run, ProposedStep, RemotePolicy, RunConfig, Termination, Trace,
};
use reasonforge_core::synthesis::validate::revalidate_recorded;
use reasonforge_core::synthesis::{
    synthesize_dataset, GeneratorBinding, ReasoningPath, SynthesisConfig,
};
use reasonforge_core::tools::{ToolBackendBinding, ToolExecutor};
use reasonforge_core::{corpus_stats, generate_scenes, BBox, RemoteClient, SceneSet};

/// Deterministic scene-graph reasoning: synthesize stepwise training paths,
/// run them through tool backends, and score the traces.
#[derive(Parser)]
#[command(name = "reasonforge", version)]
struct Cli {
    /// TOML config file (falls back to $REASONFORGE_CONFIG when unset).
    /// Command-line flags override config values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene file.
    GenScenes {
        /// Number of scenes.
        #[arg(long, default_value_t = 20, value_name = "N")]
        count: usize,
        /// RNG seed (default: config seed, then 42).
        #[arg(long)]
        seed: Option<u64>,
        /// Output scene file (JSON).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Synthesize a reasoning-path dataset from a scene file.
    Synthesize {
        /// Input scene file.
        #[arg(long, value_name = "FILE")]
        scenes: PathBuf,
        /// Output directory for dataset.e2e.jsonl, dataset.steps.jsonl,
        /// and stats.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Use only the first N scenes of the file.
        #[arg(long, value_name = "N")]
        count: Option<usize>,
        /// Paths to attempt per scene.
        #[arg(long, value_name = "N")]
        per_scene: Option<usize>,
        /// RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Longest chain to sample (nodes, whole image included).
        #[arg(long, value_name = "N")]
        max_chain_len: Option<usize>,
        /// Worker threads (default: all cores).
        #[arg(long, value_name = "N")]
        parallelism: Option<usize>,
        /// Sub-question generator: "template" or a remote endpoint.
        #[arg(long, value_name = "BACKEND")]
        questioner: Option<String>,
        /// Question combiner: "template" or a remote endpoint.
        #[arg(long, value_name = "BACKEND")]
        combiner: Option<String>,
    },
    /// Run dataset questions through a policy against tool backends.
    Run(RunArgs),
    /// Re-execute each path's recorded steps (a run with the scripted policy).
    Replay(ReplayArgs),
    /// Re-check every dataset path against its scene; failures are reported,
    /// not fatal.
    Validate {
        /// Scene file the dataset was synthesized from.
        #[arg(long, value_name = "FILE")]
        scenes: PathBuf,
        /// Dataset to validate (dataset.e2e.jsonl).
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Optional JSON report destination.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Score a trace file against the dataset it was run from.
    Eval {
        /// Trace file written by `run` or `replay`.
        #[arg(long, value_name = "FILE")]
        traces: PathBuf,
        /// Gold dataset (dataset.e2e.jsonl).
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        /// Scene file backing the gold dataset.
        #[arg(long, value_name = "FILE")]
        scenes: PathBuf,
        /// Headline metric: "em" or "recall".
        #[arg(long, default_value = "em")]
        metric: String,
        /// Report destination.
        #[arg(long, default_value = "report.json", value_name = "FILE")]
        out: PathBuf,
    },
    /// Summarize a dataset.
    Stats {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Also write the summary to a file.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Render a scene (optionally cropped and marked) to a PNG.
    Render {
        #[arg(long, value_name = "FILE")]
        scenes: PathBuf,
        #[arg(long, value_name = "ID")]
        scene_id: String,
        /// Output PNG file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Crop to this scene-coordinate rectangle "x0,y0,x1,y1".
        #[arg(long, value_name = "RECT")]
        viewport: Option<String>,
        /// Draw a mark around this rectangle "x0,y0,x1,y1".
        #[arg(long, value_name = "RECT")]
        mark: Option<String>,
        /// Pixel length of the longer output edge.
        #[arg(long, default_value_t = 448, value_name = "PX")]
        long_side: u32,
    },
    /// Serve one wire-protocol role over stdin/stdout (newline-delimited
    /// JSON), for use as a subprocess backend.
    ServeStdio {
        #[arg(long, value_enum)]
        role: serve::Role,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scene file the dataset was synthesized from.
    #[arg(long, value_name = "FILE")]
    scenes: PathBuf,
    /// Task dataset (dataset.e2e.jsonl).
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Output trace file (JSONL).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// "scripted" replays each path's recorded steps; "remote" drives the
    /// endpoint from --policy-endpoint or the config's backends.policy.
    #[arg(long, default_value = "scripted")]
    policy: String,
    /// Endpoint for --policy remote.
    #[arg(long, value_name = "BACKEND")]
    policy_endpoint: Option<String>,
    /// Backend for all four tools: "oracle" or a remote endpoint.
    /// Overrides any per-tool bindings in the config.
    #[arg(long, value_name = "BACKEND")]
    tools: Option<String>,
    /// Step budget per task.
    #[arg(long, value_name = "N")]
    max_steps: Option<usize>,
    /// Show prior tool outputs to the policy.
    #[arg(long)]
    context_passthrough: bool,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Scene file the dataset was synthesized from.
    #[arg(long, value_name = "FILE")]
    scenes: PathBuf,
    /// Task dataset (dataset.e2e.jsonl).
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Output trace file (JSONL).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Backend for all four tools: "oracle" or a remote endpoint.
    #[arg(long, value_name = "BACKEND")]
    tools: Option<String>,
    /// Step budget per task.
    #[arg(long, value_name = "N")]
    max_steps: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    parallelism: Option<usize>,
}

impl From<ReplayArgs> for RunArgs {
    fn from(args: ReplayArgs) -> Self {
        RunArgs {
            scenes: args.scenes,
            dataset: args.dataset,
            out: args.out,
            policy: "scripted".to_string(),
            policy_endpoint: None,
            tools: args.tools,
            max_steps: args.max_steps,
            context_passthrough: false,
            parallelism: args.parallelism,
        }
    }
}

/// One trace-file line: the dataset path id joined to the executed trace.
#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    format: String,
    path_id: String,
    trace: Trace,
}

#[derive(Debug, Serialize)]
struct ValidationFailure {
    path_id: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    total: usize,
    valid: usize,
    failures: Vec<ValidationFailure>,
}

/// Schema of the file `eval` writes.
#[derive(Debug, Serialize)]
struct EvalFileReport {
    accuracy: f64,
    metric: String,
    n: usize,
    /// Fraction of each error label among non-correct items; sums to 1
    /// whenever errors exist.
    errors: BTreeMap<String, f64>,
    /// Mean headline metric keyed by the gold path's step count.
    by_steps: BTreeMap<usize, f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenScenes { count, seed, out } => cmd_gen_scenes(&cfg, count, seed, &out),
        Command::Synthesize {
            scenes,
            out,
            count,
            per_scene,
            seed,
            max_chain_len,
            parallelism,
            questioner,
            combiner,
        } => cmd_synthesize(
            &cfg,
            &scenes,
            &out,
            count,
            per_scene,
            seed,
            max_chain_len,
            parallelism,
            questioner,
            combiner,
        ),
        Command::Run(args) => cmd_run(&cfg, args),
        Command::Replay(args) => cmd_run(&cfg, args.into()),
        Command::Validate {
            scenes,
            dataset,
            out,
        } => cmd_validate(&cfg, &scenes, &dataset, out.as_deref()),
        Command::Eval {
            traces,
            gold,
            scenes,
            metric,
            out,
        } => cmd_eval(&cfg, &traces, &gold, &scenes, &metric, &out),
        Command::Stats { dataset, out } => cmd_stats(&dataset, out.as_deref()),
        Command::Render {
            scenes,
            scene_id,
            out,
            viewport,
            mark,
            long_side,
        } => cmd_render(&scenes, &scene_id, &out, viewport, mark, long_side),
        Command::ServeStdio { role } => {
            serve::serve(role)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_scenes(path: &Path) -> Result<SceneSet> {
    SceneSet::load(path).with_context(|| format!("loading scenes from {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Vec<ReasoningPath>> {
    let file = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    read_paths_jsonl(BufReader::new(file))
        .with_context(|| format!("reading dataset {}", path.display()))
}

fn load_traces(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).with_context(|| format!("opening traces {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(&line)
            .with_context(|| format!("parsing {} line {}", path.display(), i + 1))?;
        if record.format != FORMAT_VERSION {
            bail!(
                "{} line {}: unsupported trace format `{}` (expected `{}`)",
                path.display(),
                i + 1,
                record.format,
                FORMAT_VERSION
            );
        }
        records.push(record);
    }
    Ok(records)
}

fn write_json_file(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs `f` on a dedicated pool of `threads` workers, or inline on the
/// default pool when no count is given.
fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let Some(n) = threads else {
        return Ok(f());
    };
    if n == 0 {
        bail!("--parallelism must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .context("building worker pool")?;
    Ok(pool.install(f))
}

fn script_of(path: &ReasoningPath) -> Vec<ProposedStep> {
    path.steps
        .iter()
        .map(|s| ProposedStep {
            sub_question: s.sub_question.clone(),
            invocation: s.invocation.clone(),
        })
        .collect()
}

fn synthesis_config(cfg: &FileConfig) -> SynthesisConfig {
    let mut synth = SynthesisConfig::default();
    if let Some(v) = cfg.min_confidence {
        synth.min_confidence = v;
    }
    if let Some(v) = cfg.delta {
        synth.delta = v;
    }
    if let Some(v) = cfg.crop_alpha {
        synth.crop_alpha = v;
    }
    if let Some(v) = cfg.max_chain_len {
        synth.max_chain_len = v;
    }
    if let Some(v) = cfg.paths_per_scene {
        synth.paths_per_scene = v;
    }
    if let Some(v) = cfg.seed {
        synth.rng_seed = v;
    }
    synth
}

/// All-oracle executor carrying the config's crop threshold; the referee
/// traces are diagnosed against.
fn oracle_executor(cfg: &FileConfig) -> Result<ToolExecutor> {
    let mut binding = ToolBackendBinding::default();
    if let Some(a) = cfg.crop_alpha {
        binding.crop_alpha = a;
    }
    Ok(ToolExecutor::new(binding)?)
}

fn cmd_gen_scenes(
    cfg: &FileConfig,
    count: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<ExitCode> {
    let seed = seed.or(cfg.seed).unwrap_or(42);
    let scenes = generate_scenes(count, seed);
    write_json_file(out, &scenes)?;
    println!(
        "wrote {} scenes (seed {seed}) to {}",
        scenes.scenes.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synthesize(
    cfg: &FileConfig,
    scenes: &Path,
    out: &Path,
    count: Option<usize>,
    per_scene: Option<usize>,
    seed: Option<u64>,
    max_chain_len: Option<usize>,
    parallelism: Option<usize>,
    questioner: Option<String>,
    combiner: Option<String>,
) -> Result<ExitCode> {
    let mut scene_set = load_scenes(scenes)?;
    if let Some(n) = count {
        scene_set.scenes.truncate(n);
    }

    let mut synth = synthesis_config(cfg);
    if let Some(v) = seed {
        synth.rng_seed = v;
    }
    if let Some(v) = per_scene {
        synth.paths_per_scene = v;
    }
    if let Some(v) = max_chain_len {
        synth.max_chain_len = v;
    }

    let mut cache = ClientCache::default();
    let questioner = questioner
        .or_else(|| cfg.backends.questioner.clone())
        .unwrap_or_else(|| "template".to_string());
    let combiner = combiner
        .or_else(|| cfg.backends.combiner.clone())
        .unwrap_or_else(|| "template".to_string());
    let generators = GeneratorBinding {
        questioner: cache.generator(&questioner)?,
        combiner: cache.generator(&combiner)?,
    };

    let threads = parallelism.or(cfg.parallelism);
    let paths = with_pool(threads, || {
        synthesize_dataset(&scene_set, &synth, &generators)
    })?;
    if paths.is_empty() {
        eprintln!(
            "no reasoning paths could be synthesized from {} scenes",
            scene_set.scenes.len()
        );
        return Ok(ExitCode::from(3));
    }

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let e2e_path = out.join("dataset.e2e.jsonl");
    let mut w = BufWriter::new(File::create(&e2e_path)?);
    write_paths_jsonl(&mut w, &paths)?;
    w.flush()?;

    let mut records = Vec::new();
    for path in &paths {
        let scene = scene_set.get(&path.scene_id)?;
        records.extend(emit_step_records(scene, path));
    }
    let steps_path = out.join("dataset.steps.jsonl");
    let mut w = BufWriter::new(File::create(&steps_path)?);
    write_step_records_jsonl(&mut w, &records)?;
    w.flush()?;

    write_json_file(&out.join("stats.json"), &corpus_stats(&paths))?;

    println!(
        "synthesized {} paths ({} step records) from {} scenes into {}",
        paths.len(),
        records.len(),
        scene_set.scenes.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

enum PolicyMode {
    Scripted,
    Remote(Arc<RemoteClient>),
}

fn cmd_run(cfg: &FileConfig, args: RunArgs) -> Result<ExitCode> {
    let scene_set = load_scenes(&args.scenes)?;
    let paths = load_dataset(&args.dataset)?;

    let mut cache = ClientCache::default();
    let mut binding = ToolBackendBinding::default();
    if let Some(a) = cfg.crop_alpha {
        binding.crop_alpha = a;
    }
    match args.tools.as_deref() {
        Some(spec) => {
            let choice = cache.tool_backend(spec)?;
            binding.grounding = choice.clone();
            binding.highlight = choice.clone();
            binding.ocr = choice.clone();
            binding.answer = choice;
        }
        None => {
            if let Some(spec) = &cfg.backends.grounding {
                binding.grounding = cache.tool_backend(spec)?;
            }
            if let Some(spec) = &cfg.backends.highlight {
                binding.highlight = cache.tool_backend(spec)?;
            }
            if let Some(spec) = &cfg.backends.ocr {
                binding.ocr = cache.tool_backend(spec)?;
            }
            if let Some(spec) = &cfg.backends.answer {
                binding.answer = cache.tool_backend(spec)?;
            }
        }
    }
    let executor = ToolExecutor::new(binding)?;

    let mut run_config = RunConfig::default();
    if let Some(v) = cfg.max_steps {
        run_config.max_steps = v;
    }
    if let Some(v) = args.max_steps {
        run_config.max_steps = v;
    }
    run_config.context_passthrough = args.context_passthrough;

    let mode = match args.policy.as_str() {
        "scripted" => PolicyMode::Scripted,
        "remote" => {
            let spec = args
                .policy_endpoint
                .clone()
                .or_else(|| cfg.backends.policy.clone())
                .context("--policy remote needs --policy-endpoint or a [backends] policy entry")?;
            PolicyMode::Remote(cache.client(&spec)?)
        }
        other => bail!("unknown policy `{other}` (expected `scripted` or `remote`)"),
    };

    let threads = args.parallelism.or(cfg.parallelism);
    let records = with_pool(threads, || -> Result<Vec<RunRecord>> {
        paths
            .par_iter()
            .map(|path| {
                let scene = scene_set.get(&path.scene_id)?;
                let trace = match &mode {
                    PolicyMode::Scripted => replay(
                        scene,
                        &path.question,
                        &script_of(path),
                        &executor,
                        &run_config,
                    )
                    .with_context(|| format!("replaying path {}", path.id))?,
                    PolicyMode::Remote(client) => {
                        let mut policy = RemotePolicy::new(client.clone());
                        run(scene, &path.question, &mut policy, &executor, &run_config)
                    }
                };
                Ok(RunRecord {
                    format: FORMAT_VERSION.to_string(),
                    path_id: path.id.clone(),
                    trace,
                })
            })
            .collect()
    })??;

    let mut w = BufWriter::new(File::create(&args.out)?);
    for record in &records {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let answered = records
        .iter()
        .filter(|r| r.trace.termination == Termination::Answered)
        .count();
    println!(
        "ran {} tasks ({answered} answered) -> {}",
        records.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(
    cfg: &FileConfig,
    scenes: &Path,
    dataset: &Path,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let scene_set = load_scenes(scenes)?;
    let paths = load_dataset(dataset)?;
    let synth = synthesis_config(cfg);

    let mut failures = Vec::new();
    for path in &paths {
        let scene = scene_set.get(&path.scene_id)?;
        if let Err(err) = revalidate_recorded(scene, path, &synth) {
            failures.push(ValidationFailure {
                path_id: path.id.clone(),
                error: err.to_string(),
            });
        }
    }
    let report = ValidationReport {
        total: paths.len(),
        valid: paths.len() - failures.len(),
        failures,
    };
    println!(
        "validated {} paths: {} valid, {} failing",
        report.total,
        report.valid,
        report.failures.len()
    );
    for failure in &report.failures {
        println!("  {}: {}", failure.path_id, failure.error);
    }
    if let Some(out) = out {
        write_json_file(out, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(
    cfg: &FileConfig,
    traces: &Path,
    gold: &Path,
    scenes: &Path,
    metric: &str,
    out: &Path,
) -> Result<ExitCode> {
    let metric = MetricKind::parse(metric)
        .with_context(|| format!("unknown metric `{metric}` (expected `em` or `recall`)"))?;
    let scene_set = load_scenes(scenes)?;
    let gold_paths = load_dataset(gold)?;
    let records = load_traces(traces)?;

    let by_id: BTreeMap<&str, &ReasoningPath> =
        gold_paths.iter().map(|p| (p.id.as_str(), p)).collect();
    let referee = oracle_executor(cfg)?;

    let mut items = Vec::with_capacity(records.len());
    let mut gold_steps = Vec::with_capacity(records.len());
    for record in &records {
        let Some(path) = by_id.get(record.path_id.as_str()) else {
            bail!(
                "trace `{}` has no matching path in {}",
                record.path_id,
                gold.display()
            );
        };
        let scene = scene_set.get(&path.scene_id)?;
        items.push(item_from_trace(scene, path, &record.trace, &referee));
        gold_steps.push(path.steps.len());
    }

    let report = summarize(items);
    let pick = |item: &EvalItem| match metric {
        MetricKind::ExactMatch => item.exact_match,
        MetricKind::AnswerRecall => item.answer_recall,
    };
    let accuracy = if report.items.is_empty() {
        0.0
    } else {
        report.items.iter().map(pick).sum::<f64>() / report.items.len() as f64
    };

    let error_items: Vec<&EvalItem> = report
        .items
        .iter()
        .filter(|i| i.label != ErrorLabel::Correct)
        .collect();
    let mut errors: BTreeMap<String, f64> = BTreeMap::new();
    for item in &error_items {
        *errors.entry(item.label.name().to_string()).or_default() += 1.0;
    }
    for fraction in errors.values_mut() {
        *fraction /= error_items.len() as f64;
    }

    let mut step_sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (item, steps) in report.items.iter().zip(&gold_steps) {
        let entry = step_sums.entry(*steps).or_insert((0.0, 0));
        entry.0 += pick(item);
        entry.1 += 1;
    }
    let by_steps: BTreeMap<usize, f64> = step_sums
        .into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect();

    println!(
        "evaluated {} traces against {}",
        report.total,
        gold.display()
    );
    println!("accuracy ({}): {:.4}", metric.name(), accuracy);
    println!("answered: {}/{}", report.answered, report.total);
    println!(
        "exact_match: {:.4}  answer_recall: {:.4}",
        report.mean_exact_match, report.mean_answer_recall
    );
    println!("labels:");
    for (label, count) in &report.label_counts {
        println!("  {label:<22} {count}");
    }

    write_json_file(
        out,
        &EvalFileReport {
            accuracy,
            metric: metric.name().to_string(),
            n: report.total,
            errors,
            by_steps,
        },
    )?;
    println!("report written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_stats(dataset: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let paths = load_dataset(dataset)?;
    let stats = corpus_stats(&paths);
    let mut text = serde_json::to_string_pretty(&stats)?;
    text.push('\n');
    print!("{text}");
    if let Some(out) = out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_rect(spec: &str) -> Result<BBox> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing rectangle `{spec}`"))?;
    let [x0, y0, x1, y1] = parts[..] else {
        bail!("rectangle `{spec}` must have the form x0,y0,x1,y1");
    };
    Ok(BBox::new(x0, y0, x1, y1)?)
}

fn render_size(viewport: &BBox, long_side: u32) -> (u32, u32) {
    let (w, h) = (viewport.width(), viewport.height());
    if w >= h {
        (
            long_side,
            ((long_side as f64 * h / w).round() as u32).max(1),
        )
    } else {
        (
            ((long_side as f64 * w / h).round() as u32).max(1),
            long_side,
        )
    }
}

fn cmd_render(
    scenes: &Path,
    scene_id: &str,
    out: &Path,
    viewport: Option<String>,
    mark: Option<String>,
    long_side: u32,
) -> Result<ExitCode> {
    if long_side == 0 {
        bail!("--long-side must be at least 1");
    }
    let scene_set = load_scenes(scenes)?;
    let scene = scene_set.get(scene_id)?;
    let mut view = full_view(scene);
    if let Some(spec) = viewport {
        view = crop_zoom(&view, parse_rect(&spec)?)?;
    }
    if let Some(spec) = mark {
        view = add_mark(&view, parse_rect(&spec)?, Vec::new());
    }
    let (w, h) = render_size(&view.viewport, long_side);
    let png = reasonforge_core::render::render(&view, scene, w, h)?;
    std::fs::write(out, &png).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "rendered scene `{scene_id}` at {w}x{h} -> {}",
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}
