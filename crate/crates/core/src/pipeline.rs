//! Stage orchestration: ingest → analyze → prompt → optimize → evaluate →
//! score → record, plus the manual re-profiling step.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::config::{ConfigError, PipelineConfig, ReferenceCapture};
use crate::corpus::{emit_record, Corpus, CorpusError, CorpusRecord, RUNS_DIR};
use crate::counters::{describe_counters, eomp_select, zscore_normalize, CounterError, CounterImportance};
use crate::ear::{diff_hunks, directional_consistency, score_exchange, unified_diff, with_direction, DiffHunk, EARReport};
use crate::exec::ExecMode;
use crate::gateway::{Completer, Gateway, GatewayError};
use crate::harness::{
    capture_reference, compile_source, compile_with_retry, improvement_percent, measure_runtime, validate_output,
    BuildSpec, CompileLoop, HarnessError, Reference, RunArtifacts, RunDir, RunManifest, RunStatus, RuntimeStats,
};
use crate::ingest::{
    load_counter_dictionary, parse_counter_matrix, parse_kernel_times, parse_pc_samples, parse_roofline,
    CounterDictionary, DiagnosticBundle, IngestError, StallUnit,
};
use crate::insight::{
    aggregate_stalls, filter_salient, render_stall_summary, select_hot_kernels, summarize_roofline, InsightError,
    KernelSet, RooflineSummary, SalientStall,
};
use crate::prompt::{build_prompt, parse_response, PromptError, PromptPackage, PromptSections};
use crate::util::tail_lines;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Ingest,
    Analyze,
    Prompt,
    Optimize,
    Evaluate,
    Score,
    Record,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Insight(#[from] InsightError),
    #[error(transparent)]
    Counter(#[from] CounterError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Other(String),
}

/// A stage failure. When the run directory already existed it is finalized
/// with status `runtime-error` and its path is kept here.
#[derive(Debug, Error)]
#[error("{stage} stage: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
    pub run_dir: Option<PathBuf>,
}

trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError { stage, source: e.into(), run_dir: None })
    }
}

fn other(stage: Stage, msg: impl Into<String>) -> PipelineError {
    PipelineError { stage, source: StageError::Other(msg.into()), run_dir: None }
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|e| IngestError::Io { path: path.to_path_buf(), source: e })
}

/// Runs the configured profiler (if any) and reads the enabled sources.
pub fn ingest(cfg: &PipelineConfig) -> Result<DiagnosticBundle, PipelineError> {
    let s = &cfg.sources;
    if let Some(cmd) = &s.profiler {
        let out = s.dir.clone().unwrap_or_else(|| PathBuf::from("."));
        let subs: BTreeMap<String, String> = [
            ("app".to_string(), cfg.app.name.clone()),
            ("args".to_string(), cfg.eval.args.clone()),
            ("out".to_string(), out.to_string_lossy().into_owned()),
        ]
        .into();
        cmd.invoke(&subs).stage(Stage::Ingest)?;
    }
    let kernels = parse_kernel_times(&s.kernels_path().expect("checked at load")).stage(Stage::Ingest)?;
    let (stalls, unit) = match (s.enabled.pc, s.pc_samples_path()) {
        (true, Some(p)) => parse_pc_samples(&p).stage(Stage::Ingest)?,
        _ => (Vec::new(), StallUnit::Cycles),
    };
    let roofline = match (s.enabled.roofline, s.roofline_path()) {
        (true, Some(p)) => parse_roofline(&p).stage(Stage::Ingest)?,
        _ => Vec::new(),
    };
    let counters = match (s.enabled.ia, s.counters_path()) {
        (true, Some(p)) => Some(parse_counter_matrix(&p).stage(Stage::Ingest)?),
        _ => None,
    };
    DiagnosticBundle::assemble(cfg.app.name.clone(), kernels, roofline, stalls, unit, counters).stage(Stage::Ingest)
}

/// Everything the analysis stage decided, as persisted in `analysis.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub hot: KernelSet,
    pub roofline: Vec<RooflineSummary>,
    pub salient: Vec<SalientStall>,
    pub counters: Vec<CounterImportance>,
    pub sections: PromptSections,
}

fn kernel_sources(cfg: &PipelineConfig, kernels: &[String]) -> Result<BTreeMap<String, String>, IngestError> {
    let mut cache: BTreeMap<PathBuf, String> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for k in kernels {
        let path = cfg.app.kernels.get(k).unwrap_or(&cfg.app.source).clone();
        if !cache.contains_key(&path) {
            cache.insert(path.clone(), read_text(&path)?);
        }
        out.insert(k.clone(), cache[&path].clone());
    }
    Ok(out)
}

fn dictionary(cfg: &PipelineConfig) -> Result<CounterDictionary, IngestError> {
    match cfg.sources.dictionary_path() {
        Some(p) if p.exists() => load_counter_dictionary(&p),
        _ => Ok(CounterDictionary::default()),
    }
}

/// Hotspots, roofline, stall saliency and counter selection over the hot
/// kernels. Fills the bundle's ID map.
pub fn analyze(cfg: &PipelineConfig, bundle: &mut DiagnosticBundle, mode: ExecMode) -> Result<Analysis, PipelineError> {
    let t = &cfg.thresholds;
    let en = cfg.sources.enabled;
    let hot = select_hot_kernels(&bundle.kernels, t.alpha).stage(Stage::Analyze)?;
    let mut sections = PromptSections::default();

    let roofline = if en.roofline {
        let (summaries, lines) = summarize_roofline(&bundle.roofline, t.tau_sat, |k| hot.contains(k)).stage(Stage::Analyze)?;
        sections.roofline = lines;
        summaries
    } else {
        Vec::new()
    };

    let salient = if en.pc {
        let hot_samples: Vec<_> = bundle.stalls.iter().filter(|s| hot.contains(&s.kernel_name)).cloned().collect();
        let agg = aggregate_stalls(&hot_samples, mode);
        let sources = kernel_sources(cfg, &hot.selected).stage(Stage::Analyze)?;
        let salient = filter_salient(&agg, &sources, t.tau_saliency, t.top_n).stage(Stage::Analyze)?;
        sections.stall = render_stall_summary(&salient);
        // keep only what made it into the summary
        salient.into_iter().take(sections.stall.len()).collect()
    } else {
        Vec::new()
    };

    let counters = match (&bundle.counters, en.ia) {
        (Some(m), true) => {
            let norm = zscore_normalize(m, mode).stage(Stage::Analyze)?;
            let mut sel = eomp_select(&norm, &m.runtimes_s(), &t.eomp(), mode).stage(Stage::Analyze)?;
            sections.counters = describe_counters(&mut sel, &dictionary(cfg).stage(Stage::Analyze)?);
            sel
        }
        _ => Vec::new(),
    };

    bundle.id_map = sections.all().map(|d| (d.id.to_string(), d.rendered())).collect();
    Ok(Analysis { hot, roofline, salient, counters, sections })
}

/// Analysis plus the assembled prompt for the configured source.
pub fn prepare(cfg: &PipelineConfig, mode: ExecMode) -> Result<(DiagnosticBundle, Analysis, PromptPackage, String), PipelineError> {
    let mut bundle = ingest(cfg)?;
    let analysis = analyze(cfg, &mut bundle, mode)?;
    let original = read_text(&cfg.app.source).stage(Stage::Prompt)?;
    let pkg = build_prompt(&original, analysis.sections.clone(), &cfg.prompt.guardrails).stage(Stage::Prompt)?;
    Ok((bundle, analysis, pkg, original))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Identity for the run directory; fresh when absent.
    pub uuid: Option<Uuid>,
    pub mode: ExecMode,
    /// Post-optimization profile directory, overriding `sources.post_dir`.
    pub post_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub run_dir: PathBuf,
    pub analysis: Analysis,
    pub prompt: PromptPackage,
    pub ear: Option<EARReport>,
    pub record: CorpusRecord,
    pub compile: Option<CompileLoop>,
}

#[derive(Default)]
struct Evaluated {
    status: Option<RunStatus>,
    improvement: Option<f64>,
    error: Option<String>,
    ear: Option<EARReport>,
    compile: Option<CompileLoop>,
}

fn load_reference(cfg: &PipelineConfig, spec: &BuildSpec, baseline: &Path) -> Result<Reference, PipelineError> {
    match &cfg.eval.reference_capture {
        ReferenceCapture::Auto => capture_reference(baseline, spec).stage(Stage::Evaluate),
        ReferenceCapture::Path(p) => {
            let bytes = fs::read(p).map_err(|e| other(Stage::Evaluate, format!("reference {}: {e}", p.display())))?;
            if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_slice(&bytes).map_err(|e| other(Stage::Evaluate, format!("reference {}: {e}", p.display())))
            } else {
                Ok(Reference { stdout: bytes, files: BTreeMap::new() })
            }
        }
    }
}

fn post_bundle(cfg: &PipelineConfig, explicit: Option<&Path>) -> Result<Option<DiagnosticBundle>, PipelineError> {
    match explicit.map(Path::to_path_buf).or_else(|| cfg.sources.post_dir.clone()) {
        Some(p) => Ok(Some(DiagnosticBundle::read_dir(&p).stage(Stage::Score)?)),
        None => Ok(None),
    }
}

fn add_bundle(dir: &mut RunDir, bundle: &DiagnosticBundle, scratch: &Path, prefix: &str) -> Result<(), PipelineError> {
    let tmp = scratch.join(prefix);
    let _ = fs::remove_dir_all(&tmp);
    bundle.write_dir(&tmp).stage(Stage::Record)?;
    dir.copy_tree(&tmp, prefix).stage(Stage::Record)
}

#[allow(clippy::too_many_arguments)]
fn execute(
    cfg: &PipelineConfig,
    opts: &RunOptions,
    completer: &dyn Completer,
    bundle: &DiagnosticBundle,
    analysis: &Analysis,
    pkg: &PromptPackage,
    original: &str,
    dir: &mut RunDir,
    work: &Path,
    art: &mut RunArtifacts,
) -> Result<Evaluated, PipelineError> {
    let spec = cfg.eval.build_spec();
    add_bundle(dir, bundle, work, "diagnostics")?;
    dir.write_json("analysis.json", analysis).stage(Stage::Record)?;
    dir.write_json("prompt_package.json", pkg).stage(Stage::Record)?;

    let (out, baseline) = compile_source(original, &spec, &work.join("baseline")).stage(Stage::Evaluate)?;
    art.logs.insert("baseline_compile.log".into(), out.combined());
    if !out.success() {
        return Err(other(Stage::Evaluate, format!("the original source does not compile:\n{}", tail_lines(&out.combined(), 20))));
    }
    let reference = load_reference(cfg, &spec, &baseline)?;
    dir.write_json("reference.json", &reference).stage(Stage::Record)?;
    let base_stats = measure_runtime(&baseline, &spec).stage(Stage::Evaluate)?;
    art.baseline_stats = Some(base_stats.clone());

    let looped = match compile_with_retry(pkg, completer, &spec, cfg.eval.max_compile_retries, &work.join("opt")) {
        Ok(l) => l,
        Err(HarnessError::RetryExhausted(l)) => *l,
        Err(e) => return Err(e).stage(Stage::Optimize),
    };
    art.prompts = looped.attempts.iter().map(|a| a.prompt_text.clone()).collect();
    if let Some(last) = looped.attempts.last() {
        art.response = last.response.text.clone();
    }
    art.optimized_source = looped.artifact().map(|a| a.full_source.clone()).unwrap_or_default();
    for (i, a) in looped.attempts.iter().enumerate() {
        art.logs.insert(format!("attempt_{}.log", i + 1), a.log.clone());
    }
    let usage: Vec<_> = looped.attempts.iter().map(|a| &a.response).collect();
    art.logs.insert("gateway.json".into(), serde_json::to_string_pretty(&usage).expect("serializable"));

    let mut ev = Evaluated::default();
    match (&looped.binary, looped.succeeded()) {
        (Some(bin), true) => match validate_output(bin, &spec, &reference) {
            Ok(v) if !v.valid => {
                ev.status = Some(RunStatus::InvalidOutput);
                ev.error = Some(format!("output differs from the reference: {}", serde_json::to_string(&v.mismatches).expect("serializable")));
            }
            Ok(_) => match measure_runtime(bin, &spec) {
                Ok(opt) => {
                    let pct = improvement_percent(&base_stats, &opt).stage(Stage::Evaluate)?;
                    art.opt_stats = Some(opt);
                    ev.improvement = Some(pct);
                    ev.status = Some(if pct > 0.0 { RunStatus::Improved } else { RunStatus::NoGain });
                }
                Err(e) => {
                    ev.status = Some(RunStatus::RuntimeError);
                    ev.error = Some(format!("evaluate stage: {e}"));
                }
            },
            Err(e @ (HarnessError::ExecutionFailure { .. } | HarnessError::Timeout(_))) => {
                ev.status = Some(RunStatus::RuntimeError);
                ev.error = Some(format!("evaluate stage: {e}"));
            }
            Err(e) => return Err(e).stage(Stage::Evaluate),
        },
        _ => {
            ev.status = Some(RunStatus::CompileFailed);
            ev.error = Some(format!("no compiling variant after {} attempts", looped.attempts.len()));
        }
    }

    if let Some(artifact) = looped.artifact() {
        let post = post_bundle(cfg, opts.post_dir.as_deref())?;
        let report = score_exchange(pkg, artifact, original, &analysis.salient, bundle, post.as_ref(), &cfg.ear);
        art.ear_report = serde_json::to_value(&report).expect("serializable");
        if let Some(post) = &post {
            add_bundle(dir, post, work, "post")?;
        }
        ev.ear = Some(report);
    }
    ev.compile = Some(looped);
    Ok(ev)
}

/// All stages with an explicit completion backend.
pub fn run_pipeline_with(cfg: &PipelineConfig, opts: &RunOptions, completer: &dyn Completer) -> Result<RunOutcome, PipelineError> {
    let (bundle, analysis, pkg, original) = prepare(cfg, opts.mode)?;
    let mut dir = RunDir::create(&cfg.output_root.join(RUNS_DIR), opts.uuid, &cfg.app.name, cfg.snapshot()).stage(Stage::Record)?;
    let run_dir = dir.path().to_path_buf();
    let work = cfg.output_root.join("work").join(dir.manifest().run_uuid.to_string());
    let mut art = RunArtifacts { prompts: vec![pkg.prompt_text.clone()], ..Default::default() };

    let result = execute(cfg, opts, completer, &bundle, &analysis, &pkg, &original, &mut dir, &work, &mut art);
    let _ = fs::remove_dir_all(&work);
    let _ = fs::remove_dir(cfg.output_root.join("work"));

    let (status, failure, ev) = match result {
        Ok(ev) => (ev.status.unwrap_or(RunStatus::RuntimeError), None, ev),
        Err(e) => {
            let ev = Evaluated { error: Some(e.to_string()), ..Default::default() };
            (RunStatus::RuntimeError, Some(e), ev)
        }
    };
    if art.prompts.is_empty() {
        art.prompts.push(pkg.prompt_text.clone());
    }
    {
        let m = dir.manifest_mut();
        m.improvement_percent = ev.improvement;
        m.error = ev.error.clone();
    }
    crate::harness::write_artifacts(&mut dir, &art).stage(Stage::Record)?;
    let manifest = dir.finish(status).stage(Stage::Record)?;

    let record = emit_record(&run_dir, &cfg.output_root).stage(Stage::Record)?;
    Corpus::new(&cfg.output_root).append(&manifest, &record).stage(Stage::Record)?;
    let mut reopened = RunDir::open(&run_dir).stage(Stage::Record)?;
    reopened.write_json("corpus_record.json", &record).stage(Stage::Record)?;
    reopened.save().stage(Stage::Record)?;
    let manifest = reopened.manifest().clone();

    if let Some(mut e) = failure {
        e.run_dir = Some(run_dir);
        return Err(e);
    }
    log::info!("run {} finished: {}", manifest.run_uuid, manifest.status.as_str());
    Ok(RunOutcome { manifest, run_dir, analysis, prompt: pkg, ear: ev.ear, record, compile: ev.compile })
}

/// All stages against the configured backend.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunOutcome, PipelineError> {
    let gateway = Gateway::new(cfg.llm.clone()).stage(Stage::Optimize)?;
    run_pipeline_with(cfg, opts, &gateway)
}

/// Result of checking one candidate source against the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub improvement_percent: Option<f64>,
    pub baseline: RuntimeStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimized: Option<RuntimeStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Compiles, validates and times `candidate` against the configured
/// original without involving a model. Work files go under `scratch`.
pub fn evaluate_candidate(cfg: &PipelineConfig, candidate: &str, scratch: &Path) -> Result<Evaluation, PipelineError> {
    let spec = cfg.eval.build_spec();
    let original = read_text(&cfg.app.source).stage(Stage::Evaluate)?;
    let (out, baseline) = compile_source(&original, &spec, &scratch.join("baseline")).stage(Stage::Evaluate)?;
    if !out.success() {
        return Err(other(Stage::Evaluate, format!("the original source does not compile:\n{}", tail_lines(&out.combined(), 20))));
    }
    let reference = load_reference(cfg, &spec, &baseline)?;
    let base = measure_runtime(&baseline, &spec).stage(Stage::Evaluate)?;
    let mut ev = Evaluation { status: RunStatus::CompileFailed, improvement_percent: None, baseline: base, optimized: None, error: None };
    let (out, bin) = compile_source(candidate, &spec, &scratch.join("candidate")).stage(Stage::Evaluate)?;
    if !out.success() {
        ev.error = Some(tail_lines(&out.combined(), 20));
        return Ok(ev);
    }
    match validate_output(&bin, &spec, &reference) {
        Ok(v) if !v.valid => {
            ev.status = RunStatus::InvalidOutput;
            ev.error = Some(serde_json::to_string(&v.mismatches).expect("serializable"));
        }
        Ok(_) => {
            let opt = measure_runtime(&bin, &spec).stage(Stage::Evaluate)?;
            let pct = improvement_percent(&ev.baseline, &opt).stage(Stage::Evaluate)?;
            ev.status = if pct > 0.0 { RunStatus::Improved } else { RunStatus::NoGain };
            ev.improvement_percent = Some(pct);
            ev.optimized = Some(opt);
        }
        Err(e @ (HarnessError::ExecutionFailure { .. } | HarnessError::Timeout(_))) => {
            ev.status = RunStatus::RuntimeError;
            ev.error = Some(e.to_string());
        }
        Err(e) => return Err(e).stage(Stage::Evaluate),
    }
    Ok(ev)
}

/// Finds `<root>/runs/*-<id>`.
pub fn find_run(output_root: &Path, id: &str) -> Option<PathBuf> {
    let runs = output_root.join(RUNS_DIR);
    fs::read_dir(runs).ok()?.filter_map(Result::ok).map(|e| e.path()).find(|p| {
        p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(&format!("-{id}")))
    })
}

/// Finished runs (those with a manifest), oldest first.
pub fn list_runs(output_root: &Path) -> Vec<RunManifest> {
    let Ok(rd) = fs::read_dir(output_root.join(RUNS_DIR)) else { return Vec::new() };
    let mut out: Vec<RunManifest> =
        rd.filter_map(Result::ok).filter_map(|e| RunManifest::load_unverified(&e.path()).ok()).collect();
    out.sort_by(|a, b| (a.created_at, a.run_uuid).cmp(&(b.created_at, b.run_uuid)));
    out
}

/// Original-vs-optimized diff of a run, with per-hunk evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiff {
    pub unified: String,
    pub hunks: Vec<DiffHunk>,
    /// Diagnostic ID -> rendered line, for the IDs the hunks cite.
    pub id_map: BTreeMap<String, String>,
}

pub fn run_diff(run_dir: &Path) -> Result<RunDiff, PipelineError> {
    let pkg: PromptPackage = read_json(run_dir, "prompt_package.json", Stage::Score)?;
    let artifact = parse_response(&read_text(&run_dir.join("response.txt")).stage(Stage::Score)?).stage(Stage::Score)?;
    let hunks = diff_hunks(&pkg.source, &artifact);
    let rendered: BTreeMap<String, String> = pkg.diagnostics().map(|d| (d.id.to_string(), d.rendered())).collect();
    let id_map = hunks
        .iter()
        .flat_map(|h| &h.evidence_ids)
        .filter_map(|id| rendered.get(id).map(|r| (id.clone(), r.clone())))
        .collect();
    Ok(RunDiff { unified: unified_diff(&pkg.source, &artifact.full_source), hunks, id_map })
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str, stage: Stage) -> Result<T, PipelineError> {
    let text = read_text(&dir.join(name)).stage(stage)?;
    serde_json::from_str(&text).map_err(|e| other(stage, format!("{name}: {e}")))
}

/// Collects a post-optimization profile for a finished run and fills in
/// directional consistency. With `post_dir` the profile is read from there;
/// otherwise the configured re-profiling command runs against a fresh
/// build of `optimized.src`, falling back to `sources.post_dir`.
/// Repeating it replaces the previous post profile.
pub fn reprofile(run_dir: &Path, post_dir: Option<&Path>) -> Result<EARReport, PipelineError> {
    let manifest = RunManifest::load(run_dir).stage(Stage::Score)?;
    let cfg = PipelineConfig::from_snapshot(&manifest.config_snapshot).stage(Stage::Config)?;
    let report: Option<EARReport> = read_json(run_dir, "ear_report.json", Stage::Score)?;
    let report = report.ok_or_else(|| other(Stage::Score, "the run has no parsed reply to score"))?;
    let pkg: PromptPackage = read_json(run_dir, "prompt_package.json", Stage::Score)?;
    let artifact = parse_response(&read_text(&run_dir.join("response.txt")).stage(Stage::Score)?).stage(Stage::Score)?;
    let pre = DiagnosticBundle::read_dir(&run_dir.join("diagnostics")).stage(Stage::Score)?;

    let work = cfg.output_root.join("work").join(format!("reprofile-{}", manifest.run_uuid));
    let result = (|| {
        let post = match (post_dir, &cfg.sources.reprofile) {
            (Some(p), _) => DiagnosticBundle::read_dir(p).stage(Stage::Ingest)?,
            (None, Some(cmd)) => {
                let spec = cfg.eval.build_spec();
                let src = read_text(&run_dir.join("optimized.src")).stage(Stage::Evaluate)?;
                let (out, bin) = compile_source(&src, &spec, &work.join("build")).stage(Stage::Evaluate)?;
                if !out.success() {
                    return Err(other(Stage::Evaluate, "optimized.src no longer compiles"));
                }
                let out_dir = work.join("profile");
                fs::create_dir_all(&out_dir).map_err(|e| other(Stage::Ingest, e.to_string()))?;
                let subs: BTreeMap<String, String> = [
                    ("app".to_string(), bin.to_string_lossy().into_owned()),
                    ("args".to_string(), cfg.eval.args.clone()),
                    ("out".to_string(), out_dir.to_string_lossy().into_owned()),
                ]
                .into();
                cmd.invoke(&subs).stage(Stage::Ingest)?;
                DiagnosticBundle::read_dir(&out_dir).stage(Stage::Ingest)?
            }
            (None, None) => match post_bundle(&cfg, None)? {
                Some(b) => b,
                None => return Err(other(Stage::Ingest, "no post-optimization profile: set sources.reprofile or sources.post_dir")),
            },
        };
        let outcome = directional_consistency(&pre, Some(&post), &artifact, &pkg, &cfg.ear.rules);
        let report = with_direction(report, outcome);
        let mut dir = RunDir::open(run_dir).stage(Stage::Record)?;
        add_bundle(&mut dir, &post, &work, "post")?;
        dir.write_json("ear_report.json", &report).stage(Stage::Record)?;
        dir.save().stage(Stage::Record)?;
        Ok(report)
    })();
    let _ = fs::remove_dir_all(&work);
    let _ = fs::remove_dir(cfg.output_root.join("work"));
    result
}
