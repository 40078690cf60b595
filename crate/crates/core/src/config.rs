//! `config.yml`: loading, defaults, range checks and path resolution.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counters::EompConfig;
use crate::ear::EarConfig;
use crate::gateway::{BackendConfig, BackendKind};
use crate::harness::{BuildSpec, DEFAULT_MAX_RETRIES, DEFAULT_RUNS};
use crate::ingest::ProfilerCommand;
use crate::insight::{DEFAULT_ALPHA, DEFAULT_TAU_SALIENCY, DEFAULT_TAU_SAT, DEFAULT_TOP_N};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config key `{key}`: {reason}")]
    SchemaViolation { key: String, reason: String },
    #[error("cannot read {}: {reason}", path.display())]
    Unreadable { path: PathBuf, reason: String },
}

fn violation(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::SchemaViolation { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub name: String,
    /// Source file handed to the model.
    pub source: PathBuf,
    /// Kernel name -> file holding its source, for stall snippets.
    /// Kernels not listed use `source`.
    #[serde(default)]
    pub kernels: BTreeMap<String, PathBuf>,
    /// Hardware stack recorded in the corpus.
    #[serde(default)]
    pub hw: Option<String>,
    /// Software stack recorded in the corpus.
    #[serde(default)]
    pub sw: Option<String>,
}

fn yes() -> bool {
    true
}

/// Which analyses feed the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Enabled {
    #[serde(default = "yes")]
    pub pc: bool,
    #[serde(default = "yes")]
    pub ia: bool,
    #[serde(default = "yes")]
    pub roofline: bool,
}

impl Default for Enabled {
    fn default() -> Self {
        Enabled { pc: true, ia: true, roofline: true }
    }
}

impl Enabled {
    /// The seven non-empty subsets of {PC, IA, RL}.
    pub fn combinations() -> [Enabled; 7] {
        let e = |pc, ia, roofline| Enabled { pc, ia, roofline };
        [
            e(true, false, false),
            e(false, true, false),
            e(false, false, true),
            e(true, true, false),
            e(true, false, true),
            e(false, true, true),
            e(true, true, true),
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.pc {
            parts.push("PC");
        }
        if self.ia {
            parts.push("IA");
        }
        if self.roofline {
            parts.push("RL");
        }
        parts.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SourcesConfig {
    /// Directory holding the normalized exports under their default names.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub kernels: Option<PathBuf>,
    #[serde(default)]
    pub pc_samples: Option<PathBuf>,
    #[serde(default)]
    pub counters: Option<PathBuf>,
    #[serde(default)]
    pub roofline: Option<PathBuf>,
    #[serde(default)]
    pub dictionary: Option<PathBuf>,
    #[serde(default)]
    pub enabled: Enabled,
    /// Run before ingestion; `{out}` is bound to `dir`.
    #[serde(default)]
    pub profiler: Option<ProfilerCommand>,
    /// Produces a post-optimization profile; `{app}` is the optimized binary
    /// and `{out}` the directory to fill with normalized exports.
    #[serde(default)]
    pub reprofile: Option<ProfilerCommand>,
    /// An already captured post-optimization profile directory.
    #[serde(default)]
    pub post_dir: Option<PathBuf>,
}

impl SourcesConfig {
    fn pick(&self, explicit: &Option<PathBuf>, default_name: &str) -> Option<PathBuf> {
        explicit.clone().or_else(|| self.dir.as_ref().map(|d| d.join(default_name)))
    }
    pub fn kernels_path(&self) -> Option<PathBuf> {
        self.pick(&self.kernels, "kernels.csv")
    }
    pub fn pc_samples_path(&self) -> Option<PathBuf> {
        self.pick(&self.pc_samples, "pcsamples.csv")
    }
    pub fn counters_path(&self) -> Option<PathBuf> {
        self.pick(&self.counters, "counters.csv")
    }
    pub fn roofline_path(&self) -> Option<PathBuf> {
        self.pick(&self.roofline, "roofline.json")
    }
    pub fn dictionary_path(&self) -> Option<PathBuf> {
        self.pick(&self.dictionary, "counter_dictionary.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub alpha: f64,
    pub tau_sat: f64,
    pub tau_saliency: f64,
    pub top_n: usize,
    pub kappa: usize,
    pub tau_pool: usize,
    pub ensembles: usize,
    pub seed: u64,
    pub epsilon_stop: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let e = EompConfig::default();
        Thresholds {
            alpha: DEFAULT_ALPHA,
            tau_sat: DEFAULT_TAU_SAT,
            tau_saliency: DEFAULT_TAU_SALIENCY,
            top_n: DEFAULT_TOP_N,
            kappa: e.kappa,
            tau_pool: e.tau_pool,
            ensembles: e.ensembles,
            seed: e.seed,
            epsilon_stop: e.epsilon_stop,
        }
    }
}

impl Thresholds {
    pub fn eomp(&self) -> EompConfig {
        EompConfig {
            kappa: self.kappa,
            tau_pool: self.tau_pool,
            ensembles: self.ensembles,
            seed: self.seed,
            epsilon_stop: self.epsilon_stop,
            regularize: true,
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        let unit = |key: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(violation(key, format!("{v} is outside (0, 1]")))
            }
        };
        unit("thresholds.alpha", self.alpha)?;
        unit("thresholds.tau_sat", self.tau_sat)?;
        unit("thresholds.tau_saliency", self.tau_saliency)?;
        for (key, v) in [
            ("thresholds.top_n", self.top_n),
            ("thresholds.kappa", self.kappa),
            ("thresholds.tau_pool", self.tau_pool),
            ("thresholds.ensembles", self.ensembles),
        ] {
            if v == 0 {
                return Err(violation(key, "must be at least 1"));
            }
        }
        if !(self.epsilon_stop > 0.0) {
            return Err(violation("thresholds.epsilon_stop", "must be positive"));
        }
        Ok(())
    }
}

/// `auto` builds and runs the original source; anything else is a path to a
/// saved reference (`.json`) or to the expected stdout bytes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ReferenceCapture {
    #[default]
    Auto,
    Path(PathBuf),
}

impl Serialize for ReferenceCapture {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ReferenceCapture::Auto => s.serialize_str("auto"),
            ReferenceCapture::Path(p) => p.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ReferenceCapture {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "auto" { ReferenceCapture::Auto } else { ReferenceCapture::Path(s.into()) })
    }
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}
fn default_retries() -> usize {
    DEFAULT_MAX_RETRIES
}
fn default_source_name() -> String {
    "main.cu".into()
}
fn default_bin_name() -> String {
    "app".into()
}
fn default_eval_timeout() -> u64 {
    600
}
fn dot() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub compile_cmd: String,
    pub exec_cmd: String,
    #[serde(default)]
    pub args: String,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub reference_capture: ReferenceCapture,
    #[serde(default = "default_retries")]
    pub max_compile_retries: usize,
    #[serde(default = "dot")]
    pub workdir: PathBuf,
    #[serde(default = "default_source_name")]
    pub source_name: String,
    #[serde(default = "default_bin_name")]
    pub bin_name: String,
    #[serde(default)]
    pub output_files: Vec<String>,
    #[serde(default)]
    pub numeric_tolerance: Option<f64>,
    #[serde(default = "default_eval_timeout")]
    pub timeout_s: u64,
}

impl EvalConfig {
    pub fn build_spec(&self) -> BuildSpec {
        BuildSpec {
            compile_cmd: self.compile_cmd.clone(),
            exec_cmd: self.exec_cmd.clone(),
            args: self.args.clone(),
            runs: self.runs,
            workdir: self.workdir.clone(),
            source_name: self.source_name.clone(),
            bin_name: self.bin_name.clone(),
            output_files: self.output_files.clone(),
            numeric_tolerance: self.numeric_tolerance,
            timeout_s: self.timeout_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    /// Added after the fixed guardrails.
    #[serde(default)]
    pub guardrails: Vec<String>,
}

fn default_output_root() -> PathBuf {
    PathBuf::from("optimas-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub app: AppConfig,
    pub sources: SourcesConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub llm: BackendConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub ear: EarConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default = "default_output_root")]
    pub output_root: PathBuf,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

impl PipelineConfig {
    /// Parses YAML text; relative paths are taken relative to `base_dir`.
    pub fn from_yaml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let de = serde_yaml::Deserializer::from_str(text);
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            violation(if key == "." { "<root>" } else { &key }, e.into_inner().to_string())
        })?;
        cfg.resolve_paths(base_dir);
        cfg.check()?;
        Ok(cfg)
    }

    /// A resolved configuration as stored in a run manifest.
    pub fn from_snapshot(value: &serde_json::Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(value).map_err(|e| violation(&e.path().to_string(), e.into_inner().to_string()))
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.app.source);
        for p in self.app.kernels.values_mut() {
            resolve(base, p);
        }
        let s = &mut self.sources;
        for p in [&mut s.dir, &mut s.kernels, &mut s.pc_samples, &mut s.counters, &mut s.roofline, &mut s.dictionary, &mut s.post_dir] {
            resolve_opt(base, p);
        }
        for cmd in [&mut s.profiler, &mut s.reprofile].into_iter().flatten() {
            match &mut cmd.workdir {
                Some(w) => resolve(base, w),
                None => cmd.workdir = Some(base.to_path_buf()),
            }
        }
        if self.llm.kind == BackendKind::ScriptedMock {
            if let Some(ep) = &mut self.llm.endpoint {
                let mut p = PathBuf::from(&*ep);
                resolve(base, &mut p);
                *ep = p.to_string_lossy().into_owned();
            }
        }
        resolve(base, &mut self.eval.workdir);
        if let ReferenceCapture::Path(p) = &mut self.eval.reference_capture {
            resolve(base, p);
        }
        resolve(base, &mut self.output_root);
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.app.name.trim().is_empty() {
            return Err(violation("app.name", "must not be empty"));
        }
        let en = self.sources.enabled;
        if !(en.pc || en.ia || en.roofline) {
            return Err(violation("sources.enabled", "at least one of pc, ia, roofline must be enabled"));
        }
        if self.sources.kernels_path().is_none() {
            return Err(violation("sources.kernels", "set it or `sources.dir`"));
        }
        let need = |on: bool, p: Option<PathBuf>, key: &str| {
            if on && p.is_none() {
                Err(violation(key, "source is enabled but has no path (set it or `sources.dir`)"))
            } else {
                Ok(())
            }
        };
        need(en.pc, self.sources.pc_samples_path(), "sources.pc_samples")?;
        need(en.ia, self.sources.counters_path(), "sources.counters")?;
        need(en.roofline, self.sources.roofline_path(), "sources.roofline")?;
        self.thresholds.check()?;
        self.llm.validate().map_err(|e| violation("llm", e.to_string()))?;
        self.eval.build_spec().validate().map_err(|e| violation("eval", e.to_string()))?;
        for (i, r) in self.ear.rules.iter().enumerate() {
            r.compile().map_err(|e| violation(&format!("ear.rules[{i}].pattern"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn hw(&self) -> String {
        self.app.hw.clone().unwrap_or_else(|| format!("{}-{} host", std::env::consts::ARCH, std::env::consts::OS))
    }

    pub fn sw(&self) -> String {
        self.app.sw.clone().unwrap_or_else(|| format!("optimas {}", env!("CARGO_PKG_VERSION")))
    }
}

/// Reads and validates `path`.
pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::Unreadable { path: path.to_path_buf(), reason: e.to_string() })?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    PipelineConfig::from_yaml_str(&text, base)
}
