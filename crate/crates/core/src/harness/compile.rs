use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::shell::{quote, run_shell, Captured};
use super::{BuildSpec, HarnessError};
use crate::gateway::{Completer, ModelResponse};
use crate::prompt::{parse_response, OptimizedArtifact, PromptPackage};
use crate::util::tail_lines;

/// Compiler output lines fed back to the model after a failed build.
pub const FEEDBACK_TAIL_LINES: usize = 60;

/// One prompt/reply/compile round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Attempt {
    pub prompt_text: String,
    pub response: ModelResponse,
    pub artifact: Option<OptimizedArtifact>,
    /// Compiler output, or the parse error when the reply was unusable.
    pub log: String,
    pub compiled: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CompileLoop {
    pub attempts: Vec<Attempt>,
    pub binary: Option<PathBuf>,
}

impl CompileLoop {
    pub fn succeeded(&self) -> bool {
        self.attempts.last().is_some_and(|a| a.compiled)
    }

    /// Artifact of the last attempt whose reply parsed.
    pub fn artifact(&self) -> Option<&OptimizedArtifact> {
        self.attempts.iter().rev().find_map(|a| a.artifact.as_ref())
    }

    pub fn gateway_calls(&self) -> usize {
        self.attempts.len()
    }

    /// Full transcript of compiler and parse logs.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for (i, a) in self.attempts.iter().enumerate() {
            out.push_str(&format!("== attempt {} ({}) ==\n", i + 1, if a.compiled { "ok" } else { "failed" }));
            out.push_str(&a.log);
            if !a.log.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

/// Writes `source` into `out_dir` and runs the compile template on it.
pub fn compile_source(source: &str, spec: &BuildSpec, out_dir: &Path) -> Result<(Captured, PathBuf), HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::WriteFailure { path: out_dir.into(), source: e })?;
    let src = out_dir.join(&spec.source_name);
    let bin = out_dir.join(&spec.bin_name);
    fs::write(&src, source).map_err(|e| HarnessError::WriteFailure { path: src.clone(), source: e })?;
    let mut subs = BTreeMap::new();
    subs.insert("src".to_string(), quote(&src));
    subs.insert("bin".to_string(), quote(&bin));
    let cmd = crate::ingest::render_template(&spec.compile_cmd, &subs)?;
    let out = run_shell(&cmd, &spec.workdir, spec.timeout_s, true)?;
    if out.code == Some(127) {
        return Err(HarnessError::CompilerMissing(tail_lines(&out.combined(), 5)));
    }
    Ok((out, bin))
}

/// Asks the model for optimized code and compiles it. On failure the tail of
/// the compiler log goes back to the model under `# Compiler Feedback`, at
/// most `max_retries` times after the first attempt.
pub fn compile_with_retry(
    pkg: &PromptPackage,
    completer: &dyn Completer,
    spec: &BuildSpec,
    max_retries: usize,
    build_root: &Path,
) -> Result<CompileLoop, HarnessError> {
    let mut run = CompileLoop::default();
    let mut feedback: Option<String> = None;
    for i in 0..=max_retries {
        let prompt = match &feedback {
            None => pkg.clone(),
            Some(fb) => pkg.with_compiler_feedback(fb),
        };
        let response = completer.complete(&prompt)?;
        let mut attempt =
            Attempt { prompt_text: prompt.prompt_text, response, artifact: None, log: String::new(), compiled: false };
        match parse_response(&attempt.response.text) {
            Err(e) => attempt.log = format!("reply could not be used: {e}\n"),
            Ok(artifact) => {
                let (out, bin) = compile_source(&artifact.full_source, spec, &build_root.join(format!("attempt_{}", i + 1)))?;
                attempt.log = out.combined();
                attempt.compiled = out.success();
                attempt.artifact = Some(artifact);
                if attempt.compiled {
                    run.binary = Some(bin);
                    run.attempts.push(attempt);
                    return Ok(run);
                }
            }
        }
        log::warn!("attempt {} did not compile", i + 1);
        feedback = Some(tail_lines(&attempt.log, FEEDBACK_TAIL_LINES));
        run.attempts.push(attempt);
    }
    Err(HarnessError::RetryExhausted(Box::new(run)))
}
