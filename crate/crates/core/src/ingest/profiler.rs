use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::util::tail_lines;

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex"))
}

/// Replaces every `{name}` in `template`. Every placeholder must be bound.
pub fn render_template(template: &str, subs: &BTreeMap<String, String>) -> Result<String, IngestError> {
    if let Some(unbound) = placeholder_re()
        .captures_iter(template)
        .map(|c| c[1].to_string())
        .find(|name| !subs.contains_key(name))
    {
        return Err(IngestError::UnboundPlaceholder(unbound));
    }
    Ok(placeholder_re()
        .replace_all(template, |c: &regex::Captures| subs[&c[1]].clone())
        .into_owned())
}

/// An external profiler run producing normalized export files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilerCommand {
    /// e.g. `ncu --target-processes all --set full -o {out} ./{app} {args}`
    pub command: String,
    /// Paths the command must produce, themselves templates (`{out}/kernels.csv`).
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub workdir: Option<PathBuf>,
}

fn dir_lock(dir: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = LOCKS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    map.entry(dir.to_path_buf()).or_default().clone()
}

impl ProfilerCommand {
    pub fn render(&self, subs: &BTreeMap<String, String>) -> Result<String, IngestError> {
        render_template(&self.command, subs)
    }

    /// Runs the command through `sh -c` and returns the declared outputs.
    /// Invocations writing into the same output directory are serialized.
    pub fn invoke(&self, subs: &BTreeMap<String, String>) -> Result<Vec<PathBuf>, IngestError> {
        let command = self.render(subs)?;
        let base = self.workdir.clone().unwrap_or_else(|| PathBuf::from("."));
        let outputs: Vec<PathBuf> = self
            .outputs
            .iter()
            .map(|o| render_template(o, subs).map(|p| base.join(p)))
            .collect::<Result<_, _>>()?;
        let lock_dir = subs.get("out").map(|o| base.join(o)).unwrap_or_else(|| base.clone());
        let lock = dir_lock(&lock_dir);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());

        log::info!("profiling: {command}");
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(&command);
        if let Some(dir) = &self.workdir {
            cmd.current_dir(dir);
        }
        let out = cmd.output().map_err(|source| IngestError::Spawn { command: command.clone(), source })?;
        if !out.status.success() {
            return Err(IngestError::NonZeroExit {
                code: out.status.code().unwrap_or(-1),
                stderr_tail: tail_lines(&String::from_utf8_lossy(&out.stderr), 20),
            });
        }
        for path in &outputs {
            if !path.exists() {
                return Err(IngestError::MissingOutput(path.clone()));
            }
        }
        Ok(outputs)
    }
}

/// Convenience wrapper over [`ProfilerCommand::invoke`].
pub fn invoke_profiler(
    command_template: &str,
    substitutions: &BTreeMap<String, String>,
    outputs: &[String],
    workdir: Option<&Path>,
) -> Result<Vec<PathBuf>, IngestError> {
    ProfilerCommand {
        command: command_template.to_string(),
        outputs: outputs.to_vec(),
        workdir: workdir.map(Path::to_path_buf),
    }
    .invoke(substitutions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn ncu_template_renders() {
        let s = render_template(
            "ncu --target-processes all --set full -o {out} ./{app} {args}",
            &subs(&[("out", "prof/accuracy"), ("app", "accuracy"), ("args", "--size=1024")]),
        )
        .unwrap();
        assert_eq!(s, "ncu --target-processes all --set full -o prof/accuracy ./accuracy --size=1024");
    }

    #[test]
    fn unbound_placeholder() {
        assert!(matches!(
            render_template("run {app} {args}", &subs(&[("app", "x")])),
            Err(IngestError::UnboundPlaceholder(p)) if p == "args"
        ));
    }

    #[test]
    fn nonzero_exit() {
        let err = invoke_profiler("echo boom >&2; exit 1", &BTreeMap::new(), &[], None).unwrap_err();
        match err {
            IngestError::NonZeroExit { code, stderr_tail } => {
                assert_eq!(code, 1);
                assert_eq!(stderr_tail, "boom");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_output() {
        let dir = tempfile::tempdir().unwrap();
        let err = invoke_profiler("true", &subs(&[("out", "o")]), &["{out}/kernels.csv".into()], Some(dir.path()))
            .unwrap_err();
        assert!(matches!(err, IngestError::MissingOutput(p) if p.ends_with("o/kernels.csv")));
    }

    #[test]
    fn produced_outputs_returned() {
        let dir = tempfile::tempdir().unwrap();
        let paths = invoke_profiler(
            "mkdir -p {out} && echo kernel_name,time_ns > {out}/kernels.csv",
            &subs(&[("out", "o")]),
            &["{out}/kernels.csv".into()],
            Some(dir.path()),
        )
        .unwrap();
        assert_eq!(paths, vec![dir.path().join("o/kernels.csv")]);
    }
}
