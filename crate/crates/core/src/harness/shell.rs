use std::io::Read;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::HarnessError;

/// Output of one shell command.
#[derive(Debug, Clone, Default)]
pub struct Captured {
    pub code: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub elapsed: Duration,
}

impl Captured {
    pub fn success(&self) -> bool {
        self.code == Some(0)
    }

    pub fn stderr_text(&self) -> String {
        String::from_utf8_lossy(&self.stderr).into_owned()
    }

    /// stdout then stderr, as text.
    pub fn combined(&self) -> String {
        let mut s = String::from_utf8_lossy(&self.stdout).into_owned();
        if !s.is_empty() && !s.ends_with('\n') {
            s.push('\n');
        }
        s.push_str(&String::from_utf8_lossy(&self.stderr));
        s
    }
}

pub(crate) fn quote(path: &Path) -> String {
    let s = path.to_string_lossy();
    shlex::try_quote(&s).map(|q| q.into_owned()).unwrap_or_else(|_| s.into_owned())
}

fn drain<R: Read + Send + 'static>(src: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut r) = src {
            let _ = r.read_to_end(&mut buf);
        }
        buf
    })
}

fn wait_deadline(child: &mut Child, timeout: Duration) -> Result<Option<i32>, HarnessError> {
    let started = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Ok(status.code()),
            Ok(None) if started.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(HarnessError::Timeout(timeout.as_secs()));
            }
            Ok(None) => thread::sleep(Duration::from_micros(200)),
            Err(e) => return Err(HarnessError::ExecutionFailure { code: None, stderr_tail: e.to_string() }),
        }
    }
}

/// Runs `command` under `sh -c` in `workdir`, capturing both streams.
/// `capture_stdout = false` sends stdout to the null device.
pub fn run_shell(command: &str, workdir: &Path, timeout_s: u64, capture_stdout: bool) -> Result<Captured, HarnessError> {
    let started = Instant::now();
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(workdir)
        .stdin(Stdio::null())
        .stdout(if capture_stdout { Stdio::piped() } else { Stdio::null() })
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| HarnessError::ExecutionFailure { code: None, stderr_tail: format!("spawn `{command}`: {e}") })?;
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());
    let code = wait_deadline(&mut child, Duration::from_secs(timeout_s.max(1)))?;
    let elapsed = started.elapsed();
    Ok(Captured { code, stdout: out.join().unwrap_or_default(), stderr: err.join().unwrap_or_default(), elapsed })
}
