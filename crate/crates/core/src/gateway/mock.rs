use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use super::{Backend, ChatRequest, GatewayError, ModelResponse, SendError};
use crate::util::sha256_hex;

/// Replies from a fixture directory. For a prompt whose SHA-256 is `h` the
/// reply is read from `h.txt`, then `h`, then `default.txt`. Never touches
/// the network. Token counts are whitespace-separated word counts.
pub struct MockBackend {
    dir: PathBuf,
    log: Option<Arc<Mutex<Vec<String>>>>,
}

impl MockBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        MockBackend { dir: dir.into(), log: None }
    }

    /// Records every prompt received into `log`.
    pub fn with_log(mut self, log: Arc<Mutex<Vec<String>>>) -> Self {
        self.log = Some(log);
        self
    }

    /// Fixture file name for a prompt.
    pub fn fixture_name(prompt: &str) -> String {
        format!("{}.txt", sha256_hex(prompt.as_bytes()))
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        format!("scripted-mock:{}", self.dir.display())
    }

    fn send(&self, req: &ChatRequest) -> Result<ModelResponse, SendError> {
        if let Some(log) = &self.log {
            log.lock().unwrap_or_else(|e| e.into_inner()).push(req.user.clone());
        }
        let hash = sha256_hex(req.user.as_bytes());
        let candidates = [format!("{hash}.txt"), hash.clone(), "default.txt".to_string()];
        let text = candidates
            .iter()
            .find_map(|name| fs::read_to_string(self.dir.join(name)).ok())
            .ok_or(SendError::Fatal(GatewayError::NoScriptedReply(hash)))?;
        Ok(ModelResponse {
            input_tokens: req.user.split_whitespace().count() as u64,
            output_tokens: text.split_whitespace().count() as u64,
            text,
            ..Default::default()
        })
    }
}
