use std::sync::atomic::Ordering;
use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{Backend, ChatRequest, GatewayError, ModelResponse, SendError, NETWORK_ATTEMPTS};
use crate::util::tail_lines;

fn agent(timeout_s: u64) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_s.max(1))))
        .http_status_as_error(false)
        .build()
        .into()
}

fn credential(var: &Option<String>) -> Result<Option<String>, SendError> {
    match var {
        None => Ok(None),
        Some(name) => match std::env::var(name) {
            Ok(v) if !v.is_empty() => Ok(Some(v)),
            _ => Err(SendError::Fatal(GatewayError::AuthMissing(name.clone()))),
        },
    }
}

fn post(agent: &Agent, url: &str, token: Option<String>, body: &Value) -> Result<Value, SendError> {
    NETWORK_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    let mut resp = req.send_json(body).map_err(|e| SendError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(|e| SendError::Transport(e.to_string()))?;
    if status == 429 || status >= 500 {
        return Err(SendError::Transport(format!("status {status}: {}", tail_lines(&text, 5))));
    }
    if !(200..300).contains(&status) {
        return Err(SendError::Fatal(GatewayError::BackendRefused { status, body_tail: tail_lines(&text, 20) }));
    }
    serde_json::from_str(&text).map_err(|e| SendError::Fatal(GatewayError::MalformedReply(e.to_string())))
}

fn messages(req: &ChatRequest) -> Value {
    json!([
        { "role": "system", "content": req.system },
        { "role": "user", "content": req.user },
    ])
}

fn text_at(v: &Value, path: &[&str]) -> Result<String, SendError> {
    let mut cur = v;
    for key in path {
        cur = match key.parse::<usize>() {
            Ok(i) => &cur[i],
            Err(_) => &cur[*key],
        };
    }
    cur.as_str()
        .map(str::to_string)
        .ok_or_else(|| SendError::Fatal(GatewayError::MalformedReply(format!("missing {}", path.join(".")))))
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub(super) struct OpenAiChat {
    url: String,
    auth_env: Option<String>,
    agent: Agent,
}

impl OpenAiChat {
    pub(super) fn new(url: String, auth_env: Option<String>, timeout_s: u64) -> Self {
        OpenAiChat { url, auth_env, agent: agent(timeout_s) }
    }
}

impl Backend for OpenAiChat {
    fn id(&self) -> String {
        format!("remote-http:{}", self.url)
    }

    fn send(&self, req: &ChatRequest) -> Result<ModelResponse, SendError> {
        let body = json!({
            "model": req.model,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
            "messages": messages(req),
        });
        let v = post(&self.agent, &self.url, credential(&self.auth_env)?, &body)?;
        Ok(ModelResponse {
            text: text_at(&v, &["choices", "0", "message", "content"])?,
            input_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            output_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            ..Default::default()
        })
    }
}

/// Ollama-style `/api/chat` endpoint.
pub(super) struct OllamaChat {
    url: String,
    auth_env: Option<String>,
    agent: Agent,
}

impl OllamaChat {
    pub(super) fn new(url: String, auth_env: Option<String>, timeout_s: u64) -> Self {
        OllamaChat { url, auth_env, agent: agent(timeout_s) }
    }
}

impl Backend for OllamaChat {
    fn id(&self) -> String {
        format!("local-server:{}", self.url)
    }

    fn send(&self, req: &ChatRequest) -> Result<ModelResponse, SendError> {
        let body = json!({
            "model": req.model,
            "stream": false,
            "messages": messages(req),
            "options": { "temperature": req.temperature, "num_predict": req.max_output_tokens },
        });
        let v = post(&self.agent, &self.url, credential(&self.auth_env)?, &body)?;
        Ok(ModelResponse {
            text: text_at(&v, &["message", "content"])?,
            input_tokens: v["prompt_eval_count"].as_u64().unwrap_or(0),
            output_tokens: v["eval_count"].as_u64().unwrap_or(0),
            ..Default::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{BackendConfig, BackendKind, Gateway, GatewayError};
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::thread;

    fn serve_once(status: &'static str, body: &'static str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let h = thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut got = Vec::new();
            loop {
                let n = s.read(&mut buf).unwrap();
                got.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&got).to_string();
                if let Some(idx) = text.find("\r\n\r\n") {
                    let len: usize = text
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length: ").map(|v| v.trim().parse().unwrap()))
                        .unwrap_or(0);
                    if got.len() >= idx + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let reply = format!("HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len());
            s.write_all(reply.as_bytes()).unwrap();
            String::from_utf8_lossy(&got).to_string()
        });
        (format!("http://{addr}/v1/chat/completions"), h)
    }

    fn cfg(kind: BackendKind, url: String, auth_env: Option<&str>) -> BackendConfig {
        BackendConfig { kind, endpoint: Some(url), auth_env: auth_env.map(str::to_string), model: "m".into(), retry_base_ms: 1, ..BackendConfig::mock("") }
    }

    #[test]
    fn openai_round_trip() {
        let (url, h) = serve_once(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"done"}}],"usage":{"prompt_tokens":11,"completion_tokens":2}}"#,
        );
        // SAFETY: test-local variable name, no other thread reads it.
        unsafe { std::env::set_var("OPTIMAS_TEST_OPENAI_KEY", "sk-test") };
        let g = Gateway::new(cfg(BackendKind::RemoteHttp, url, Some("OPTIMAS_TEST_OPENAI_KEY"))).unwrap();
        let r = g.send_with_retry("sys", "hello").unwrap();
        let request = h.join().unwrap();
        assert_eq!((r.text.as_str(), r.input_tokens, r.output_tokens), ("done", 11, 2));
        assert!(request.contains("Bearer sk-test"));
        let body: serde_json::Value = serde_json::from_str(request.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["temperature"], 0.15);
        assert_eq!(body["messages"][1]["content"], "hello");
    }

    #[test]
    fn ollama_refusal_is_not_retried() {
        let (url, h) = serve_once("404 Not Found", r#"{"error":"model not found"}"#);
        let g = Gateway::new(cfg(BackendKind::LocalServer, url, None)).unwrap();
        let err = g.send_with_retry("", "x").unwrap_err();
        h.join().unwrap();
        assert!(matches!(err, GatewayError::BackendRefused { status: 404, ref body_tail } if body_tail.contains("model not found")));
    }

    #[test]
    fn unreachable_endpoint_exhausts() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let g = Gateway::new(cfg(BackendKind::LocalServer, format!("http://127.0.0.1:{port}/api/chat"), None)).unwrap();
        assert!(matches!(g.send_with_retry("", "x"), Err(GatewayError::TransportExhausted { attempts: 3, .. })));
    }
}
