//! HTTP backend for the refiner and aligner interfaces.
//!
//! Wire format: POST a JSON object `{"prompt": ..., "image_b64": ...}`
//! (image omitted for text-only calls) and read `{"text": ...}` back.
//! Transport and server errors are retried up to the configured count.

use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result};

use super::align::VisionAligner;
use super::refine::TextRefiner;

pub const ENDPOINT_ENV: &str = "PHENOVLP_MODEL_ENDPOINT";
pub const API_KEY_ENV: &str = "PHENOVLP_MODEL_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpModelConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
}

impl HttpModelConfig {
    pub fn new(endpoint: &str) -> Self {
        HttpModelConfig {
            endpoint: endpoint.to_string(),
            api_key: None,
            timeout: Duration::from_secs(60),
            retries: 2,
        }
    }

    /// Endpoint from PHENOVLP_MODEL_ENDPOINT, key from
    /// PHENOVLP_MODEL_API_KEY if set.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::Parameter(format!("{ENDPOINT_ENV} is not set")))?;
        let mut cfg = Self::new(&endpoint);
        cfg.api_key = std::env::var(API_KEY_ENV).ok();
        Ok(cfg)
    }
}

pub struct HttpModelClient {
    cfg: HttpModelConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

impl HttpModelClient {
    pub fn new(cfg: HttpModelConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_read(cfg.timeout)
            .timeout_write(cfg.timeout)
            .build();
        HttpModelClient { cfg, agent }
    }

    fn call(&self, prompt: &str, image_b64: Option<&str>) -> Result<String> {
        let mut body = serde_json::json!({ "prompt": prompt });
        if let Some(b64) = image_b64 {
            body["image_b64"] = serde_json::Value::String(b64.to_string());
        }
        let mut last_err = String::new();
        for _attempt in 0..=self.cfg.retries {
            let mut req = self.agent.post(&self.cfg.endpoint);
            if let Some(key) = &self.cfg.api_key {
                req = req.set("authorization", &format!("Bearer {key}"));
            }
            match req.send_json(&body) {
                Ok(resp) => {
                    let parsed: TextResponse = resp
                        .into_json()
                        .map_err(|e| Error::External(format!("model response: {e}")))?;
                    return Ok(parsed.text);
                }
                Err(ureq::Error::Status(code, resp)) => {
                    last_err = format!(
                        "model backend returned {code}: {}",
                        resp.into_string().unwrap_or_default()
                    );
                }
                Err(e) => last_err = format!("model backend unreachable: {e}"),
            }
        }
        Err(Error::External(last_err))
    }
}

impl TextRefiner for HttpModelClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.call(prompt, None)
    }
}

impl VisionAligner for HttpModelClient {
    fn align(&self, prompt: &str, image_png_b64: &str) -> Result<String> {
        self.call(prompt, Some(image_png_b64))
    }
}

#[cfg(test)]
mod tests {
    use std::io::{Read, Write};
    use std::net::TcpListener;

    use super::*;

    /// Minimal one-shot HTTP server: answer each connection with a fixed
    /// status and JSON body, then record the request.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = vec![0u8; 1 << 20];
                let mut total = 0;
                // Read until the full declared body has arrived.
                loop {
                    let n = stream.read(&mut buf[total..]).unwrap();
                    total += n;
                    let text = String::from_utf8_lossy(&buf[..total]);
                    if let Some(head_end) = text.find("\r\n\r\n") {
                        let content_length = text
                            .lines()
                            .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(str::trim).map(String::from))
                            .and_then(|v| v.parse::<usize>().ok())
                            .unwrap_or(0);
                        if total >= head_end + 4 + content_length {
                            seen.push(text[head_end + 4..].to_string());
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            seen
        });
        (format!("http://{addr}"), handle)
    }

    #[test]
    fn posts_prompt_and_reads_text() {
        let (endpoint, server) =
            serve(vec![(200, r#"{"text": "refined output"}"#.to_string())]);
        let mut cfg = HttpModelConfig::new(&endpoint);
        cfg.retries = 0;
        let client = HttpModelClient::new(cfg);
        let got = client.complete("split this caption").unwrap();
        assert_eq!(got, "refined output");
        let requests = server.join().unwrap();
        let body: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
        assert_eq!(body["prompt"], "split this caption");
        assert!(body.get("image_b64").is_none());
    }

    #[test]
    fn image_payload_and_retry_on_server_error() {
        let (endpoint, server) = serve(vec![
            (500, r#"{"error": "overloaded"}"#.to_string()),
            (200, r#"{"text": "[]"}"#.to_string()),
        ]);
        let mut cfg = HttpModelConfig::new(&endpoint);
        cfg.retries = 1;
        cfg.api_key = Some("sekrit".into());
        let client = HttpModelClient::new(cfg);
        let got = client.align("map the boxes", "aGVsbG8=").unwrap();
        assert_eq!(got, "[]");
        let requests = server.join().unwrap();
        assert_eq!(requests.len(), 2, "one retry after the 500");
        let body: serde_json::Value = serde_json::from_str(&requests[1]).unwrap();
        assert_eq!(body["image_b64"], "aGVsbG8=");
    }

    #[test]
    fn unreachable_endpoint_is_an_external_error() {
        let mut cfg = HttpModelConfig::new("http://127.0.0.1:1/none");
        cfg.retries = 0;
        cfg.timeout = Duration::from_millis(200);
        let client = HttpModelClient::new(cfg);
        let err = client.complete("x").unwrap_err();
        assert!(matches!(err, Error::External(_)), "got {err:?}");
    }
}
