use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::{ChatRequest, ChatResponse, MessageRole, ModelRole, Provider, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Full chat-completions URL, e.g. `https://api.openai.com/v1/chat/completions`.
    pub endpoint: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub vision: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_timeout() -> u64 {
    120
}

/// Chat-completion client for OpenAI-compatible endpoints.
#[derive(Debug)]
pub struct HttpProvider {
    id: String,
    config: HttpProviderConfig,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(id: impl Into<String>, config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Fatal(e.to_string()))?;
        Ok(HttpProvider {
            id: id.into(),
            config,
            client,
        })
    }

    fn body(model: &str, request: &ChatRequest) -> Json {
        let messages: Vec<Json> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    MessageRole::System => "system",
                    MessageRole::User => "user",
                };
                match &m.image {
                    None => json!({ "role": role, "content": m.text }),
                    Some(img) => {
                        let data = base64::engine::general_purpose::STANDARD.encode(&img.bytes);
                        json!({
                            "role": role,
                            "content": [
                                { "type": "text", "text": m.text },
                                { "type": "image_url",
                                  "image_url": { "url": format!("data:{};base64,{}", img.mime, data) } }
                            ]
                        })
                    }
                }
            })
            .collect();
        let mut body = json!({
            "model": model,
            "messages": messages,
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_tokens,
        });
        if let Some(seed) = request.decoding.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_vision(&self) -> bool {
        self.config.vision
    }

    fn complete(
        &self,
        _role: ModelRole,
        model: &str,
        request: &ChatRequest,
    ) -> Result<ChatResponse, ProviderError> {
        let key = std::env::var(&self.config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ProviderError::AuthMissing(self.config.api_key_env.clone()))?;
        let started = Instant::now();
        let resp = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(key)
            .json(&Self::body(model, request))
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ProviderError::Transient(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Fatal(format!("HTTP {status}: {text}")));
        }
        let parsed: Json =
            serde_json::from_str(&text).map_err(|e| ProviderError::Fatal(e.to_string()))?;
        let choice = &parsed["choices"][0];
        let content = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Fatal("response has no message content".into()))?;
        Ok(ChatResponse {
            text: content.to_string(),
            finish_reason: choice["finish_reason"].as_str().unwrap_or("unknown").to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
            cached: false,
        })
    }

    fn scoped(self: Arc<Self>, _scope: &str) -> Arc<dyn Provider> {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given (status, body) replies in order, capturing request bodies.
    fn serve(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn provider(url: String, env: &str) -> HttpProvider {
        HttpProvider::new(
            "http",
            HttpProviderConfig {
                endpoint: url,
                api_key_env: env.to_string(),
                vision: true,
                timeout_secs: 10,
            },
        )
        .unwrap()
    }

    #[test]
    fn posts_chat_completion_and_reads_content() {
        std::env::set_var("CFMS_TEST_KEY_OK", "secret");
        let (url, server) = serve(vec![(
            200,
            r#"{"choices":[{"message":{"content":"Answer: 42"},"finish_reason":"stop"}]}"#.into(),
        )]);
        let p = provider(url, "CFMS_TEST_KEY_OK");
        let req = ChatRequest::new(vec![
            ChatMessage::system("be brief"),
            ChatMessage::user("look").with_image("image/svg+xml", b"<svg/>".to_vec()),
        ]);
        let r = p.complete(ModelRole::FinalAnswer, "gpt-x", &req).unwrap();
        assert_eq!(r.text, "Answer: 42");
        assert_eq!(r.finish_reason, "stop");
        let bodies = server.join().unwrap();
        let sent: Json = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "gpt-x");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["messages"][1]["content"][1]["type"], "image_url");
        assert!(sent["messages"][1]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/svg+xml;base64,"));
    }

    #[test]
    fn server_errors_are_transient_client_errors_fatal() {
        std::env::set_var("CFMS_TEST_KEY_ERR", "secret");
        let (url, server) = serve(vec![(503, "{}".into()), (400, "{}".into())]);
        let p = provider(url, "CFMS_TEST_KEY_ERR");
        let req = ChatRequest::new(vec![ChatMessage::user("x")]);
        assert!(p.complete(ModelRole::Planner, "m", &req).unwrap_err().is_transient());
        assert!(matches!(
            p.complete(ModelRole::Planner, "m", &req).unwrap_err(),
            ProviderError::Fatal(_)
        ));
        server.join().unwrap();
    }

    #[test]
    fn missing_key_is_auth_error() {
        let p = provider("http://127.0.0.1:9/".into(), "CFMS_TEST_KEY_UNSET_XYZ");
        let req = ChatRequest::new(vec![ChatMessage::user("x")]);
        assert_eq!(
            p.complete(ModelRole::Planner, "m", &req).unwrap_err(),
            ProviderError::AuthMissing("CFMS_TEST_KEY_UNSET_XYZ".into())
        );
    }
}
