use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, GenerationRequest};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub url: String,
    pub timeout: Duration,
    /// Total attempts for transport failures, at least 1.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubled for each further one.
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        HttpConfig { url: url.into(), timeout: Duration::from_secs(60), max_attempts: 3, backoff: Duration::from_millis(250) }
    }
}

/// Client for text-generation servers accepting
/// `{"inputs": <prompt>, "parameters": {"max_new_tokens": N}}`.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, reqwest::Error> {
        let client = reqwest::blocking::Client::builder().timeout(config.timeout).build()?;
        Ok(HttpBackend { config, client })
    }

    fn attempt(&self, request: &GenerationRequest) -> Result<Result<String, BackendError>, String> {
        let body = json!({
            "inputs": request.prompt,
            "parameters": { "max_new_tokens": request.max_new_tokens },
        });
        let response = self.client.post(&self.config.url).json(&body).send().map_err(|e| e.to_string())?;
        let status = response.status();
        let text = response.text().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Ok(Err(BackendError::Status { request_id: request.request_id.clone(), status: status.as_u16(), body: text }));
        }
        Ok(extract_generated_text(&text).map_err(|message| BackendError::BadResponse { request_id: request.request_id.clone(), message }))
    }
}

/// Accepts `{"generated_text": …}`, `[{"generated_text": …}]`, `{"text": …}`
/// or a bare JSON string.
pub(crate) fn extract_generated_text(body: &str) -> Result<String, String> {
    let value: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let pick = |v: &Value| -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            Value::Object(map) => map.get("generated_text").or_else(|| map.get("text")).and_then(Value::as_str).map(str::to_string),
            _ => None,
        }
    };
    match &value {
        Value::Array(items) => items.first().and_then(pick),
        other => pick(other),
    }
    .ok_or_else(|| "no generated_text field".to_string())
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let attempts = self.config.max_attempts.max(1);
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(request) {
                Ok(outcome) => return outcome,
                Err(message) => last = message,
            }
            if attempt < attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(BackendError::Transport { request_id: request.request_id.clone(), attempts, message: last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_shapes() {
        assert_eq!(extract_generated_text(r#"[{"generated_text": " Paris"}]"#).unwrap(), " Paris");
        assert_eq!(extract_generated_text(r#"{"generated_text": "x"}"#).unwrap(), "x");
        assert_eq!(extract_generated_text(r#"{"text": "y"}"#).unwrap(), "y");
        assert_eq!(extract_generated_text(r#""z""#).unwrap(), "z");
        assert!(extract_generated_text(r#"{"other": 1}"#).is_err());
        assert!(extract_generated_text("not json").is_err());
    }
}
