//! Blocking JSON-over-HTTP helper shared by the remote clients.

use std::time::Duration;

use serde_json::Value;
use ureq::Agent;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: Agent,
    url: String,
    token: Option<String>,
    max_retries: u32,
}

impl JsonClient {
    pub fn new(url: impl Into<String>, timeout: Duration, max_retries: u32, token: Option<String>) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            url: url.into(),
            token,
            max_retries,
        }
    }

    /// POSTs `body`, retrying transport failures and 5xx/429 responses up
    /// to `max_retries` extra times.
    pub fn post(&self, body: &Value) -> Result<Value> {
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            let mut req = self.agent.post(&self.url);
            if let Some(token) = &self.token {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    return resp.body_mut().read_json::<Value>().map_err(|e| {
                        Error::ResponseParse {
                            reason: format!("response body is not JSON: {e}"),
                            raw: String::new(),
                        }
                    });
                }
                Err(ureq::Error::StatusCode(code)) if code != 429 && code < 500 => {
                    return Err(Error::Transport {
                        attempts: attempt + 1,
                        message: format!("HTTP status {code} from {}", self.url),
                    });
                }
                Err(e) => {
                    log::debug!("attempt {} to {} failed: {e}", attempt + 1, self.url);
                    last = e.to_string();
                }
            }
        }
        Err(Error::Transport {
            attempts,
            message: last,
        })
    }
}
