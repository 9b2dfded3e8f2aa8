//! JSON-over-HTTP client for an external model server.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AuditLog, Backend, BackendError, PromptDocument, Section};

pub const GENERATE_PATH: &str = "/v1/generate";

#[derive(Debug, Serialize)]
struct Request<'a> {
    purpose: &'a str,
    sections: &'a [Section],
}

#[derive(Debug, Deserialize)]
struct Response {
    text: String,
}

#[derive(Debug)]
pub struct RemoteBackend {
    pub base_url: String,
    pub timeout: Duration,
    audit: AuditLog,
}

impl RemoteBackend {
    pub fn new(base_url: &str) -> Self {
        RemoteBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(60),
            audit: AuditLog::default(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn call(&self, doc: &PromptDocument) -> Result<String, BackendError> {
        doc.check()?;
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let body = Request {
            purpose: doc.purpose.as_str(),
            sections: &doc.sections,
        };
        let url = format!("{}{GENERATE_PATH}", self.base_url);
        match agent.post(&url).send_json(&body) {
            Ok(resp) => resp
                .into_json::<Response>()
                .map(|r| r.text)
                .map_err(|e| BackendError::BackendProtocolError(e.to_string())),
            Err(ureq::Error::Status(code, _)) => {
                Err(BackendError::BackendProtocolError(format!("{url} answered HTTP {code}")))
            }
            Err(ureq::Error::Transport(t)) => Err(BackendError::BackendTimeout(format!("{url}: {t}"))),
        }
    }
}

impl Backend for RemoteBackend {
    fn generate(&self, doc: &PromptDocument) -> Result<String, BackendError> {
        let result = self.call(doc);
        self.audit.record(doc, &result);
        result
    }

    fn audit(&self) -> &AuditLog {
        &self.audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Purpose;

    #[test]
    fn unreachable_host_times_out() {
        // Port 9 on localhost is closed in the sandbox; the connection is refused immediately.
        let b = RemoteBackend::new("http://127.0.0.1:9").with_timeout(Duration::from_millis(500));
        let doc = PromptDocument::new(Purpose::Plan)
            .with("header", "h")
            .with("kind", "vqa")
            .with("instruction", "i");
        assert!(matches!(b.generate(&doc), Err(BackendError::BackendTimeout(_))));
        assert_eq!(b.audit().len(), 1);
    }
}
