//! Language-model backends: the prompt document, the backend interface, and the audit log.

pub mod oracle;
pub mod remote;
pub mod scripted;

use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::RemoteBackend;
pub use scripted::{RuleSet, ScriptedBackend, ScriptedRule};

use crate::model::{ExecutionTrace, TaskInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Plan,
    Program,
    GlobalReflection,
    LocalReflection,
    AnswerInference,
}

impl Purpose {
    pub fn as_str(&self) -> &'static str {
        match self {
            Purpose::Plan => "plan",
            Purpose::Program => "program",
            Purpose::GlobalReflection => "global_reflection",
            Purpose::LocalReflection => "local_reflection",
            Purpose::AnswerInference => "answer_inference",
        }
    }

    /// Section labels every document of this purpose must carry.
    pub fn required_sections(&self) -> &'static [&'static str] {
        match self {
            Purpose::Plan => &["header", "kind", "instruction"],
            Purpose::Program => &["header", "kind", "plan", "instruction"],
            Purpose::GlobalReflection => &["header", "task", "kind", "inputs", "feedback", "plan", "program", "steps"],
            Purpose::LocalReflection => &[
                "header", "task", "kind", "inputs", "feedback", "plan", "program", "steps", "checked", "current",
                "step_index",
            ],
            Purpose::AnswerInference => &[
                "header", "task", "kind", "inputs", "feedback", "program", "steps", "question", "step_index", "phase",
            ],
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub purpose: Purpose,
    pub sections: Vec<Section>,
}

impl PromptDocument {
    pub fn new(purpose: Purpose) -> Self {
        PromptDocument {
            purpose,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, label: &str, text: impl Into<String>) -> &mut Self {
        self.sections.push(Section {
            label: label.to_string(),
            text: text.into(),
        });
        self
    }

    pub fn with(mut self, label: &str, text: impl Into<String>) -> Self {
        self.push(label, text);
        self
    }

    /// Text of the first section with `label`.
    pub fn section(&self, label: &str) -> Option<&str> {
        self.sections.iter().find(|s| s.label == label).map(|s| s.text.as_str())
    }

    pub fn sections_labeled<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.sections.iter().filter(move |s| s.label == label).map(|s| s.text.as_str())
    }

    pub fn check(&self) -> Result<(), BackendError> {
        for label in self.purpose.required_sections() {
            if self.section(label).is_none() {
                return Err(BackendError::InvalidDocument(format!(
                    "{} document lacks a '{label}' section",
                    self.purpose
                )));
            }
        }
        Ok(())
    }

    /// Plain-text rendering sent to text-only models and hashed for seeding.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            out.push_str(&format!("### {}\n{}\n", s.label, s.text));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend timed out: {0}")]
    BackendTimeout(String),
    #[error("backend protocol error: {0}")]
    BackendProtocolError(String),
    #[error("no scripted rule matched the {purpose} document")]
    NoRuleMatched { purpose: Purpose },
    #[error("invalid prompt document: {0}")]
    InvalidDocument(String),
    #[error("rule file: {0}")]
    Rules(String),
    #[error("backend selector {0:?} is not scripted:<path> or remote:<url>")]
    Selector(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub purpose: Purpose,
    pub doc: PromptDocument,
    pub response: Result<String, String>,
}

/// Append-only record of every generate call.
#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Mutex<Vec<AuditEntry>>,
}

impl AuditLog {
    pub fn record(&self, doc: &PromptDocument, response: &Result<String, BackendError>) {
        let entry = AuditEntry {
            purpose: doc.purpose,
            doc: doc.clone(),
            response: match response {
                Ok(text) => Ok(text.clone()),
                Err(e) => Err(e.to_string()),
            },
        };
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Entries appended after the first `from`.
    pub fn since(&self, from: usize) -> Vec<AuditEntry> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).get(from..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn count(&self, purpose: Purpose) -> usize {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .filter(|e| e.purpose == purpose)
            .count()
    }
}

pub trait Backend: Send + Sync {
    /// One completion for `doc`. Implementations log every call to [`Backend::audit`].
    fn generate(&self, doc: &PromptDocument) -> Result<String, BackendError>;
    fn audit(&self) -> &AuditLog;
}

/// Renders the task's input bindings, e.g. `IMAGE: scene s12`.
pub fn inputs_text(task: &TaskInstance) -> String {
    task.kind
        .input_names()
        .iter()
        .zip(&task.inputs)
        .map(|(name, id)| format!("{name}: scene {id}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses lines produced by [`inputs_text`].
pub fn parse_inputs(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| {
            let (name, rest) = l.split_once(':')?;
            let id = rest.trim().strip_prefix("scene ")?;
            Some((name.trim().to_string(), id.trim().to_string()))
        })
        .collect()
}

/// Asks the backend for the desirable output of the VQA call at `step`.
pub fn infer_answer(
    backend: &dyn Backend,
    task: &TaskInstance,
    program: &str,
    trace: &ExecutionTrace,
    step: usize,
    phase: &str,
) -> Result<String, BackendError> {
    let record = trace
        .steps
        .get(step)
        .ok_or_else(|| BackendError::InvalidDocument(format!("step {step} was not executed")))?;
    let question = record
        .bound_args
        .iter()
        .find(|(n, _)| n == "question")
        .map(|(_, v)| match v {
            crate::dsl::Value::Str(s) => s.clone(),
            other => other.to_string(),
        })
        .unwrap_or_default();
    let doc = PromptDocument::new(Purpose::AnswerInference)
        .with(
            "header",
            "Infer the correct output of the VQA step from the desired result of the whole task and the intermediate results.",
        )
        .with("task", task.instruction.clone())
        .with("kind", task.kind.as_str())
        .with("inputs", inputs_text(task))
        .with("feedback", task.feedback.describe())
        .with("program", program)
        .with("steps", crate::reflection::textualize_trace(trace).join("\n"))
        .with("question", question)
        .with("step_index", step.to_string())
        .with("phase", phase);
    Ok(backend.generate(&doc)?.trim().to_string())
}

/// Builds a backend from `scripted:<rules-path>` or `remote:<url>`.
pub fn from_selector(selector: &str) -> Result<Box<dyn Backend>, BackendError> {
    if let Some(path) = selector.strip_prefix("scripted:") {
        Ok(Box::new(ScriptedBackend::from_rules_path(std::path::Path::new(path))?))
    } else if let Some(url) = selector.strip_prefix("remote:") {
        Ok(Box::new(RemoteBackend::new(url)))
    } else {
        Err(BackendError::Selector(selector.to_string()))
    }
}

/// Environment variable that overrides the configured backend selector.
pub const BACKEND_ENV: &str = "CLOVA_BACKEND";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn required_sections_enforced() {
        let doc = PromptDocument::new(Purpose::Plan).with("header", "h").with("kind", "vqa");
        assert!(doc.check().is_err());
        let doc = doc.with("instruction", "do it");
        assert!(doc.check().is_ok());
    }

    #[test]
    fn inputs_roundtrip() {
        let text = "LEFT: scene a1\nRIGHT: scene b2";
        assert_eq!(
            parse_inputs(text),
            vec![("LEFT".to_string(), "a1".to_string()), ("RIGHT".to_string(), "b2".to_string())]
        );
    }

    #[test]
    fn selector_errors() {
        assert!(matches!(from_selector("gpt"), Err(BackendError::Selector(_))));
    }
}
