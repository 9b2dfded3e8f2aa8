//! Global and local reflection: textualized traces in, structured critiques out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{inputs_text, Backend, BackendError, PromptDocument, Purpose};
use crate::dsl::Value;
use crate::model::{Critique, ExecutionTrace, Plan, Scope, StepRecord, TaskInstance, PLANNER};
use crate::tools::registry::is_tool;

pub const CRITIQUE_GRAMMAR_VERSION: &str = "1";

/// Local verdict meaning the inspected step is fine.
pub const VERDICT_OK: &str = "VERDICT: OK";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionConfig {
    /// `None` inspects every executed step.
    pub max_local_steps: Option<usize>,
    pub critique_grammar_version: String,
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        ReflectionConfig {
            max_local_steps: None,
            critique_grammar_version: CRITIQUE_GRAMMAR_VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CritiqueParseError {
    #[error("critique has no ERROR_TOOL line")]
    MissingTool,
    #[error("critique names unknown tool {0:?}")]
    UnknownTool(String),
}

/// One line per executed step, e.g. `step 0: LOC(object='umbrella') -> 1 box [umbrella@(12,4,20,30)]`.
pub fn textualize_step(step: &StepRecord) -> String {
    let args: Vec<String> = step
        .bound_args
        .iter()
        .filter(|(name, _)| name != "image")
        .map(|(name, v)| format!("{name}={v}"))
        .collect();
    format!("step {}: {}({}) -> {}", step.index, step.tool_name, args.join(","), step.output_text)
}

pub fn textualize_trace(trace: &ExecutionTrace) -> Vec<String> {
    trace.steps.iter().map(textualize_step).collect()
}

pub fn render_critique(c: &Critique) -> String {
    format!(
        "ERROR_TOOL: {}\nCONCEPT: {}\nREASON: {}",
        c.faulty_tool.as_deref().unwrap_or(PLANNER),
        c.concept.as_deref().unwrap_or("-"),
        c.reason
    )
}

/// Parses the `ERROR_TOOL / CONCEPT / REASON` grammar. The result has global scope.
pub fn parse_critique(text: &str) -> Result<Critique, CritiqueParseError> {
    let mut tool = None;
    let mut concept = None;
    let mut reason = String::new();
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("ERROR_TOOL:") {
            tool = Some(v.trim().to_string());
        } else if let Some(v) = line.strip_prefix("CONCEPT:") {
            let v = v.trim();
            concept = (v != "-" && !v.is_empty()).then(|| v.to_string());
        } else if let Some(v) = line.strip_prefix("REASON:") {
            reason = v.trim().to_string();
        }
    }
    let tool = tool.ok_or(CritiqueParseError::MissingTool)?;
    if tool != PLANNER && !is_tool(&tool) {
        return Err(CritiqueParseError::UnknownTool(tool));
    }
    Ok(Critique {
        scope: Scope::Global,
        faulty_tool: Some(tool),
        faulty_step: None,
        concept,
        reason,
        raw: text.to_string(),
    })
}

/// Parsed critique, or a PLANNER attribution keeping the raw text.
fn critique_or_planner(text: &str, scope: Scope, step: Option<usize>) -> Critique {
    match parse_critique(text) {
        Ok(mut c) => {
            c.scope = scope;
            c.faulty_step = step.or(c.faulty_step);
            c
        }
        Err(e) => Critique::planner(scope, step, format!("unparseable critique: {e}"), text),
    }
}

fn base_doc(purpose: Purpose, task: &TaskInstance, plan: &Plan, program: &str, trace: &ExecutionTrace) -> PromptDocument {
    let header = match purpose {
        Purpose::GlobalReflection => {
            "Given the task, its feedback, the plan, the program and the result of every step, find which tool or the program caused the failure. Answer with ERROR_TOOL, CONCEPT and REASON lines."
        }
        _ => {
            "Check the current step given the steps already checked. Answer VERDICT: OK if it is correct, otherwise ERROR_TOOL, CONCEPT and REASON lines."
        }
    };
    PromptDocument::new(purpose)
        .with("header", header)
        .with("task", task.instruction.clone())
        .with("kind", task.kind.as_str())
        .with("inputs", inputs_text(task))
        .with("feedback", task.feedback.describe())
        .with("plan", plan.text())
        .with("program", program)
        .with("steps", textualize_trace(trace).join("\n"))
}

/// One-shot critique over the whole episode.
pub fn global_reflect(
    backend: &dyn Backend,
    task: &TaskInstance,
    plan: &Plan,
    program: &str,
    trace: &ExecutionTrace,
) -> Result<Critique, BackendError> {
    let doc = base_doc(Purpose::GlobalReflection, task, plan, program, trace);
    let text = backend.generate(&doc)?;
    let mut c = critique_or_planner(&text, Scope::Global, None);
    if c.faulty_step.is_none() && !c.is_planner() {
        c.faulty_step = faulty_step_for(trace, c.faulty_tool.as_deref(), c.concept.as_deref());
    }
    Ok(c)
}

/// Step of the first executed call to `tool` mentioning `concept`, if any.
fn faulty_step_for(trace: &ExecutionTrace, tool: Option<&str>, concept: Option<&str>) -> Option<usize> {
    let tool = tool?;
    let mentions = |s: &StepRecord| {
        concept.is_none_or(|c| {
            s.bound_args.iter().any(|(_, v)| matches!(v, Value::Str(t) if t.contains(c)))
        })
    };
    trace
        .steps
        .iter()
        .find(|s| s.tool_name == tool && mentions(s))
        .or_else(|| trace.steps.iter().find(|s| s.tool_name == tool))
        .map(|s| s.index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalReflection {
    pub critique: Critique,
    pub backend_calls: usize,
}

/// Step-by-step check that stops at the first flagged step.
pub fn local_reflect(
    backend: &dyn Backend,
    task: &TaskInstance,
    plan: &Plan,
    program: &str,
    trace: &ExecutionTrace,
    cfg: &ReflectionConfig,
) -> Result<LocalReflection, BackendError> {
    let lines = textualize_trace(trace);
    let limit = cfg.max_local_steps.unwrap_or(usize::MAX).max(1).min(lines.len());
    let mut calls = 0;
    for i in 0..limit {
        let doc = base_doc(Purpose::LocalReflection, task, plan, program, trace)
            .with("checked", lines[..i].join("\n"))
            .with("current", lines[i].clone())
            .with("step_index", i.to_string());
        let text = backend.generate(&doc)?;
        calls += 1;
        if text.trim() == VERDICT_OK {
            continue;
        }
        return Ok(LocalReflection {
            critique: critique_or_planner(&text, Scope::Local, Some(i)),
            backend_calls: calls,
        });
    }
    Ok(LocalReflection {
        critique: Critique::planner(Scope::Local, None, "no step was flagged", ""),
        backend_calls: calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ErrorInfo, ToolErrorKind};
    use proptest::prelude::*;

    #[test]
    fn critique_grammar() {
        let c = parse_critique("ERROR_TOOL: LOC\nCONCEPT: umbrella\nREASON: no detection").unwrap();
        assert_eq!(c.faulty_tool.as_deref(), Some("LOC"));
        assert_eq!(c.concept.as_deref(), Some("umbrella"));
        assert_eq!(c.reason, "no detection");
        let c = parse_critique("ERROR_TOOL: PLANNER\nCONCEPT: -\nREASON: wrong crop direction").unwrap();
        assert!(c.is_planner());
        assert_eq!(c.concept, None);
        assert_eq!(parse_critique("ERROR_TOOL: NOPE"), Err(CritiqueParseError::UnknownTool("NOPE".into())));
        assert_eq!(parse_critique("dunno"), Err(CritiqueParseError::MissingTool));
    }

    #[test]
    fn malformed_degrades_to_planner() {
        let c = critique_or_planner("dunno", Scope::Global, None);
        assert!(c.is_planner());
        assert_eq!(c.raw, "dunno");
    }

    #[test]
    fn textualize_templates() {
        use crate::model::{Detection, ToolOutput};
        use crate::tools::scene::BBox;
        let out = ToolOutput::Boxes(vec![Detection {
            label: "umbrella".into(),
            bbox: BBox::new(12, 4, 20, 30),
            confidence: 1.0,
            entity: Some(2),
        }]);
        let step = StepRecord {
            index: 0,
            target: "BOX0".into(),
            tool_name: "LOC".into(),
            bound_args: vec![("image".into(), Value::Var("IMAGE".into())), ("object".into(), Value::Str("umbrella".into()))],
            output_text: out.summary(),
            output: Some(out),
            error: None,
        };
        assert_eq!(textualize_step(&step), "step 0: LOC(object='umbrella') -> 1 box [umbrella@(12,4,20,30)]");
        let halted = StepRecord {
            output: None,
            output_text: "ERROR: EmptyDetection".into(),
            error: Some(ErrorInfo { kind: ToolErrorKind::EmptyDetection, message: String::new() }),
            ..step
        };
        assert!(textualize_step(&halted).ends_with("ERROR: EmptyDetection"));
        assert!(textualize_trace(&ExecutionTrace::default()).is_empty());
    }

    proptest! {
        #[test]
        fn render_parse_identity(
            tool in prop::sample::select(vec!["LOC", "VQA", "SEG", "SELECT", "CLASSIFY", "REPLACE", "COUNT", "PLANNER"]),
            concept in prop::option::of("[a-z]{1,10}"),
            reason in "[a-zA-Z0-9 ,.]{0,40}",
        ) {
            let c = Critique {
                scope: Scope::Global,
                faulty_tool: Some(tool.to_string()),
                faulty_step: None,
                concept,
                reason: reason.trim().to_string(),
                raw: String::new(),
            };
            let text = render_critique(&c);
            let back = parse_critique(&text).unwrap();
            prop_assert_eq!(Critique { raw: String::new(), ..back }, c);
        }
    }
}
