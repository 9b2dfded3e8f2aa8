use super::pool::{DemoExample, DemoKind, Retrieved};
use crate::backend::{PromptDocument, Purpose};
use crate::model::TaskKind;

const PLAN_HEADER: &str = "Write a step-by-step plan that solves the instruction with the available tools. \
Correct examples show good plans; incorrect examples show plans that failed and why.";

const PROGRAM_HEADER: &str = "Translate the plan into a program: one assignment per line, tools called with \
named arguments, ending with RESULT. Correct examples show good programs; incorrect examples show programs \
that failed and why.";

/// Renders one example block.
pub fn example_text(e: &DemoExample) -> String {
    let noun = match e.kind {
        DemoKind::Plan => "Plan",
        DemoKind::Program => "Program",
    };
    let mut out = format!("Instruction: {}\n{noun}:\n{}", e.instruction, e.content.trim_end());
    if let Some(c) = &e.critique {
        out.push_str(&format!("\nCritique: {c}"));
    }
    out
}

/// Header, success examples, failure examples with critiques, then the new request.
pub fn assemble_prompt(
    kind: DemoKind,
    task_kind: TaskKind,
    instruction: &str,
    plan: Option<&str>,
    examples: &Retrieved,
) -> PromptDocument {
    let (purpose, header) = match kind {
        DemoKind::Plan => (Purpose::Plan, PLAN_HEADER),
        DemoKind::Program => (Purpose::Program, PROGRAM_HEADER),
    };
    let mut doc = PromptDocument::new(purpose).with("header", header).with("kind", task_kind.as_str());
    for e in &examples.successes {
        doc.push("success_example", example_text(e));
    }
    for e in &examples.failures {
        doc.push("failure_example", example_text(e));
    }
    if kind == DemoKind::Program {
        doc.push("plan", plan.unwrap_or_default());
    }
    doc.push("instruction", instruction);
    doc
}
