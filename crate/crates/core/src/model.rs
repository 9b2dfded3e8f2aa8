//! Shared domain types: tasks, plans, traces, outcomes, critiques.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsl::Value;
use crate::tools::scene::{BBox, EffectKind, SimScene};

/// Sentinel attribution meaning the plan or program itself was wrong.
pub const PLANNER: &str = "PLANNER";

/// Reserved input bindings.
pub const INPUT_IMAGE: &str = "IMAGE";
pub const INPUT_LEFT: &str = "LEFT";
pub const INPUT_RIGHT: &str = "RIGHT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Vqa,
    MultiImage,
    Edit,
    Tag,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Vqa, TaskKind::MultiImage, TaskKind::Edit, TaskKind::Tag];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Vqa => "vqa",
            TaskKind::MultiImage => "multi_image",
            TaskKind::Edit => "edit",
            TaskKind::Tag => "tag",
        }
    }

    pub fn input_count(&self) -> usize {
        match self {
            TaskKind::MultiImage => 2,
            _ => 1,
        }
    }

    /// Names the task's scenes are bound to in program environments.
    pub fn input_names(&self) -> &'static [&'static str] {
        match self {
            TaskKind::MultiImage => &[INPUT_LEFT, INPUT_RIGHT],
            _ => &[INPUT_IMAGE],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown task kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: String,
    pub bbox: BBox,
}

/// Structured proxy for a human check of an edited image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "assert", rename_all = "snake_case")]
pub enum SceneAssertion {
    /// Some entity of `concept` overlaps `bbox` with IoU >= 0.5.
    ConceptAt { concept: String, bbox: BBox },
    /// No entity of `concept` remains.
    ConceptAbsent { concept: String },
    /// An effect of `effect` was applied to exactly `entities`.
    EffectOn {
        effect: EffectKind,
        concept: String,
        entities: Vec<u32>,
    },
}

impl SceneAssertion {
    pub fn holds(&self, scene: &SimScene) -> bool {
        match self {
            SceneAssertion::ConceptAt { concept, bbox } => {
                scene.entities_of(concept).any(|e| e.bbox.iou(bbox) >= TAG_IOU)
            }
            SceneAssertion::ConceptAbsent { concept } => scene.entities_of(concept).next().is_none(),
            SceneAssertion::EffectOn { effect, entities, .. } => {
                let mut want = entities.clone();
                want.sort_unstable();
                scene.effects.iter().any(|fx| {
                    let mut got = fx.entities.clone();
                    got.sort_unstable();
                    fx.kind == *effect && got == want
                })
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_edit: Option<Vec<SceneAssertion>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_boxes: Option<Vec<LabeledBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

impl Feedback {
    /// Feedback rendered for reflection and answer-inference prompts.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(a) = &self.expected_answer {
            parts.push(format!("expected answer: {a}"));
        }
        if let Some(edit) = &self.expected_edit {
            let items: Vec<String> = edit
                .iter()
                .map(|a| match a {
                    SceneAssertion::ConceptAt { concept, bbox } => format!("{concept} at {bbox}"),
                    SceneAssertion::ConceptAbsent { concept } => format!("no {concept}"),
                    SceneAssertion::EffectOn { effect, concept, .. } => format!("{effect} applied to {concept}"),
                })
                .collect();
            parts.push(format!("expected edit: {}", items.join("; ")));
        }
        if let Some(boxes) = &self.expected_boxes {
            let items: Vec<String> = boxes.iter().map(|b| format!("{}@{}", b.label, b.bbox)).collect();
            parts.push(format!("expected tags: {}", items.join(", ")));
        }
        if let Some(c) = &self.comment {
            parts.push(format!("comment: {c}"));
        }
        parts.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub kind: TaskKind,
    pub instruction: String,
    pub inputs: Vec<String>,
    pub feedback: Feedback,
    pub split: Split,
}

impl TaskInstance {
    pub fn check(&self) -> Result<(), String> {
        if self.instruction.trim().is_empty() {
            return Err("empty instruction".into());
        }
        if self.inputs.len() != self.kind.input_count() {
            return Err(format!(
                "{} task needs {} input(s), got {}",
                self.kind,
                self.kind.input_count(),
                self.inputs.len()
            ));
        }
        let fb = &self.feedback;
        let ok = match self.kind {
            TaskKind::Vqa | TaskKind::MultiImage => fb.expected_answer.is_some(),
            TaskKind::Edit => fb.expected_edit.is_some(),
            TaskKind::Tag => fb.expected_boxes.is_some(),
        };
        if !ok {
            return Err(format!("feedback does not match task kind {}", self.kind));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<String>,
    pub source_prompt_id: String,
}

impl Plan {
    /// Parses numbered or plain lines; blank lines are dropped.
    pub fn from_text(text: &str, source_prompt_id: impl Into<String>) -> Option<Plan> {
        let steps: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        (!steps.is_empty()).then(|| Plan {
            steps,
            source_prompt_id: source_prompt_id.into(),
        })
    }

    pub fn text(&self) -> String {
        self.steps.join("\n")
    }
}

/// A labeled region produced by a detector, segmenter or classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<u32>,
}

/// Runtime value held in a program environment and returned by tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ToolOutput {
    Image(SimScene),
    Boxes(Vec<Detection>),
    Masks(Vec<Detection>),
    Text(String),
    Number(f64),
}

impl ToolOutput {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ToolOutput::Image(_) => "image",
            ToolOutput::Boxes(_) => "boxes",
            ToolOutput::Masks(_) => "masks",
            ToolOutput::Text(_) => "text",
            ToolOutput::Number(_) => "number",
        }
    }

    pub fn regions(&self) -> Option<&[Detection]> {
        match self {
            ToolOutput::Boxes(d) | ToolOutput::Masks(d) => Some(d),
            _ => None,
        }
    }

    /// Text form used as a task answer.
    pub fn answer_text(&self) -> String {
        match self {
            ToolOutput::Text(t) => t.clone(),
            ToolOutput::Number(n) => format_number(*n),
            ToolOutput::Image(s) => s.describe(),
            ToolOutput::Boxes(d) | ToolOutput::Masks(d) => {
                let labels: Vec<String> = d.iter().map(|x| format!("{}@{}", x.label, x.bbox)).collect();
                labels.join(", ")
            }
        }
    }

    /// Short summary used in textualized traces.
    pub fn summary(&self) -> String {
        fn regions(noun: &str, d: &[Detection]) -> String {
            let items: Vec<String> = d.iter().map(|x| format!("{}@{}", x.label, x.bbox)).collect();
            let plural = if d.len() == 1 { "" } else if noun == "box" { "es" } else { "s" };
            format!("{} {noun}{plural} [{}]", d.len(), items.join(", "))
        }
        match self {
            ToolOutput::Boxes(d) => regions("box", d),
            ToolOutput::Masks(d) => regions("mask", d),
            ToolOutput::Text(t) => format!("{t:?}"),
            ToolOutput::Number(n) => format_number(*n),
            ToolOutput::Image(s) => s.describe(),
        }
    }
}

/// Integers print without a fractional part.
pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolErrorKind {
    EmptyDetection,
    BadArgs,
    UnknownTool,
}

impl fmt::Display for ToolErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: ToolErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub target: String,
    pub tool_name: String,
    pub bound_args: Vec<(String, Value)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<ToolOutput>,
    pub output_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub steps: Vec<StepRecord>,
    pub final_answer: Option<String>,
    pub halted_at: Option<usize>,
}

impl ExecutionTrace {
    /// Output of the terminal RESULT step, if the trace ran to completion.
    pub fn final_output(&self) -> Option<&ToolOutput> {
        if self.halted_at.is_some() {
            return None;
        }
        self.steps
            .last()
            .filter(|s| s.tool_name == "RESULT")
            .and_then(|s| s.output.as_ref())
    }

    pub fn check(&self) -> Result<(), String> {
        for (i, s) in self.steps.iter().enumerate() {
            if s.index != i {
                return Err(format!("step index {} at position {i}", s.index));
            }
        }
        let errors: Vec<usize> = self.steps.iter().filter(|s| s.error.is_some()).map(|s| s.index).collect();
        match (errors.as_slice(), self.halted_at) {
            ([], None) => Ok(()),
            ([e], Some(h)) if *e == h && h + 1 == self.steps.len() => Ok(()),
            _ => Err("error step and halted_at disagree".into()),
        }
    }

    /// Value bound to `name` by an executed step.
    pub fn value_of(&self, name: &str) -> Option<&ToolOutput> {
        self.steps
            .iter()
            .find(|s| s.target == name)
            .and_then(|s| s.output.as_ref())
    }
}

/// Box-level matching counts for tag tasks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub predicted: usize,
    pub expected: usize,
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub correct: bool,
    pub predicted: String,
    pub normalized_expected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<TagCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critique {
    pub scope: Scope,
    pub faulty_tool: Option<String>,
    pub faulty_step: Option<usize>,
    pub concept: Option<String>,
    pub reason: String,
    pub raw: String,
}

impl Critique {
    pub fn planner(scope: Scope, faulty_step: Option<usize>, reason: impl Into<String>, raw: impl Into<String>) -> Self {
        Critique {
            scope,
            faulty_tool: Some(PLANNER.to_string()),
            faulty_step,
            concept: None,
            reason: reason.into(),
            raw: raw.into(),
        }
    }

    pub fn is_planner(&self) -> bool {
        self.faulty_tool.as_deref().is_none_or(|t| t == PLANNER)
    }
}

/// Lowercase, collapse whitespace, strip trailing punctuation.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | '!' | '?' | ';' | ':') || c.is_whitespace())
        .trim()
        .to_string()
}

/// IoU needed for a predicted tag box to match an expected one.
pub const TAG_IOU: f64 = 0.5;

/// One-to-one greedy matching by IoU over label-equal pairs.
pub fn match_tags(predicted: &[LabeledBox], expected: &[LabeledBox]) -> TagCounts {
    let mut pairs = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, e) in expected.iter().enumerate() {
            if normalize_answer(&p.label) == normalize_answer(&e.label) {
                let iou = p.bbox.iou(&e.bbox);
                if iou >= TAG_IOU {
                    pairs.push((iou, i, j));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; predicted.len()];
    let mut used_e = vec![false; expected.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_e[j] {
            used_p[i] = true;
            used_e[j] = true;
            matched += 1;
        }
    }
    TagCounts {
        predicted: predicted.len(),
        expected: expected.len(),
        matched,
    }
}

/// Judges a trace against the task's feedback. Halted traces are never correct.
pub fn judge(task: &TaskInstance, trace: &ExecutionTrace) -> Outcome {
    let fb = &task.feedback;
    let output = trace.final_output();
    let predicted = match output {
        Some(o) => o.answer_text(),
        None => trace.final_answer.clone().unwrap_or_default(),
    };
    match task.kind {
        TaskKind::Vqa | TaskKind::MultiImage => {
            let expected = normalize_answer(fb.expected_answer.as_deref().unwrap_or(""));
            let correct = output.is_some() && normalize_answer(&predicted) == expected;
            Outcome {
                correct,
                predicted,
                normalized_expected: expected,
                tags: None,
            }
        }
        TaskKind::Edit => {
            let assertions = fb.expected_edit.as_deref().unwrap_or(&[]);
            let correct = match output {
                Some(ToolOutput::Image(scene)) => !assertions.is_empty() && assertions.iter().all(|a| a.holds(scene)),
                _ => false,
            };
            Outcome {
                correct,
                predicted,
                normalized_expected: normalize_answer(&fb.describe()),
                tags: None,
            }
        }
        TaskKind::Tag => {
            let expected = fb.expected_boxes.as_deref().unwrap_or(&[]);
            let predicted_boxes: Vec<LabeledBox> = output
                .and_then(ToolOutput::regions)
                .map(|d| {
                    d.iter()
                        .map(|x| LabeledBox {
                            label: x.label.clone(),
                            bbox: x.bbox,
                        })
                        .collect()
                })
                .unwrap_or_default();
            let counts = match_tags(&predicted_boxes, expected);
            let correct =
                output.is_some() && counts.matched == counts.predicted && counts.matched == counts.expected;
            let exp: Vec<String> = expected.iter().map(|b| format!("{}@{}", normalize_answer(&b.label), b.bbox)).collect();
            Outcome {
                correct,
                predicted,
                normalized_expected: exp.join(", "),
                tags: Some(counts),
            }
        }
    }
}
