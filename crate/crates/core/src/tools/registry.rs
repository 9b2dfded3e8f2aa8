//! The fifteen-tool signature table.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgKind {
    /// A scene variable.
    Image,
    /// A boxes or masks variable.
    Region,
    /// A string literal or text variable.
    Text,
    /// A number literal or number variable.
    Number,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Boxes,
    Masks,
    Text,
    Scene,
    Number,
    Report,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ArgKind,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSignature {
    pub name: String,
    pub args: Vec<ArgSpec>,
    pub output: OutputKind,
    pub updatable: bool,
}

impl ToolSignature {
    pub fn arg(&self, name: &str) -> Option<&ArgSpec> {
        self.args.iter().find(|a| a.name == name)
    }
}

pub const UPDATABLE_TOOLS: [&str; 6] = ["LOC", "VQA", "SEG", "SELECT", "CLASSIFY", "REPLACE"];

pub fn is_updatable(tool: &str) -> bool {
    UPDATABLE_TOOLS.contains(&tool)
}

fn sig(name: &str, args: &[(&str, ArgKind, bool)], output: OutputKind) -> ToolSignature {
    ToolSignature {
        name: name.into(),
        args: args
            .iter()
            .map(|(n, k, r)| ArgSpec {
                name: (*n).into(),
                kind: *k,
                required: *r,
            })
            .collect(),
        output,
        updatable: is_updatable(name),
    }
}

/// Signatures for all fifteen tools, updatable ones first.
pub fn standard_signatures() -> Vec<ToolSignature> {
    use ArgKind::*;
    vec![
        sig("LOC", &[("image", Image, true), ("object", Text, true)], OutputKind::Boxes),
        sig("VQA", &[("image", Image, true), ("question", Text, true)], OutputKind::Text),
        sig("SEG", &[("image", Image, true), ("object", Text, true)], OutputKind::Masks),
        sig(
            "SELECT",
            &[("image", Image, true), ("object", Region, true), ("query", Text, true)],
            OutputKind::Boxes,
        ),
        sig(
            "CLASSIFY",
            &[("image", Image, true), ("object", Region, true), ("categories", Text, true)],
            OutputKind::Boxes,
        ),
        sig(
            "REPLACE",
            &[("image", Image, true), ("object", Region, true), ("prompt", Text, true)],
            OutputKind::Scene,
        ),
        sig("FACEDET", &[("image", Image, true)], OutputKind::Boxes),
        sig("LIST", &[("query", Text, true), ("max", Number, false)], OutputKind::Text),
        sig("EVAL", &[("expr", Text, true)], OutputKind::Text),
        sig("RESULT", &[("var", Any, true)], OutputKind::Report),
        sig("COUNT", &[("box", Region, true)], OutputKind::Number),
        sig(
            "CROP",
            &[("image", Image, true), ("box", Region, true), ("side", Text, false)],
            OutputKind::Scene,
        ),
        sig("COLORPOP", &[("image", Image, true), ("object", Region, true)], OutputKind::Scene),
        sig("BGBLUR", &[("image", Image, true), ("object", Region, true)], OutputKind::Scene),
        sig(
            "EMOJI",
            &[("image", Image, true), ("object", Region, true), ("emoji", Text, false)],
            OutputKind::Scene,
        ),
    ]
}

pub fn signature(name: &str) -> Option<ToolSignature> {
    standard_signatures().into_iter().find(|s| s.name == name)
}

pub fn is_tool(name: &str) -> bool {
    standard_signatures().iter().any(|s| s.name == name)
}
