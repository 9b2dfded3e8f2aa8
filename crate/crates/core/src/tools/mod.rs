//! Tool registry, synthetic world, and simulated tool implementations.

pub mod expr;
pub mod knowledge;
pub mod registry;
pub mod scene;
pub mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use knowledge::{
    concept_recognized, concept_target, instance_feature, training_loss, FeatureVector, PromptVector,
    ToolKnowledge, DEFAULT_DIM, DEFAULT_TAU,
};
pub use registry::{is_updatable, standard_signatures, ToolSignature, UPDATABLE_TOOLS};
pub use sim::{invoke, ToolError};

use crate::error::{read_json, write_json};

pub const TOOLKIT_VERSION: u32 = 1;

pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "brown", "gray"];
pub const ACTIVITIES: [&str; 8] = [
    "reading", "running", "sitting", "eating", "sleeping", "walking", "talking", "standing",
];

/// The toolkit state: competence of each updatable tool plus the canned
/// knowledge behind LIST. Serialized as `toolkit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Toolkit {
    pub version: u32,
    pub dim: usize,
    pub tau: f64,
    pub universe: Vec<String>,
    pub knowledge: BTreeMap<String, ToolKnowledge>,
    #[serde(default)]
    pub list_knowledge: BTreeMap<String, Vec<String>>,
}

impl Toolkit {
    /// Tools know exactly the concepts listed for them in `known`.
    pub fn new(
        universe: Vec<String>,
        known: &BTreeMap<String, BTreeSet<String>>,
        list_knowledge: BTreeMap<String, Vec<String>>,
    ) -> Self {
        Self::with_params(universe, known, list_knowledge, DEFAULT_DIM, DEFAULT_TAU)
    }

    pub fn with_params(
        universe: Vec<String>,
        known: &BTreeMap<String, BTreeSet<String>>,
        list_knowledge: BTreeMap<String, Vec<String>>,
        dim: usize,
        tau: f64,
    ) -> Self {
        let knowledge = UPDATABLE_TOOLS
            .iter()
            .map(|t| {
                let k = known.get(*t).cloned().unwrap_or_default();
                (
                    t.to_string(),
                    ToolKnowledge::new(*t, dim, tau, universe.clone(), k),
                )
            })
            .collect();
        Toolkit {
            version: TOOLKIT_VERSION,
            dim,
            tau,
            universe,
            knowledge,
            list_knowledge,
        }
    }

    /// Every tool knows every concept in the universe.
    pub fn competent(universe: Vec<String>, list_knowledge: BTreeMap<String, Vec<String>>) -> Self {
        let all: BTreeSet<String> = universe.iter().cloned().collect();
        let known = UPDATABLE_TOOLS.iter().map(|t| (t.to_string(), all.clone())).collect();
        Self::new(universe, &known, list_knowledge)
    }

    /// Same knowledge with every tool made fully competent.
    pub fn to_competent(&self) -> Self {
        let all: BTreeSet<String> = self.universe.iter().cloned().collect();
        let known = UPDATABLE_TOOLS.iter().map(|t| (t.to_string(), all.clone())).collect();
        Self::with_params(self.universe.clone(), &known, self.list_knowledge.clone(), self.dim, self.tau)
    }

    pub fn knowledge(&self, tool: &str) -> Option<&ToolKnowledge> {
        self.knowledge.get(tool)
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> crate::Result<()> {
        write_json(path, self)
    }
}

/// Parsed VQA question templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Question {
    Activity(String),
    Color(String),
    Exists(String),
    Count(String),
}

impl Question {
    pub fn concept(&self) -> &str {
        match self {
            Question::Activity(c) | Question::Color(c) | Question::Exists(c) | Question::Count(c) => c,
        }
    }

    pub fn parse(question: &str) -> Option<Question> {
        let q = crate::model::normalize_answer(question);
        let words: Vec<&str> = q.split(' ').collect();
        match words.as_slice() {
            ["what", "is", "the", c, "doing"] => Some(Question::Activity((*c).into())),
            ["what", "color", "is", "the", c] => Some(Question::Color((*c).into())),
            ["is", "there", "a" | "an", c, ..] => Some(Question::Exists((*c).into())),
            ["how", "many", c, ..] => Some(Question::Count((*c).into())),
            _ => None,
        }
    }
}

/// Concepts an updatable tool step is conditioned on, taken from its arguments.
pub fn step_concepts(tool: &str, arg: impl Fn(&str) -> Option<String>) -> Vec<String> {
    match tool {
        "LOC" | "SEG" => arg("object").into_iter().collect(),
        "SELECT" => arg("query").into_iter().collect(),
        "REPLACE" => arg("prompt").into_iter().collect(),
        "VQA" => arg("question")
            .and_then(|q| Question::parse(&q))
            .map(|q| q.concept().to_string())
            .into_iter()
            .collect(),
        "CLASSIFY" => arg("categories").map(|c| split_categories(&c)).unwrap_or_default(),
        _ => Vec::new(),
    }
}

pub fn split_categories(text: &str) -> Vec<String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}
