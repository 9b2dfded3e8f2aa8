//! Per-tool concept competence: the frozen base that prompts steer.
//!
//! Each concept has a unit target direction `t_c`. A tool recognizes a
//! concept when the concept is in its known set, or when the prompt it is
//! given points within the recognition threshold of `t_c`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::learning::TrainingInstance;
use crate::vecmath::{cosine, hash_parts, normalize, random_unit};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_TAU: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptVector(pub Vec<f64>);

impl PromptVector {
    pub fn zeros(dim: usize) -> Self {
        PromptVector(vec![0.0; dim])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Unit-norm instance feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Normalizes `values`; `None` for the zero vector.
    pub fn new(values: Vec<f64>) -> Option<Self> {
        let v = normalize(values);
        v.iter().any(|x| *x != 0.0).then_some(FeatureVector(v))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Target direction for `concept`; identical across tools.
pub fn concept_target(concept: &str, dim: usize) -> Vec<f64> {
    random_unit(hash_parts(&["target", concept]), dim)
}

/// `normalize(0.8 t_c + 0.2 u)` with `u` a seeded unit vector, so instances
/// of one concept cluster around its target (cosine >= 0.6).
pub fn instance_feature(concept: &str, instance_seed: u64, dim: usize) -> FeatureVector {
    assert!(dim >= 2, "feature dimension must be at least 2");
    let t = concept_target(concept, dim);
    let u = random_unit(hash_parts(&["instance", concept, &instance_seed.to_string()]), dim);
    let mixed: Vec<f64> = t.iter().zip(&u).map(|(a, b)| 0.8 * a + 0.2 * b).collect();
    FeatureVector::new(mixed).unwrap_or(FeatureVector(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KnowledgeDoc {
    tool: String,
    dim: usize,
    tau: f64,
    known_concepts: BTreeSet<String>,
    universe: Vec<String>,
}

/// Competence model of one updatable tool. Targets are derived from concept
/// names, so only the known set and universe are serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "KnowledgeDoc", into = "KnowledgeDoc")]
pub struct ToolKnowledge {
    pub tool: String,
    pub dim: usize,
    pub tau: f64,
    pub known_concepts: BTreeSet<String>,
    pub universe: Vec<String>,
    pub targets: BTreeMap<String, Vec<f64>>,
}

impl From<KnowledgeDoc> for ToolKnowledge {
    fn from(d: KnowledgeDoc) -> Self {
        ToolKnowledge::new(d.tool, d.dim, d.tau, d.universe, d.known_concepts)
    }
}

impl From<ToolKnowledge> for KnowledgeDoc {
    fn from(k: ToolKnowledge) -> Self {
        KnowledgeDoc {
            tool: k.tool,
            dim: k.dim,
            tau: k.tau,
            known_concepts: k.known_concepts,
            universe: k.universe,
        }
    }
}

impl ToolKnowledge {
    pub fn new(
        tool: impl Into<String>,
        dim: usize,
        tau: f64,
        universe: Vec<String>,
        known_concepts: BTreeSet<String>,
    ) -> Self {
        let targets = universe
            .iter()
            .map(|c| (c.clone(), concept_target(c, dim)))
            .collect();
        ToolKnowledge {
            tool: tool.into(),
            dim,
            tau,
            known_concepts,
            universe,
            targets,
        }
    }

    pub fn target(&self, concept: &str) -> Vec<f64> {
        self.targets
            .get(concept)
            .cloned()
            .unwrap_or_else(|| concept_target(concept, self.dim))
    }

    pub fn knows(&self, concept: &str) -> bool {
        self.known_concepts.contains(concept)
    }

    /// Cosine between the prompt and the concept target; 0 for the zero prompt.
    pub fn prompt_affinity(&self, concept: &str, prompt: &PromptVector) -> f64 {
        cosine(&prompt.0, &self.target(concept))
    }
}

pub fn concept_recognized(tool: &ToolKnowledge, concept: &str, prompt: &PromptVector) -> bool {
    tool.knows(concept) || tool.prompt_affinity(concept, prompt) >= tool.tau
}

/// Squared distance to the instance's label target, and its gradient.
pub fn training_loss(_tool: &ToolKnowledge, prompt: &PromptVector, instance: &TrainingInstance) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = prompt.0.iter().zip(&instance.target).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum();
    let grad = diff.iter().map(|d| 2.0 * d).collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knowledge(known: &[&str]) -> ToolKnowledge {
        let universe: Vec<String> = ["horse", "dog", "umbrella"].iter().map(|s| s.to_string()).collect();
        ToolKnowledge::new("LOC", 64, 0.9, universe, known.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn recognition_rules() {
        let k = knowledge(&["dog"]);
        assert!(concept_recognized(&k, "dog", &PromptVector::zeros(64)));
        assert!(!concept_recognized(&k, "horse", &PromptVector::zeros(64)));
        assert!(concept_recognized(&k, "horse", &PromptVector(k.target("horse"))));
    }

    #[test]
    fn targets_are_unit() {
        let k = knowledge(&[]);
        for t in k.targets.values() {
            assert!((crate::vecmath::norm(t) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn instance_feature_is_deterministic_unit() {
        let a = instance_feature("horse", 7, 64);
        assert_eq!(a, instance_feature("horse", 7, 64));
        assert!((crate::vecmath::norm(a.values()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn serde_rebuilds_targets() {
        let k = knowledge(&["dog"]);
        let json = serde_json::to_string(&k).unwrap();
        assert!(!json.contains("targets"));
        let back: ToolKnowledge = serde_json::from_str(&json).unwrap();
        assert_eq!(back, k);
    }
}
