//! Synthetic benchmark generation and scoring.

pub mod generate;
pub mod metrics;
pub mod templates;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_benchmark, Benchmark, Bundle, TaskMeta};
pub use metrics::{score, score_tags, KindMetrics, Metrics};

use crate::model::TaskKind;
use crate::tools::UPDATABLE_TOOLS;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("{field} must be in [0, 1], got {value}")]
    Fraction { field: String, value: f64 },
    #[error("template mix has no positive weight")]
    EmptyMix,
    #[error("concept {0:?} must be a single lowercase word")]
    BadConcept(String),
    #[error("concept {0:?} appears more than once")]
    DuplicateConcept(String),
    #[error("need at least {needed} object concepts, got {found}")]
    TooFewObjects { needed: usize, found: usize },
    #[error("person category {0:?} needs at least two names")]
    SmallCategory(String),
    #[error("unknown tool {0:?} in known_fraction")]
    UnknownTool(String),
    #[error("could not generate task {task}: {reason}")]
    Infeasible { task: String, reason: String },
    #[error("malformed spec: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultInjection {
    /// Share of tasks whose generated program carries a planner fault.
    pub planner: f64,
    /// Share of faulty tasks whose global critique blames a tool instead.
    pub vague: f64,
}

/// Corruption rates of the three data channels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Corruption {
    pub dataset: f64,
    pub web: f64,
    pub llm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub seed: u64,
    /// Object concepts.
    pub concept_universe: Vec<String>,
    /// Person categories for face tasks, each with its names.
    pub people: BTreeMap<String, Vec<String>>,
    /// Fraction of each tool's concepts it starts out knowing; absent tools know everything.
    pub known_fraction: BTreeMap<String, f64>,
    pub template_mix: BTreeMap<TaskKind, f64>,
    pub counts: Counts,
    /// Share of tasks that need exactly one unknown concept.
    pub unknown_task_fraction: f64,
    pub fault_injection: FaultInjection,
    pub corruption: Corruption,
}

pub fn default_objects() -> Vec<String> {
    [
        "horse", "dog", "cat", "umbrella", "bench", "car", "bicycle", "kite", "zebra", "giraffe", "sofa", "lamp",
        "cup", "bottle", "apple", "banana", "clock", "vase", "boat", "glove", "person", "bird", "cow", "sheep",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub fn default_people() -> BTreeMap<String, Vec<String>> {
    let cat = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    [
        ("directors", cat(&["bongjoonho", "spielberg", "kurosawa", "tarantino"])),
        ("singers", cat(&["adele", "beyonce", "bowie", "madonna"])),
        ("athletes", cat(&["federer", "serena", "messi", "bolt"])),
        ("painters", cat(&["kahlo", "monet", "picasso", "hokusai"])),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            seed: 0,
            concept_universe: default_objects(),
            people: default_people(),
            known_fraction: BTreeMap::new(),
            template_mix: TaskKind::ALL.into_iter().map(|k| (k, 1.0)).collect(),
            counts: Counts { train: 500, test: 500 },
            unknown_task_fraction: 0.5,
            fault_injection: FaultInjection::default(),
            corruption: Corruption::default(),
        }
    }
}

impl BenchmarkSpec {
    /// 50/50 tasks, 10 unknown concepts spread over the updatable tools, clean channels.
    pub fn desk_preset(seed: u64) -> Self {
        let known: BTreeMap<String, f64> = [
            ("LOC", 1.0 - 4.0 / 24.0),
            ("VQA", 1.0 - 2.0 / 24.0),
            ("SEG", 1.0 - 1.0 / 24.0),
            ("REPLACE", 1.0 - 1.0 / 24.0),
            ("SELECT", 1.0 - 1.0 / 16.0),
            ("CLASSIFY", 1.0 - 1.0 / 16.0),
        ]
        .into_iter()
        .map(|(t, f)| (t.to_string(), f))
        .collect();
        BenchmarkSpec {
            seed,
            known_fraction: known,
            counts: Counts { train: 50, test: 50 },
            unknown_task_fraction: 0.6,
            ..Default::default()
        }
    }

    pub fn known_fraction(&self, tool: &str) -> f64 {
        self.known_fraction.get(tool).copied().unwrap_or(1.0)
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path).map_err(|e| SpecError::Malformed(format!("{}: {e}", path.display())))?;
        let spec: BenchmarkSpec = serde_json::from_str(&text).map_err(|e| SpecError::Malformed(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), SpecError> {
        let frac = |field: String, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(SpecError::Fraction { field, value })
            }
        };
        for (tool, f) in &self.known_fraction {
            if !UPDATABLE_TOOLS.contains(&tool.as_str()) {
                return Err(SpecError::UnknownTool(tool.clone()));
            }
            frac(format!("known_fraction.{tool}"), *f)?;
        }
        frac("unknown_task_fraction".into(), self.unknown_task_fraction)?;
        frac("fault_injection.planner".into(), self.fault_injection.planner)?;
        frac("fault_injection.vague".into(), self.fault_injection.vague)?;
        frac("corruption.dataset".into(), self.corruption.dataset)?;
        frac("corruption.web".into(), self.corruption.web)?;
        frac("corruption.llm".into(), self.corruption.llm)?;
        for (kind, w) in &self.template_mix {
            if !w.is_finite() || *w < 0.0 {
                return Err(SpecError::Malformed(format!("template_mix.{kind} must be a non-negative weight")));
            }
        }
        if !self.template_mix.values().any(|w| *w > 0.0) {
            return Err(SpecError::EmptyMix);
        }
        if self.concept_universe.len() < 5 {
            return Err(SpecError::TooFewObjects {
                needed: 5,
                found: self.concept_universe.len(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        let names = self.concept_universe.iter().chain(self.people.values().flatten());
        for c in names.chain(self.people.keys()) {
            if c.is_empty() || !c.chars().all(|ch| ch.is_ascii_lowercase()) {
                return Err(SpecError::BadConcept(c.clone()));
            }
            if !seen.insert(c.clone()) {
                return Err(SpecError::DuplicateConcept(c.clone()));
            }
        }
        let people_needed = [TaskKind::Edit, TaskKind::Tag]
            .iter()
            .any(|k| self.template_mix.get(k).copied().unwrap_or(0.0) > 0.0);
        if people_needed && self.people.is_empty() {
            return Err(SpecError::Malformed("edit and tag tasks need person categories".into()));
        }
        for (cat, names) in &self.people {
            if names.len() < 2 {
                return Err(SpecError::SmallCategory(cat.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        BenchmarkSpec::default().check().unwrap();
        BenchmarkSpec::desk_preset(1).check().unwrap();
    }

    #[test]
    fn rejects_bad_fractions_and_concepts() {
        let mut s = BenchmarkSpec::default();
        s.corruption.web = 1.5;
        assert!(matches!(s.check(), Err(SpecError::Fraction { .. })));
        let mut s = BenchmarkSpec::default();
        s.concept_universe.push("Big Dog".into());
        assert!(matches!(s.check(), Err(SpecError::BadConcept(_))));
        let s = BenchmarkSpec { template_mix: BTreeMap::new(), ..Default::default() };
        assert!(matches!(s.check(), Err(SpecError::EmptyMix)));
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = BenchmarkSpec::desk_preset(4);
        let back: BenchmarkSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<BenchmarkSpec>("{\"bogus\": 1}").is_err());
    }
}
