//! Tool learning: data collection, training-validation prompt tuning, and the prompt pool.

pub mod gates;
pub mod pool;
pub mod sources;
pub mod tuning;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gates::tool_specific_gates;
pub use pool::{PromptPool, PromptPools};
pub use sources::{CollectRequest, Collected, DataSource, DatasetSource, EpisodeEvidence, LlmInferredSource, WebSource};
pub use tuning::{tune_prompt, validate_prompt, ValidationCase};

use crate::backend::BackendError;
use crate::tools::knowledge::FeatureVector;
use crate::tools::scene::{BBox, SimScene};
use crate::tools::{Toolkit, UPDATABLE_TOOLS};

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("no data source serves tool {0}")]
    NoSourceForTool(String),
    #[error("concept {0:?} is not in the synthetic universe")]
    ConceptUnavailable(String),
    #[error("{0} update needs a concept")]
    MissingConcept(String),
    #[error("missing evidence: {0}")]
    MissingEvidence(String),
    #[error("prompt tuning diverged at step {step}")]
    Divergence { step: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    LlmInferred,
    Dataset,
    Web,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub concept: String,
    /// Question text for VQA instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    /// Image the instance was drawn from.
    pub scene: SimScene,
    /// Answer text or concept label.
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_boxes: Vec<BBox>,
    pub feature: FeatureVector,
    /// Simulator label target.
    pub target: Vec<f64>,
    pub source: Channel,
    /// Simulator bookkeeping; the learner never reads it.
    #[serde(skip)]
    pub corrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    pub steps: usize,
    pub lr: BTreeMap<String, f64>,
    pub budget: BTreeMap<String, usize>,
    pub prefilter_k: BTreeMap<String, Option<usize>>,
    /// Also store zero prompts for VQA questions answered correctly.
    #[serde(default)]
    pub vqa_zero_on_success: bool,
}

fn per_tool<T>(f: fn(&str) -> T) -> BTreeMap<String, T> {
    UPDATABLE_TOOLS.iter().map(|t| (t.to_string(), f(t))).collect()
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            steps: tuning::DEFAULT_STEPS,
            lr: per_tool(tuning::default_lr),
            budget: per_tool(sources::default_budget),
            prefilter_k: per_tool(pool::default_prefilter_k),
            vqa_zero_on_success: false,
        }
    }
}

impl LearningConfig {
    pub fn lr(&self, tool: &str) -> f64 {
        self.lr.get(tool).copied().unwrap_or_else(|| tuning::default_lr(tool))
    }

    pub fn budget(&self, tool: &str) -> usize {
        self.budget.get(tool).copied().unwrap_or_else(|| sources::default_budget(tool))
    }
}

/// What one tool update did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub tool: String,
    pub concept: String,
    pub collected: usize,
    pub committed: usize,
    pub discarded: usize,
    /// Held-out case every committed prompt passed.
    pub validation: ValidationCase,
}

/// Collect, tune one prompt per instance, keep those that pass validation, commit.
pub fn update_tool(
    toolkit: &Toolkit,
    pools: &mut PromptPools,
    cfg: &LearningConfig,
    source: &dyn DataSource,
    req: &CollectRequest<'_>,
) -> Result<UpdateReport, LearningError> {
    let knowledge = toolkit
        .knowledge(req.tool)
        .ok_or_else(|| LearningError::NoSourceForTool(req.tool.to_string()))?;
    let collected = source.collect(req, cfg.budget(req.tool))?;
    let lr = cfg.lr(req.tool);
    let tuned: Vec<_> = collected
        .instances
        .par_iter()
        .map(|inst| {
            let p = tune_prompt(knowledge, inst, cfg.steps, lr)?;
            let ok = validate_prompt(toolkit, req.tool, &collected.concept, &p, &collected.validation);
            Ok((inst.feature.clone(), p, ok))
        })
        .collect::<Result<_, LearningError>>()?;
    let total = tuned.len();
    let passing: Vec<_> = tuned.into_iter().filter(|t| t.2).map(|(f, p, _)| (f, p)).collect();
    let committed = passing.len();
    if let Some(pool) = pools.pool_mut(req.tool) {
        pool.commit(&collected.concept, passing);
    }
    Ok(UpdateReport {
        tool: req.tool.to_string(),
        concept: collected.concept,
        collected: total,
        committed,
        discarded: total - committed,
        validation: collected.validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::PromptProvider;
    use crate::tools::knowledge::{concept_recognized, instance_feature};
    use std::collections::BTreeSet;

    fn universe() -> Vec<String> {
        ["horse", "glove", "dog", "cat", "zebra", "kite"].iter().map(|s| s.to_string()).collect()
    }

    fn toolkit() -> Toolkit {
        let known: BTreeMap<String, BTreeSet<String>> = UPDATABLE_TOOLS
            .iter()
            .map(|t| (t.to_string(), ["dog", "cat"].iter().map(|s| s.to_string()).collect()))
            .collect();
        Toolkit::new(universe(), &known, BTreeMap::new())
    }

    #[test]
    fn clean_update_teaches_concept() {
        let tk = toolkit();
        let mut pools = PromptPools::new(tk.dim, tk.tau);
        let src = DatasetSource { universe: universe(), rho: 0.0, seed: 3, dim: tk.dim };
        let req = CollectRequest { tool: "SEG", concept: Some("horse"), salt: "a", episode: None };
        let r = update_tool(&tk, &mut pools, &LearningConfig::default(), &src, &req).unwrap();
        assert_eq!((r.collected, r.committed), (50, 50));
        let f = instance_feature("horse", 12345, tk.dim);
        let p = pools.prompt("SEG", "horse", &f);
        assert!(concept_recognized(tk.knowledge("SEG").unwrap(), "horse", &p));
    }

    #[test]
    fn noisy_update_discards_corrupted() {
        let tk = toolkit();
        let mut pools = PromptPools::new(tk.dim, tk.tau);
        let src = WebSource { universe: universe(), rho: 0.5, seed: 8, dim: tk.dim };
        let req = CollectRequest { tool: "SELECT", concept: Some("zebra"), salt: "a", episode: None };
        let collected = src.collect(&req, 7).unwrap();
        let clean = collected.instances.iter().filter(|i| !i.corrupted).count();
        let r = update_tool(&tk, &mut pools, &LearningConfig::default(), &src, &req).unwrap();
        assert_eq!(r.committed, clean);
        assert_eq!(r.discarded, 6 - clean);
    }
}
