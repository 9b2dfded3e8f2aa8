//! The three data-collection channels over the synthetic world.

use rand::seq::SliceRandom;
use rand::Rng;

use super::tuning::ValidationCase;
use super::{Channel, LearningError, TrainingInstance};
use crate::backend::{infer_answer, Backend};
use crate::dsl::{Env, Value};
use crate::model::{normalize_answer, Detection, ExecutionTrace, TaskInstance, ToolOutput};
use crate::tools::knowledge::{concept_target, instance_feature};
use crate::tools::scene::{BBox, SimEntity, SimScene};
use crate::tools::sim::true_answer;
use crate::tools::{Question, ACTIVITIES, COLORS};
use crate::vecmath::{hash_parts, rng};

/// Default collection budget per tool.
pub fn default_budget(tool: &str) -> usize {
    match tool {
        "LOC" => 200,
        "SEG" => 50,
        "SELECT" | "CLASSIFY" | "REPLACE" => 7,
        _ => 1,
    }
}

pub fn channel_for(tool: &str) -> Option<Channel> {
    match tool {
        "VQA" => Some(Channel::LlmInferred),
        "LOC" | "SEG" => Some(Channel::Dataset),
        "SELECT" | "CLASSIFY" | "REPLACE" => Some(Channel::Web),
        _ => None,
    }
}

/// The failed episode a VQA instance is inferred from.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeEvidence<'a> {
    pub task: &'a TaskInstance,
    pub program: &'a str,
    pub trace: &'a ExecutionTrace,
    pub inputs: &'a Env,
    pub step: Option<usize>,
    pub phase: &'a str,
}

#[derive(Debug, Clone)]
pub struct CollectRequest<'a> {
    pub tool: &'a str,
    pub concept: Option<&'a str>,
    /// Distinguishes repeated collections for the same concept.
    pub salt: &'a str,
    pub episode: Option<EpisodeEvidence<'a>>,
}

#[derive(Debug, Clone)]
pub struct Collected {
    pub concept: String,
    pub instances: Vec<TrainingInstance>,
    pub validation: ValidationCase,
}

pub trait DataSource: Sync {
    fn channel(&self) -> Channel;
    fn collect(&self, req: &CollectRequest<'_>, budget: usize) -> Result<Collected, LearningError>;
}

/// Scene with `main` as entity 1 followed by `others`, laid out left to right.
pub fn sample_scene(id: &str, seed: u64, main: &str, others: &[&str]) -> SimScene {
    let mut r = rng(hash_parts(&["scene", id, &seed.to_string()]));
    let concepts: Vec<&str> = std::iter::once(main).chain(others.iter().copied()).collect();
    let slot = 50;
    let width = slot * concepts.len() as i32 + 10;
    let entities = concepts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let w = r.gen_range(25..=40);
            let h = r.gen_range(25..=45);
            let mut attrs = std::collections::BTreeMap::new();
            attrs.insert("color".to_string(), COLORS[r.gen_range(0..COLORS.len())].to_string());
            attrs.insert("activity".to_string(), ACTIVITIES[r.gen_range(0..ACTIVITIES.len())].to_string());
            SimEntity {
                id: i as u32 + 1,
                concept: (*c).to_string(),
                bbox: BBox::new(10 + slot * i as i32, r.gen_range(5..=25), w, h),
                attrs,
            }
        })
        .collect();
    SimScene {
        id: id.to_string(),
        seed,
        width,
        height: 80,
        entities,
        effects: Vec::new(),
    }
}

fn detections(scene: &SimScene, label: &str) -> Vec<Detection> {
    scene
        .entities
        .iter()
        .map(|e| Detection {
            label: label.to_string(),
            bbox: e.bbox,
            confidence: 1.0,
            entity: Some(e.id),
        })
        .collect()
}

fn others<'a>(universe: &'a [String], exclude: &str, n: usize, seed: u64) -> Vec<&'a str> {
    let pool: Vec<&str> = universe.iter().map(String::as_str).filter(|c| *c != exclude).collect();
    pool.choose_multiple(&mut rng(seed), n).copied().collect()
}

fn require_concept<'a>(req: &CollectRequest<'a>, universe: &[String]) -> Result<&'a str, LearningError> {
    let c = req.concept.ok_or_else(|| LearningError::MissingConcept(req.tool.to_string()))?;
    if !universe.iter().any(|u| u == c) {
        return Err(LearningError::ConceptUnavailable(c.to_string()));
    }
    Ok(c)
}

/// Labeled instance sampled for `concept`; with probability `rho` the image
/// actually shows another concept while still labeled `concept`.
fn labeled_instance(
    universe: &[String],
    concept: &str,
    rho: f64,
    seed: u64,
    id: &str,
    channel: Channel,
    dim: usize,
) -> TrainingInstance {
    let mut r = rng(seed);
    let corrupted = rho > 0.0 && r.gen::<f64>() < rho;
    let shown = if corrupted {
        others(universe, concept, 1, seed ^ 0x5eed).first().copied().unwrap_or(concept)
    } else {
        concept
    };
    let distractors = others(universe, shown, 2, seed.rotate_left(17));
    let distractors: Vec<&str> = distractors.into_iter().filter(|c| *c != concept).collect();
    let scene = sample_scene(id, seed, shown, &distractors);
    let label_boxes = vec![scene.entities[0].bbox];
    TrainingInstance {
        concept: concept.to_string(),
        question: None,
        feature: instance_feature(concept, scene.seed, dim),
        target: concept_target(shown, dim),
        scene,
        label: concept.to_string(),
        label_boxes,
        source: channel,
        corrupted: shown != concept,
    }
}

/// Labeled detection data for LOC and SEG.
#[derive(Debug, Clone)]
pub struct DatasetSource {
    pub universe: Vec<String>,
    pub rho: f64,
    pub seed: u64,
    pub dim: usize,
}

impl DataSource for DatasetSource {
    fn channel(&self) -> Channel {
        Channel::Dataset
    }

    fn collect(&self, req: &CollectRequest<'_>, budget: usize) -> Result<Collected, LearningError> {
        if !matches!(req.tool, "LOC" | "SEG") {
            return Err(LearningError::NoSourceForTool(req.tool.to_string()));
        }
        let concept = require_concept(req, &self.universe)?;
        let base = hash_parts(&["dataset", &self.seed.to_string(), req.tool, concept, req.salt]);
        let instances = (0..budget)
            .map(|i| {
                let seed = hash_parts(&[&base.to_string(), &i.to_string()]);
                let id = format!("ds-{concept}-{i}");
                labeled_instance(&self.universe, concept, self.rho, seed, &id, Channel::Dataset, self.dim)
            })
            .collect();
        let vseed = hash_parts(&[&base.to_string(), "validation"]);
        let distractors = others(&self.universe, concept, 2, vseed);
        let scene = sample_scene(&format!("ds-{concept}-val"), vseed, concept, &distractors);
        let boxes = vec![scene.entities[0].bbox];
        Ok(Collected {
            concept: concept.to_string(),
            instances,
            validation: ValidationCase::Detect { scene, boxes },
        })
    }
}

/// Searched images for SELECT, CLASSIFY and REPLACE; the first image is held out.
#[derive(Debug, Clone)]
pub struct WebSource {
    pub universe: Vec<String>,
    pub rho: f64,
    pub seed: u64,
    pub dim: usize,
}

impl DataSource for WebSource {
    fn channel(&self) -> Channel {
        Channel::Web
    }

    fn collect(&self, req: &CollectRequest<'_>, budget: usize) -> Result<Collected, LearningError> {
        if !matches!(req.tool, "SELECT" | "CLASSIFY" | "REPLACE") {
            return Err(LearningError::NoSourceForTool(req.tool.to_string()));
        }
        let concept = require_concept(req, &self.universe)?;
        let base = hash_parts(&["web", &self.seed.to_string(), req.tool, concept, req.salt]);
        let instances = (1..budget.max(1))
            .map(|i| {
                let seed = hash_parts(&[&base.to_string(), &i.to_string()]);
                let id = format!("web-{concept}-{i}");
                labeled_instance(&self.universe, concept, self.rho, seed, &id, Channel::Web, self.dim)
            })
            .collect();
        let vseed = hash_parts(&[&base.to_string(), "0"]);
        let negatives = others(&self.universe, concept, 2, vseed);
        let validation = match req.tool {
            "SELECT" => {
                let scene = sample_scene(&format!("web-{concept}-0"), vseed, concept, &negatives);
                ValidationCase::Select {
                    regions: detections(&scene, "object"),
                    expected: vec![1],
                    scene,
                }
            }
            "CLASSIFY" => {
                let scene = sample_scene(&format!("web-{concept}-0"), vseed, concept, &negatives);
                let mut categories = vec![concept.to_string()];
                categories.extend(negatives.iter().take(1).map(|s| s.to_string()));
                ValidationCase::Classify {
                    regions: detections(&scene, "object"),
                    categories,
                    entity: 1,
                    scene,
                }
            }
            _ => {
                let victim = negatives.first().copied().unwrap_or("blob");
                let scene = sample_scene(&format!("web-{concept}-0"), vseed, victim, &negatives[1..]);
                let regions = detections(&scene, victim).into_iter().take(1).collect();
                ValidationCase::Replace { scene, regions }
            }
        };
        Ok(Collected {
            concept: concept.to_string(),
            instances,
            validation,
        })
    }
}

/// Question-answer pairs inferred by the language model from a failed episode.
pub struct LlmInferredSource<'a> {
    pub backend: &'a dyn Backend,
    pub dim: usize,
}

fn resolve_text(v: &Value, trace: &ExecutionTrace, inputs: &Env) -> Option<String> {
    match v {
        Value::Str(s) => Some(s.clone()),
        Value::Var(name) => trace
            .value_of(name)
            .or_else(|| inputs.get(name))
            .map(ToolOutput::answer_text),
        _ => None,
    }
}

fn resolve_image(v: &Value, trace: &ExecutionTrace, inputs: &Env) -> Option<SimScene> {
    let name = v.as_var()?;
    match trace.value_of(name).or_else(|| inputs.get(name)) {
        Some(ToolOutput::Image(s)) => Some(s.clone()),
        _ => None,
    }
}

impl DataSource for LlmInferredSource<'_> {
    fn channel(&self) -> Channel {
        Channel::LlmInferred
    }

    fn collect(&self, req: &CollectRequest<'_>, budget: usize) -> Result<Collected, LearningError> {
        if req.tool != "VQA" {
            return Err(LearningError::NoSourceForTool(req.tool.to_string()));
        }
        let ev = req
            .episode
            .ok_or_else(|| LearningError::MissingEvidence("VQA needs the failed episode".into()))?;
        let question_of = |i: usize| {
            let s = &ev.trace.steps[i];
            s.bound_args
                .iter()
                .find(|(n, _)| n == "question")
                .and_then(|(_, v)| resolve_text(v, ev.trace, ev.inputs))
        };
        let vqa_steps: Vec<usize> = (0..ev.trace.steps.len()).filter(|&i| ev.trace.steps[i].tool_name == "VQA").collect();
        let step = ev
            .step
            .filter(|i| vqa_steps.contains(i))
            .or_else(|| {
                vqa_steps.iter().copied().find(|&i| {
                    let c = question_of(i).and_then(|q| Question::parse(&q)).map(|q| q.concept().to_string());
                    req.concept.is_some() && c.as_deref() == req.concept
                })
            })
            .or_else(|| vqa_steps.first().copied())
            .ok_or_else(|| LearningError::MissingEvidence("no VQA step was executed".into()))?;
        let record = &ev.trace.steps[step];
        let question = question_of(step).ok_or_else(|| LearningError::MissingEvidence("VQA question".into()))?;
        let parsed = Question::parse(&question)
            .ok_or_else(|| LearningError::MissingEvidence(format!("unsupported question {question:?}")))?;
        let scene = record
            .bound_args
            .iter()
            .find(|(n, _)| n == "image")
            .and_then(|(_, v)| resolve_image(v, ev.trace, ev.inputs))
            .ok_or_else(|| LearningError::MissingEvidence("VQA image".into()))?;

        let concept = parsed.concept().to_string();
        let truth = true_answer(&scene, &parsed);
        let mut instances = Vec::new();
        if budget > 0 {
            let answer = infer_answer(self.backend, ev.task, ev.program, ev.trace, step, ev.phase)?;
            let clean = normalize_answer(&answer) == normalize_answer(&truth);
            let target = if clean {
                concept_target(&concept, self.dim)
            } else {
                concept_target(&format!("{concept}#{answer}"), self.dim)
            };
            instances.push(TrainingInstance {
                concept: concept.clone(),
                question: Some(question.clone()),
                feature: instance_feature(&concept, scene.seed, self.dim),
                target,
                scene: scene.clone(),
                label: answer,
                label_boxes: Vec::new(),
                source: Channel::LlmInferred,
                corrupted: !clean,
            });
        }
        Ok(Collected {
            concept,
            instances,
            validation: ValidationCase::Vqa {
                scene,
                question,
                expected: truth,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn universe() -> Vec<String> {
        ["horse", "glove", "dog", "cat", "zebra"].iter().map(|s| s.to_string()).collect()
    }

    fn req<'a>(tool: &'a str, concept: &'a str) -> CollectRequest<'a> {
        CollectRequest {
            tool,
            concept: Some(concept),
            salt: "t",
            episode: None,
        }
    }

    #[test]
    fn dataset_budgets() {
        let src = DatasetSource { universe: universe(), rho: 0.0, seed: 1, dim: 64 };
        let c = src.collect(&req("LOC", "horse"), default_budget("LOC")).unwrap();
        assert_eq!(c.instances.len(), 200);
        assert!(c.instances.iter().all(|i| !i.corrupted && i.source == Channel::Dataset));
        let c = src.collect(&req("SEG", "glove"), default_budget("SEG")).unwrap();
        assert_eq!(c.instances.len(), 50);
    }

    #[test]
    fn channel_routing() {
        let src = DatasetSource { universe: universe(), rho: 0.0, seed: 1, dim: 64 };
        assert!(matches!(src.collect(&req("SELECT", "horse"), 7), Err(LearningError::NoSourceForTool(_))));
        assert!(matches!(src.collect(&req("LOC", "unicorn"), 7), Err(LearningError::ConceptUnavailable(_))));
        let web = WebSource { universe: universe(), rho: 0.0, seed: 1, dim: 64 };
        let c = web.collect(&req("CLASSIFY", "horse"), 7).unwrap();
        assert_eq!(c.instances.len(), 6);
        assert!(matches!(c.validation, ValidationCase::Classify { .. }));
    }

    #[test]
    fn corruption_rate_is_roughly_honored() {
        let src = DatasetSource { universe: universe(), rho: 0.5, seed: 9, dim: 64 };
        let c = src.collect(&req("LOC", "horse"), 200).unwrap();
        let bad = c.instances.iter().filter(|i| i.corrupted).count();
        assert!((60..=140).contains(&bad), "{bad}");
        for i in &c.instances {
            assert_eq!(i.corrupted, i.target != concept_target("horse", 64));
        }
    }

    #[test]
    fn deterministic() {
        let src = DatasetSource { universe: universe(), rho: 0.3, seed: 4, dim: 64 };
        let a = src.collect(&req("SEG", "dog"), 10).unwrap();
        let b = src.collect(&req("SEG", "dog"), 10).unwrap();
        assert_eq!(a.instances, b.instances);
    }

    #[test]
    fn sampled_scenes_are_valid() {
        for s in 0..50 {
            sample_scene("x", s, "horse", &["dog", "cat"]).check().unwrap();
        }
    }
}
