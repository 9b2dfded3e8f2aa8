//! Per-instance prompt tuning and held-out validation.

use serde::{Deserialize, Serialize};

use super::gates::loc_training_accepted;
use super::{LearningError, TrainingInstance};
use crate::model::{Detection, ToolOutput};
use crate::tools::knowledge::{training_loss, PromptVector, ToolKnowledge};
use crate::tools::scene::{BBox, SimScene};
use crate::tools::sim::{invoke, StepPrompts};
use crate::tools::Toolkit;

/// Default learning rate for each updatable tool.
pub fn default_lr(tool: &str) -> f64 {
    match tool {
        "VQA" => 1e-3,
        "SEG" => 1e-1,
        "SELECT" | "CLASSIFY" => 1e-2,
        "REPLACE" => 5e-3,
        "LOC" => 5e-4,
        _ => 1e-2,
    }
}

pub const DEFAULT_STEPS: usize = 100;

/// Gradient descent on the training loss, starting from the zero prompt.
pub fn tune_prompt(
    tool: &ToolKnowledge,
    instance: &TrainingInstance,
    steps: usize,
    lr: f64,
) -> Result<PromptVector, LearningError> {
    let mut p = PromptVector::zeros(tool.dim);
    for step in 0..steps {
        let (loss, grad) = training_loss(tool, &p, instance);
        if !loss.is_finite() {
            return Err(LearningError::Divergence { step });
        }
        for (x, g) in p.0.iter_mut().zip(&grad) {
            *x -= lr * g;
        }
    }
    if !p.is_finite() {
        return Err(LearningError::Divergence { step: steps });
    }
    Ok(p)
}

/// A held-out check with its desirable response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum ValidationCase {
    /// LOC or SEG must find exactly these boxes.
    Detect { scene: SimScene, boxes: Vec<BBox> },
    /// SELECT over `regions` must keep exactly `expected`.
    Select {
        scene: SimScene,
        regions: Vec<Detection>,
        expected: Vec<u32>,
    },
    /// CLASSIFY over `regions` with `categories` must label `entity` as the concept.
    Classify {
        scene: SimScene,
        regions: Vec<Detection>,
        categories: Vec<String>,
        entity: u32,
    },
    /// REPLACE of `regions` must leave entities of the concept there.
    Replace { scene: SimScene, regions: Vec<Detection> },
    /// VQA must answer `question` with `expected`.
    Vqa {
        scene: SimScene,
        question: String,
        expected: String,
    },
}

fn args(pairs: Vec<(&str, ToolOutput)>) -> crate::dsl::Env {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Runs the tool with `prompt` alone for `concept` and checks the desirable response.
pub fn validate_prompt(
    toolkit: &Toolkit,
    tool: &str,
    concept: &str,
    prompt: &PromptVector,
    case: &ValidationCase,
) -> bool {
    if !prompt.is_finite() {
        return false;
    }
    let prompts: StepPrompts = [(concept.to_string(), prompt.clone())].into_iter().collect();
    let text = |s: &str| ToolOutput::Text(s.to_string());
    let image = |s: &SimScene| ToolOutput::Image(s.clone());
    match (tool, case) {
        ("LOC" | "SEG", ValidationCase::Detect { scene, boxes }) => {
            let a = args(vec![("image", image(scene)), ("object", text(concept))]);
            match invoke(tool, &a, &prompts, toolkit) {
                Ok(out) => {
                    let found = out.regions().unwrap_or(&[]);
                    if tool == "LOC" {
                        loc_training_accepted(found, boxes)
                    } else {
                        let mut got: Vec<BBox> = found.iter().map(|d| d.bbox).collect();
                        let mut want = boxes.clone();
                        got.sort_by_key(|b| (b.x, b.y, b.w, b.h));
                        want.sort_by_key(|b| (b.x, b.y, b.w, b.h));
                        got == want
                    }
                }
                Err(_) => false,
            }
        }
        ("SELECT", ValidationCase::Select { scene, regions, expected }) => {
            let a = args(vec![
                ("image", image(scene)),
                ("object", ToolOutput::Boxes(regions.clone())),
                ("query", text(concept)),
            ]);
            match invoke(tool, &a, &prompts, toolkit) {
                Ok(out) => {
                    let mut got: Vec<u32> = out.regions().unwrap_or(&[]).iter().filter_map(|d| d.entity).collect();
                    let mut want = expected.clone();
                    got.sort_unstable();
                    want.sort_unstable();
                    got == want
                }
                Err(_) => false,
            }
        }
        ("CLASSIFY", ValidationCase::Classify { scene, regions, categories, entity }) => {
            let a = args(vec![
                ("image", image(scene)),
                ("object", ToolOutput::Boxes(regions.clone())),
                ("categories", text(&categories.join(","))),
            ]);
            match invoke(tool, &a, &prompts, toolkit) {
                Ok(out) => out
                    .regions()
                    .unwrap_or(&[])
                    .iter()
                    .any(|d| d.entity == Some(*entity) && d.label == concept),
                Err(_) => false,
            }
        }
        ("REPLACE", ValidationCase::Replace { scene, regions }) => {
            let a = args(vec![
                ("image", image(scene)),
                ("object", ToolOutput::Masks(regions.clone())),
                ("prompt", text(concept)),
            ]);
            match invoke(tool, &a, &prompts, toolkit) {
                Ok(ToolOutput::Image(edited)) => regions.iter().filter_map(|d| d.entity).all(|id| {
                    edited.entity(id).is_some_and(|e| e.concept == concept)
                }),
                _ => false,
            }
        }
        ("VQA", ValidationCase::Vqa { scene, question, expected }) => {
            let a = args(vec![("image", image(scene)), ("question", text(question))]);
            match invoke(tool, &a, &prompts, toolkit) {
                Ok(out) => crate::model::normalize_answer(&out.answer_text()) == crate::model::normalize_answer(expected),
                Err(_) => false,
            }
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::Channel;
    use crate::tools::knowledge::{concept_target, instance_feature};
    use crate::vecmath::{cosine, norm};

    fn knowledge() -> ToolKnowledge {
        let u = vec!["horse".to_string(), "zebra".to_string()];
        ToolKnowledge::new("LOC", 64, 0.9, u, Default::default())
    }

    fn instance(concept: &str, target_concept: &str) -> TrainingInstance {
        TrainingInstance {
            concept: concept.into(),
            question: None,
            scene: SimScene {
                id: "x".into(),
                seed: 0,
                width: 10,
                height: 10,
                entities: vec![],
                effects: vec![],
            },
            label: target_concept.into(),
            label_boxes: vec![],
            feature: instance_feature(concept, 0, 64),
            target: concept_target(target_concept, 64),
            source: Channel::Dataset,
            corrupted: concept != target_concept,
        }
    }

    #[test]
    fn converges_at_contraction_rate() {
        let k = knowledge();
        let inst = instance("horse", "horse");
        let p = tune_prompt(&k, &inst, 100, 0.1).unwrap();
        let diff: Vec<f64> = p.0.iter().zip(&inst.target).map(|(a, b)| a - b).collect();
        // From zero, the error after n steps is (1 - 2 lr)^n times the unit target.
        let expected = 0.8f64.powi(100);
        assert!((norm(&diff) - expected).abs() < 1e-12);
        assert!(norm(&diff) < 0.01);
    }

    #[test]
    fn zero_steps_is_zero_prompt() {
        let p = tune_prompt(&knowledge(), &instance("horse", "horse"), 0, 0.1).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn corrupted_instance_points_elsewhere() {
        let k = knowledge();
        let p = tune_prompt(&k, &instance("horse", "zebra"), 100, 0.1).unwrap();
        assert!(cosine(&p.0, &k.target("horse")) < 0.9);
    }

    #[test]
    fn divergence_detected() {
        let k = knowledge();
        let err = tune_prompt(&k, &instance("horse", "horse"), 2000, 10.0).unwrap_err();
        assert!(matches!(err, LearningError::Divergence { .. }));
    }
}
