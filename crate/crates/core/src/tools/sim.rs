//! Deterministic simulated semantics for all fifteen tools.
//!
//! Updatable tools consult [`concept_recognized`] with the prompt supplied for
//! each concept. Unrecognized concepts either fail loudly (LOC, SEG, SELECT)
//! or answer confidently and wrongly (VQA, CLASSIFY, REPLACE).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use thiserror::Error;

use super::expr;
use super::knowledge::{concept_recognized, PromptVector, ToolKnowledge};
use super::scene::{BBox, EditEffect, EffectKind, SimScene};
use super::{split_categories, Question, Toolkit, ACTIVITIES, COLORS};
use crate::learning::gates::tool_specific_gates;
use crate::model::{Detection, ToolErrorKind, ToolOutput};
use crate::vecmath::{hash_parts, rng};

/// Confidence assigned to background false positives proposed by LOC.
pub const SPURIOUS_CONFIDENCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind}: {message}")]
pub struct ToolError {
    pub kind: ToolErrorKind,
    pub message: String,
}

impl ToolError {
    fn empty(message: impl Into<String>) -> Self {
        ToolError {
            kind: ToolErrorKind::EmptyDetection,
            message: message.into(),
        }
    }

    fn bad_args(message: impl Into<String>) -> Self {
        ToolError {
            kind: ToolErrorKind::BadArgs,
            message: message.into(),
        }
    }
}

type Args = BTreeMap<String, ToolOutput>;
pub type StepPrompts = BTreeMap<String, PromptVector>;

fn image<'a>(args: &'a Args, name: &str) -> Result<&'a SimScene, ToolError> {
    match args.get(name) {
        Some(ToolOutput::Image(s)) => Ok(s),
        Some(other) => Err(ToolError::bad_args(format!("'{name}' must be an image, got {}", other.kind_name()))),
        None => Err(ToolError::bad_args(format!("missing '{name}'"))),
    }
}

fn text(args: &Args, name: &str) -> Result<String, ToolError> {
    match args.get(name) {
        Some(ToolOutput::Text(t)) => Ok(t.clone()),
        Some(ToolOutput::Number(n)) => Ok(crate::model::format_number(*n)),
        Some(other) => Err(ToolError::bad_args(format!("'{name}' must be text, got {}", other.kind_name()))),
        None => Err(ToolError::bad_args(format!("missing '{name}'"))),
    }
}

fn regions<'a>(args: &'a Args, name: &str) -> Result<(&'a [Detection], bool), ToolError> {
    match args.get(name) {
        Some(ToolOutput::Boxes(d)) => Ok((d, false)),
        Some(ToolOutput::Masks(d)) => Ok((d, true)),
        Some(other) => Err(ToolError::bad_args(format!("'{name}' must be regions, got {}", other.kind_name()))),
        None => Err(ToolError::bad_args(format!("missing '{name}'"))),
    }
}

fn nonempty_regions<'a>(args: &'a Args, name: &str) -> Result<(&'a [Detection], bool), ToolError> {
    let (r, masks) = regions(args, name)?;
    if r.is_empty() {
        return Err(ToolError::bad_args(format!("'{name}' has no regions")));
    }
    Ok((r, masks))
}

fn knowledge<'a>(toolkit: &'a Toolkit, tool: &str) -> Result<&'a ToolKnowledge, ToolError> {
    toolkit.knowledge(tool).ok_or_else(|| ToolError {
        kind: ToolErrorKind::UnknownTool,
        message: format!("no knowledge for {tool}"),
    })
}

fn prompt_for(prompts: &StepPrompts, concept: &str, dim: usize) -> PromptVector {
    prompts.get(concept).cloned().unwrap_or_else(|| PromptVector::zeros(dim))
}

fn recognized(k: &ToolKnowledge, prompts: &StepPrompts, concept: &str) -> bool {
    concept_recognized(k, concept, &prompt_for(prompts, concept, k.dim))
}

/// Deterministic pick from `options` that differs from `exclude`.
fn pick_other<'a>(options: &[&'a str], exclude: &[&str], seed: u64) -> Option<&'a str> {
    let pool: Vec<&str> = options.iter().copied().filter(|o| !exclude.contains(o)).collect();
    pool.choose(&mut rng(seed)).copied()
}

fn wrap(masks: bool, d: Vec<Detection>) -> ToolOutput {
    if masks {
        ToolOutput::Masks(d)
    } else {
        ToolOutput::Boxes(d)
    }
}

fn region_entities(scene: &SimScene, regions: &[Detection]) -> Vec<u32> {
    regions
        .iter()
        .filter_map(|d| d.entity)
        .filter(|id| scene.entity(*id).is_some())
        .collect()
}

/// Ground-truth answer to a parsed question about `scene`.
pub fn true_answer(scene: &SimScene, q: &Question) -> String {
    let first = scene.entities_of(q.concept()).next();
    match q {
        Question::Activity(_) => first.and_then(|e| e.attr("activity")).unwrap_or("unknown").to_string(),
        Question::Color(_) => first.and_then(|e| e.attr("color")).unwrap_or("unknown").to_string(),
        Question::Exists(_) => if first.is_some() { "yes" } else { "no" }.to_string(),
        Question::Count(c) => scene.entities_of(c).count().to_string(),
    }
}

/// The confident wrong answer an unrecognizing VQA tool gives.
pub fn wrong_answer(scene: &SimScene, q: &Question, question: &str) -> String {
    let truth = true_answer(scene, q);
    let seed = hash_parts(&["vqa-wrong", &scene.id, question]);
    match q {
        Question::Activity(_) => pick_other(&ACTIVITIES, &[&truth], seed).unwrap_or("unknown").into(),
        Question::Color(_) => pick_other(&COLORS, &[&truth], seed).unwrap_or("unknown").into(),
        Question::Exists(_) => if truth == "yes" { "no" } else { "yes" }.into(),
        Question::Count(_) => (truth.parse::<u32>().unwrap_or(0) + 1).to_string(),
    }
}

/// Runs one tool. `prompts` maps each concept the step depends on to its
/// ensembled prompt; fixed tools ignore it.
pub fn invoke(tool: &str, args: &Args, prompts: &StepPrompts, toolkit: &Toolkit) -> Result<ToolOutput, ToolError> {
    match tool {
        "LOC" => {
            let k = knowledge(toolkit, tool)?;
            let scene = image(args, "image")?;
            let concept = text(args, "object")?;
            let prompt = prompt_for(prompts, &concept, k.dim);
            let score = if k.knows(&concept) {
                1.0
            } else {
                k.prompt_affinity(&concept, &prompt).max(0.0)
            };
            let candidates: Vec<Detection> = scene
                .entities
                .iter()
                .map(|e| Detection {
                    label: concept.clone(),
                    bbox: e.bbox,
                    confidence: if e.concept == concept { score } else { SPURIOUS_CONFIDENCE },
                    entity: Some(e.id),
                })
                .collect();
            let kept = tool_specific_gates(tool, candidates);
            if !concept_recognized(k, &concept, &prompt) {
                return Err(ToolError::empty(format!("LOC found no '{concept}'")));
            }
            Ok(ToolOutput::Boxes(kept))
        }
        "SEG" => {
            let k = knowledge(toolkit, tool)?;
            let scene = image(args, "image")?;
            let concept = text(args, "object")?;
            if !recognized(k, prompts, &concept) {
                return Err(ToolError::empty(format!("SEG found no '{concept}'")));
            }
            Ok(ToolOutput::Masks(
                scene
                    .entities_of(&concept)
                    .map(|e| Detection {
                        label: concept.clone(),
                        bbox: e.bbox,
                        confidence: 1.0,
                        entity: Some(e.id),
                    })
                    .collect(),
            ))
        }
        "VQA" => {
            let k = knowledge(toolkit, tool)?;
            let scene = image(args, "image")?;
            let question = text(args, "question")?;
            let q = Question::parse(&question)
                .ok_or_else(|| ToolError::bad_args(format!("unsupported question {question:?}")))?;
            let answer = if recognized(k, prompts, q.concept()) {
                true_answer(scene, &q)
            } else {
                wrong_answer(scene, &q, &question)
            };
            Ok(ToolOutput::Text(answer))
        }
        "SELECT" => {
            let k = knowledge(toolkit, tool)?;
            let scene = image(args, "image")?;
            let (cands, masks) = regions(args, "object")?;
            let query = text(args, "query")?;
            if !recognized(k, prompts, &query) {
                return Err(ToolError::empty(format!("SELECT could not match '{query}'")));
            }
            let picked: Vec<Detection> = cands
                .iter()
                .filter(|d| d.entity.and_then(|id| scene.entity(id)).is_some_and(|e| e.concept == query))
                .map(|d| Detection {
                    label: query.clone(),
                    ..d.clone()
                })
                .collect();
            if picked.is_empty() {
                return Err(ToolError::empty(format!("SELECT found no '{query}' among {} regions", cands.len())));
            }
            Ok(wrap(masks, picked))
        }
        "CLASSIFY" => {
            let k = knowledge(toolkit, tool)?;
            let scene = image(args, "image")?;
            let (cands, _) = regions(args, "object")?;
            let categories = split_categories(&text(args, "categories")?);
            if categories.is_empty() {
                return Err(ToolError::bad_args("no categories"));
            }
            let cats: Vec<&str> = categories.iter().map(String::as_str).collect();
            let mut out = Vec::new();
            for d in cands {
                let Some(e) = d.entity.and_then(|id| scene.entity(id)) else {
                    continue;
                };
                if !cats.contains(&e.concept.as_str()) {
                    continue;
                }
                let label = if recognized(k, prompts, &e.concept) {
                    Some(e.concept.clone())
                } else {
                    let seed = hash_parts(&["classify-wrong", &scene.id, &e.id.to_string()]);
                    pick_other(&cats, &[&e.concept], seed).map(String::from)
                };
                if let Some(label) = label {
                    out.push(Detection {
                        label,
                        ..d.clone()
                    });
                }
            }
            Ok(ToolOutput::Boxes(out))
        }
        "REPLACE" => {
            let k = knowledge(toolkit, tool)?;
            let scene = image(args, "image")?;
            let (cands, _) = nonempty_regions(args, "object")?;
            let new_concept = text(args, "prompt")?;
            let ids = region_entities(scene, cands);
            if ids.is_empty() {
                return Err(ToolError::bad_args("REPLACE regions do not refer to scene entities"));
            }
            let ok = recognized(k, prompts, &new_concept);
            let mut out = scene.clone();
            let mut changes = Vec::new();
            for e in out.entities.iter_mut().filter(|e| ids.contains(&e.id)) {
                let painted = if ok {
                    new_concept.clone()
                } else {
                    let universe: Vec<&str> = toolkit.universe.iter().map(String::as_str).collect();
                    let seed = hash_parts(&["replace-distractor", &scene.id, &new_concept, &e.id.to_string()]);
                    pick_other(&universe, &[&new_concept, &e.concept], seed)
                        .unwrap_or("blob")
                        .to_string()
                };
                changes.push(format!("{}->{}", e.concept, painted));
                e.concept = painted;
            }
            out.effects.push(EditEffect {
                kind: EffectKind::Replace,
                entities: ids,
                detail: changes.join(","),
            });
            Ok(ToolOutput::Image(out))
        }
        "FACEDET" => {
            let scene = image(args, "image")?;
            Ok(ToolOutput::Boxes(
                scene
                    .entities
                    .iter()
                    .filter(|e| e.has_face())
                    .map(|e| Detection {
                        label: "face".into(),
                        bbox: e.bbox,
                        confidence: 1.0,
                        entity: Some(e.id),
                    })
                    .collect(),
            ))
        }
        "LIST" => {
            let query = text(args, "query")?;
            let key = crate::model::normalize_answer(&query);
            let items = toolkit
                .list_knowledge
                .get(&key)
                .ok_or_else(|| ToolError::bad_args(format!("no knowledge for {query:?}")))?;
            let max = match args.get("max") {
                Some(ToolOutput::Number(n)) if *n >= 0.0 => *n as usize,
                Some(ToolOutput::Number(_)) | Some(_) => return Err(ToolError::bad_args("'max' must be a non-negative number")),
                None => items.len(),
            };
            Ok(ToolOutput::Text(items.iter().take(max).cloned().collect::<Vec<_>>().join(",")))
        }
        "EVAL" => {
            let e = text(args, "expr")?;
            expr::evaluate(&e)
                .map(|v| ToolOutput::Text(v.render()))
                .map_err(|m| ToolError::bad_args(format!("EVAL: {m}")))
        }
        "RESULT" => args.get("var").cloned().ok_or_else(|| ToolError::bad_args("missing 'var'")),
        "COUNT" => {
            let (r, _) = regions(args, "box")?;
            Ok(ToolOutput::Number(r.len() as f64))
        }
        "CROP" => {
            let scene = image(args, "image")?;
            let (r, _) = nonempty_regions(args, "box")?;
            let side = match args.get("side") {
                Some(_) => text(args, "side")?,
                None => "in".into(),
            };
            let u = r.iter().skip(1).fold(r[0].bbox, |acc, d| acc.union(&d.bbox));
            let (w, h) = (scene.width, scene.height);
            let region = match side.as_str() {
                "in" => u,
                "left" => BBox::new(0, 0, u.x, h),
                "right" => BBox::new(u.right(), 0, w - u.right(), h),
                "above" => BBox::new(0, 0, w, u.y),
                "below" => BBox::new(0, u.bottom(), w, h - u.bottom()),
                other => return Err(ToolError::bad_args(format!("unknown crop side {other:?}"))),
            };
            if region.w <= 0 || region.h <= 0 {
                return Err(ToolError::bad_args(format!("empty crop region {region}")));
            }
            Ok(ToolOutput::Image(scene.crop(region)))
        }
        "COLORPOP" | "BGBLUR" | "EMOJI" => {
            let scene = image(args, "image")?;
            let (r, _) = nonempty_regions(args, "object")?;
            let ids = region_entities(scene, r);
            if ids.is_empty() {
                return Err(ToolError::bad_args(format!("{tool} regions do not refer to scene entities")));
            }
            let (kind, detail) = match tool {
                "COLORPOP" => (EffectKind::Colorpop, String::new()),
                "BGBLUR" => (EffectKind::Bgblur, String::new()),
                _ => (
                    EffectKind::Emoji,
                    match args.get("emoji") {
                        Some(_) => text(args, "emoji")?,
                        None => "smiley".into(),
                    },
                ),
            };
            let mut out = scene.clone();
            out.effects.push(EditEffect {
                kind,
                entities: ids,
                detail,
            });
            Ok(ToolOutput::Image(out))
        }
        other => Err(ToolError {
            kind: ToolErrorKind::UnknownTool,
            message: format!("unknown tool {other}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::scene::SimEntity;
    use std::collections::BTreeSet;

    fn ent(id: u32, concept: &str, bbox: BBox, attrs: &[(&str, &str)]) -> SimEntity {
        SimEntity {
            id,
            concept: concept.into(),
            bbox,
            attrs: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    fn scene() -> SimScene {
        SimScene {
            id: "park".into(),
            seed: 3,
            width: 200,
            height: 100,
            entities: vec![
                ent(1, "person", BBox::new(10, 20, 30, 60), &[("activity", "reading"), ("color", "blue")]),
                ent(2, "umbrella", BBox::new(100, 10, 40, 40), &[("color", "red")]),
                ent(3, "dog", BBox::new(150, 60, 20, 20), &[("color", "brown")]),
                ent(4, "bongjoonho", BBox::new(60, 10, 20, 20), &[("face", "yes")]),
            ],
            effects: vec![],
        }
    }

    fn universe() -> Vec<String> {
        ["person", "umbrella", "dog", "cat", "horse", "bongjoonho"].iter().map(|s| s.to_string()).collect()
    }

    fn toolkit(unknown: &[(&str, &str)]) -> Toolkit {
        let mut known = BTreeMap::new();
        for t in crate::tools::UPDATABLE_TOOLS {
            let set: BTreeSet<String> = universe()
                .into_iter()
                .filter(|c| !unknown.contains(&(t, c.as_str())))
                .collect();
            known.insert(t.to_string(), set);
        }
        let mut lists = BTreeMap::new();
        lists.insert("directors".to_string(), vec!["bongjoonho".to_string(), "parkchanwook".to_string()]);
        Toolkit::new(universe(), &known, lists)
    }

    fn args(pairs: Vec<(&str, ToolOutput)>) -> Args {
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn txt(s: &str) -> ToolOutput {
        ToolOutput::Text(s.into())
    }

    fn none() -> StepPrompts {
        StepPrompts::new()
    }

    #[test]
    fn loc_finds_known_concept() {
        let out = invoke("LOC", &args(vec![("image", ToolOutput::Image(scene())), ("object", txt("umbrella"))]), &none(), &toolkit(&[])).unwrap();
        let ToolOutput::Boxes(d) = out else { panic!() };
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BBox::new(100, 10, 40, 40));
    }

    #[test]
    fn loc_unknown_concept_is_empty_detection_until_prompted() {
        let tk = toolkit(&[("LOC", "umbrella")]);
        let a = args(vec![("image", ToolOutput::Image(scene())), ("object", txt("umbrella"))]);
        let err = invoke("LOC", &a, &none(), &tk).unwrap_err();
        assert_eq!(err.kind, ToolErrorKind::EmptyDetection);
        let mut p = StepPrompts::new();
        p.insert("umbrella".into(), PromptVector(tk.knowledge("LOC").unwrap().target("umbrella")));
        assert!(invoke("LOC", &a, &p, &tk).is_ok());
    }

    #[test]
    fn vqa_answers_or_is_confidently_wrong() {
        let a = args(vec![("image", ToolOutput::Image(scene())), ("question", txt("what is the person doing"))]);
        assert_eq!(invoke("VQA", &a, &none(), &toolkit(&[])).unwrap(), txt("reading"));
        let wrong = invoke("VQA", &a, &none(), &toolkit(&[("VQA", "person")])).unwrap();
        assert_ne!(wrong, txt("reading"));
        assert!(matches!(wrong, ToolOutput::Text(t) if ACTIVITIES.contains(&t.as_str())));
    }

    #[test]
    fn count_eval_result() {
        let boxes = ToolOutput::Boxes(vec![
            Detection { label: "a".into(), bbox: BBox::new(0, 0, 1, 1), confidence: 1.0, entity: None };
            3
        ]);
        assert_eq!(invoke("COUNT", &args(vec![("box", boxes)]), &none(), &toolkit(&[])).unwrap(), ToolOutput::Number(3.0));
        let e = invoke("EVAL", &args(vec![("expr", txt("'yes' if 2 > 1 else 'no'"))]), &none(), &toolkit(&[])).unwrap();
        assert_eq!(e, txt("yes"));
        let r = invoke("RESULT", &args(vec![("var", txt("x"))]), &none(), &toolkit(&[])).unwrap();
        assert_eq!(r, txt("x"));
    }

    #[test]
    fn crop_left_of_umbrella() {
        let s = scene();
        let boxes = invoke("LOC", &args(vec![("image", ToolOutput::Image(s.clone())), ("object", txt("umbrella"))]), &none(), &toolkit(&[])).unwrap();
        let out = invoke("CROP", &args(vec![("image", ToolOutput::Image(s)), ("box", boxes), ("side", txt("left"))]), &none(), &toolkit(&[])).unwrap();
        let ToolOutput::Image(c) = out else { panic!() };
        let concepts: Vec<&str> = c.entities.iter().map(|e| e.concept.as_str()).collect();
        assert_eq!(concepts, ["person", "bongjoonho"]);
        assert_eq!(c.width, 100);
    }

    #[test]
    fn replace_then_loc_finds_new_concept() {
        let tk = toolkit(&[]);
        let s = scene();
        let masks = invoke("SEG", &args(vec![("image", ToolOutput::Image(s.clone())), ("object", txt("dog"))]), &none(), &tk).unwrap();
        let edited = invoke("REPLACE", &args(vec![("image", ToolOutput::Image(s)), ("object", masks), ("prompt", txt("cat"))]), &none(), &tk).unwrap();
        let found = invoke("LOC", &args(vec![("image", edited.clone()), ("object", txt("cat"))]), &none(), &tk).unwrap();
        let ToolOutput::Boxes(d) = found else { panic!() };
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BBox::new(150, 60, 20, 20));
        let ToolOutput::Image(e) = edited else { panic!() };
        assert_eq!(e.effects[0].kind, EffectKind::Replace);
    }

    #[test]
    fn replace_unknown_concept_paints_distractor() {
        let tk = toolkit(&[("REPLACE", "cat")]);
        let s = scene();
        let masks = invoke("SEG", &args(vec![("image", ToolOutput::Image(s.clone())), ("object", txt("dog"))]), &none(), &tk).unwrap();
        let edited = invoke("REPLACE", &args(vec![("image", ToolOutput::Image(s)), ("object", masks), ("prompt", txt("cat"))]), &none(), &tk).unwrap();
        let ToolOutput::Image(e) = edited else { panic!() };
        let painted = &e.entity(3).unwrap().concept;
        assert_ne!(painted, "cat");
        assert_ne!(painted, "dog");
    }

    #[test]
    fn select_and_classify_faces() {
        let tk = toolkit(&[]);
        let s = scene();
        let faces = invoke("FACEDET", &args(vec![("image", ToolOutput::Image(s.clone()))]), &none(), &tk).unwrap();
        let sel = invoke("SELECT", &args(vec![("image", ToolOutput::Image(s.clone())), ("object", faces.clone()), ("query", txt("bongjoonho"))]), &none(), &tk).unwrap();
        assert_eq!(sel.regions().unwrap().len(), 1);
        let cats = invoke("LIST", &args(vec![("query", txt("directors")), ("max", ToolOutput::Number(2.0))]), &none(), &tk).unwrap();
        let tagged = invoke("CLASSIFY", &args(vec![("image", ToolOutput::Image(s.clone())), ("object", faces.clone()), ("categories", cats.clone())]), &none(), &tk).unwrap();
        assert_eq!(tagged.regions().unwrap()[0].label, "bongjoonho");
        let tk = toolkit(&[("CLASSIFY", "bongjoonho"), ("SELECT", "bongjoonho")]);
        let tagged = invoke("CLASSIFY", &args(vec![("image", ToolOutput::Image(s.clone())), ("object", faces.clone()), ("categories", cats)]), &none(), &tk).unwrap();
        assert_eq!(tagged.regions().unwrap()[0].label, "parkchanwook");
        let err = invoke("SELECT", &args(vec![("image", ToolOutput::Image(s)), ("object", faces), ("query", txt("bongjoonho"))]), &none(), &tk).unwrap_err();
        assert_eq!(err.kind, ToolErrorKind::EmptyDetection);
    }

    #[test]
    fn effects_are_recorded() {
        let tk = toolkit(&[]);
        let s = scene();
        let masks = invoke("SEG", &args(vec![("image", ToolOutput::Image(s.clone())), ("object", txt("person"))]), &none(), &tk).unwrap();
        for (tool, kind) in [("COLORPOP", EffectKind::Colorpop), ("BGBLUR", EffectKind::Bgblur), ("EMOJI", EffectKind::Emoji)] {
            let out = invoke(tool, &args(vec![("image", ToolOutput::Image(s.clone())), ("object", masks.clone())]), &none(), &tk).unwrap();
            let ToolOutput::Image(e) = out else { panic!() };
            assert_eq!(e.effects, vec![EditEffect { kind, entities: vec![1], detail: if tool == "EMOJI" { "smiley".into() } else { String::new() } }]);
        }
    }

    #[test]
    fn bad_args_and_unknown_tool() {
        let tk = toolkit(&[]);
        assert_eq!(invoke("LOC", &args(vec![]), &none(), &tk).unwrap_err().kind, ToolErrorKind::BadArgs);
        assert_eq!(invoke("NOPE", &args(vec![]), &none(), &tk).unwrap_err().kind, ToolErrorKind::UnknownTool);
        let empty = ToolOutput::Boxes(vec![]);
        assert_eq!(invoke("CROP", &args(vec![("image", ToolOutput::Image(scene())), ("box", empty)]), &none(), &tk).unwrap_err().kind, ToolErrorKind::BadArgs);
    }
}
