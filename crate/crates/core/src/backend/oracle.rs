//! Ground-truth reasoning over the synthetic world used by the scripted backend.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{execute, parse_program, Env, ProgramAst, Value, ZeroPrompts};
use crate::error::read_json;
use crate::model::{ExecutionTrace, ToolOutput};
use crate::reflection::textualize_step;
use crate::tools::scene::SimScene;
use crate::tools::sim::true_answer;
use crate::tools::{is_updatable, step_concepts, Question, Toolkit, ACTIVITIES, COLORS};
use crate::vecmath::{hash_parts, rng};

/// Scenes plus a fully competent toolkit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub scenes: BTreeMap<String, SimScene>,
    pub toolkit: Toolkit,
}

impl World {
    pub fn new(scenes: BTreeMap<String, SimScene>, toolkit: &Toolkit) -> Self {
        World {
            scenes,
            toolkit: toolkit.to_competent(),
        }
    }

    /// Loads `scenes.json` and `toolkit.json` from a benchmark directory.
    pub fn load(dir: &Path) -> crate::Result<Self> {
        let scenes = read_json(&dir.join("scenes.json"))?;
        let toolkit = Toolkit::load(&dir.join("toolkit.json"))?;
        Ok(World::new(scenes, &toolkit))
    }

    pub fn env(&self, bindings: &[(String, String)]) -> Option<Env> {
        bindings
            .iter()
            .map(|(name, id)| Some((name.clone(), ToolOutput::Image(self.scenes.get(id)?.clone()))))
            .collect()
    }

    pub fn run(&self, ast: &ProgramAst, env: &Env) -> ExecutionTrace {
        execute(ast, env, &self.toolkit, &ZeroPrompts)
    }
}

/// Where an executed program first departs from the intended one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Divergence {
    /// The program text differs from the intended program at this step.
    Program { step: usize },
    /// A tool produced a different result than a competent tool would.
    Tool {
        step: usize,
        tool: String,
        concept: Option<String>,
    },
}

impl Divergence {
    pub fn step(&self) -> usize {
        match self {
            Divergence::Program { step } | Divergence::Tool { step, .. } => *step,
        }
    }
}

fn str_arg(ast: &ProgramAst, step: usize, name: &str) -> Option<String> {
    ast.steps.get(step)?.arg(name).and_then(Value::as_str).map(String::from)
}

fn bracket_labels(line: &str) -> Vec<String> {
    let Some(start) = line.find('[') else { return Vec::new() };
    let end = line.rfind(']').unwrap_or(line.len());
    line[start + 1..end]
        .split("), ")
        .filter_map(|item| item.split_once('@').map(|(l, _)| l.trim().to_string()))
        .collect()
}

/// Concept a tool step was wrong about, read from its arguments or outputs.
pub fn step_concept(ast: &ProgramAst, step: usize, tool: &str, competent_line: &str, actual_line: &str) -> Option<String> {
    if tool == "CLASSIFY" {
        let want = bracket_labels(competent_line);
        let got = bracket_labels(actual_line);
        return want
            .iter()
            .enumerate()
            .find(|(i, w)| got.get(*i) != Some(*w))
            .map(|(_, w)| w.clone())
            .or_else(|| step_concepts(tool, |n| str_arg(ast, step, n)).into_iter().next());
    }
    step_concepts(tool, |n| str_arg(ast, step, n)).into_iter().next()
}

/// Checks step `i` of `actual` against the intended program and a competent run.
/// `actual_line` is the textualized record of that step, if it ran.
pub fn check_step(
    world: &World,
    intended: &ProgramAst,
    actual: &ProgramAst,
    competent: &ExecutionTrace,
    i: usize,
    actual_line: Option<&str>,
) -> Option<Divergence> {
    if intended.steps.get(i) != actual.steps.get(i) {
        return Some(Divergence::Program { step: i });
    }
    let _ = world;
    let expected_line = competent.steps.get(i).map(textualize_step);
    if expected_line.as_deref() != actual_line {
        let tool = actual.steps[i].tool.clone();
        if !is_updatable(&tool) {
            return Some(Divergence::Program { step: i });
        }
        let concept = step_concept(actual, i, &tool, expected_line.as_deref().unwrap_or(""), actual_line.unwrap_or(""));
        return Some(Divergence::Tool { step: i, tool, concept });
    }
    None
}

/// First divergence over all reported step lines.
pub fn first_divergence(
    world: &World,
    intended: &ProgramAst,
    actual: &ProgramAst,
    env: &Env,
    step_lines: &[&str],
) -> Option<Divergence> {
    let competent = world.run(actual, env);
    let n = intended.steps.len().max(actual.steps.len());
    (0..n).find_map(|i| check_step(world, intended, actual, &competent, i, step_lines.get(i).copied()))
}

/// Last updatable tool of a program with its concept; the vague critique target.
pub fn last_updatable(ast: &ProgramAst) -> Option<(usize, String, Option<String>)> {
    ast.steps.iter().enumerate().rev().find(|(_, s)| is_updatable(&s.tool)).map(|(i, s)| {
        let concept = step_concepts(&s.tool, |n| str_arg(ast, i, n)).into_iter().next();
        (i, s.tool.clone(), concept)
    })
}

/// Truthful answer to the VQA question at `step`, corrupted with probability `rho`.
pub fn oracle_answer(world: &World, program: &str, env: &Env, step: usize, rho: f64, seed_text: &str) -> Option<String> {
    let ast = parse_program(program).ok()?;
    let trace = world.run(&ast, env);
    let s = ast.steps.get(step)?;
    let image_var = s.arg("image")?.as_var()?;
    let scene = match trace.value_of(image_var).or_else(|| env.get(image_var))? {
        ToolOutput::Image(scene) => scene,
        _ => return None,
    };
    let question = match s.arg("question")? {
        Value::Str(q) => q.clone(),
        Value::Var(v) => trace.value_of(v)?.answer_text(),
        _ => return None,
    };
    let q = Question::parse(&question)?;
    let truth = true_answer(scene, &q);
    let mut r = rng(hash_parts(&["answer", seed_text]));
    if rho <= 0.0 || r.gen::<f64>() >= rho {
        return Some(truth);
    }
    let wrong = match q {
        Question::Activity(_) => {
            let options: Vec<&str> = ACTIVITIES.iter().copied().filter(|a| *a != truth).collect();
            options.choose(&mut r).map(|s| s.to_string())
        }
        Question::Color(_) => {
            let options: Vec<&str> = COLORS.iter().copied().filter(|a| *a != truth).collect();
            options.choose(&mut r).map(|s| s.to_string())
        }
        Question::Exists(_) => Some(if truth == "yes" { "no" } else { "yes" }.to_string()),
        Question::Count(_) => Some((truth.parse::<u32>().unwrap_or(0) + r.gen_range(1..=3)).to_string()),
    };
    wrong
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_label_parsing() {
        let line = "step 2: CLASSIFY(categories='a,b') -> 2 boxes [a@(1,2,3,4), b@(5,6,7,8)]";
        assert_eq!(bracket_labels(line), vec!["a", "b"]);
        assert!(bracket_labels("step 0: COUNT(box=A) -> 3").is_empty());
    }
}
