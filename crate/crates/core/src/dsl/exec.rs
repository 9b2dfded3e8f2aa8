use std::collections::BTreeMap;

use super::parser::{ProgramAst, Value};
use crate::model::{ErrorInfo, ExecutionTrace, StepRecord, ToolErrorKind, ToolOutput};
use crate::tools::knowledge::{instance_feature, FeatureVector, PromptVector};
use crate::tools::sim::{invoke, StepPrompts};
use crate::tools::{expr, is_updatable, step_concepts, Toolkit};

/// Variable bindings visible to a program.
pub type Env = BTreeMap<String, ToolOutput>;

/// Supplies the ensembled prompt for an updatable tool call.
pub trait PromptProvider {
    fn prompt(&self, tool: &str, concept: &str, feature: &FeatureVector) -> PromptVector;
}

/// Provider for an empty prompt pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPrompts;

impl PromptProvider for ZeroPrompts {
    fn prompt(&self, _tool: &str, _concept: &str, feature: &FeatureVector) -> PromptVector {
        PromptVector::zeros(feature.dim())
    }
}

fn bind(value: &Value, env: &Env) -> Result<ToolOutput, String> {
    match value {
        Value::Var(name) => env.get(name).cloned().ok_or_else(|| format!("{name} is not defined")),
        Value::Str(s) => Ok(ToolOutput::Text(s.clone())),
        Value::Num(n) => Ok(ToolOutput::Number(*n)),
        Value::Bool(b) => Ok(ToolOutput::Text(b.to_string())),
    }
}

fn step_prompts(tool: &str, args: &Env, toolkit: &Toolkit, provider: &dyn PromptProvider) -> StepPrompts {
    if !is_updatable(tool) {
        return StepPrompts::new();
    }
    let seed = match args.get("image") {
        Some(ToolOutput::Image(s)) => s.seed,
        _ => 0,
    };
    let text_arg = |name: &str| match args.get(name) {
        Some(ToolOutput::Text(t)) => Some(t.clone()),
        _ => None,
    };
    step_concepts(tool, text_arg)
        .into_iter()
        .map(|c| {
            let f = instance_feature(&c, seed, toolkit.dim);
            let p = provider.prompt(tool, &c, &f);
            (c, p)
        })
        .collect()
}

/// Runs `ast` step by step, halting at the first tool error.
pub fn execute(ast: &ProgramAst, env: &Env, toolkit: &Toolkit, prompts: &dyn PromptProvider) -> ExecutionTrace {
    let mut env = env.clone();
    let mut trace = ExecutionTrace::default();

    for (index, step) in ast.steps.iter().enumerate() {
        let mut args = Env::new();
        let mut failure = None;
        for (name, value) in &step.args {
            match bind(value, &env) {
                Ok(v) => {
                    args.insert(name.clone(), v);
                }
                Err(m) => {
                    failure = Some(ErrorInfo {
                        kind: ToolErrorKind::BadArgs,
                        message: m,
                    });
                    break;
                }
            }
        }
        if failure.is_none() && step.tool == "EVAL" {
            if let Some(ToolOutput::Text(src)) = args.get("expr") {
                match expr::interpolate(src, |n| env.get(n).map(ToolOutput::answer_text)) {
                    Ok(s) => {
                        args.insert("expr".into(), ToolOutput::Text(s));
                    }
                    Err(m) => {
                        failure = Some(ErrorInfo {
                            kind: ToolErrorKind::BadArgs,
                            message: m,
                        })
                    }
                }
            }
        }
        let result = match failure {
            Some(e) => Err(e),
            None => {
                let prompts = step_prompts(&step.tool, &args, toolkit, prompts);
                invoke(&step.tool, &args, &prompts, toolkit).map_err(|e| ErrorInfo {
                    kind: e.kind,
                    message: e.message,
                })
            }
        };
        let mut record = StepRecord {
            index,
            target: step.target.clone(),
            tool_name: step.tool.clone(),
            bound_args: step.args.clone(),
            output: None,
            output_text: String::new(),
            error: None,
        };
        match result {
            Ok(out) => {
                record.output_text = out.summary();
                env.insert(step.target.clone(), out.clone());
                record.output = Some(out);
                trace.steps.push(record);
            }
            Err(e) => {
                record.output_text = format!("ERROR: {}", e.kind);
                record.error = Some(e);
                trace.steps.push(record);
                trace.halted_at = Some(index);
                return trace;
            }
        }
    }
    trace.final_answer = trace.final_output().map(ToolOutput::answer_text);
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, UMBRELLA_PROGRAM};
    use crate::tools::scene::{BBox, SimEntity, SimScene};
    use std::collections::BTreeSet;

    fn scene() -> SimScene {
        let e = |id, c: &str, b, attrs: &[(&str, &str)]| SimEntity {
            id,
            concept: c.into(),
            bbox: b,
            attrs: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        };
        SimScene {
            id: "s".into(),
            seed: 1,
            width: 100,
            height: 60,
            entities: vec![
                e(1, "person", BBox::new(5, 10, 20, 40), &[("activity", "reading")]),
                e(2, "umbrella", BBox::new(50, 5, 20, 30), &[]),
                e(3, "person", BBox::new(80, 10, 15, 40), &[("activity", "running")]),
            ],
            effects: vec![],
        }
    }

    fn toolkit(loc_known: bool) -> Toolkit {
        let universe = vec!["person".to_string(), "umbrella".to_string()];
        let mut known: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for t in crate::tools::UPDATABLE_TOOLS {
            let mut s: BTreeSet<String> = universe.iter().cloned().collect();
            if t == "LOC" && !loc_known {
                s.remove("umbrella");
            }
            known.insert(t.into(), s);
        }
        Toolkit::new(universe, &known, BTreeMap::new())
    }

    fn env() -> Env {
        [("IMAGE".to_string(), ToolOutput::Image(scene()))].into_iter().collect()
    }

    #[test]
    fn umbrella_program_answers_activity() {
        let ast = parse_program(UMBRELLA_PROGRAM).unwrap();
        let trace = execute(&ast, &env(), &toolkit(true), &ZeroPrompts);
        assert_eq!(trace.steps.len(), ast.steps.len());
        assert_eq!(trace.halted_at, None);
        assert_eq!(trace.final_answer.as_deref(), Some("reading"));
        trace.check().unwrap();
    }

    #[test]
    fn halts_on_unrecognized_concept() {
        let ast = parse_program(UMBRELLA_PROGRAM).unwrap();
        let trace = execute(&ast, &env(), &toolkit(false), &ZeroPrompts);
        assert_eq!(trace.halted_at, Some(0));
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].error.as_ref().unwrap().kind, ToolErrorKind::EmptyDetection);
        assert_eq!(trace.final_answer, None);
    }

    #[test]
    fn result_of_bound_value() {
        let ast = parse_program("R=RESULT(var=X)").unwrap();
        let env: Env = [("X".to_string(), ToolOutput::Text("yes".into()))].into_iter().collect();
        let trace = execute(&ast, &env, &toolkit(true), &ZeroPrompts);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.final_answer.as_deref(), Some("yes"));
    }

    #[test]
    fn eval_interpolates_previous_results() {
        let src = "A=LOC(image=IMAGE,object='person')\nN=COUNT(box=A)\nE=EVAL(expr=\"'yes' if {N} == 2 else 'no'\")\nF=RESULT(var=E)";
        let trace = execute(&parse_program(src).unwrap(), &env(), &toolkit(true), &ZeroPrompts);
        assert_eq!(trace.final_answer.as_deref(), Some("yes"));
    }

    struct TargetPrompts(Toolkit);

    impl PromptProvider for TargetPrompts {
        fn prompt(&self, tool: &str, concept: &str, _f: &FeatureVector) -> PromptVector {
            PromptVector(self.0.knowledge(tool).unwrap().target(concept))
        }
    }

    #[test]
    fn prompts_rescue_unknown_concept() {
        let ast = parse_program(UMBRELLA_PROGRAM).unwrap();
        let tk = toolkit(false);
        let trace = execute(&ast, &env(), &tk, &TargetPrompts(tk.clone()));
        assert_eq!(trace.final_answer.as_deref(), Some("reading"));
    }
}
