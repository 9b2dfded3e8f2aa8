use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::parser::{ProgramAst, Value};
use crate::model::{INPUT_IMAGE, INPUT_LEFT, INPUT_RIGHT};
use crate::tools::registry::{ArgKind, OutputKind, ToolSignature};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "diagnostic", rename_all = "snake_case")]
pub enum Diagnostic {
    UnknownTool { tool: String, step: usize },
    UnknownArg { tool: String, arg: String, step: usize },
    MissingArg { tool: String, arg: String, step: usize },
    UndefinedVar { name: String, step: usize },
    TypeMismatch { step: usize, arg: String, expected: String, found: String },
    ReservedTarget { name: String, step: usize },
    MisplacedResult { step: usize },
    MissingResult,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::UnknownTool { tool, step } => write!(f, "step {step}: unknown tool {tool}"),
            Diagnostic::UnknownArg { tool, arg, step } => write!(f, "step {step}: {tool} has no argument '{arg}'"),
            Diagnostic::MissingArg { tool, arg, step } => write!(f, "step {step}: {tool} needs argument '{arg}'"),
            Diagnostic::UndefinedVar { name, step } => write!(f, "step {step}: {name} is not defined"),
            Diagnostic::TypeMismatch {
                step,
                arg,
                expected,
                found,
            } => write!(f, "step {step}: argument '{arg}' expects {expected}, got {found}"),
            Diagnostic::ReservedTarget { name, step } => write!(f, "step {step}: {name} is a reserved input"),
            Diagnostic::MisplacedResult { step } => write!(f, "step {step}: RESULT must be the last step"),
            Diagnostic::MissingResult => f.write_str("program does not end with RESULT"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StaticKind {
    Known(OutputKind),
    Unknown,
}

fn accepts(kind: ArgKind, value: &Value, found: StaticKind) -> Result<(), String> {
    use OutputKind as O;
    let ok = match (kind, value, found) {
        (ArgKind::Any, _, _) => true,
        (_, Value::Var(_), StaticKind::Unknown) => true,
        (ArgKind::Image, Value::Var(_), StaticKind::Known(k)) => k == O::Scene,
        (ArgKind::Region, Value::Var(_), StaticKind::Known(k)) => matches!(k, O::Boxes | O::Masks),
        (ArgKind::Text, Value::Str(_), _) => true,
        (ArgKind::Text, Value::Var(_), StaticKind::Known(k)) => matches!(k, O::Text | O::Number),
        (ArgKind::Number, Value::Num(_), _) => true,
        (ArgKind::Number, Value::Var(_), StaticKind::Known(k)) => k == O::Number,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        let found = match (value, found) {
            (Value::Var(_), StaticKind::Known(k)) => format!("{k:?}").to_lowercase(),
            (Value::Str(_), _) => "string".into(),
            (Value::Num(_), _) => "number".into(),
            (Value::Bool(_), _) => "bool".into(),
            (Value::Var(_), StaticKind::Unknown) => "unknown".into(),
        };
        Err(found)
    }
}

/// Static checks before execution. An empty result means the program is runnable.
pub fn validate(ast: &ProgramAst, signatures: &[ToolSignature]) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut env: BTreeMap<&str, StaticKind> = [INPUT_IMAGE, INPUT_LEFT, INPUT_RIGHT]
        .into_iter()
        .map(|n| (n, StaticKind::Known(OutputKind::Scene)))
        .collect();
    let last = ast.steps.len().saturating_sub(1);

    for (step, a) in ast.steps.iter().enumerate() {
        if [INPUT_IMAGE, INPUT_LEFT, INPUT_RIGHT].contains(&a.target.as_str()) {
            diags.push(Diagnostic::ReservedTarget {
                name: a.target.clone(),
                step,
            });
        }
        let sig = signatures.iter().find(|s| s.name == a.tool);
        if a.tool == "RESULT" && step != last {
            diags.push(Diagnostic::MisplacedResult { step });
        }
        for (_, value) in &a.args {
            if let Value::Var(name) = value {
                if !env.contains_key(name.as_str()) {
                    diags.push(Diagnostic::UndefinedVar {
                        name: name.clone(),
                        step,
                    });
                }
            }
        }
        let Some(sig) = sig else {
            diags.push(Diagnostic::UnknownTool {
                tool: a.tool.clone(),
                step,
            });
            env.insert(&a.target, StaticKind::Unknown);
            continue;
        };
        for (name, value) in &a.args {
            match sig.arg(name) {
                None => diags.push(Diagnostic::UnknownArg {
                    tool: a.tool.clone(),
                    arg: name.clone(),
                    step,
                }),
                Some(spec) => {
                    let found = match value {
                        Value::Var(v) => env.get(v.as_str()).copied().unwrap_or(StaticKind::Unknown),
                        _ => StaticKind::Unknown,
                    };
                    if let Err(found) = accepts(spec.kind, value, found) {
                        diags.push(Diagnostic::TypeMismatch {
                            step,
                            arg: name.clone(),
                            expected: format!("{:?}", spec.kind).to_lowercase(),
                            found,
                        });
                    }
                }
            }
        }
        for spec in sig.args.iter().filter(|s| s.required) {
            if a.arg(&spec.name).is_none() {
                diags.push(Diagnostic::MissingArg {
                    tool: a.tool.clone(),
                    arg: spec.name.clone(),
                    step,
                });
            }
        }
        let kind = if sig.output == OutputKind::Report {
            match a.arg("var") {
                Some(Value::Var(v)) => env.get(v.as_str()).copied().unwrap_or(StaticKind::Unknown),
                Some(Value::Num(_)) => StaticKind::Known(OutputKind::Number),
                Some(_) => StaticKind::Known(OutputKind::Text),
                None => StaticKind::Unknown,
            }
        } else {
            StaticKind::Known(sig.output)
        };
        env.insert(&a.target, kind);
    }

    if ast.steps.last().is_none_or(|s| s.tool != "RESULT") {
        diags.push(Diagnostic::MissingResult);
    }
    diags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, UMBRELLA_PROGRAM};
    use crate::tools::registry::standard_signatures;

    fn check(src: &str) -> Vec<Diagnostic> {
        validate(&parse_program(src).unwrap(), &standard_signatures())
    }

    #[test]
    fn umbrella_program_is_clean() {
        assert_eq!(check(UMBRELLA_PROGRAM), vec![]);
    }

    #[test]
    fn unknown_tool() {
        let d = check("A=FOO(image=IMAGE)\nB=RESULT(var=A)");
        assert_eq!(d, vec![Diagnostic::UnknownTool { tool: "FOO".into(), step: 0 }]);
    }

    #[test]
    fn missing_result() {
        let d = check("A=LOC(image=IMAGE,object='x')");
        assert_eq!(d, vec![Diagnostic::MissingResult]);
    }

    #[test]
    fn undefined_var_and_forward_reference() {
        let d = check("A=COUNT(box=B)\nB=LOC(image=IMAGE,object='x')\nC=RESULT(var=A)");
        assert!(d.contains(&Diagnostic::UndefinedVar { name: "B".into(), step: 0 }));
    }

    #[test]
    fn arg_names_and_types() {
        let d = check("A=LOC(image=IMAGE,obj='x')\nB=RESULT(var=A)");
        assert!(d.contains(&Diagnostic::UnknownArg { tool: "LOC".into(), arg: "obj".into(), step: 0 }));
        assert!(d.contains(&Diagnostic::MissingArg { tool: "LOC".into(), arg: "object".into(), step: 0 }));
        let d = check("A=COUNT(box=IMAGE)\nB=RESULT(var=A)");
        assert!(matches!(d[0], Diagnostic::TypeMismatch { step: 0, .. }));
    }

    #[test]
    fn result_must_be_last_and_inputs_reserved() {
        let d = check("A=RESULT(var=IMAGE)\nIMAGE=CROP(image=IMAGE,box=A)\nC=RESULT(var=IMAGE)");
        assert!(d.contains(&Diagnostic::MisplacedResult { step: 0 }));
        assert!(d.contains(&Diagnostic::ReservedTarget { name: "IMAGE".into(), step: 1 }));
    }

    #[test]
    fn multi_image_inputs_accepted() {
        let src = "A=LOC(image=LEFT,object='dog')\nB=LOC(image=RIGHT,object='dog')\nN=COUNT(box=A)\nM=COUNT(box=B)\nE=EVAL(expr=\"'yes' if {N} > {M} else 'no'\")\nF=RESULT(var=E)";
        assert_eq!(check(src), vec![]);
    }
}
