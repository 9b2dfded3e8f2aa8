//! Deterministic rule-driven backend with fault injection.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::oracle::{check_step, first_divergence, last_updatable, oracle_answer, Divergence, World};
use super::{parse_inputs, AuditLog, Backend, BackendError, PromptDocument, Purpose};
use crate::dsl::{parse_program, pretty_print, Env, ProgramAst, Value};
use crate::error::read_json;
use crate::model::PLANNER;

pub const RULES_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub purpose: Purpose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// Regex over the instruction, with named captures usable as `${name}` in templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Respond {
    Template(String),
    OracleCritique,
    OracleVerdict,
    OracleAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    WrongToolArg,
    WrongTool,
    WrongStepOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    #[default]
    Always,
    /// Fires unless a failure example for a matching instruction is in the prompt.
    UnlessCritiqueInPrompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub kind: FaultKind,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default)]
    pub trigger: Trigger,
    /// Global reflection blames the last updatable tool instead of the program.
    #[serde(default)]
    pub vague_global: bool,
}

impl Fault {
    /// Applies the fault to program source; unparseable source is returned unchanged.
    pub fn apply(&self, program: &str) -> String {
        let Ok(mut ast) = parse_program(program) else {
            return program.to_string();
        };
        let n = ast.steps.len();
        match self.kind {
            FaultKind::WrongToolArg => {
                if let (Some(step), Some(arg)) = (ast.steps.get_mut(self.step), &self.arg) {
                    let value = Value::Str(self.value.clone().unwrap_or_default());
                    match step.args.iter_mut().find(|(n, _)| n == arg) {
                        Some(slot) => slot.1 = value,
                        None => step.args.push((arg.clone(), value)),
                    }
                }
            }
            FaultKind::WrongTool => {
                if let (Some(step), Some(tool)) = (ast.steps.get_mut(self.step), &self.value) {
                    step.tool = tool.clone();
                }
            }
            FaultKind::WrongStepOrder => {
                if self.step + 1 < n {
                    ast.steps.swap(self.step, self.step + 1);
                }
            }
        }
        pretty_print(&ast)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(rename = "match")]
    pub when: RuleMatch,
    pub respond: Respond,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub version: u32,
    /// Probability that an inferred VQA answer is wrong.
    #[serde(default)]
    pub answer_corruption: f64,
    pub rules: Vec<ScriptedRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<ScriptedRule>) -> Self {
        RuleSet {
            version: RULES_VERSION,
            answer_corruption: 0.0,
            rules,
        }
    }

    /// Rules answering the reflection and answer-inference purposes from the world oracle.
    pub fn oracle_rules() -> Vec<ScriptedRule> {
        [
            (Purpose::GlobalReflection, Respond::OracleCritique),
            (Purpose::LocalReflection, Respond::OracleVerdict),
            (Purpose::AnswerInference, Respond::OracleAnswer),
        ]
        .into_iter()
        .map(|(purpose, respond)| ScriptedRule {
            when: RuleMatch {
                purpose,
                kind: None,
                pattern: None,
            },
            respond,
            fault: None,
        })
        .collect()
    }
}

struct CompiledRule {
    rule: ScriptedRule,
    regex: Option<Regex>,
}

pub struct ScriptedBackend {
    rules: Vec<CompiledRule>,
    answer_corruption: f64,
    world: World,
    audit: AuditLog,
}

/// Instruction line of a rendered failure example section.
fn example_instruction(text: &str) -> Option<&str> {
    text.lines().next()?.strip_prefix("Instruction:").map(str::trim)
}

pub fn render_critique(tool: &str, concept: Option<&str>, reason: &str) -> String {
    format!("ERROR_TOOL: {tool}\nCONCEPT: {}\nREASON: {reason}", concept.unwrap_or("-"))
}

impl ScriptedBackend {
    pub fn new(rules: RuleSet, world: World) -> Result<Self, BackendError> {
        let compiled = rules
            .rules
            .into_iter()
            .map(|rule| {
                let regex = match &rule.when.pattern {
                    Some(p) => Some(Regex::new(p).map_err(|e| BackendError::Rules(e.to_string()))?),
                    None => None,
                };
                Ok(CompiledRule { rule, regex })
            })
            .collect::<Result<_, BackendError>>()?;
        Ok(ScriptedBackend {
            rules: compiled,
            answer_corruption: rules.answer_corruption,
            world,
            audit: AuditLog::default(),
        })
    }

    /// Loads rules and the world (scenes.json, toolkit.json) from the rule file's directory.
    pub fn from_rules_path(path: &Path) -> Result<Self, BackendError> {
        let rules: RuleSet = read_json(path).map_err(|e| BackendError::Rules(e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let world = World::load(dir).map_err(|e| BackendError::Rules(e.to_string()))?;
        Self::new(rules, world)
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    fn matching(&self, purpose: Purpose, kind: Option<&str>, text: &str) -> Option<&CompiledRule> {
        self.rules.iter().find(|c| {
            c.rule.when.purpose == purpose
                && !matches!((&c.rule.when.kind, kind), (Some(want), Some(have)) if want != have)
                && c.regex.as_ref().is_none_or(|re| re.is_match(text))
        })
    }

    fn expand(c: &CompiledRule, template: &str, text: &str) -> String {
        match c.regex.as_ref().and_then(|re| re.captures(text)) {
            Some(caps) => {
                let mut out = String::new();
                caps.expand(template, &mut out);
                out
            }
            None => template.to_string(),
        }
    }

    /// Program the rules produce for an instruction with faults disabled.
    pub fn intended_program(&self, kind: &str, instruction: &str) -> Option<String> {
        let c = self.matching(Purpose::Program, Some(kind), instruction)?;
        match &c.rule.respond {
            Respond::Template(t) => Some(Self::expand(c, t, instruction)),
            _ => None,
        }
    }

    fn fault_for(&self, kind: &str, instruction: &str) -> Option<&Fault> {
        self.matching(Purpose::Program, Some(kind), instruction)
            .and_then(|c| c.rule.fault.as_ref())
    }

    fn fault_fires(c: &CompiledRule, fault: &Fault, doc: &PromptDocument) -> bool {
        match fault.trigger {
            Trigger::Always => true,
            Trigger::UnlessCritiqueInPrompt => !doc.sections_labeled("failure_example").any(|ex| {
                let Some(instr) = example_instruction(ex) else { return false };
                match &c.regex {
                    Some(re) => re.is_match(instr),
                    None => true,
                }
            }),
        }
    }

    fn episode_context(&self, doc: &PromptDocument) -> Result<(String, String, ProgramAst, ProgramAst, Env), String> {
        let instruction = doc.section("task").unwrap_or_default().to_string();
        let kind = doc.section("kind").unwrap_or_default().to_string();
        let program = doc.section("program").unwrap_or_default();
        let actual = parse_program(program).map_err(|e| format!("program does not parse: {e}"))?;
        let intended_src = self
            .intended_program(&kind, &instruction)
            .ok_or_else(|| "no intended program for this instruction".to_string())?;
        let intended = parse_program(&intended_src).map_err(|e| format!("intended program does not parse: {e}"))?;
        let env = self
            .world
            .env(&parse_inputs(doc.section("inputs").unwrap_or_default()))
            .ok_or_else(|| "unknown input scene".to_string())?;
        Ok((instruction, kind, intended, actual, env))
    }

    fn divergence_critique(d: &Divergence) -> String {
        match d {
            Divergence::Program { step } => render_critique(
                PLANNER,
                None,
                &format!("step {step} of the program does not do what the instruction asks"),
            ),
            Divergence::Tool { step, tool, concept } => render_critique(
                tool,
                concept.as_deref(),
                &format!("step {step}: {tool} gives a wrong result for {}", concept.as_deref().unwrap_or("its input")),
            ),
        }
    }

    fn global_critique(&self, doc: &PromptDocument) -> String {
        let (instruction, kind, intended, actual, env) = match self.episode_context(doc) {
            Ok(ctx) => ctx,
            Err(reason) => return render_critique(PLANNER, None, &reason),
        };
        let lines: Vec<&str> = doc.section("steps").unwrap_or_default().lines().collect();
        match first_divergence(&self.world, &intended, &actual, &env, &lines) {
            Some(d @ Divergence::Program { .. }) => {
                let vague = self.fault_for(&kind, &instruction).is_some_and(|f| f.vague_global);
                match (vague, last_updatable(&intended)) {
                    (true, Some((step, tool, concept))) => render_critique(
                        &tool,
                        concept.as_deref(),
                        &format!("the answer looks wrong; {tool} at step {step} may have failed"),
                    ),
                    _ => Self::divergence_critique(&d),
                }
            }
            Some(d) => Self::divergence_critique(&d),
            None => render_critique(PLANNER, None, "every step behaved as intended; the program is inadequate"),
        }
    }

    fn local_verdict(&self, doc: &PromptDocument) -> String {
        let (_, _, intended, actual, env) = match self.episode_context(doc) {
            Ok(ctx) => ctx,
            Err(reason) => return render_critique(PLANNER, None, &reason),
        };
        let Ok(i) = doc.section("step_index").unwrap_or_default().trim().parse::<usize>() else {
            return render_critique(PLANNER, None, "missing step index");
        };
        let current = doc.section("current").map(str::trim).filter(|s| !s.is_empty());
        let competent = self.world.run(&actual, &env);
        match check_step(&self.world, &intended, &actual, &competent, i, current) {
            Some(d) => Self::divergence_critique(&d),
            None => "VERDICT: OK".to_string(),
        }
    }

    fn answer(&self, doc: &PromptDocument) -> Result<String, BackendError> {
        let env = self
            .world
            .env(&parse_inputs(doc.section("inputs").unwrap_or_default()))
            .ok_or_else(|| BackendError::InvalidDocument("unknown input scene".into()))?;
        let step: usize = doc
            .section("step_index")
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| BackendError::InvalidDocument("bad step_index".into()))?;
        oracle_answer(
            &self.world,
            doc.section("program").unwrap_or_default(),
            &env,
            step,
            self.answer_corruption,
            &doc.render(),
        )
        .ok_or_else(|| BackendError::InvalidDocument("no answerable VQA step".into()))
    }

    fn respond(&self, doc: &PromptDocument) -> Result<String, BackendError> {
        doc.check()?;
        let text = match doc.purpose {
            Purpose::Plan | Purpose::Program => doc.section("instruction"),
            _ => doc.section("task"),
        }
        .unwrap_or_default();
        let kind = doc.section("kind");
        let c = self
            .matching(doc.purpose, kind, text)
            .ok_or(BackendError::NoRuleMatched { purpose: doc.purpose })?;
        match &c.rule.respond {
            Respond::Template(t) => {
                let clean = Self::expand(c, t, text);
                match &c.rule.fault {
                    Some(f) if doc.purpose == Purpose::Program && Self::fault_fires(c, f, doc) => Ok(f.apply(&clean)),
                    _ => Ok(clean),
                }
            }
            Respond::OracleCritique => Ok(self.global_critique(doc)),
            Respond::OracleVerdict => Ok(self.local_verdict(doc)),
            Respond::OracleAnswer => self.answer(doc),
        }
    }
}

impl Backend for ScriptedBackend {
    fn generate(&self, doc: &PromptDocument) -> Result<String, BackendError> {
        let result = self.respond(doc);
        self.audit.record(doc, &result);
        result
    }

    fn audit(&self) -> &AuditLog {
        &self.audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROGRAM: &str = "BOX0=LOC(image=IMAGE,object='${anchor}')\nFINAL=RESULT(var=BOX0)\n";

    fn backend(fault: Option<Fault>) -> ScriptedBackend {
        let rule = ScriptedRule {
            when: RuleMatch {
                purpose: Purpose::Program,
                kind: Some("vqa".into()),
                pattern: Some(r"^where is the (?P<anchor>\w+)\?$".into()),
            },
            respond: Respond::Template(PROGRAM.into()),
            fault,
        };
        let tk = crate::tools::Toolkit::competent(vec!["umbrella".into()], Default::default());
        ScriptedBackend::new(RuleSet::new(vec![rule]), World::new(Default::default(), &tk)).unwrap()
    }

    fn doc(instruction: &str) -> PromptDocument {
        PromptDocument::new(Purpose::Program)
            .with("header", "h")
            .with("kind", "vqa")
            .with("plan", "1. find it")
            .with("instruction", instruction)
    }

    #[test]
    fn template_captures_and_audit() {
        let b = backend(None);
        let out = b.generate(&doc("where is the umbrella?")).unwrap();
        assert_eq!(out, "BOX0=LOC(image=IMAGE,object='umbrella')\nFINAL=RESULT(var=BOX0)\n");
        assert!(matches!(b.generate(&doc("nothing matches")), Err(BackendError::NoRuleMatched { .. })));
        assert_eq!(b.audit().len(), 2);
    }

    #[test]
    fn faults_and_triggers() {
        let fault = Fault {
            kind: FaultKind::WrongToolArg,
            step: 0,
            arg: Some("object".into()),
            value: Some("person".into()),
            trigger: Trigger::UnlessCritiqueInPrompt,
            vague_global: false,
        };
        let b = backend(Some(fault));
        let out = b.generate(&doc("where is the umbrella?")).unwrap();
        assert!(out.starts_with("BOX0=LOC(image=IMAGE,object='person')"));
        let with_critique = doc("where is the umbrella?").with(
            "failure_example",
            "Instruction: where is the umbrella?\nProgram:\n...\nCritique: wrong object",
        );
        let out = b.generate(&with_critique).unwrap();
        assert!(out.contains("object='umbrella'"));
    }

    #[test]
    fn fault_kinds() {
        let src = "A=LOC(image=IMAGE,object='x')\nB=COUNT(box=A)\nC=RESULT(var=B)\n";
        let f = |kind, value: Option<&str>| Fault {
            kind,
            step: 0,
            arg: None,
            value: value.map(String::from),
            trigger: Trigger::Always,
            vague_global: false,
        };
        assert!(f(FaultKind::WrongTool, Some("SEG")).apply(src).starts_with("A=SEG("));
        assert!(f(FaultKind::WrongStepOrder, None).apply(src).starts_with("B=COUNT"));
    }

    #[test]
    fn rules_file_roundtrip() {
        let mut rules = RuleSet::new(RuleSet::oracle_rules());
        rules.rules.insert(
            0,
            ScriptedRule {
                when: RuleMatch { purpose: Purpose::Plan, kind: None, pattern: None },
                respond: Respond::Template("1. do".into()),
                fault: None,
            },
        );
        let json = serde_json::to_string(&rules).unwrap();
        assert!(json.contains("\"match\""));
        assert_eq!(serde_json::from_str::<RuleSet>(&json).unwrap(), rules);
    }
}
