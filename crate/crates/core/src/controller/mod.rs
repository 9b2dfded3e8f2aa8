//! Episode orchestration: attempt, judge, reflect, learn, re-attempt.

mod stages;
mod state;

pub use stages::{run_online, run_test_stage, run_training_stage};
pub use state::State;

use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError};
use crate::demos::{
    assemble_prompt, DemoError, DemoExample, DemoKind, DemoValidator, DemonstrationPool, Polarity, TextEmbedder,
};
use crate::dsl::{execute, parse_program, validate, Env};
use crate::error::Error;
use crate::learning::sources::channel_for;
use crate::learning::{
    update_tool, Channel, CollectRequest, DataSource, DatasetSource, EpisodeEvidence, LearningConfig, LearningError,
    LlmInferredSource, PromptPools, UpdateReport, WebSource,
};
use crate::model::{judge, Critique, ExecutionTrace, Outcome, Plan, Scope, TaskInstance, TaskKind, ToolOutput};
use crate::reflection::{global_reflect, local_reflect, ReflectionConfig};
use crate::tools::scene::SimScene;
use crate::tools::{standard_signatures, Toolkit};
use crate::vecmath::hash_parts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub learning: LearningConfig,
    pub reflection: ReflectionConfig,
    /// Attempts per episode: initial, after global reflection, after local reflection.
    pub max_attempts: usize,
    pub k_success: usize,
    pub k_failure: usize,
    pub demo_capacity: usize,
    /// Store plan and program demos after any correct attempt.
    pub store_success_demos: bool,
    pub rho_dataset: f64,
    pub rho_web: f64,
    pub seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            learning: LearningConfig::default(),
            reflection: ReflectionConfig::default(),
            max_attempts: 3,
            k_success: crate::demos::pool::DEFAULT_K_SUCCESS,
            k_failure: crate::demos::pool::DEFAULT_K_FAILURE,
            demo_capacity: crate::demos::pool::DEFAULT_CAPACITY,
            store_success_demos: true,
            rho_dataset: 0.0,
            rho_web: 0.0,
            seed: 0,
        }
    }
}

/// Shared, read-only inputs of a run.
pub struct Runtime<'a> {
    pub backend: &'a dyn Backend,
    pub scenes: &'a BTreeMap<String, SimScene>,
    pub embedder: &'a dyn TextEmbedder,
    pub cfg: &'a ControllerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub plan: Option<Plan>,
    pub program: String,
    pub trace: ExecutionTrace,
    pub outcome: Outcome,
    /// Why the program could not run, if it was never executed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Correct,
    Wrong,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoStore {
    pub kind: DemoKind,
    pub polarity: Polarity,
    pub stored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task_id: String,
    pub kind: TaskKind,
    pub attempts: Vec<AttemptRecord>,
    pub critiques: Vec<Critique>,
    pub updates: Vec<UpdateReport>,
    pub demo_stores: Vec<DemoStore>,
    /// Skipped updates and other non-fatal events.
    pub notes: Vec<String>,
    pub final_outcome: Outcome,
    /// Outcome of the first attempt.
    pub tag: Tag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_backend_calls: Option<usize>,
}

/// Read-only view of the state an attempt runs against.
#[derive(Clone, Copy)]
struct View<'a> {
    demos: &'a DemonstrationPool,
    pools: &'a PromptPools,
    toolkit: &'a Toolkit,
}

impl<'a> From<&'a State> for View<'a> {
    fn from(s: &'a State) -> Self {
        View {
            demos: &s.demos,
            pools: &s.pools,
            toolkit: &s.toolkit,
        }
    }
}

/// Binds the task's scenes to its reserved input names.
pub fn task_env(task: &TaskInstance, scenes: &BTreeMap<String, SimScene>) -> crate::Result<Env> {
    task.kind
        .input_names()
        .iter()
        .zip(&task.inputs)
        .map(|(name, id)| {
            let scene = scenes.get(id).ok_or_else(|| Error::UnknownScene(id.clone()))?;
            Ok((name.to_string(), ToolOutput::Image(scene.clone())))
        })
        .collect()
}

fn failed_attempt(task: &TaskInstance, plan: Option<Plan>, program: String, error: String) -> AttemptRecord {
    let trace = ExecutionTrace::default();
    AttemptRecord {
        outcome: judge(task, &trace),
        plan,
        program,
        trace,
        error: Some(error),
    }
}

/// Retrieves demos, generates a plan and a program, validates, executes and judges.
/// Returns the record and the sequence numbers of the retrieved demos.
fn attempt(
    rt: &Runtime<'_>,
    view: View<'_>,
    task: &TaskInstance,
    env: &Env,
    force: Option<&DemoExample>,
) -> Result<(AttemptRecord, Vec<u64>), BackendError> {
    let cfg = rt.cfg;
    let retrieve = |kind: DemoKind| {
        let mut r = view.demos.retrieve(rt.embedder, &task.instruction, kind, cfg.k_success, cfg.k_failure);
        if let Some(c) = force.filter(|c| c.kind == kind) {
            let k = match c.polarity {
                Polarity::Success => cfg.k_success,
                Polarity::Failure => cfg.k_failure,
            };
            r.force_include(c.clone(), k);
        }
        r
    };
    let plan_examples = retrieve(DemoKind::Plan);
    let doc = assemble_prompt(DemoKind::Plan, task.kind, &task.instruction, None, &plan_examples);
    let prompt_id = format!("{:016x}", hash_parts(&[&doc.render()]));
    let plan_text = rt.backend.generate(&doc)?;
    let mut seqs = plan_examples.seqs();
    let Some(plan) = Plan::from_text(&plan_text, prompt_id) else {
        return Ok((failed_attempt(task, None, String::new(), "empty plan".into()), seqs));
    };

    let program_examples = retrieve(DemoKind::Program);
    let doc = assemble_prompt(DemoKind::Program, task.kind, &task.instruction, Some(&plan.text()), &program_examples);
    let program = rt.backend.generate(&doc)?;
    seqs.extend(program_examples.seqs());
    seqs.retain(|s| *s != 0);

    let ast = match parse_program(&program) {
        Ok(ast) => ast,
        Err(e) => return Ok((failed_attempt(task, Some(plan), program, format!("program does not parse: {e}")), seqs)),
    };
    let diagnostics = validate(&ast, &standard_signatures());
    let undeclared: Vec<String> = ast
        .steps
        .iter()
        .flat_map(|s| s.args.iter().filter_map(|(_, v)| v.as_var()))
        .filter(|v| matches!(*v, "IMAGE" | "LEFT" | "RIGHT") && !env.contains_key(*v))
        .map(|v| format!("input {v} is not bound for a {} task", task.kind))
        .collect();
    if !diagnostics.is_empty() || !undeclared.is_empty() {
        let msgs: Vec<String> = diagnostics.iter().map(ToString::to_string).chain(undeclared).collect();
        return Ok((failed_attempt(task, Some(plan), program, format!("invalid program: {}", msgs.join("; "))), seqs));
    }
    let trace = execute(&ast, env, view.toolkit, view.pools);
    let outcome = judge(task, &trace);
    Ok((
        AttemptRecord {
            plan: Some(plan),
            program,
            trace,
            outcome,
            error: None,
        },
        seqs,
    ))
}

/// Re-runs the origin task with a candidate example force-included.
struct RerunValidator<'a> {
    rt: &'a Runtime<'a>,
    view: View<'a>,
    task: &'a TaskInstance,
    env: &'a Env,
    backend_error: RefCell<Option<BackendError>>,
}

impl DemoValidator for RerunValidator<'_> {
    fn solves_with(&self, candidate: &DemoExample) -> Result<bool, DemoError> {
        match attempt(self.rt, self.view, self.task, self.env, Some(candidate)) {
            Ok((a, _)) => Ok(a.outcome.correct),
            Err(e) => {
                let msg = e.to_string();
                *self.backend_error.borrow_mut() = Some(e);
                Err(DemoError::Validation(msg))
            }
        }
    }
}

struct Episode<'r, 'a> {
    rt: &'r Runtime<'a>,
    task: &'r TaskInstance,
    env: Env,
    rec: EpisodeRecord,
    updated_tool: Option<String>,
}

impl Episode<'_, '_> {
    fn run_attempt(&mut self, state: &mut State) -> crate::Result<bool> {
        let (a, seqs) = attempt(self.rt, View::from(&*state), self.task, &self.env, None)?;
        state.demos.mark_retrieved(&seqs);
        let correct = a.outcome.correct;
        self.rec.attempts.push(a);
        Ok(correct)
    }

    fn store_demo(&mut self, state: &mut State, example: DemoExample) -> crate::Result<()> {
        let (kind, polarity) = (example.kind, example.polarity);
        let duplicate = state
            .demos
            .sub_pool(kind, polarity)
            .iter()
            .any(|e| e.instruction == example.instruction && e.content == example.content);
        let (stored, reason) = if duplicate {
            (false, Some("already in the pool".to_string()))
        } else {
            let snapshot = state.demos.clone();
            let validator = RerunValidator {
                rt: self.rt,
                view: View {
                    demos: &snapshot,
                    pools: &state.pools,
                    toolkit: &state.toolkit,
                },
                task: self.task,
                env: &self.env,
                backend_error: RefCell::new(None),
            };
            let result = state.demos.store_validated(example, Some(&validator));
            if let Some(e) = validator.backend_error.take() {
                return Err(e.into());
            }
            match result {
                Ok(true) => (true, None),
                Ok(false) => (false, Some("re-run with the example did not solve the task".to_string())),
                Err(e) => (false, Some(e.to_string())),
            }
        };
        self.rec.demo_stores.push(DemoStore {
            kind,
            polarity,
            stored,
            reason,
        });
        Ok(())
    }

    fn store_successes(&mut self, state: &mut State) -> crate::Result<()> {
        if !self.rt.cfg.store_success_demos {
            return Ok(());
        }
        let a = self.rec.attempts.last().expect("an attempt was made").clone();
        let mut examples = Vec::new();
        if let Some(plan) = &a.plan {
            examples.push((DemoKind::Plan, plan.text()));
        }
        examples.push((DemoKind::Program, a.program.clone()));
        for (kind, content) in examples {
            let ex = DemoExample::new(
                self.rt.embedder,
                kind,
                Polarity::Success,
                &self.task.instruction,
                &content,
                None,
                &self.task.id,
            )
            .expect("success examples need no critique");
            self.store_demo(state, ex)?;
        }
        Ok(())
    }

    /// Routes a critique: PLANNER to the demonstration pool, tools to prompt learning.
    fn learn(&mut self, state: &mut State, critique: &Critique) -> crate::Result<()> {
        let a = self.rec.attempts.last().expect("an attempt was made").clone();
        let scope = match critique.scope {
            Scope::Global => "global",
            Scope::Local => "local",
        };
        if critique.is_planner() {
            let (kind, content) = match &a.plan {
                None => (DemoKind::Plan, String::new()),
                Some(_) => (DemoKind::Program, a.program.clone()),
            };
            if content.trim().is_empty() {
                self.rec.notes.push(format!("{scope}: nothing to store as a failure example"));
                return Ok(());
            }
            let text = if critique.reason.is_empty() { &critique.raw } else { &critique.reason };
            match DemoExample::new(
                self.rt.embedder,
                kind,
                Polarity::Failure,
                &self.task.instruction,
                &content,
                Some(text),
                &self.task.id,
            ) {
                Ok(ex) => self.store_demo(state, ex)?,
                Err(e) => self.rec.notes.push(format!("{scope}: failure example rejected: {e}")),
            }
            return Ok(());
        }
        let tool = critique.faulty_tool.clone().expect("tool critiques name a tool");
        let cfg = self.rt.cfg;
        let dim = state.toolkit.dim;
        let universe = state.toolkit.universe.clone();
        let dataset = DatasetSource {
            universe: universe.clone(),
            rho: cfg.rho_dataset,
            seed: cfg.seed,
            dim,
        };
        let web = WebSource {
            universe,
            rho: cfg.rho_web,
            seed: cfg.seed,
            dim,
        };
        let inferred = LlmInferredSource {
            backend: self.rt.backend,
            dim,
        };
        let source: &dyn DataSource = match channel_for(&tool) {
            Some(Channel::Dataset) => &dataset,
            Some(Channel::Web) => &web,
            Some(Channel::LlmInferred) => &inferred,
            None => {
                self.rec.notes.push(format!("{scope}: {}", LearningError::NoSourceForTool(tool)));
                return Ok(());
            }
        };
        let salt = format!("{}:{scope}", self.task.id);
        let req = CollectRequest {
            tool: &tool,
            concept: critique.concept.as_deref(),
            salt: &salt,
            episode: Some(EpisodeEvidence {
                task: self.task,
                program: &a.program,
                trace: &a.trace,
                inputs: &self.env,
                step: critique.faulty_step,
                phase: scope,
            }),
        };
        match update_tool(&state.toolkit, &mut state.pools, &cfg.learning, source, &req) {
            Ok(report) => {
                self.rec.updates.push(report);
                self.updated_tool = Some(tool);
                Ok(())
            }
            Err(LearningError::Backend(e)) => Err(e.into()),
            Err(e) => {
                self.rec.notes.push(format!("{scope}: {tool} update skipped: {e}"));
                Ok(())
            }
        }
    }

    fn attempt_failed_critique(&self, scope: Scope) -> Option<Critique> {
        let a = self.rec.attempts.last()?;
        a.error
            .as_ref()
            .map(|e| Critique::planner(scope, None, e.clone(), a.program.clone()))
    }

    fn finish(mut self) -> EpisodeRecord {
        self.rec.final_outcome = self.rec.attempts.last().expect("an attempt was made").outcome.clone();
        self.rec
    }
}

fn new_record(task: &TaskInstance, first: AttemptRecord) -> EpisodeRecord {
    EpisodeRecord {
        task_id: task.id.clone(),
        kind: task.kind,
        tag: if first.outcome.correct { Tag::Correct } else { Tag::Wrong },
        final_outcome: first.outcome.clone(),
        attempts: vec![first],
        critiques: Vec::new(),
        updates: Vec::new(),
        demo_stores: Vec::new(),
        notes: Vec::new(),
        local_backend_calls: None,
    }
}

/// Inference only: one attempt against a frozen state.
pub fn evaluate_task(rt: &Runtime<'_>, state: &State, task: &TaskInstance) -> crate::Result<EpisodeRecord> {
    let env = task_env(task, rt.scenes)?;
    let (a, _) = attempt(rt, View::from(state), task, &env, None)?;
    Ok(new_record(task, a))
}

/// One episode. With `learning` off this is [`evaluate_task`].
pub fn run_episode(rt: &Runtime<'_>, state: &mut State, task: &TaskInstance, learning: bool) -> crate::Result<EpisodeRecord> {
    if !learning {
        return evaluate_task(rt, state, task);
    }
    let env = task_env(task, rt.scenes)?;
    let (first, seqs) = attempt(rt, View::from(&*state), task, &env, None)?;
    state.demos.mark_retrieved(&seqs);
    let correct = first.outcome.correct;
    let mut ep = Episode {
        rt,
        task,
        env,
        rec: new_record(task, first),
        updated_tool: None,
    };
    if correct {
        ep.store_successes(state)?;
        return Ok(ep.finish());
    }
    let max = rt.cfg.max_attempts.clamp(1, 3);
    if max < 2 {
        return Ok(ep.finish());
    }

    let a = ep.rec.attempts.last().expect("first attempt").clone();
    let critique = match ep.attempt_failed_critique(Scope::Global) {
        Some(c) => c,
        None => global_reflect(rt.backend, task, a.plan.as_ref().expect("executed attempts have plans"), &a.program, &a.trace)?,
    };
    ep.rec.critiques.push(critique.clone());
    ep.learn(state, &critique)?;
    if ep.run_attempt(state)? {
        ep.store_successes(state)?;
        return Ok(ep.finish());
    }
    if max < 3 {
        return Ok(ep.finish());
    }

    let a = ep.rec.attempts.last().expect("second attempt").clone();
    let critique = match ep.attempt_failed_critique(Scope::Local) {
        Some(c) => c,
        None => {
            let local = local_reflect(
                rt.backend,
                task,
                a.plan.as_ref().expect("executed attempts have plans"),
                &a.program,
                &a.trace,
                &rt.cfg.reflection,
            )?;
            ep.rec.local_backend_calls = Some(local.backend_calls);
            local.critique
        }
    };
    ep.rec.critiques.push(critique.clone());
    let conflicting = match (&ep.updated_tool, critique.is_planner()) {
        (Some(done), false) => critique.faulty_tool.as_deref() != Some(done.as_str()),
        _ => false,
    };
    if conflicting {
        let note = format!(
            "local: {} update skipped; {} was already updated this episode",
            critique.faulty_tool.as_deref().unwrap_or_default(),
            ep.updated_tool.as_deref().unwrap_or_default()
        );
        ep.rec.notes.push(note);
    } else {
        ep.learn(state, &critique)?;
    }
    if ep.run_attempt(state)? {
        ep.store_successes(state)?;
    }
    Ok(ep.finish())
}
